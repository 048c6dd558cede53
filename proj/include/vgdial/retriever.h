#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vgdial/autodiff.h"
#include "vgdial/corpus.h"

namespace vgdial {

struct TowerConfig {
  int text_encoder_dim = 64;
  int image_encoder_dim = 16;
  std::vector<int> projection_dims = {1024, 1024, 512};
  double margin = 0.5;
  double learning_rate = 1e-3;
  int epochs = 20;
  int batch_size = 64;
  uint64_t seed = 1;
  bool freeze_embeddings = false;
};

void validate_tower_config(const TowerConfig& c);

enum class QueryMode { kTrain, kInfer };

// One retrieval training example: a query string and the paired image's
// global feature (mean of its region features).
struct RetrievalPair {
  std::string text;
  Eigen::VectorXd image_feature;
  std::string image_id;
};

// Two-tower matcher. The text tower averages learned token embeddings;
// the image tower takes the image's global feature; both run through an
// MLP projection head and land on the unit sphere, where relevance is
// the inner product.
class Retriever {
 public:
  Retriever(const Tokenizer& tok, const TowerConfig& config);

  const TowerConfig& config() const { return config_; }
  const Tokenizer& tokenizer() const { return tok_; }
  nn::ParameterSet& params() { return params_; }

  Eigen::VectorXd encode_text(const std::string& text) const;
  Eigen::VectorXd encode_image(const ImageRecord& image) const;

  static double relevance(const Eigen::VectorXd& t, const Eigen::VectorXd& v);
  static double hinge_loss(double s_pos, const std::vector<double>& s_negs,
                           double margin);
  static std::string build_query(const Dialog& d, QueryMode mode);

  // Graph-building forwards, shared by inference and training.
  nn::NodePtr text_forward(nn::Graph& g,
                           const std::vector<std::vector<int>>& token_rows);
  nn::NodePtr image_forward(nn::Graph& g, const Eigen::MatrixXd& features);
  // In-batch hinge loss over a batch of pairs.
  nn::NodePtr batch_loss(nn::Graph& g, const std::vector<RetrievalPair>& batch);

  // Mini-batch training with in-batch negatives; returns per-epoch mean
  // loss. Needs at least 2 pairs so every positive sees a negative.
  std::vector<double> train(const std::vector<RetrievalPair>& pairs);

  void save(const std::string& path) const;
  static Retriever load(const std::string& path, const Tokenizer& tok);

 private:
  Tokenizer tok_;
  TowerConfig config_;
  nn::ParameterSet params_;
  nn::Parameter* embed_;
  std::vector<std::pair<nn::Parameter*, nn::Parameter*>> text_head_;
  std::vector<std::pair<nn::Parameter*, nn::Parameter*>> image_head_;

  nn::NodePtr head_forward(
      nn::Graph& g, nn::NodePtr x,
      const std::vector<std::pair<nn::Parameter*, nn::Parameter*>>& head);
};

// Fraction of dialogs whose ground-truth image appears in the top k of
// the retriever's ranking over `images`.
double recall_at_k(const Retriever& r, const std::vector<Dialog>& dialogs,
                   const std::vector<ImageRecord>& images,
                   const std::vector<std::pair<std::string, std::string>>&
                       ground_truth,
                   int k, QueryMode mode);

}  // namespace vgdial
