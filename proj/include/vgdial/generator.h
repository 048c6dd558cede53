#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vgdial/autodiff.h"
#include "vgdial/corpus.h"

namespace vgdial {

struct GeneratorConfig {
  int layers = 2;
  int hidden = 64;
  int heads = 4;
  int vocab_size = 0;  // filled in from the tokenizer
  int max_context_len = 110;
  int max_response_len = 40;  // response words, excluding [BOS]/[EOS]
  int region_len = 36;
  int d_obj = 16;
  int max_turns = 16;
  double mcp_rate = 0.15;
  double mrp_rate = 0.70;
  bool vkb_enabled = true;
  bool mcp_enabled = true;
  bool global_concept_vocab = false;
  double learning_rate = 3e-5;
  int epochs = 20;
  int batch_size = 64;
  uint64_t seed = 1;
};

void validate_generator_config(const GeneratorConfig& c);

// One model input: the concatenation O, Q, C, R with per-position ids,
// the region features occupying the O slots, the attention mask, and the
// masking bookkeeping for the two training objectives.
struct InputBatch {
  std::vector<int> token_ids;
  std::vector<int> turn_ids;
  std::vector<int> position_ids;
  std::vector<int> segment_ids;
  Eigen::MatrixXd object_features;  // len_o x d_obj
  std::vector<std::array<double, 4>> boxes;
  std::vector<uint8_t> attention_mask;  // n*n row-major, 1 = may attend
  int len_o = 0, len_q = 0, len_c = 0, len_r = 0;
  std::vector<int> mcp_positions, mcp_targets;
  std::vector<int> mrp_positions, mrp_targets;
  std::vector<int> concept_token_ids;  // distinct pre-mask concept ids

  int n() const { return len_o + len_q + len_c + len_r; }
};

void validate_input_batch(const InputBatch& b, const GeneratorConfig& cfg);

// Bidirectional attention inside O, Q and C; response positions attend to
// all of O, Q, C plus response positions at or before themselves.
std::vector<uint8_t> build_attention_mask(int len_o, int len_q, int len_c,
                                          int len_r);

struct DecodeOptions {
  bool greedy = true;
  double temperature = 1.0;
  int top_k = 0;  // 0 keeps the full distribution
  int max_len = 40;
  uint64_t seed = 0;
};

struct GenerationResult {
  std::vector<int> tokens;  // emitted words, no [BOS]/[EOS]
  std::vector<Eigen::VectorXd> step_distributions;
  bool hit_eos = false;
};

struct AttentionExport {
  int layer = 0;
  int head = 0;
  std::vector<int> rows;  // absolute positions of the response block
  std::vector<std::array<double, 4>> boxes;
  std::vector<std::vector<double>> weights;  // len_r x len_o
};

std::string attention_export_to_json(const AttentionExport& e);

// Masked transformer over the O/Q/C/R concatenation. Trains with masked
// concept prediction (Hungarian-matched) plus masked response prediction
// (optionally through the visual-knowledge bias), and decodes by
// repeatedly appending a [MASK], predicting it, and writing the token
// back.
class Generator {
 public:
  Generator(const Tokenizer& tok, const GeneratorConfig& cfg);

  const GeneratorConfig& config() const { return config_; }
  const Tokenizer& tokenizer() const { return tok_; }
  nn::ParameterSet& params() { return params_; }
  long vkb_fallback_count() const { return vkb_fallback_count_; }
  long mcp_empty_count() const { return mcp_empty_count_; }
  void set_global_concept_ids(std::vector<int> ids);

  // Training input with both masking objectives applied.
  InputBatch build_inputs(const Quadruple& q, Rng& rng) const;
  // Unmasked input whose response block is [BOS], the given tokens, and
  // an optional trailing [MASK] slot to predict.
  InputBatch build_decode_inputs(const RegionSet& regions,
                                 const std::vector<std::vector<int>>& context,
                                 const std::vector<int>& response_tokens,
                                 bool append_mask) const;

  // Transformer stack; returns the n x hidden final states. When
  // `attention` is non-null it receives the post-softmax attention
  // matrices, indexed [layer][head].
  nn::NodePtr forward_hidden(
      nn::Graph& g, const InputBatch& b,
      std::vector<std::vector<nn::Matrix>>* attention = nullptr);

  nn::NodePtr head_logits(nn::Graph& g, nn::NodePtr rows);
  // Vocabulary bias from the pooled concept states, zeroed outside the
  // concept token ids; null when the concept set is empty (counted).
  nn::NodePtr vkb_bias_row(nn::Graph& g, nn::NodePtr hidden,
                           const InputBatch& b);

  nn::NodePtr mcp_loss_node(nn::Graph& g, nn::NodePtr hidden,
                            const InputBatch& b);
  nn::NodePtr mrp_loss_node(nn::Graph& g, nn::NodePtr hidden,
                            const InputBatch& b);
  nn::NodePtr total_loss_node(nn::Graph& g, const InputBatch& b);
  double mcp_loss(const InputBatch& b);
  double mrp_loss(const InputBatch& b);
  double total_loss(const InputBatch& b);

  // Per-epoch mean per-example loss.
  std::vector<double> train(const std::vector<Quadruple>& quadruples);

  // Softmax over the vocabulary at one position of the batch, with the
  // visual-knowledge bias applied when enabled.
  Eigen::VectorXd masked_position_distribution(const InputBatch& b,
                                               int position);

  GenerationResult generate(const RegionSet& regions,
                            const std::vector<std::vector<int>>& context,
                            const DecodeOptions& opts);

  AttentionExport export_attention(const InputBatch& b, int layer, int head);

  void save(const std::string& path) const;
  static Generator load(const std::string& path, const Tokenizer& tok);

 private:
  struct Layer {
    nn::Parameter *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
    nn::Parameter *ln1_g, *ln1_b;
    nn::Parameter *ffn_w1, *ffn_b1, *ffn_w2, *ffn_b2;
    nn::Parameter *ln2_g, *ln2_b;
  };

  int max_positions() const {
    return 2 * config_.region_len + config_.max_context_len +
           config_.max_response_len + 2;
  }
  const std::vector<int>& concept_ids_for(const InputBatch& b) const;

  Tokenizer tok_;
  GeneratorConfig config_;
  nn::ParameterSet params_;
  nn::Parameter *token_embed_, *turn_embed_, *pos_embed_, *seg_embed_;
  nn::Parameter *obj_w_, *obj_b_;
  std::vector<Layer> layers_;
  nn::Parameter *head_w_, *head_b_;
  nn::Parameter *vkb_w_, *vkb_b_;
  std::vector<int> global_concept_ids_;
  mutable long vkb_fallback_count_ = 0;
  mutable long mcp_empty_count_ = 0;
};

}  // namespace vgdial
