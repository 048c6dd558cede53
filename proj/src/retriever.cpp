#include "vgdial/retriever.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "vgdial/io.h"
#include "vgdial/rng.h"

namespace vgdial {

namespace {
constexpr uint32_t kCheckpointVersion = 1;
}

void validate_tower_config(const TowerConfig& c) {
  if (c.text_encoder_dim < 1 || c.image_encoder_dim < 1)
    throw std::invalid_argument("encoder dimensions must be >= 1");
  if (c.projection_dims.empty())
    throw std::invalid_argument("projection head needs at least one layer");
  for (int d : c.projection_dims)
    if (d < 1) throw std::invalid_argument("projection widths must be >= 1");
  if (c.margin < 0.0) throw std::invalid_argument("margin must be >= 0");
  if (c.learning_rate <= 0.0)
    throw std::invalid_argument("learning rate must be > 0");
  if (c.epochs < 1 || c.batch_size < 2)
    throw std::invalid_argument("need epochs >= 1 and batch_size >= 2");
}

Retriever::Retriever(const Tokenizer& tok, const TowerConfig& config)
    : tok_(tok), config_(config) {
  validate_tower_config(config_);
  Rng rng(config_.seed);
  embed_ = &params_.add(
      "text.embed",
      nn::gaussian_init(tok_.vocab_size(), config_.text_encoder_dim, 0.1,
                        rng));

  auto build_head = [&](const std::string& prefix, int in_dim,
                        std::vector<std::pair<nn::Parameter*, nn::Parameter*>>&
                            head) {
    int prev = in_dim;
    for (size_t i = 0; i < config_.projection_dims.size(); ++i) {
      int width = config_.projection_dims[i];
      auto* W = &params_.add(prefix + ".proj" + std::to_string(i) + ".W",
                             nn::xavier_init(prev, width, rng));
      auto* b = &params_.add(prefix + ".proj" + std::to_string(i) + ".b",
                             nn::Matrix::Zero(1, width));
      head.emplace_back(W, b);
      prev = width;
    }
  };
  build_head("text", config_.text_encoder_dim, text_head_);
  build_head("image", config_.image_encoder_dim, image_head_);
}

nn::NodePtr Retriever::head_forward(
    nn::Graph& g, nn::NodePtr x,
    const std::vector<std::pair<nn::Parameter*, nn::Parameter*>>& head) {
  for (size_t i = 0; i < head.size(); ++i) {
    x = g.add_rowvec(g.matmul(x, g.leaf(*head[i].first)),
                     g.leaf(*head[i].second));
    if (i + 1 < head.size()) x = g.gelu(x);
  }
  return g.l2_normalize_rows(x);
}

nn::NodePtr Retriever::text_forward(
    nn::Graph& g, const std::vector<std::vector<int>>& token_rows) {
  nn::NodePtr table = config_.freeze_embeddings
                          ? g.constant(embed_->value)
                          : g.leaf(*embed_);
  std::vector<nn::NodePtr> pooled;
  for (const auto& ids : token_rows) {
    if (ids.empty()) throw std::runtime_error("empty query");
    pooled.push_back(g.mean_rows(g.gather_rows(table, ids)));
  }
  nn::NodePtr x = pooled.size() == 1 ? pooled[0] : g.concat_rows(pooled);
  return head_forward(g, x, text_head_);
}

nn::NodePtr Retriever::image_forward(nn::Graph& g,
                                     const Eigen::MatrixXd& features) {
  if (features.cols() != config_.image_encoder_dim)
    throw std::invalid_argument("image feature dimension mismatch");
  return head_forward(g, g.constant(features), image_head_);
}

Eigen::VectorXd Retriever::encode_text(const std::string& text) const {
  auto ids = tok_.encode(text);
  if (ids.empty()) throw std::runtime_error("empty query");
  nn::Graph g;
  auto* self = const_cast<Retriever*>(this);
  nn::NodePtr out = self->text_forward(g, {ids});
  return out->value.row(0).transpose();
}

Eigen::VectorXd Retriever::encode_image(const ImageRecord& image) const {
  validate_region_set(image.regions);
  nn::Graph g;
  auto* self = const_cast<Retriever*>(this);
  nn::NodePtr out =
      self->image_forward(g, image.mean_feature().transpose());
  return out->value.row(0).transpose();
}

double Retriever::relevance(const Eigen::VectorXd& t,
                            const Eigen::VectorXd& v) {
  if (t.size() != v.size())
    throw std::invalid_argument("embedding dimension mismatch");
  return t.dot(v);
}

double Retriever::hinge_loss(double s_pos, const std::vector<double>& s_negs,
                             double margin) {
  if (s_negs.empty())
    throw std::invalid_argument("hinge loss needs at least one negative");
  double loss = 0.0;
  for (double s : s_negs) loss += std::max(0.0, margin - s_pos + s);
  return loss;
}

std::string Retriever::build_query(const Dialog& d, QueryMode mode) {
  validate_dialog(d);
  std::string out;
  for (size_t i = 0; i < d.context.size(); ++i) {
    if (i) out += " [SEP] ";
    out += normalize_whitespace(d.context[i]);
  }
  if (mode == QueryMode::kTrain) out += " [SEP] " + normalize_whitespace(d.response);
  return out;
}

nn::NodePtr Retriever::batch_loss(nn::Graph& g,
                                  const std::vector<RetrievalPair>& batch) {
  std::vector<std::vector<int>> token_rows;
  Eigen::MatrixXd features(static_cast<Eigen::Index>(batch.size()),
                           config_.image_encoder_dim);
  for (size_t i = 0; i < batch.size(); ++i) {
    token_rows.push_back(tok_.encode(batch[i].text));
    if (batch[i].image_feature.size() != config_.image_encoder_dim)
      throw std::invalid_argument("image feature dimension mismatch");
    features.row(static_cast<Eigen::Index>(i)) =
        batch[i].image_feature.transpose();
  }
  nn::NodePtr t = text_forward(g, token_rows);
  nn::NodePtr v = image_forward(g, features);
  nn::NodePtr scores = g.matmul(t, g.transpose(v));
  return g.hinge_in_batch(scores, config_.margin);
}

std::vector<double> Retriever::train(const std::vector<RetrievalPair>& pairs) {
  if (pairs.size() < 2)
    throw std::invalid_argument(
        "training needs at least 2 pairs to form negatives");

  std::vector<nn::Parameter*> trainable;
  for (auto* p : params_.all())
    if (!(config_.freeze_embeddings && p == embed_)) trainable.push_back(p);
  nn::AdamOptimizer opt(trainable, config_.learning_rate);

  Rng rng(config_.seed + 0x9e3779b97f4a7c15ULL);
  std::vector<size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), size_t{0});

  std::vector<double> epoch_losses;
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    long batches = 0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(config_.batch_size)) {
      size_t end = std::min(order.size(),
                            start + static_cast<size_t>(config_.batch_size));
      if (end - start < 2) continue;  // a lone positive has no negatives
      std::vector<RetrievalPair> batch;
      for (size_t i = start; i < end; ++i)
        batch.push_back(pairs[order[i]]);

      nn::Graph g;
      nn::NodePtr loss = batch_loss(g, batch);
      params_.zero_grad();
      g.backward(loss);
      opt.step();
      total += loss->value(0, 0) / static_cast<double>(batch.size());
      ++batches;
    }
    epoch_losses.push_back(batches ? total / static_cast<double>(batches)
                                   : 0.0);
  }
  return epoch_losses;
}

void Retriever::save(const std::string& path) const {
  BinaryWriter w(path);
  w.magic("MRT1");
  w.u32(kCheckpointVersion);
  w.u64(tok_.fingerprint());
  w.u32(static_cast<uint32_t>(config_.text_encoder_dim));
  w.u32(static_cast<uint32_t>(config_.image_encoder_dim));
  w.u32(static_cast<uint32_t>(config_.projection_dims.size()));
  for (int d : config_.projection_dims) w.u32(static_cast<uint32_t>(d));
  w.f64(config_.margin);
  w.f64(config_.learning_rate);
  w.u32(static_cast<uint32_t>(config_.epochs));
  w.u32(static_cast<uint32_t>(config_.batch_size));
  w.u64(config_.seed);
  w.u32(config_.freeze_embeddings ? 1 : 0);
  auto all = params_.all();
  w.u64(all.size());
  for (const auto* p : all) {
    w.str(p->name);
    w.matrix(p->value);
  }
}

Retriever Retriever::load(const std::string& path, const Tokenizer& tok) {
  BinaryReader r(path, "checkpoint");
  r.expect_magic("MRT1", "retriever checkpoint");
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " +
                             std::to_string(version));
  const uint64_t fp = r.u64();
  if (fp != tok.fingerprint())
    throw std::runtime_error(
        "tokenizer mismatch: checkpoint was trained with a different "
        "vocabulary");
  TowerConfig cfg;
  cfg.text_encoder_dim = static_cast<int>(r.u32());
  cfg.image_encoder_dim = static_cast<int>(r.u32());
  const uint32_t n_layers = r.u32();
  cfg.projection_dims.clear();
  for (uint32_t i = 0; i < n_layers; ++i)
    cfg.projection_dims.push_back(static_cast<int>(r.u32()));
  cfg.margin = r.f64();
  cfg.learning_rate = r.f64();
  cfg.epochs = static_cast<int>(r.u32());
  cfg.batch_size = static_cast<int>(r.u32());
  cfg.seed = r.u64();
  cfg.freeze_embeddings = r.u32() != 0;

  Retriever out(tok, cfg);
  const uint64_t n_params = r.u64();
  if (n_params != out.params_.count())
    throw std::runtime_error("checkpoint parameter count mismatch");
  for (uint64_t i = 0; i < n_params; ++i) {
    const std::string name = r.str();
    nn::Parameter* p = out.params_.find(name);
    if (!p)
      throw std::runtime_error("checkpoint has unknown parameter '" + name +
                               "'");
    nn::Matrix m = r.matrix();
    if (m.rows() != p->value.rows() || m.cols() != p->value.cols())
      throw std::runtime_error("checkpoint shape mismatch for '" + name +
                               "'");
    p->value = std::move(m);
  }
  return out;
}

double recall_at_k(const Retriever& r, const std::vector<Dialog>& dialogs,
                   const std::vector<ImageRecord>& images,
                   const std::vector<std::pair<std::string, std::string>>&
                       ground_truth,
                   int k, QueryMode mode) {
  if (dialogs.empty() || images.empty())
    throw std::invalid_argument("recall needs dialogs and images");
  if (k < 1) throw std::invalid_argument("k must be >= 1");

  std::map<std::string, std::string> truth(ground_truth.begin(),
                                           ground_truth.end());
  std::vector<Eigen::VectorXd> image_emb;
  for (const auto& img : images) image_emb.push_back(r.encode_image(img));

  long hits = 0, total = 0;
  for (const auto& d : dialogs) {
    auto it = truth.find(d.id);
    if (it == truth.end()) continue;
    Eigen::VectorXd q = r.encode_text(Retriever::build_query(d, mode));
    std::vector<std::pair<double, std::string>> scored;
    for (size_t i = 0; i < images.size(); ++i)
      scored.emplace_back(Retriever::relevance(q, image_emb[i]),
                          images[i].id);
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    ++total;
    for (int i = 0; i < k && i < static_cast<int>(scored.size()); ++i)
      if (scored[static_cast<size_t>(i)].second == it->second) {
        ++hits;
        break;
      }
  }
  if (!total) throw std::runtime_error("no dialog had a ground-truth image");
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace vgdial
