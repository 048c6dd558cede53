#include "vgdial/generator.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include "json.hpp"
#include "vgdial/hungarian.h"
#include "vgdial/io.h"

namespace vgdial {

namespace {
constexpr uint32_t kCheckpointVersion = 1;
}

void validate_generator_config(const GeneratorConfig& c) {
  if (c.layers < 1 || c.hidden < 1 || c.heads < 1)
    throw std::invalid_argument("layers, hidden and heads must be >= 1");
  if (c.hidden % c.heads != 0)
    throw std::invalid_argument("hidden must be divisible by heads");
  if (c.max_context_len < 1 || c.max_response_len < 1 || c.region_len < 1 ||
      c.d_obj < 1)
    throw std::invalid_argument("all lengths must be >= 1");
  if (c.max_turns < 2)
    throw std::invalid_argument("max_turns must be >= 2");
  if (c.mcp_rate <= 0.0 || c.mcp_rate >= 1.0 || c.mrp_rate <= 0.0 ||
      c.mrp_rate >= 1.0)
    throw std::invalid_argument("masking rates must lie in (0, 1)");
  if (c.learning_rate <= 0.0)
    throw std::invalid_argument("learning rate must be > 0");
  if (c.epochs < 1 || c.batch_size < 1)
    throw std::invalid_argument("need epochs >= 1 and batch_size >= 1");
}

std::vector<uint8_t> build_attention_mask(int len_o, int len_q, int len_c,
                                          int len_r) {
  if (len_o < 0 || len_q < 0 || len_c < 0 || len_r < 0)
    throw std::invalid_argument("block lengths must be >= 0");
  const int n = len_o + len_q + len_c + len_r;
  if (n < 1) throw std::invalid_argument("mask needs at least one position");
  const int r0 = len_o + len_q + len_c;
  std::vector<uint8_t> mask(static_cast<size_t>(n) * static_cast<size_t>(n),
                            0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      bool ok = j < r0 || (i >= r0 && j <= i);
      mask[static_cast<size_t>(i) * static_cast<size_t>(n) +
           static_cast<size_t>(j)] = ok ? 1 : 0;
    }
  return mask;
}

void validate_input_batch(const InputBatch& b, const GeneratorConfig& cfg) {
  const int n = b.n();
  if (n < 1) throw std::invalid_argument("empty input batch");
  if (b.len_o < 1 || b.len_q < 1 || b.len_c < 1 || b.len_r < 1)
    throw std::invalid_argument("every block must be non-empty");
  if (b.len_o != b.len_q)
    throw std::invalid_argument("object and concept blocks must align");
  if (b.len_o > cfg.region_len)
    throw std::invalid_argument("too many regions for the configuration");
  if (b.len_c > cfg.max_context_len || b.len_r > cfg.max_response_len + 2)
    throw std::invalid_argument("block length exceeds configured maximum");
  if (static_cast<int>(b.token_ids.size()) != n ||
      static_cast<int>(b.turn_ids.size()) != n ||
      static_cast<int>(b.position_ids.size()) != n ||
      static_cast<int>(b.segment_ids.size()) != n)
    throw std::invalid_argument("id sequences must all have length n");
  if (b.object_features.rows() != b.len_o ||
      b.object_features.cols() != cfg.d_obj)
    throw std::invalid_argument("object feature shape mismatch");
  if (b.attention_mask.size() !=
      static_cast<size_t>(n) * static_cast<size_t>(n))
    throw std::invalid_argument("attention mask shape mismatch");
  for (int i = 0; i < n; ++i) {
    int expect = i < b.len_o               ? 0
                 : i < b.len_o + b.len_q   ? 1
                 : i < n - b.len_r         ? 2
                                           : 3;
    if (b.segment_ids[static_cast<size_t>(i)] != expect)
      throw std::invalid_argument("segment ids must form O, Q, C, R blocks");
    if (b.token_ids[static_cast<size_t>(i)] < 0 ||
        b.token_ids[static_cast<size_t>(i)] >= cfg.vocab_size)
      throw std::invalid_argument("token id out of range");
    if (b.turn_ids[static_cast<size_t>(i)] < 0 ||
        b.turn_ids[static_cast<size_t>(i)] >= cfg.max_turns)
      throw std::invalid_argument("turn id out of range");
  }
  if (b.mcp_positions.size() != b.mcp_targets.size() ||
      b.mrp_positions.size() != b.mrp_targets.size())
    throw std::invalid_argument("masking positions/targets length mismatch");
  for (int p : b.mcp_positions)
    if (p < b.len_o || p >= b.len_o + b.len_q)
      throw std::invalid_argument("concept mask position outside Q block");
  for (int p : b.mrp_positions)
    if (p < n - b.len_r || p >= n)
      throw std::invalid_argument("response mask position outside R block");
}

Generator::Generator(const Tokenizer& tok, const GeneratorConfig& cfg)
    : tok_(tok), config_(cfg) {
  if (config_.vocab_size == 0) config_.vocab_size = tok_.vocab_size();
  if (config_.vocab_size != tok_.vocab_size())
    throw std::invalid_argument(
        "config vocab size disagrees with the tokenizer");
  validate_generator_config(config_);

  Rng rng(config_.seed);
  const int d = config_.hidden;
  token_embed_ = &params_.add(
      "embed.token", nn::gaussian_init(config_.vocab_size, d, 0.1, rng));
  turn_embed_ = &params_.add("embed.turn",
                             nn::gaussian_init(config_.max_turns, d, 0.1, rng));
  pos_embed_ = &params_.add("embed.position",
                            nn::gaussian_init(max_positions(), d, 0.1, rng));
  seg_embed_ = &params_.add("embed.segment",
                            nn::gaussian_init(4, d, 0.1, rng));
  obj_w_ = &params_.add("obj.W", nn::xavier_init(config_.d_obj, d, rng));
  obj_b_ = &params_.add("obj.b", nn::Matrix::Zero(1, d));

  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Layer layer;
    layer.wq = &params_.add(p + "attn.Wq", nn::xavier_init(d, d, rng));
    layer.bq = &params_.add(p + "attn.bq", nn::Matrix::Zero(1, d));
    layer.wk = &params_.add(p + "attn.Wk", nn::xavier_init(d, d, rng));
    layer.bk = &params_.add(p + "attn.bk", nn::Matrix::Zero(1, d));
    layer.wv = &params_.add(p + "attn.Wv", nn::xavier_init(d, d, rng));
    layer.bv = &params_.add(p + "attn.bv", nn::Matrix::Zero(1, d));
    layer.wo = &params_.add(p + "attn.Wo", nn::xavier_init(d, d, rng));
    layer.bo = &params_.add(p + "attn.bo", nn::Matrix::Zero(1, d));
    layer.ln1_g = &params_.add(p + "ln1.g", nn::Matrix::Ones(1, d));
    layer.ln1_b = &params_.add(p + "ln1.b", nn::Matrix::Zero(1, d));
    layer.ffn_w1 = &params_.add(p + "ffn.W1", nn::xavier_init(d, 4 * d, rng));
    layer.ffn_b1 = &params_.add(p + "ffn.b1", nn::Matrix::Zero(1, 4 * d));
    layer.ffn_w2 = &params_.add(p + "ffn.W2", nn::xavier_init(4 * d, d, rng));
    layer.ffn_b2 = &params_.add(p + "ffn.b2", nn::Matrix::Zero(1, d));
    layer.ln2_g = &params_.add(p + "ln2.g", nn::Matrix::Ones(1, d));
    layer.ln2_b = &params_.add(p + "ln2.b", nn::Matrix::Zero(1, d));
    layers_.push_back(layer);
  }

  head_w_ =
      &params_.add("head.W", nn::xavier_init(d, config_.vocab_size, rng));
  head_b_ = &params_.add("head.b", nn::Matrix::Zero(1, config_.vocab_size));
  vkb_w_ = &params_.add("vkb.W", nn::xavier_init(d, config_.vocab_size, rng));
  vkb_b_ = &params_.add("vkb.b", nn::Matrix::Zero(1, config_.vocab_size));
}

void Generator::set_global_concept_ids(std::vector<int> ids) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  for (int id : ids)
    if (id < 0 || id >= config_.vocab_size)
      throw std::invalid_argument("concept id out of range");
  global_concept_ids_ = std::move(ids);
}

const std::vector<int>& Generator::concept_ids_for(const InputBatch& b) const {
  if (config_.global_concept_vocab && !global_concept_ids_.empty())
    return global_concept_ids_;
  return b.concept_token_ids;
}

InputBatch Generator::build_decode_inputs(
    const RegionSet& regions, const std::vector<std::vector<int>>& context,
    const std::vector<int>& response_tokens, bool append_mask) const {
  validate_region_set(regions);
  if (regions.d_obj() != config_.d_obj)
    throw std::invalid_argument("region feature dimension mismatch");
  const int k = regions.k();
  if (k > config_.region_len)
    throw std::invalid_argument("too many regions for the configuration");
  if (context.empty()) throw std::runtime_error("empty context");

  InputBatch b;
  b.object_features = regions.features;
  b.boxes = regions.boxes;

  std::vector<int> q_tokens;
  for (const auto& tag : regions.concepts)
    q_tokens.push_back(tok_.id_of(normalize_tag(tag)));

  const int turns = static_cast<int>(context.size());
  auto turn_of = [this, turns](int utterance) {
    return std::min(turns - utterance, config_.max_turns - 1);
  };
  std::vector<int> c_tokens, c_turns;
  for (int u = 0; u < turns; ++u) {
    if (context[static_cast<size_t>(u)].empty())
      throw std::runtime_error("empty utterance in context");
    if (u) {
      c_tokens.push_back(tok_.sep());
      c_turns.push_back(turn_of(u - 1));
    }
    for (int t : context[static_cast<size_t>(u)]) {
      c_tokens.push_back(t);
      c_turns.push_back(turn_of(u));
    }
  }
  if (static_cast<int>(c_tokens.size()) > config_.max_context_len) {
    const size_t drop = c_tokens.size() -
                        static_cast<size_t>(config_.max_context_len);
    c_tokens.erase(c_tokens.begin(),
                   c_tokens.begin() + static_cast<long>(drop));
    c_turns.erase(c_turns.begin(), c_turns.begin() + static_cast<long>(drop));
  }

  std::vector<int> r_block;
  r_block.push_back(tok_.bos());
  for (int t : response_tokens) r_block.push_back(t);
  if (append_mask) r_block.push_back(tok_.mask());
  if (static_cast<int>(r_block.size()) > config_.max_response_len + 2)
    throw std::invalid_argument("response too long for the configuration");

  b.len_o = k;
  b.len_q = k;
  b.len_c = static_cast<int>(c_tokens.size());
  b.len_r = static_cast<int>(r_block.size());

  const int oq_turn = turn_of(0);
  for (int i = 0; i < k; ++i) b.token_ids.push_back(tok_.reg());
  b.token_ids.insert(b.token_ids.end(), q_tokens.begin(), q_tokens.end());
  b.token_ids.insert(b.token_ids.end(), c_tokens.begin(), c_tokens.end());
  b.token_ids.insert(b.token_ids.end(), r_block.begin(), r_block.end());

  b.turn_ids.assign(static_cast<size_t>(2 * k), oq_turn);
  b.turn_ids.insert(b.turn_ids.end(), c_turns.begin(), c_turns.end());
  b.turn_ids.insert(b.turn_ids.end(), static_cast<size_t>(b.len_r), 0);

  for (int i = 0; i < b.n(); ++i) b.position_ids.push_back(i);

  b.segment_ids.assign(static_cast<size_t>(k), 0);
  b.segment_ids.insert(b.segment_ids.end(), static_cast<size_t>(k), 1);
  b.segment_ids.insert(b.segment_ids.end(), static_cast<size_t>(b.len_c), 2);
  b.segment_ids.insert(b.segment_ids.end(), static_cast<size_t>(b.len_r), 3);

  b.attention_mask = build_attention_mask(b.len_o, b.len_q, b.len_c, b.len_r);

  std::set<int> concept_ids(q_tokens.begin(), q_tokens.end());
  concept_ids.erase(tok_.unk());
  b.concept_token_ids.assign(concept_ids.begin(), concept_ids.end());

  validate_input_batch(b, config_);
  return b;
}

InputBatch Generator::build_inputs(const Quadruple& q, Rng& rng) const {
  if (q.response.empty()) throw std::runtime_error("empty response");
  std::vector<int> words = q.response;
  if (static_cast<int>(words.size()) > config_.max_response_len)
    words.resize(static_cast<size_t>(config_.max_response_len));
  words.push_back(tok_.eos());

  InputBatch b = build_decode_inputs(q.regions, q.context, words, false);

  if (config_.mcp_enabled) {
    const int n_mask = std::max(
        1, static_cast<int>(config_.mcp_rate * static_cast<double>(b.len_q)));
    auto offsets = rng.sample_indices(static_cast<size_t>(b.len_q),
                                      static_cast<size_t>(n_mask));
    for (size_t off : offsets) {
      const int pos = b.len_o + static_cast<int>(off);
      b.mcp_positions.push_back(pos);
      b.mcp_targets.push_back(b.token_ids[static_cast<size_t>(pos)]);
      b.token_ids[static_cast<size_t>(pos)] = tok_.mask();
    }
  }

  // Maskable response positions: the words and the trailing [EOS]; the
  // leading [BOS] is never masked.
  const int r0 = b.n() - b.len_r;
  const int maskable = b.len_r - 1;
  const int n_mask = std::max(
      1, static_cast<int>(config_.mrp_rate * static_cast<double>(maskable)));
  auto offsets = rng.sample_indices(static_cast<size_t>(maskable),
                                    static_cast<size_t>(n_mask));
  for (size_t off : offsets) {
    const int pos = r0 + 1 + static_cast<int>(off);
    b.mrp_positions.push_back(pos);
    b.mrp_targets.push_back(b.token_ids[static_cast<size_t>(pos)]);
    b.token_ids[static_cast<size_t>(pos)] = tok_.mask();
  }
  return b;
}

nn::NodePtr Generator::forward_hidden(
    nn::Graph& g, const InputBatch& b,
    std::vector<std::vector<nn::Matrix>>* attention) {
  validate_input_batch(b, config_);
  const int d = config_.hidden;
  const int dh = d / config_.heads;

  std::vector<int> text_ids(b.token_ids.begin() + b.len_o,
                            b.token_ids.end());
  nn::NodePtr obj = g.add_rowvec(
      g.matmul(g.constant(b.object_features), g.leaf(*obj_w_)),
      g.leaf(*obj_b_));
  nn::NodePtr content =
      g.concat_rows({obj, g.gather_rows(g.leaf(*token_embed_), text_ids)});
  nn::NodePtr x =
      g.add(g.add(content, g.gather_rows(g.leaf(*turn_embed_), b.turn_ids)),
            g.add(g.gather_rows(g.leaf(*pos_embed_), b.position_ids),
                  g.gather_rows(g.leaf(*seg_embed_), b.segment_ids)));

  if (attention) {
    attention->clear();
    attention->resize(static_cast<size_t>(config_.layers));
  }

  for (size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    nn::NodePtr q = g.add_rowvec(g.matmul(x, g.leaf(*layer.wq)),
                                 g.leaf(*layer.bq));
    nn::NodePtr k = g.add_rowvec(g.matmul(x, g.leaf(*layer.wk)),
                                 g.leaf(*layer.bk));
    nn::NodePtr v = g.add_rowvec(g.matmul(x, g.leaf(*layer.wv)),
                                 g.leaf(*layer.bv));
    std::vector<nn::NodePtr> heads;
    for (int h = 0; h < config_.heads; ++h) {
      nn::NodePtr qh = g.slice_cols(q, h * dh, dh);
      nn::NodePtr kh = g.slice_cols(k, h * dh, dh);
      nn::NodePtr vh = g.slice_cols(v, h * dh, dh);
      nn::NodePtr scores =
          g.scale(g.matmul(qh, g.transpose(kh)),
                  1.0 / std::sqrt(static_cast<double>(dh)));
      nn::NodePtr weights = g.masked_softmax_rows(scores, b.attention_mask);
      if (attention) (*attention)[l].push_back(weights->value);
      heads.push_back(g.matmul(weights, vh));
    }
    nn::NodePtr merged =
        heads.size() == 1 ? heads[0] : g.concat_cols(heads);
    nn::NodePtr attn_out = g.add_rowvec(g.matmul(merged, g.leaf(*layer.wo)),
                                        g.leaf(*layer.bo));
    x = g.layer_norm(g.add(x, attn_out), g.leaf(*layer.ln1_g),
                     g.leaf(*layer.ln1_b));
    nn::NodePtr f = g.add_rowvec(
        g.matmul(g.gelu(g.add_rowvec(g.matmul(x, g.leaf(*layer.ffn_w1)),
                                     g.leaf(*layer.ffn_b1))),
                 g.leaf(*layer.ffn_w2)),
        g.leaf(*layer.ffn_b2));
    x = g.layer_norm(g.add(x, f), g.leaf(*layer.ln2_g),
                     g.leaf(*layer.ln2_b));
  }
  return x;
}

nn::NodePtr Generator::head_logits(nn::Graph& g, nn::NodePtr rows) {
  return g.add_rowvec(g.matmul(rows, g.leaf(*head_w_)), g.leaf(*head_b_));
}

nn::NodePtr Generator::vkb_bias_row(nn::Graph& g, nn::NodePtr hidden,
                                    const InputBatch& b) {
  const std::vector<int>& ids = concept_ids_for(b);
  if (ids.empty()) {
    ++vkb_fallback_count_;
    return nullptr;
  }
  nn::NodePtr pooled =
      g.mean_rows(g.slice_rows(hidden, b.len_o, b.len_q));
  nn::NodePtr bias = g.add_rowvec(g.matmul(pooled, g.leaf(*vkb_w_)),
                                  g.leaf(*vkb_b_));
  return g.keep_only_columns(bias, ids);
}

nn::NodePtr Generator::mcp_loss_node(nn::Graph& g, nn::NodePtr hidden,
                                     const InputBatch& b) {
  if (b.mcp_positions.empty()) {
    ++mcp_empty_count_;
    return g.scalar(0.0);
  }
  nn::NodePtr rows = g.gather_rows(hidden, b.mcp_positions);
  nn::NodePtr lp = g.log_softmax_rows(head_logits(g, rows));

  const int m = static_cast<int>(b.mcp_positions.size());
  CostMatrix cost;
  cost.entries.resize(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      cost.entries(i, j) = -lp->value(i, b.mcp_targets[static_cast<size_t>(j)]);
  Assignment a = solve_assignment(cost);

  std::vector<std::pair<int, int>> picks;
  for (int i = 0; i < m; ++i)
    picks.emplace_back(
        i, b.mcp_targets[static_cast<size_t>(a.target_of[static_cast<size_t>(
               i)])]);
  return g.neg_select_sum(lp, picks);
}

nn::NodePtr Generator::mrp_loss_node(nn::Graph& g, nn::NodePtr hidden,
                                     const InputBatch& b) {
  if (b.mrp_positions.empty())
    throw std::invalid_argument("batch has no masked response positions");
  nn::NodePtr rows = g.gather_rows(hidden, b.mrp_positions);
  nn::NodePtr logits = head_logits(g, rows);
  if (config_.vkb_enabled) {
    nn::NodePtr bias = vkb_bias_row(g, hidden, b);
    if (bias) logits = g.add_rowvec(logits, bias);
  }
  nn::NodePtr lp = g.log_softmax_rows(logits);
  std::vector<std::pair<int, int>> picks;
  for (size_t i = 0; i < b.mrp_positions.size(); ++i)
    picks.emplace_back(static_cast<int>(i), b.mrp_targets[i]);
  return g.neg_select_sum(lp, picks);
}

nn::NodePtr Generator::total_loss_node(nn::Graph& g, const InputBatch& b) {
  nn::NodePtr hidden = forward_hidden(g, b);
  nn::NodePtr mrp = mrp_loss_node(g, hidden, b);
  if (!config_.mcp_enabled) return mrp;
  return g.add(mrp, mcp_loss_node(g, hidden, b));
}

double Generator::mcp_loss(const InputBatch& b) {
  nn::Graph g;
  return mcp_loss_node(g, forward_hidden(g, b), b)->value(0, 0);
}

double Generator::mrp_loss(const InputBatch& b) {
  nn::Graph g;
  return mrp_loss_node(g, forward_hidden(g, b), b)->value(0, 0);
}

double Generator::total_loss(const InputBatch& b) {
  nn::Graph g;
  return total_loss_node(g, b)->value(0, 0);
}

std::vector<double> Generator::train(
    const std::vector<Quadruple>& quadruples) {
  if (quadruples.empty()) throw std::invalid_argument("empty training set");

  nn::AdamOptimizer opt(params_.all(), config_.learning_rate);
  Rng rng(config_.seed + 0x9e3779b97f4a7c15ULL);
  std::vector<size_t> order(quadruples.size());
  std::iota(order.begin(), order.end(), size_t{0});

  std::vector<double> curve;
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_total = 0.0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(config_.batch_size)) {
      const size_t end = std::min(
          order.size(), start + static_cast<size_t>(config_.batch_size));
      nn::Graph g;
      nn::NodePtr sum;
      for (size_t i = start; i < end; ++i) {
        InputBatch b = build_inputs(quadruples[order[i]], rng);
        nn::NodePtr loss = total_loss_node(g, b);
        sum = sum ? g.add(sum, loss) : loss;
      }
      epoch_total += sum->value(0, 0);
      nn::NodePtr mean =
          g.scale(sum, 1.0 / static_cast<double>(end - start));
      params_.zero_grad();
      g.backward(mean);
      opt.step();
    }
    curve.push_back(epoch_total / static_cast<double>(order.size()));
  }
  return curve;
}

Eigen::VectorXd Generator::masked_position_distribution(const InputBatch& b,
                                                        int position) {
  if (position < 0 || position >= b.n())
    throw std::out_of_range("position out of range");
  nn::Graph g;
  nn::NodePtr hidden = forward_hidden(g, b);
  nn::NodePtr logits = head_logits(g, g.slice_rows(hidden, position, 1));
  if (config_.vkb_enabled) {
    nn::NodePtr bias = vkb_bias_row(g, hidden, b);
    if (bias) logits = g.add(logits, bias);
  }
  return g.softmax_rows(logits)->value.row(0).transpose();
}

GenerationResult Generator::generate(
    const RegionSet& regions, const std::vector<std::vector<int>>& context,
    const DecodeOptions& opts) {
  if (opts.max_len < 1 || opts.max_len > config_.max_response_len)
    throw std::invalid_argument("max_len out of range");
  if (!opts.greedy && opts.temperature <= 0.0)
    throw std::invalid_argument("temperature must be > 0");
  Rng rng(opts.seed);

  GenerationResult res;
  while (static_cast<int>(res.tokens.size()) < opts.max_len) {
    InputBatch b = build_decode_inputs(regions, context, res.tokens, true);
    Eigen::VectorXd dist = masked_position_distribution(b, b.n() - 1);
    int pick = 0;
    if (opts.greedy) {
      for (int i = 1; i < dist.size(); ++i)
        if (dist(i) > dist(pick)) pick = i;
    } else {
      Eigen::VectorXd p = dist;
      if (opts.temperature != 1.0)
        p = p.array().pow(1.0 / opts.temperature).matrix();
      if (opts.top_k > 0 && opts.top_k < p.size()) {
        std::vector<int> idx(static_cast<size_t>(p.size()));
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&p](int a, int bb) {
          if (p(a) != p(bb)) return p(a) > p(bb);
          return a < bb;
        });
        Eigen::VectorXd kept = Eigen::VectorXd::Zero(p.size());
        for (int i = 0; i < opts.top_k; ++i)
          kept(idx[static_cast<size_t>(i)]) = p(idx[static_cast<size_t>(i)]);
        p = kept;
      }
      p /= p.sum();
      const double u = rng.uniform_real();
      double acc = 0.0;
      pick = static_cast<int>(p.size()) - 1;
      for (int i = 0; i < p.size(); ++i) {
        acc += p(i);
        if (u < acc) {
          pick = i;
          break;
        }
      }
    }
    res.step_distributions.push_back(std::move(dist));
    if (pick == tok_.eos()) {
      res.hit_eos = true;
      break;
    }
    res.tokens.push_back(pick);
  }
  return res;
}

AttentionExport Generator::export_attention(const InputBatch& b, int layer,
                                            int head) {
  if (layer < 0 || layer >= config_.layers || head < 0 ||
      head >= config_.heads)
    throw std::out_of_range("attention index out of range");
  std::vector<std::vector<nn::Matrix>> attention;
  nn::Graph g;
  forward_hidden(g, b, &attention);
  const nn::Matrix& a =
      attention[static_cast<size_t>(layer)][static_cast<size_t>(head)];

  AttentionExport e;
  e.layer = layer;
  e.head = head;
  e.boxes = b.boxes;
  const int r0 = b.n() - b.len_r;
  for (int i = 0; i < b.len_r; ++i) {
    e.rows.push_back(r0 + i);
    std::vector<double> row;
    for (int j = 0; j < b.len_o; ++j)
      row.push_back(std::round(a(r0 + i, j) * 1e6) / 1e6);
    e.weights.push_back(std::move(row));
  }
  return e;
}

std::string attention_export_to_json(const AttentionExport& e) {
  nlohmann::json j;
  j["layer"] = e.layer;
  j["head"] = e.head;
  j["rows"] = e.rows;
  j["boxes"] = nlohmann::json::array();
  for (const auto& box : e.boxes)
    j["boxes"].push_back({box[0], box[1], box[2], box[3]});
  j["weights"] = e.weights;
  return j.dump();
}

void Generator::save(const std::string& path) const {
  BinaryWriter w(path);
  w.magic("MGEN");
  w.u32(kCheckpointVersion);
  w.u64(tok_.fingerprint());
  w.u32(static_cast<uint32_t>(config_.layers));
  w.u32(static_cast<uint32_t>(config_.hidden));
  w.u32(static_cast<uint32_t>(config_.heads));
  w.u32(static_cast<uint32_t>(config_.vocab_size));
  w.u32(static_cast<uint32_t>(config_.max_context_len));
  w.u32(static_cast<uint32_t>(config_.max_response_len));
  w.u32(static_cast<uint32_t>(config_.region_len));
  w.u32(static_cast<uint32_t>(config_.d_obj));
  w.u32(static_cast<uint32_t>(config_.max_turns));
  w.f64(config_.mcp_rate);
  w.f64(config_.mrp_rate);
  w.u32(config_.vkb_enabled ? 1 : 0);
  w.u32(config_.mcp_enabled ? 1 : 0);
  w.u32(config_.global_concept_vocab ? 1 : 0);
  w.f64(config_.learning_rate);
  w.u32(static_cast<uint32_t>(config_.epochs));
  w.u32(static_cast<uint32_t>(config_.batch_size));
  w.u64(config_.seed);
  w.u64(global_concept_ids_.size());
  for (int id : global_concept_ids_) w.u32(static_cast<uint32_t>(id));
  auto all = params_.all();
  w.u64(all.size());
  for (const auto* p : all) {
    w.str(p->name);
    w.matrix(p->value);
  }
}

Generator Generator::load(const std::string& path, const Tokenizer& tok) {
  BinaryReader r(path, "checkpoint");
  r.expect_magic("MGEN", "generator checkpoint");
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " +
                             std::to_string(version));
  if (r.u64() != tok.fingerprint())
    throw std::runtime_error(
        "tokenizer mismatch: checkpoint was trained with a different "
        "vocabulary");
  GeneratorConfig cfg;
  cfg.layers = static_cast<int>(r.u32());
  cfg.hidden = static_cast<int>(r.u32());
  cfg.heads = static_cast<int>(r.u32());
  cfg.vocab_size = static_cast<int>(r.u32());
  cfg.max_context_len = static_cast<int>(r.u32());
  cfg.max_response_len = static_cast<int>(r.u32());
  cfg.region_len = static_cast<int>(r.u32());
  cfg.d_obj = static_cast<int>(r.u32());
  cfg.max_turns = static_cast<int>(r.u32());
  cfg.mcp_rate = r.f64();
  cfg.mrp_rate = r.f64();
  cfg.vkb_enabled = r.u32() != 0;
  cfg.mcp_enabled = r.u32() != 0;
  cfg.global_concept_vocab = r.u32() != 0;
  cfg.learning_rate = r.f64();
  cfg.epochs = static_cast<int>(r.u32());
  cfg.batch_size = static_cast<int>(r.u32());
  cfg.seed = r.u64();

  Generator out(tok, cfg);
  const uint64_t n_global = r.u64();
  std::vector<int> global_ids;
  for (uint64_t i = 0; i < n_global; ++i)
    global_ids.push_back(static_cast<int>(r.u32()));
  out.set_global_concept_ids(std::move(global_ids));

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
      throw std::runtime_error("checkpoint shape mismatch for '" + name + "'");
    p->value = std::move(m);
  }
  return out;
}

}  // namespace vgdial
