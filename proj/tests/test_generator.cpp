#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "vgdial/corpus.h"
#include "vgdial/generator.h"
#include "vgdial/rng.h"

using namespace vgdial;

namespace {

Tokenizer toy_tokenizer() {
  std::vector<Dialog> dialogs;
  Dialog d;
  d.id = "d0";
  d.context = {"the red fish swims fast", "a blue bird flies high"};
  d.response = "green frogs jump over rocks";
  dialogs.push_back(d);
  Dialog e;
  e.id = "d1";
  e.context = {"look at the water"};
  e.response = "nice view today";
  dialogs.push_back(e);
  return build_vocabulary(dialogs, {"alpha", "beta", "gamma", "delta"}, 1);
}

GeneratorConfig tiny_config(int d_obj = 4) {
  GeneratorConfig cfg;
  cfg.layers = 1;
  cfg.hidden = 16;
  cfg.heads = 2;
  cfg.max_context_len = 24;
  cfg.max_response_len = 8;
  cfg.region_len = 4;
  cfg.d_obj = d_obj;
  cfg.max_turns = 8;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.seed = 1;
  return cfg;
}

RegionSet toy_regions(const std::vector<std::string>& tags, int d_obj = 4) {
  RegionSet r;
  r.image_id = "img";
  r.concepts = tags;
  r.features = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(tags.size()),
                                     d_obj);
  for (Eigen::Index i = 0; i < r.features.rows(); ++i)
    r.features(i, 0) = 0.5 + 0.25 * static_cast<double>(i);
  return r;
}

Quadruple toy_quadruple(const Tokenizer& tok) {
  Quadruple q;
  q.dialog_id = "d0";
  q.image_id = "img";
  q.regions = toy_regions({"alpha", "beta", "gamma"});
  q.context = {tok.encode("the red fish"), tok.encode("a blue bird")};
  q.response = tok.encode("green frogs jump");
  return q;
}

bool mask_at(const std::vector<uint8_t>& m, int n, int i, int j) {
  return m[static_cast<size_t>(i) * static_cast<size_t>(n) +
           static_cast<size_t>(j)] != 0;
}

void zero_params(Generator& gen) {
  for (auto* p : gen.params().all()) p->value.setZero();
  gen.params().find("layer0.ln1.g")->value.setOnes();
  gen.params().find("layer0.ln2.g")->value.setOnes();
}

}  // namespace

TEST_CASE("attention mask follows the hybrid rule") {
  auto m = build_attention_mask(1, 1, 1, 2);
  const int n = 5;
  for (int j = 0; j < 5; ++j) {
    CHECK(mask_at(m, n, 3, j) == (j <= 3));
    CHECK(mask_at(m, n, 4, j));
  }
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j) CHECK(mask_at(m, n, i, j) == (j < 3));

  auto all_bi = build_attention_mask(0, 0, 3, 0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(mask_at(all_bi, 3, i, j));

  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    int lo = static_cast<int>(rng.uniform(4));
    int lq = static_cast<int>(rng.uniform(4));
    int lc = static_cast<int>(rng.uniform(5));
    int lr = static_cast<int>(rng.uniform(5));
    if (lo + lq + lc + lr == 0) lc = 1;
    int total = lo + lq + lc + lr;
    int r0 = lo + lq + lc;
    auto mm = build_attention_mask(lo, lq, lc, lr);
    REQUIRE(static_cast<int>(mm.size()) == total * total);
    for (int i = 0; i < total; ++i)
      for (int j = 0; j < total; ++j) {
        bool want = j < r0 || (i >= r0 && j <= i);
        CHECK(mask_at(mm, total, i, j) == want);
      }
  }
}

TEST_CASE("decode inputs lay out the four blocks") {
  Tokenizer tok = toy_tokenizer();
  Generator gen(tok, tiny_config());
  Quadruple q = toy_quadruple(tok);

  InputBatch b = gen.build_decode_inputs(q.regions, q.context, q.response,
                                         false);
  const int k = 3;
  CHECK(b.len_o == k);
  CHECK(b.len_q == k);
  CHECK(b.len_c == 7);  // 3 + [SEP] + 3
  CHECK(b.len_r == 4);  // [BOS] + 3 words
  CHECK(b.n() == k + k + 7 + 4);

  for (int i = 0; i < k; ++i) {
    CHECK(b.token_ids[static_cast<size_t>(i)] == tok.reg());
    CHECK(b.segment_ids[static_cast<size_t>(i)] == 0);
  }
  CHECK(b.token_ids[static_cast<size_t>(k)] == tok.id_of("alpha"));
  CHECK(b.token_ids[static_cast<size_t>(k + 1)] == tok.id_of("beta"));
  CHECK(b.token_ids[static_cast<size_t>(k + 2)] == tok.id_of("gamma"));
  for (int i = k; i < 2 * k; ++i)
    CHECK(b.segment_ids[static_cast<size_t>(i)] == 1);

  const int c0 = 2 * k;
  CHECK(b.token_ids[static_cast<size_t>(c0 + 3)] == tok.sep());
  for (int i = c0; i < c0 + 7; ++i)
    CHECK(b.segment_ids[static_cast<size_t>(i)] == 2);

  const int r0 = c0 + 7;
  CHECK(b.token_ids[static_cast<size_t>(r0)] == tok.bos());
  for (int i = r0; i < b.n(); ++i) {
    CHECK(b.segment_ids[static_cast<size_t>(i)] == 3);
    CHECK(b.turn_ids[static_cast<size_t>(i)] == 0);
  }
  for (int i = 0; i < b.n(); ++i)
    CHECK(b.position_ids[static_cast<size_t>(i)] == i);

  InputBatch masked = gen.build_decode_inputs(q.regions, q.context,
                                              q.response, true);
  CHECK(masked.len_r == 5);
  CHECK(masked.token_ids.back() == tok.mask());

  CHECK(b.concept_token_ids ==
        std::vector<int>{tok.id_of("alpha"), tok.id_of("beta"),
                         tok.id_of("gamma")});
}

TEST_CASE("turn ids count context backwards and cap at the table size") {
  Tokenizer tok = toy_tokenizer();
  Generator gen(tok, tiny_config());

  RegionSet regions = toy_regions({"alpha"});
  std::vector<std::vector<int>> context = {tok.encode("red fish"),
                                           tok.encode("blue bird"),
                                           tok.encode("green frogs")};
  InputBatch b = gen.build_decode_inputs(regions, context, {}, false);

  CHECK(b.turn_ids[0] == 3);  // O block
  CHECK(b.turn_ids[1] == 3);  // Q block
  std::vector<int> c_turns(b.turn_ids.begin() + 2,
                           b.turn_ids.begin() + 2 + b.len_c);
  CHECK(c_turns == std::vector<int>{3, 3, 3, 2, 2, 2, 1, 1});

  GeneratorConfig capped = tiny_config();
  capped.max_turns = 3;
  Generator gen2(tok, capped);
  InputBatch b2 = gen2.build_decode_inputs(regions, context, {}, false);
  CHECK(b2.turn_ids[0] == 2);
  for (int t : b2.turn_ids) CHECK(t <= 2);
}

TEST_CASE("long context truncates from the front") {
  Tokenizer tok = toy_tokenizer();
  GeneratorConfig cfg = tiny_config();
  cfg.max_context_len = 5;
  Generator gen(tok, cfg);

  RegionSet regions = toy_regions({"alpha"});
  std::vector<std::vector<int>> context = {tok.encode("the red fish swims"),
                                           tok.encode("a blue bird")};
  InputBatch b = gen.build_decode_inputs(regions, context, {}, false);
  CHECK(b.len_c == 5);
  std::vector<int> kept(b.token_ids.begin() + 2, b.token_ids.begin() + 7);
  CHECK(kept == std::vector<int>{tok.id_of("swims"), tok.sep(),
                                 tok.id_of("a"), tok.id_of("blue"),
                                 tok.id_of("bird")});
}

TEST_CASE("decode input validation") {
  Tokenizer tok = toy_tokenizer();
  Generator gen(tok, tiny_config());
  RegionSet regions = toy_regions({"alpha", "beta"});

  CHECK_THROWS_WITH_AS(gen.build_decode_inputs(regions, {}, {}, false),
                       "empty context", std::runtime_error);
  CHECK_THROWS_WITH_AS(
      gen.build_decode_inputs(regions, {{tok.id_of("red")}, {}}, {}, false),
      "empty utterance in context", std::runtime_error);

  std::vector<int> too_long(10, tok.id_of("red"));
  CHECK_THROWS_AS(gen.build_decode_inputs(regions, {{tok.id_of("red")}},
                                          too_long, false),
                  std::invalid_argument);

  RegionSet wide = toy_regions({"a", "b", "c", "d", "e"});
  CHECK_THROWS_AS(gen.build_decode_inputs(wide, {{tok.id_of("red")}}, {},
                                          false),
                  std::invalid_argument);

  RegionSet wrong_dim = toy_regions({"alpha"}, 6);
  CHECK_THROWS_AS(gen.build_decode_inputs(wrong_dim, {{tok.id_of("red")}},
                                          {}, false),
                  std::invalid_argument);
}

TEST_CASE("training inputs mask both objectives at the stated rates") {
  Tokenizer tok = toy_tokenizer();
  GeneratorConfig cfg = tiny_config();
  cfg.region_len = 36;
  cfg.max_response_len = 20;
  cfg.max_context_len = 40;
  Generator gen(tok, cfg);

  std::vector<std::string> tags;
  for (int i = 0; i < 36; ++i)
    tags.push_back(i % 2 ? "alpha" : "beta");
  Quadruple q;
  q.dialog_id = "d";
  q.image_id = "img";
  q.regions = toy_regions(tags);
  q.context = {tok.encode("the red fish")};
  q.response.assign(19, tok.id_of("green"));

  Rng rng(5);
  InputBatch b = gen.build_inputs(q, rng);
  CHECK(b.mcp_positions.size() == 5);   // 36 concepts
  CHECK(b.mrp_positions.size() == 14);  // 19 words + EOS maskable

  const int q0 = b.len_o;
  const int r0 = b.len_o + b.len_q + b.len_c;
  for (size_t i = 0; i < b.mcp_positions.size(); ++i) {
    int pos = b.mcp_positions[i];
    CHECK(pos >= q0);
    CHECK(pos < q0 + b.len_q);
    CHECK(b.token_ids[static_cast<size_t>(pos)] == tok.mask());
    int original = pos - q0;
    CHECK(b.mcp_targets[i] ==
          tok.id_of(normalize_tag(tags[static_cast<size_t>(original)])));
  }
  for (size_t i = 0; i < b.mrp_positions.size(); ++i) {
    int pos = b.mrp_positions[i];
    CHECK(pos > r0);  // [BOS] never masked
    CHECK(pos < b.n());
    CHECK(b.token_ids[static_cast<size_t>(pos)] == tok.mask());
  }

  Rng rng_a(5), rng_b(5);
  InputBatch ba = gen.build_inputs(q, rng_a);
  InputBatch bb = gen.build_inputs(q, rng_b);
  CHECK(ba.mcp_positions == bb.mcp_positions);
  CHECK(ba.mrp_positions == bb.mrp_positions);
  CHECK(ba.token_ids == bb.token_ids);

  Quadruple empty = q;
  empty.response.clear();
  Rng rng2(1);
  CHECK_THROWS_WITH_AS(gen.build_inputs(empty, rng2), "empty response",
                       std::runtime_error);
}

TEST_CASE("short examples still mask at least one position each") {
  Tokenizer tok = toy_tokenizer();
  Generator gen(tok, tiny_config());
  Quadruple q = toy_quadruple(tok);
  q.regions = toy_regions({"alpha"});
  q.response = {tok.id_of("green")};

  Rng rng(9);
  InputBatch b = gen.build_inputs(q, rng);
  CHECK(b.mcp_positions.size() == 1);
  CHECK(b.mrp_positions.size() == 1);
}

TEST_CASE("disabling the concept objective skips concept masking") {
  Tokenizer tok = toy_tokenizer();
  GeneratorConfig cfg = tiny_config();
  cfg.mcp_enabled = false;
  Generator gen(tok, cfg);
  Quadruple q = toy_quadruple(tok);
  Rng rng(3);
  InputBatch b = gen.build_inputs(q, rng);
  CHECK(b.mcp_positions.empty());
  CHECK(!b.mrp_positions.empty());
  for (int i = b.len_o; i < b.len_o + b.len_q; ++i)
    CHECK(b.token_ids[static_cast<size_t>(i)] != tok.mask());

  double total = gen.total_loss(b);
  double mrp = gen.mrp_loss(b);
  CHECK(total == mrp);
}

TEST_CASE("forward produces the right shape deterministically") {
  Tokenizer tok = toy_tokenizer();
  Generator gen(tok, tiny_config());
  Quadruple q = toy_quadruple(tok);
  InputBatch b = gen.build_decode_inputs(q.regions, q.context, q.response,
                                         false);

  nn::Graph g;
  nn::NodePtr h = gen.forward_hidden(g, b);
  CHECK(h->rows() == b.n());
  CHECK(h->cols() == 16);

  nn::Graph g2;
  nn::NodePtr h2 = gen.forward_hidden(g2, b);
  CHECK((h->value - h2->value).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("later response tokens cannot influence earlier rows") {
  Tokenizer tok = toy_tokenizer();
  Generator gen(tok, tiny_config());
  Quadruple q = toy_quadruple(tok);

  InputBatch b = gen.build_decode_inputs(q.regions, q.context, q.response,
                                         false);
  nn::Graph g;
  nn::Matrix base = gen.forward_hidden(g, b)->value;

  InputBatch altered = b;
  altered.token_ids[static_cast<size_t>(b.n() - 1)] = tok.id_of("rocks");
  nn::Graph g2;
  nn::Matrix changed = gen.forward_hidden(g2, altered)->value;

  for (int i = 0; i < b.n() - 1; ++i)
    CHECK((base.row(i) - changed.row(i)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((base.row(b.n() - 1) - changed.row(b.n() - 1)).cwiseAbs().maxCoeff() >
        1e-8);
}

TEST_CASE("single masked concept reduces to plain nll") {
  Tokenizer tok = toy_tokenizer();
  Generator gen(tok, tiny_config());
  Quadruple q = toy_quadruple(tok);

  InputBatch b = gen.build_decode_inputs(q.regions, q.context, q.response,
                                         false);
  const int pos = b.len_o;  // first concept slot
  b.token_ids[static_cast<size_t>(pos)] = tok.mask();
  b.mcp_positions = {pos};
  b.mcp_targets = {tok.id_of("alpha")};

  double loss = gen.mcp_loss(b);

  nn::Graph g;
  nn::NodePtr h = gen.forward_hidden(g, b);
  nn::NodePtr logits = gen.head_logits(g, g.slice_rows(h, pos, 1));
  nn::NodePtr lp = g.log_softmax_rows(logits);
  double expect = -lp->value(0, tok.id_of("alpha"));
  CHECK(loss == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("assignment never does worse than identity order and can do better") {
  Tokenizer tok = toy_tokenizer();
  GeneratorConfig cfg = tiny_config();
  cfg.vkb_enabled = false;
  Generator gen(tok, cfg);

  zero_params(gen);
  const int d = cfg.hidden;
  Eigen::VectorXd u = Eigen::VectorXd::Zero(d);
  u(0) = 1.0;
  u(1) = -1.0;
  auto& pos_embed = gen.params().find("embed.position")->value;
  auto& head_w = gen.params().find("head.W")->value;

  RegionSet regions = toy_regions({"alpha", "beta"});
  std::vector<std::vector<int>> context = {{tok.id_of("red")}};
  InputBatch b = gen.build_decode_inputs(regions, context, {}, false);

  const int a_id = tok.id_of("alpha");
  const int b_id = tok.id_of("beta");
  pos_embed.row(b.len_o) = u.transpose();        // first concept slot
  pos_embed.row(b.len_o + 1) = -u.transpose();   // second concept slot
  head_w.col(a_id) = u;
  head_w.col(b_id) = -u;

  // Prediction at slot 0 favors alpha, slot 1 favors beta, but the
  // identity targets are swapped.
  b.token_ids[static_cast<size_t>(b.len_o)] = tok.mask();
  b.token_ids[static_cast<size_t>(b.len_o + 1)] = tok.mask();
  b.mcp_positions = {b.len_o, b.len_o + 1};
  b.mcp_targets = {b_id, a_id};

  double hungarian = gen.mcp_loss(b);

  nn::Graph g;
  nn::NodePtr h = gen.forward_hidden(g, b);
  nn::NodePtr lp = g.log_softmax_rows(
      gen.head_logits(g, g.slice_rows(h, b.len_o, 2)));
  double identity = -lp->value(0, b_id) - lp->value(1, a_id);
  double swapped = -lp->value(0, a_id) - lp->value(1, b_id);

  CHECK(hungarian <= identity + 1e-12);
  CHECK(hungarian < identity - 1e-6);
  CHECK(hungarian == doctest::Approx(swapped).epsilon(1e-12));
}

TEST_CASE("duplicate concept targets make the assignment ambivalent") {
  Tokenizer tok = toy_tokenizer();
  Generator gen(tok, tiny_config());
  Quadruple q = toy_quadruple(tok);
  InputBatch b = gen.build_decode_inputs(q.regions, q.context, q.response,
                                         false);
  const int a_id = tok.id_of("alpha");
  b.token_ids[static_cast<size_t>(b.len_o)] = tok.mask();
  b.token_ids[static_cast<size_t>(b.len_o + 1)] = tok.mask();
  b.mcp_positions = {b.len_o, b.len_o + 1};

  b.mcp_targets = {a_id, a_id};
  double same = gen.mcp_loss(b);

  nn::Graph g;
  nn::NodePtr lp = g.log_softmax_rows(gen.head_logits(
      g, g.slice_rows(gen.forward_hidden(g, b), b.len_o, 2)));
  CHECK(same ==
        doctest::Approx(-lp->value(0, a_id) - lp->value(1, a_id))
            .epsilon(1e-12));
}

TEST_CASE("empty concept mask list contributes zero loss and counts") {
  Tokenizer tok = toy_tokenizer();
  Generator gen(tok, tiny_config());
  Quadruple q = toy_quadruple(tok);
  InputBatch b = gen.build_decode_inputs(q.regions, q.context, q.response,
                                         false);
  long before = gen.mcp_empty_count();
  CHECK(gen.mcp_loss(b) == 0.0);
  CHECK(gen.mcp_empty_count() == before + 1);
}

TEST_CASE("uniform logits give response loss of count times log vocab") {
  Tokenizer tok = toy_tokenizer();
  GeneratorConfig cfg = tiny_config();
  Generator gen(tok, cfg);
  zero_params(gen);

  Quadruple q = toy_quadruple(tok);
  Rng rng(2);
  InputBatch b = gen.build_inputs(q, rng);
  REQUIRE(!b.mrp_positions.empty());
  const double n = static_cast<double>(b.mrp_positions.size());
  CHECK(gen.mrp_loss(b) ==
        doctest::Approx(n * std::log(tok.vocab_size())).epsilon(1e-9));
}

TEST_CASE("response loss equals summed per position nll") {
  Tokenizer tok = toy_tokenizer();
  Generator gen(tok, tiny_config());
  Quadruple q = toy_quadruple(tok);
  Rng rng(8);
  InputBatch b = gen.build_inputs(q, rng);

  double total = 0.0;
  for (size_t i = 0; i < b.mrp_positions.size(); ++i) {
    Eigen::VectorXd dist =
        gen.masked_position_distribution(b, b.mrp_positions[i]);
    total += -std::log(dist(b.mrp_targets[i]));
  }
  CHECK(gen.mrp_loss(b) == doctest::Approx(total).epsilon(1e-9));
  CHECK_THROWS_AS(
      [&] {
        InputBatch plain = gen.build_decode_inputs(q.regions, q.context,
                                                   q.response, false);
        gen.mrp_loss(plain);
      }(),
      std::invalid_argument);
}

TEST_CASE("total loss is the exact sum of its two parts") {
  Tokenizer tok = toy_tokenizer();
  Generator gen(tok, tiny_config());
  Quadruple q = toy_quadruple(tok);
  Rng rng(4);
  InputBatch b = gen.build_inputs(q, rng);
  CHECK(gen.total_loss(b) == gen.mrp_loss(b) + gen.mcp_loss(b));
}

TEST_CASE("vocabulary bias is zero outside the concept ids") {
  Tokenizer tok = toy_tokenizer();
  Generator gen(tok, tiny_config());
  Quadruple q = toy_quadruple(tok);
  Rng rng(6);
  InputBatch b = gen.build_inputs(q, rng);

  nn::Graph g;
  nn::NodePtr hidden = gen.forward_hidden(g, b);
  nn::NodePtr bias = gen.vkb_bias_row(g, hidden, b);
  REQUIRE(bias != nullptr);
  CHECK(bias->rows() == 1);
  CHECK(bias->cols() == tok.vocab_size());

  std::set<int> concepts(b.concept_token_ids.begin(),
                         b.concept_token_ids.end());
  double inside = 0.0;
  for (int v = 0; v < tok.vocab_size(); ++v) {
    if (concepts.count(v))
      inside += std::abs(bias->value(0, v));
    else
      CHECK(bias->value(0, v) == 0.0);
  }
  CHECK(inside > 0.0);

  for (int pos : b.mrp_positions) {
    Eigen::VectorXd dist = gen.masked_position_distribution(b, pos);
    CHECK(dist.sum() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(dist.minCoeff() > 0.0);
  }
}

TEST_CASE("out of vocabulary concepts fall back to the plain head") {
  Tokenizer tok = toy_tokenizer();
  Generator gen(tok, tiny_config());
  Quadruple q = toy_quadruple(tok);
  q.regions = toy_regions({"zzzz", "yyyy"});

  InputBatch b = gen.build_decode_inputs(q.regions, q.context, {}, true);
  CHECK(b.concept_token_ids.empty());

  long before = gen.vkb_fallback_count();
  nn::Graph g;
  nn::NodePtr bias = gen.vkb_bias_row(g, gen.forward_hidden(g, b), b);
  CHECK(bias == nullptr);
  CHECK(gen.vkb_fallback_count() == before + 1);

  Eigen::VectorXd dist = gen.masked_position_distribution(b, b.n() - 1);
  CHECK(dist.sum() == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("global concept vocabulary widens the bias support") {
  Tokenizer tok = toy_tokenizer();
  GeneratorConfig cfg = tiny_config();
  cfg.global_concept_vocab = true;
  Generator gen(tok, cfg);
  gen.set_global_concept_ids({tok.id_of("delta")});

  Quadruple q = toy_quadruple(tok);
  Rng rng(7);
  InputBatch b = gen.build_inputs(q, rng);

  nn::Graph g;
  nn::NodePtr bias = gen.vkb_bias_row(g, gen.forward_hidden(g, b), b);
  REQUIRE(bias != nullptr);
  for (int v = 0; v < tok.vocab_size(); ++v)
    if (v != tok.id_of("delta")) CHECK(bias->value(0, v) == 0.0);
}

TEST_CASE("greedy decoding is deterministic and stops on eos") {
  Tokenizer tok = toy_tokenizer();
  Generator gen(tok, tiny_config());
  Quadruple q = toy_quadruple(tok);

  DecodeOptions opts;
  opts.greedy = true;
  opts.max_len = 6;
  GenerationResult a = gen.generate(q.regions, q.context, opts);
  GenerationResult b = gen.generate(q.regions, q.context, opts);
  CHECK(a.tokens == b.tokens);
  CHECK(a.step_distributions.size() == a.tokens.size() + (a.hit_eos ? 1 : 0));

  zero_params(gen);
  gen.params().find("head.b")->value(0, tok.eos()) = 5.0;
  GenerationResult stopped = gen.generate(q.regions, q.context, opts);
  CHECK(stopped.tokens.empty());
  CHECK(stopped.hit_eos);

  gen.params().find("head.b")->value(0, tok.eos()) = 0.0;
  gen.params().find("head.b")->value(0, tok.id_of("green")) = 5.0;
  GenerationResult ran = gen.generate(q.regions, q.context, opts);
  CHECK(ran.tokens == std::vector<int>(6, tok.id_of("green")));
  CHECK(!ran.hit_eos);
}

TEST_CASE("greedy ties resolve to the lowest token id") {
  Tokenizer tok = toy_tokenizer();
  Generator gen(tok, tiny_config());
  zero_params(gen);
  int lo = std::min(tok.id_of("green"), tok.id_of("red"));
  gen.params().find("head.b")->value(0, tok.id_of("green")) = 3.0;
  gen.params().find("head.b")->value(0, tok.id_of("red")) = 3.0;

  Quadruple q = toy_quadruple(tok);
  DecodeOptions opts;
  opts.max_len = 2;
  GenerationResult r = gen.generate(q.regions, q.context, opts);
  CHECK(r.tokens == std::vector<int>(2, lo));
}

TEST_CASE("sampling respects seed temperature and top k") {
  Tokenizer tok = toy_tokenizer();
  Generator gen(tok, tiny_config());
  zero_params(gen);
  gen.params().find("head.b")->value(0, tok.id_of("green")) = 4.0;
  gen.params().find("head.b")->value(0, tok.id_of("red")) = 1.0;

  Quadruple q = toy_quadruple(tok);
  DecodeOptions opts;
  opts.greedy = false;
  opts.max_len = 5;
  opts.seed = 11;

  GenerationResult a = gen.generate(q.regions, q.context, opts);
  GenerationResult b = gen.generate(q.regions, q.context, opts);
  CHECK(a.tokens == b.tokens);

  opts.top_k = 1;
  GenerationResult det = gen.generate(q.regions, q.context, opts);
  CHECK(det.tokens == std::vector<int>(5, tok.id_of("green")));

  opts.top_k = 0;
  opts.temperature = 0.1;
  GenerationResult cold = gen.generate(q.regions, q.context, opts);
  CHECK(cold.tokens == std::vector<int>(5, tok.id_of("green")));

  CHECK_THROWS_AS(
      [&] {
        DecodeOptions bad;
        bad.max_len = 0;
        gen.generate(q.regions, q.context, bad);
      }(),
      std::invalid_argument);
  CHECK_THROWS_AS(
      [&] {
        DecodeOptions bad;
        bad.max_len = 100;
        gen.generate(q.regions, q.context, bad);
      }(),
      std::invalid_argument);
}

TEST_CASE("incremental decoding matches full sequence predictions") {
  Tokenizer tok = toy_tokenizer();
  Generator gen(tok, tiny_config());
  Quadruple q = toy_quadruple(tok);
  std::vector<int> words = q.response;
  words.push_back(tok.eos());

  const int r0 = 3 + 3 + 7;
  for (size_t t = 0; t < words.size(); ++t) {
    std::vector<int> prefix(words.begin(),
                            words.begin() + static_cast<long>(t));
    InputBatch inc = gen.build_decode_inputs(q.regions, q.context, prefix,
                                             true);
    Eigen::VectorXd d_inc =
        gen.masked_position_distribution(inc, inc.n() - 1);

    std::vector<int> full = words;
    full[t] = tok.mask();
    InputBatch fb = gen.build_decode_inputs(q.regions, q.context, full,
                                            false);
    Eigen::VectorXd d_full = gen.masked_position_distribution(
        fb, r0 + 1 + static_cast<int>(t));
    CHECK((d_inc - d_full).cwiseAbs().maxCoeff() < 1e-5);
  }
}

TEST_CASE("attention export slices response rows over region columns") {
  Tokenizer tok = toy_tokenizer();
  Generator gen(tok, tiny_config());
  Quadruple q = toy_quadruple(tok);
  q.regions.boxes = {{0.1, 0.1, 0.4, 0.4},
                     {0.2, 0.2, 0.5, 0.5},
                     {0.3, 0.3, 0.6, 0.6}};
  InputBatch b = gen.build_decode_inputs(q.regions, q.context, q.response,
                                         false);

  AttentionExport e = gen.export_attention(b, 0, 1);
  CHECK(e.layer == 0);
  CHECK(e.head == 1);
  REQUIRE(e.weights.size() == static_cast<size_t>(b.len_r));
  REQUIRE(e.rows.size() == static_cast<size_t>(b.len_r));
  CHECK(e.boxes.size() == 3);
  const int r0 = b.len_o + b.len_q + b.len_c;
  for (size_t i = 0; i < e.rows.size(); ++i)
    CHECK(e.rows[i] == r0 + static_cast<int>(i));
  for (const auto& row : e.weights) {
    REQUIRE(row.size() == static_cast<size_t>(b.len_o));
    double sum = 0.0;
    for (double w : row) {
      CHECK(w >= 0.0);
      sum += w;
    }
    CHECK(sum <= 1.0 + 1e-9);
  }

  auto parsed = nlohmann::json::parse(attention_export_to_json(e));
  CHECK(parsed["layer"] == 0);
  CHECK(parsed["head"] == 1);
  CHECK(parsed["rows"].size() == e.rows.size());
  CHECK(parsed["boxes"].size() == 3);
  for (size_t i = 0; i < e.weights.size(); ++i)
    for (size_t j = 0; j < e.weights[i].size(); ++j) {
      double stored = parsed["weights"][i][j].get<double>();
      CHECK(stored == doctest::Approx(e.weights[i][j]).epsilon(1e-9));
      CHECK(stored == std::round(stored * 1e6) / 1e6);
    }

  CHECK_THROWS_AS(gen.export_attention(b, 5, 0), std::out_of_range);
  CHECK_THROWS_AS(gen.export_attention(b, 0, 9), std::out_of_range);
  CHECK_THROWS_AS(gen.export_attention(b, -1, 0), std::out_of_range);
}

TEST_CASE("training reduces the loss and is reproducible") {
  Tokenizer tok = toy_tokenizer();
  GeneratorConfig cfg = tiny_config();
  cfg.epochs = 30;
  cfg.batch_size = 2;
  cfg.learning_rate = 3e-3;
  Generator gen(tok, cfg);

  std::vector<Quadruple> quads;
  Quadruple q = toy_quadruple(tok);
  quads.push_back(q);
  Quadruple q2 = q;
  q2.dialog_id = "d1";
  q2.response = tok.encode("nice view today");
  quads.push_back(q2);

  auto curve = gen.train(quads);
  REQUIRE(curve.size() == 30);
  CHECK(curve.back() < curve.front());

  Generator twin(tok, cfg);
  auto curve2 = twin.train(quads);
  CHECK(curve == curve2);

  CHECK_THROWS_WITH_AS(gen.train({}), "empty training set",
                       std::invalid_argument);
}

TEST_CASE("checkpoint round-trips the whole model") {
  Tokenizer tok = toy_tokenizer();
  GeneratorConfig cfg = tiny_config();
  cfg.global_concept_vocab = true;
  Generator gen(tok, cfg);
  gen.set_global_concept_ids({tok.id_of("alpha"), tok.id_of("delta")});

  const std::string path =
      (std::filesystem::temp_directory_path() / "vgdial_gen_test.mgen")
          .string();
  gen.save(path);
  Generator back = Generator::load(path, tok);

  CHECK(back.config().layers == cfg.layers);
  CHECK(back.config().hidden == cfg.hidden);
  CHECK(back.config().global_concept_vocab);
  for (auto* p : gen.params().all()) {
    auto* bp = back.params().find(p->name);
    REQUIRE(bp != nullptr);
    CHECK(bp->value == p->value);
  }

  Quadruple q = toy_quadruple(tok);
  DecodeOptions opts;
  opts.max_len = 5;
  CHECK(gen.generate(q.regions, q.context, opts).tokens ==
        back.generate(q.regions, q.context, opts).tokens);

  std::vector<Dialog> other = {Dialog{"x", {"unrelated speech"}, "yes"}};
  Tokenizer wrong = build_vocabulary(other, {"tagx"}, 1);
  CHECK_THROWS_AS(Generator::load(path, wrong), std::runtime_error);
  std::remove(path.c_str());
}
