#include "vgdial/metrics.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace vgdial {

namespace {

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

size_t lcs_length(const Sentence& a, const Sentence& b) {
  std::vector<std::vector<size_t>> dp(a.size() + 1,
                                      std::vector<size_t>(b.size() + 1, 0));
  for (size_t i = 1; i <= a.size(); ++i)
    for (size_t j = 1; j <= b.size(); ++j)
      dp[i][j] = a[i - 1] == b[j - 1]
                     ? dp[i - 1][j - 1] + 1
                     : std::max(dp[i - 1][j], dp[i][j - 1]);
  return dp[a.size()][b.size()];
}

std::vector<Eigen::VectorXd> lookup(
    const Sentence& s, const std::map<std::string, Eigen::VectorXd>& table) {
  std::vector<Eigen::VectorXd> out;
  for (const auto& w : s) {
    auto it = table.find(w);
    if (it != table.end()) out.push_back(it->second);
  }
  return out;
}

Eigen::VectorXd mean_of(const std::vector<Eigen::VectorXd>& vs) {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(vs[0].size());
  for (const auto& v : vs) m += v;
  return m / static_cast<double>(vs.size());
}

Eigen::VectorXd extrema_of(const std::vector<Eigen::VectorXd>& vs) {
  Eigen::VectorXd e = vs[0];
  for (const auto& v : vs)
    for (Eigen::Index d = 0; d < e.size(); ++d)
      if (std::abs(v(d)) > std::abs(e(d))) e(d) = v(d);
  return e;
}

double greedy_direction(const std::vector<Eigen::VectorXd>& from,
                        const std::vector<Eigen::VectorXd>& to) {
  double total = 0.0;
  for (const auto& f : from) {
    double best = -1.0;
    for (const auto& t : to) best = std::max(best, cosine(f, t));
    total += best;
  }
  return total / static_cast<double>(from.size());
}

void require_paired(const std::vector<Sentence>& h,
                    const std::vector<Sentence>& r) {
  if (h.empty()) throw std::invalid_argument("empty hypothesis list");
  if (h.size() != r.size())
    throw std::invalid_argument(
        "hypotheses and references must have equal length");
}

}  // namespace

double perplexity(Generator& model,
                  const std::vector<Quadruple>& quadruples) {
  if (quadruples.empty())
    throw std::invalid_argument("perplexity needs at least one example");
  const GeneratorConfig& cfg = model.config();
  const Tokenizer& tok = model.tokenizer();

  double total_nll = 0.0;
  long total_tokens = 0;
  for (const auto& q : quadruples) {
    if (q.response.empty()) throw std::runtime_error("empty response");
    std::vector<int> words = q.response;
    if (static_cast<int>(words.size()) > cfg.max_response_len)
      words.resize(static_cast<size_t>(cfg.max_response_len));
    words.push_back(tok.eos());

    std::vector<int> prefix;
    for (int target : words) {
      InputBatch b =
          model.build_decode_inputs(q.regions, q.context, prefix, true);
      Eigen::VectorXd dist =
          model.masked_position_distribution(b, b.n() - 1);
      total_nll -= std::log(std::max(dist(target), 1e-300));
      ++total_tokens;
      prefix.push_back(target);
    }
  }
  return std::exp(total_nll / static_cast<double>(total_tokens));
}

double bleu1(const std::vector<Sentence>& hypotheses,
             const std::vector<Sentence>& references) {
  require_paired(hypotheses, references);
  long clipped = 0, hyp_len = 0, ref_len = 0;
  for (size_t i = 0; i < hypotheses.size(); ++i) {
    std::map<std::string, long> ref_counts;
    for (const auto& w : references[i]) ++ref_counts[w];
    std::map<std::string, long> hyp_counts;
    for (const auto& w : hypotheses[i]) ++hyp_counts[w];
    for (const auto& [w, c] : hyp_counts) {
      auto it = ref_counts.find(w);
      clipped += std::min(c, it == ref_counts.end() ? 0 : it->second);
    }
    hyp_len += static_cast<long>(hypotheses[i].size());
    ref_len += static_cast<long>(references[i].size());
  }
  if (hyp_len == 0) return 0.0;
  const double precision =
      static_cast<double>(clipped) / static_cast<double>(hyp_len);
  const double bp =
      hyp_len >= ref_len
          ? 1.0
          : std::exp(1.0 - static_cast<double>(ref_len) /
                               static_cast<double>(hyp_len));
  return bp * precision;
}

double rouge_l(const std::vector<Sentence>& hypotheses,
               const std::vector<Sentence>& references) {
  require_paired(hypotheses, references);
  double total = 0.0;
  for (size_t i = 0; i < hypotheses.size(); ++i) {
    const auto& h = hypotheses[i];
    const auto& r = references[i];
    if (h.empty() || r.empty()) continue;
    const double lcs = static_cast<double>(lcs_length(h, r));
    if (lcs == 0.0) continue;
    const double p = lcs / static_cast<double>(h.size());
    const double rec = lcs / static_cast<double>(r.size());
    total += 2.0 * p * rec / (p + rec);
  }
  return total / static_cast<double>(hypotheses.size());
}

double distinct_n(const std::vector<Sentence>& hypotheses, int n,
                  bool ngram_denominator) {
  if (hypotheses.empty())
    throw std::invalid_argument("empty hypothesis list");
  if (n < 1) throw std::invalid_argument("n must be >= 1");
  std::set<std::vector<std::string>> grams;
  long words = 0, gram_count = 0;
  for (const auto& h : hypotheses) {
    words += static_cast<long>(h.size());
    for (size_t i = 0; i + static_cast<size_t>(n) <= h.size(); ++i) {
      grams.insert(std::vector<std::string>(
          h.begin() + static_cast<long>(i),
          h.begin() + static_cast<long>(i) + n));
      ++gram_count;
    }
  }
  const long denom = ngram_denominator ? gram_count : words;
  if (denom == 0) return 0.0;
  return static_cast<double>(grams.size()) / static_cast<double>(denom);
}

EmbeddingScores embedding_scores(
    const std::vector<Sentence>& hypotheses,
    const std::vector<Sentence>& references,
    const std::map<std::string, Eigen::VectorXd>& table) {
  require_paired(hypotheses, references);
  EmbeddingScores totals;
  for (size_t i = 0; i < hypotheses.size(); ++i) {
    auto h = lookup(hypotheses[i], table);
    auto r = lookup(references[i], table);
    if (h.empty() || r.empty()) continue;
    totals.average += cosine(mean_of(h), mean_of(r));
    totals.extrema += cosine(extrema_of(h), extrema_of(r));
    totals.greedy +=
        0.5 * (greedy_direction(h, r) + greedy_direction(r, h));
  }
  const double n = static_cast<double>(hypotheses.size());
  return {totals.average / n, totals.extrema / n, totals.greedy / n};
}

std::map<std::string, Eigen::VectorXd> generator_embedding_table(
    Generator& model) {
  const nn::Parameter* embed = model.params().find("embed.token");
  if (!embed) throw std::runtime_error("model has no token embedding table");
  const Tokenizer& tok = model.tokenizer();
  std::map<std::string, Eigen::VectorXd> table;
  for (int id = Tokenizer::special_count(); id < tok.vocab_size(); ++id)
    table[tok.token_of(id)] = embed->value.row(id).transpose();
  return table;
}

EvalReport evaluate_generator(Generator& model,
                              const std::vector<Quadruple>& quadruples) {
  if (quadruples.empty())
    throw std::invalid_argument("evaluation needs at least one example");
  const Tokenizer& tok = model.tokenizer();

  EvalReport report;
  report.n_examples = static_cast<long>(quadruples.size());
  report.ppl = perplexity(model, quadruples);

  std::vector<Sentence> hyps, refs;
  DecodeOptions opts;
  opts.greedy = true;
  opts.max_len = model.config().max_response_len;
  for (const auto& q : quadruples) {
    GenerationResult gen = model.generate(q.regions, q.context, opts);
    Sentence hyp;
    for (int id : gen.tokens) hyp.push_back(tok.token_of(id));
    Sentence ref;
    for (int id : q.response) ref.push_back(tok.token_of(id));
    hyps.push_back(std::move(hyp));
    refs.push_back(std::move(ref));
  }

  report.bleu1 = bleu1(hyps, refs);
  report.rougeL = rouge_l(hyps, refs);
  report.dist1 = distinct_n(hyps, 1);
  report.dist2 = distinct_n(hyps, 2);
  EmbeddingScores emb =
      embedding_scores(hyps, refs, generator_embedding_table(model));
  report.emb_average = emb.average;
  report.emb_extrema = emb.extrema;
  report.emb_greedy = emb.greedy;
  return report;
}

std::string eval_report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["ppl"] = r.ppl;
  j["bleu1"] = r.bleu1;
  j["rougeL"] = r.rougeL;
  j["dist1"] = r.dist1;
  j["dist2"] = r.dist2;
  j["emb_average"] = r.emb_average;
  j["emb_extrema"] = r.emb_extrema;
  j["emb_greedy"] = r.emb_greedy;
  j["n_examples"] = r.n_examples;
  return j.dump(2);
}

std::string eval_report_to_text(const EvalReport& r) {
  std::ostringstream out;
  out << "examples:    " << r.n_examples << "\n"
      << "PPL:         " << r.ppl << "\n"
      << "BLEU-1:      " << r.bleu1 << "\n"
      << "Rouge-L:     " << r.rougeL << "\n"
      << "Dist-1:      " << r.dist1 << "\n"
      << "Dist-2:      " << r.dist2 << "\n"
      << "Average:     " << r.emb_average << "\n"
      << "Extrema:     " << r.emb_extrema << "\n"
      << "Greedy:      " << r.emb_greedy << "\n";
  return out.str();
}

}  // namespace vgdial
