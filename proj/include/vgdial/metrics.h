#pragma once

#include <Eigen/Core>
#include <map>
#include <string>
#include <vector>

#include "vgdial/corpus.h"
#include "vgdial/generator.h"

namespace vgdial {

using Sentence = std::vector<std::string>;

struct EvalReport {
  double ppl = 0.0;
  double bleu1 = 0.0;
  double rougeL = 0.0;
  double dist1 = 0.0;
  double dist2 = 0.0;
  double emb_average = 0.0;
  double emb_extrema = 0.0;
  double emb_greedy = 0.0;
  long n_examples = 0;
};

std::string eval_report_to_json(const EvalReport& r);
std::string eval_report_to_text(const EvalReport& r);

// Teacher-forced response perplexity: every response position (words plus
// the closing [EOS]) is predicted from a [MASK] at that position with the
// gold tokens to its left; exp of the token-pooled mean NLL.
double perplexity(Generator& model, const std::vector<Quadruple>& quadruples);

// Corpus BLEU-1: clipped unigram precision times the brevity penalty.
double bleu1(const std::vector<Sentence>& hypotheses,
             const std::vector<Sentence>& references);

// Mean sentence-level Rouge-L F1 via longest common subsequence.
double rouge_l(const std::vector<Sentence>& hypotheses,
               const std::vector<Sentence>& references);

// Distinct n-grams over the corpus divided by the total word count, or by
// the total n-gram count when `ngram_denominator` is set.
double distinct_n(const std::vector<Sentence>& hypotheses, int n,
                  bool ngram_denominator = false);

struct EmbeddingScores {
  double average = 0.0;
  double extrema = 0.0;
  double greedy = 0.0;
};

// Embedding Average, Vector Extrema and Greedy Matching over a shared
// word-embedding table. Words missing from the table are skipped; a pair
// where either side ends up empty scores 0.
EmbeddingScores embedding_scores(
    const std::vector<Sentence>& hypotheses,
    const std::vector<Sentence>& references,
    const std::map<std::string, Eigen::VectorXd>& table);

// The generator's own token embeddings keyed by token string, special
// tokens excluded.
std::map<std::string, Eigen::VectorXd> generator_embedding_table(
    Generator& model);

// Full evaluation: perplexity plus metrics over greedy decodes of every
// quadruple's context against its reference response.
EvalReport evaluate_generator(Generator& model,
                              const std::vector<Quadruple>& quadruples);

}  // namespace vgdial
