#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vgdial/regions.h"
#include "vgdial/rng.h"

namespace vgdial {

// ---------------------------------------------------------------------------
// text helpers

std::string lowercase(const std::string& s);
std::vector<std::string> split_whitespace(const std::string& s);
// Collapses runs of whitespace to single spaces and trims the ends.
std::string normalize_whitespace(const std::string& s);

// ---------------------------------------------------------------------------
// domain types

struct Dialog {
  std::string id;
  std::vector<std::string> context;  // ordered utterances, length >= 1
  std::string response;
};

// Throws unless the dialog has a non-empty context, non-empty response and
// no utterance that normalizes to the empty string.
void validate_dialog(const Dialog& d);

// Lowercase whitespace tokenizer with a fixed special-token block at the
// bottom of the id range. Special tokens are matched verbatim (uppercase)
// before the lowercasing rule applies.
class Tokenizer {
 public:
  static constexpr const char* kSpecials[] = {"[BOS]", "[EOS]", "[MASK]",
                                              "[PAD]", "[REG]", "[SEP]",
                                              "[UNK]"};

  int bos() const { return 0; }
  int eos() const { return 1; }
  int mask() const { return 2; }
  int pad() const { return 3; }
  int reg() const { return 4; }
  int sep() const { return 5; }
  int unk() const { return 6; }
  static int special_count() { return 7; }

  int vocab_size() const { return static_cast<int>(id_to_token_.size()); }
  bool contains(const std::string& token) const {
    return token_to_id_.count(token) > 0;
  }
  int id_of(const std::string& token) const;  // UNK for unknown tokens
  const std::string& token_of(int id) const;

  std::vector<int> encode(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;

  uint64_t fingerprint() const;

  void save(const std::string& path) const;  // vocab.txt
  static Tokenizer load(const std::string& path);

  // Construction used by build_vocabulary.
  static Tokenizer from_tokens(const std::vector<std::string>& tokens);

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

// Vocabulary over a dialog corpus plus a detector tag list. Specials come
// first, then all tags, then corpus tokens with frequency >= min_count;
// each group is sorted so the id assignment is deterministic.
Tokenizer build_vocabulary(const std::vector<Dialog>& dialogs,
                           const std::vector<std::string>& tags,
                           int min_count);

struct ImageRecord {
  std::string id;
  RegionSet regions;

  // Global feature for retrieval: the mean of the region feature rows.
  Eigen::VectorXd mean_feature() const {
    return regions.features.colwise().mean().transpose();
  }
};

// One generator training example.
struct Quadruple {
  std::string dialog_id;
  std::string image_id;
  RegionSet regions;
  std::vector<std::vector<int>> context;  // token ids per utterance
  std::vector<int> response;              // token ids
};

// ---------------------------------------------------------------------------
// synthetic world

struct SyntheticWorld {
  std::vector<std::string> concept_tags;
  Eigen::MatrixXd concept_latents;  // n_concepts x d_obj, unit rows
  std::vector<ImageRecord> images;
  std::vector<Dialog> dialogs;
  // dialog id -> image id
  std::vector<std::pair<std::string, std::string>> ground_truth;

  int concept_index(const std::string& tag) const;
  const ImageRecord& image_by_id(const std::string& id) const;
};

// Deterministic toy universe: concepts with fixed latent vectors, images
// as K-concept bags with noisy latent features, and templated dialogs
// that mention their image's concepts. The last n_test dialogs get ids
// prefixed "test_", the rest "train_".
SyntheticWorld generate_synthetic_world(int n_concepts, int n_images,
                                        int n_dialogs, int d_obj, int K,
                                        double noise, uint64_t seed,
                                        int n_test = 0);

// Images containing both `anchor` and another tag, counted per image,
// sorted by descending count then ascending tag. `known_tags` is the tag
// vocabulary used to decide whether the anchor is legal at all.
std::vector<std::pair<std::string, int>> tag_cooccurrence(
    const std::vector<ImageRecord>& records, const std::string& anchor,
    int top_n, const std::vector<std::string>& known_tags);

// ---------------------------------------------------------------------------
// corpus files

std::vector<Dialog> load_dialogs(const std::string& path);
void save_dialogs(const std::string& path, const std::vector<Dialog>& dialogs);

using IdPair = std::pair<std::string, std::string>;  // dialog_id, image_id
std::vector<IdPair> load_quadruple_pairs(const std::string& path);
void save_quadruple_pairs(const std::string& path,
                          const std::vector<IdPair>& pairs);

// Joins pairings, dialogs and regions into generator training examples.
// Concept tags missing from the vocabulary tokenize to UNK; the count of
// such tags is reported through `unk_tag_count` when given.
std::vector<Quadruple> assemble_quadruples(
    const std::vector<IdPair>& pairs,
    const std::vector<Dialog>& dialogs,
    const std::map<std::string, RegionSet>& regions, const Tokenizer& tok,
    long* unk_tag_count = nullptr);

}  // namespace vgdial
