#include "vgdial/corpus.h"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "vgdial/io.h"

namespace vgdial {

using nlohmann::json;

// ---------------------------------------------------------------------------
// text helpers

std::string lowercase(const std::string& s) {
  std::string out = s;
  for (char& c : out)
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> split_whitespace(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::string normalize_whitespace(const std::string& s) {
  auto parts = split_whitespace(s);
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out.push_back(' ');
    out += parts[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// dialog

void validate_dialog(const Dialog& d) {
  if (d.context.empty())
    throw std::runtime_error("dialog '" + d.id + "' has empty context");
  if (normalize_whitespace(d.response).empty())
    throw std::runtime_error("dialog '" + d.id + "' has empty response");
  for (const auto& u : d.context)
    if (normalize_whitespace(u).empty())
      throw std::runtime_error("dialog '" + d.id + "' has empty utterance");
}

// ---------------------------------------------------------------------------
// tokenizer

int Tokenizer::id_of(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? unk() : it->second;
}

const std::string& Tokenizer::token_of(int id) const {
  if (id < 0 || id >= vocab_size())
    throw std::out_of_range("token id out of range");
  return id_to_token_[static_cast<size_t>(id)];
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& raw : split_whitespace(text)) {
    auto special = token_to_id_.find(raw);
    if (special != token_to_id_.end() && special->second < special_count()) {
      ids.push_back(special->second);
      continue;
    }
    ids.push_back(id_of(lowercase(raw)));
  }
  return ids;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += token_of(ids[i]);
  }
  return out;
}

uint64_t Tokenizer::fingerprint() const {
  std::string joined;
  for (const auto& t : id_to_token_) {
    joined += t;
    joined.push_back('\n');
  }
  return fnv1a(joined);
}

void Tokenizer::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocab file: " + path);
  for (const auto& t : id_to_token_) out << t << "\n";
}

Tokenizer Tokenizer::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocab file: " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  while (!tokens.empty() && tokens.back().empty()) tokens.pop_back();
  return from_tokens(tokens);
}

Tokenizer Tokenizer::from_tokens(const std::vector<std::string>& tokens) {
  Tokenizer tok;
  for (int i = 0; i < special_count(); ++i) {
    if (static_cast<size_t>(i) >= tokens.size() || tokens[i] != kSpecials[i])
      throw std::runtime_error("vocabulary is missing special tokens");
  }
  tok.id_to_token_ = tokens;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].empty())
      throw std::runtime_error("vocabulary contains an empty token");
    if (!tok.token_to_id_.emplace(tokens[i], static_cast<int>(i)).second)
      throw std::runtime_error("vocabulary contains duplicate token '" +
                               tokens[i] + "'");
  }
  return tok;
}

Tokenizer build_vocabulary(const std::vector<Dialog>& dialogs,
                           const std::vector<std::string>& tags,
                           int min_count) {
  if (dialogs.empty()) throw std::runtime_error("empty corpus");
  if (tags.empty()) throw std::runtime_error("empty tag collection");
  if (min_count < 1) throw std::invalid_argument("min_count must be >= 1");

  std::map<std::string, long> freq;
  for (const auto& d : dialogs) {
    auto count_text = [&freq](const std::string& text) {
      for (const auto& t : split_whitespace(lowercase(text))) ++freq[t];
    };
    for (const auto& u : d.context) count_text(u);
    count_text(d.response);
  }

  std::vector<std::string> tokens;
  for (int i = 0; i < Tokenizer::special_count(); ++i)
    tokens.push_back(Tokenizer::kSpecials[i]);

  std::set<std::string> seen(tokens.begin(), tokens.end());
  std::set<std::string> tag_set;
  for (const auto& t : tags) {
    std::string norm = normalize_tag(t);
    if (!norm.empty()) tag_set.insert(norm);
  }
  for (const auto& t : tag_set)
    if (seen.insert(t).second) tokens.push_back(t);

  for (const auto& [t, n] : freq)
    if (n >= min_count && seen.insert(t).second) tokens.push_back(t);

  return Tokenizer::from_tokens(tokens);
}

// ---------------------------------------------------------------------------
// synthetic world

namespace {

const char* kBuiltinTags[] = {
    "apple",    "backpack", "banana",  "beach",    "bed",        "bench",
    "bicycle",  "bird",     "boat",    "book",     "bottle",     "bowl",
    "bus",      "cake",     "car",     "cat",      "chair",      "clock",
    "couch",    "cow",      "cup",     "dog",      "donut",      "elephant",
    "fence",    "flower",   "fork",    "glass",    "guitar",     "hat",
    "horse",    "house",    "kite",    "knife",    "lamp",       "laptop",
    "melon",    "mirror",   "motorcycle", "mountain", "orange",  "oven",
    "person",   "phone",    "pizza",   "plate",    "potted_plant", "river",
    "sandwich", "shelf",    "shoe",    "sink",     "skateboard", "snow",
    "spoon",    "suitcase", "sunset",  "surfboard", "table",     "television",
    "tent",     "traffic_light", "train", "tree",  "truck",      "umbrella",
    "vase",     "window",
};
constexpr int kBuiltinTagCount =
    static_cast<int>(sizeof(kBuiltinTags) / sizeof(kBuiltinTags[0]));

struct Template {
  const char* text;  // words with {} placeholders
  int slots;
};

const Template kTemplates[] = {
    {"i really liked that {}", 1},
    {"did you see the {} over there", 1},
    {"that {} was amazing", 1},
    {"someone brought a {} with them", 1},
    {"we talked about the {} for a while", 1},
    {"i saw a {} next to a {}", 2},
    {"there was a {} and a {} outside", 2},
    {"we put the {} near the {}", 2},
    {"a {} stood close to the {}", 2},
    {"remember the {} by the {}", 2},
    {"the {} the {} and the {} were all there", 3},
    {"i noticed a {} a {} and a {} together", 3},
};

std::string fill_template(const Template& tpl,
                          const std::vector<std::string>& fills) {
  std::string out;
  size_t next = 0;
  const std::string text = tpl.text;
  for (size_t i = 0; i < text.size();) {
    if (i + 1 < text.size() && text[i] == '{' && text[i + 1] == '}') {
      out += fills.at(next++);
      i += 2;
    } else {
      out.push_back(text[i++]);
    }
  }
  return out;
}

std::string pick_template_text(Rng& rng, int slots,
                               const std::vector<std::string>& fills) {
  std::vector<const Template*> candidates;
  for (const auto& t : kTemplates)
    if (t.slots == slots) candidates.push_back(&t);
  const Template* tpl = candidates[rng.uniform(candidates.size())];
  return fill_template(*tpl, fills);
}

}  // namespace

int SyntheticWorld::concept_index(const std::string& tag) const {
  for (size_t i = 0; i < concept_tags.size(); ++i)
    if (concept_tags[i] == tag) return static_cast<int>(i);
  return -1;
}

const ImageRecord& SyntheticWorld::image_by_id(const std::string& id) const {
  for (const auto& img : images)
    if (img.id == id) return img;
  throw std::runtime_error("unknown image id: " + id);
}

SyntheticWorld generate_synthetic_world(int n_concepts, int n_images,
                                        int n_dialogs, int d_obj, int K,
                                        double noise, uint64_t seed,
                                        int n_test) {
  if (n_concepts < 1 || n_images < 1 || n_dialogs < 1 || d_obj < 1 || K < 1)
    throw std::invalid_argument("all synthetic world sizes must be >= 1");
  if (K > n_concepts)
    throw std::invalid_argument("K exceeds the number of concepts");
  if (noise < 0.0) throw std::invalid_argument("noise must be >= 0");
  if (n_test < 0 || n_test > n_dialogs)
    throw std::invalid_argument("n_test out of range");

  Rng rng(seed);
  SyntheticWorld world;

  for (int i = 0; i < n_concepts; ++i) {
    if (i < kBuiltinTagCount)
      world.concept_tags.push_back(kBuiltinTags[i]);
    else
      world.concept_tags.push_back("thing" + std::to_string(i));
  }

  world.concept_latents.resize(n_concepts, d_obj);
  for (int i = 0; i < n_concepts; ++i) {
    Eigen::VectorXd v(d_obj);
    for (int d = 0; d < d_obj; ++d) v(d) = rng.gaussian();
    world.concept_latents.row(i) = v.normalized().transpose();
  }

  char buf[32];
  for (int i = 0; i < n_images; ++i) {
    std::snprintf(buf, sizeof(buf), "img_%04d", i);
    ImageRecord img;
    img.id = buf;
    auto bag = rng.sample_indices(n_concepts, K);
    rng.shuffle(bag);
    img.regions.image_id = img.id;
    img.regions.features.resize(K, d_obj);
    for (int r = 0; r < K; ++r) {
      img.regions.concepts.push_back(
          world.concept_tags[static_cast<size_t>(bag[static_cast<size_t>(r)])]);
      for (int d = 0; d < d_obj; ++d)
        img.regions.features(r, d) =
            world.concept_latents(bag[static_cast<size_t>(r)], d) +
            noise * rng.gaussian();
      double x1 = rng.uniform_real() * 0.8, y1 = rng.uniform_real() * 0.8;
      img.regions.boxes.push_back(
          {x1, y1, x1 + 0.1 + rng.uniform_real() * 0.1,
           y1 + 0.1 + rng.uniform_real() * 0.1});
    }
    world.images.push_back(std::move(img));
  }

  const int n_train = n_dialogs - n_test;
  for (int i = 0; i < n_dialogs; ++i) {
    const ImageRecord& img = world.images[static_cast<size_t>(i % n_images)];
    std::snprintf(buf, sizeof(buf), "%s_%04d", i < n_train ? "train" : "test",
                  i);
    Dialog d;
    d.id = buf;

    // Distinct concepts of the paired image, shuffled; every one should be
    // mentioned somewhere in the dialog when the slot budget allows.
    std::vector<std::string> distinct;
    for (const auto& t : img.regions.concepts)
      if (std::find(distinct.begin(), distinct.end(), t) == distinct.end())
        distinct.push_back(t);
    rng.shuffle(distinct);

    int n_utt = rng.uniform_int(3, 5);  // context plus the response
    std::vector<int> slots(static_cast<size_t>(n_utt));
    int total = 0;
    for (auto& s : slots) {
      s = rng.uniform_int(1, 3);
      total += s;
    }
    int deficit = static_cast<int>(distinct.size()) - total;
    for (size_t at = 0; deficit > 0;) {
      bool bumped = false;
      for (size_t u = 0; u < slots.size() && deficit > 0; ++u) {
        if (slots[(at + u) % slots.size()] < 3) {
          ++slots[(at + u) % slots.size()];
          --deficit;
          ++total;
          bumped = true;
        }
      }
      if (!bumped) break;  // all utterances saturated
      ++at;
    }

    std::vector<std::string> mentions = distinct;
    while (static_cast<int>(mentions.size()) < total)
      mentions.push_back(
          img.regions.concepts[rng.uniform(img.regions.concepts.size())]);
    mentions.resize(static_cast<size_t>(total));

    size_t cursor = 0;
    std::vector<std::string> utterances;
    for (int u = 0; u < n_utt; ++u) {
      std::vector<std::string> fills(
          mentions.begin() + static_cast<long>(cursor),
          mentions.begin() + static_cast<long>(cursor) +
              slots[static_cast<size_t>(u)]);
      cursor += static_cast<size_t>(slots[static_cast<size_t>(u)]);
      utterances.push_back(
          pick_template_text(rng, slots[static_cast<size_t>(u)], fills));
    }
    d.response = utterances.back();
    utterances.pop_back();
    d.context = std::move(utterances);
    validate_dialog(d);
    world.dialogs.push_back(d);
    world.ground_truth.emplace_back(d.id, img.id);
  }
  return world;
}

std::vector<std::pair<std::string, int>> tag_cooccurrence(
    const std::vector<ImageRecord>& records, const std::string& anchor,
    int top_n, const std::vector<std::string>& known_tags) {
  const std::string norm = normalize_tag(anchor);
  bool known = false;
  for (const auto& t : known_tags)
    if (normalize_tag(t) == norm) {
      known = true;
      break;
    }
  if (!known) throw std::runtime_error("unknown anchor tag: " + anchor);
  if (top_n < 0) throw std::invalid_argument("top_n must be >= 0");

  std::map<std::string, int> counts;
  for (const auto& img : records) {
    std::set<std::string> tags(img.regions.concepts.begin(),
                               img.regions.concepts.end());
    if (!tags.count(norm)) continue;
    for (const auto& t : tags)
      if (t != norm) ++counts[t];
  }
  std::vector<std::pair<std::string, int>> out(counts.begin(), counts.end());
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (static_cast<int>(out.size()) > top_n)
    out.resize(static_cast<size_t>(top_n));
  return out;
}

// ---------------------------------------------------------------------------
// corpus files

std::vector<Dialog> load_dialogs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dialogs file: " + path);
  std::vector<Dialog> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    Dialog d;
    d.id = j.at("id").get<std::string>();
    d.context = j.at("context").get<std::vector<std::string>>();
    d.response = j.at("response").get<std::string>();
    validate_dialog(d);
    out.push_back(std::move(d));
  }
  return out;
}

void save_dialogs(const std::string& path,
                  const std::vector<Dialog>& dialogs) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dialogs file: " + path);
  for (const auto& d : dialogs) {
    json j;
    j["id"] = d.id;
    j["context"] = d.context;
    j["response"] = d.response;
    out << j.dump() << "\n";
  }
}

std::vector<IdPair> load_quadruple_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open quadruples file: " + path);
  std::vector<IdPair> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    out.emplace_back(j.at("dialog_id").get<std::string>(),
                     j.at("image_id").get<std::string>());
  }
  return out;
}

void save_quadruple_pairs(const std::string& path,
                          const std::vector<IdPair>& pairs) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write quadruples file: " + path);
  for (const auto& [d, i] : pairs) {
    json j;
    j["dialog_id"] = d;
    j["image_id"] = i;
    out << j.dump() << "\n";
  }
}

std::vector<Quadruple> assemble_quadruples(
    const std::vector<IdPair>& pairs, const std::vector<Dialog>& dialogs,
    const std::map<std::string, RegionSet>& regions, const Tokenizer& tok,
    long* unk_tag_count) {
  std::map<std::string, const Dialog*> by_id;
  for (const auto& d : dialogs) by_id[d.id] = &d;

  long unk_tags = 0;
  std::vector<Quadruple> out;
  for (const auto& [dialog_id, image_id] : pairs) {
    auto dit = by_id.find(dialog_id);
    if (dit == by_id.end())
      throw std::runtime_error("pairing references unknown dialog '" +
                               dialog_id + "'");
    auto rit = regions.find(image_id);
    if (rit == regions.end())
      throw std::runtime_error("pairing references unknown image '" +
                               image_id + "'");
    validate_region_set(rit->second);

    Quadruple q;
    q.dialog_id = dialog_id;
    q.image_id = image_id;
    q.regions = rit->second;
    for (const auto& u : dit->second->context)
      q.context.push_back(tok.encode(u));
    q.response = tok.encode(dit->second->response);
    if (q.response.empty())
      throw std::runtime_error("dialog '" + dialog_id +
                               "' has an empty tokenized response");
    for (const auto& tag : q.regions.concepts)
      if (tok.id_of(normalize_tag(tag)) == tok.unk()) ++unk_tags;
    out.push_back(std::move(q));
  }
  if (unk_tag_count) *unk_tag_count = unk_tags;
  return out;
}

}  // namespace vgdial
