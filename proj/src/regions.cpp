#include "vgdial/regions.h"

#include <cctype>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace vgdial {

using nlohmann::json;

void validate_region_set(const RegionSet& r) {
  if (r.features.rows() == 0)
    throw std::runtime_error("region set for '" + r.image_id +
                             "' has no regions");
  if (static_cast<int>(r.concepts.size()) != r.k())
    throw std::runtime_error("region set for '" + r.image_id +
                             "' has mismatched features/concepts lengths");
  if (!r.features.allFinite())
    throw std::runtime_error("region set for '" + r.image_id +
                             "' has non-finite feature values");
  if (!r.boxes.empty() && static_cast<int>(r.boxes.size()) != r.k())
    throw std::runtime_error("region set for '" + r.image_id +
                             "' has mismatched boxes length");
}

std::map<std::string, RegionSet> load_regions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open regions file: " + path);
  std::map<std::string, RegionSet> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line);
    RegionSet r;
    r.image_id = j.at("image_id").get<std::string>();
    const auto& feats = j.at("features");
    const size_t k = feats.size();
    const size_t d = k > 0 ? feats[0].size() : 0;
    r.features.resize(static_cast<Eigen::Index>(k),
                      static_cast<Eigen::Index>(d));
    for (size_t i = 0; i < k; ++i) {
      if (feats[i].size() != d)
        throw std::runtime_error("ragged feature rows for image '" +
                                 r.image_id + "'");
      for (size_t c = 0; c < d; ++c)
        r.features(static_cast<Eigen::Index>(i),
                   static_cast<Eigen::Index>(c)) = feats[i][c].get<double>();
    }
    r.concepts = j.at("concepts").get<std::vector<std::string>>();
    if (j.contains("boxes") && !j["boxes"].is_null()) {
      for (const auto& b : j["boxes"]) {
        if (b.size() != 4)
          throw std::runtime_error("box with wrong arity for image '" +
                                   r.image_id + "'");
        r.boxes.push_back({b[0].get<double>(), b[1].get<double>(),
                           b[2].get<double>(), b[3].get<double>()});
      }
    }
    validate_region_set(r);
    out[r.image_id] = std::move(r);
  }
  return out;
}

void save_regions(const std::string& path,
                  const std::vector<const RegionSet*>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write regions file: " + path);
  for (const RegionSet* r : records) {
    validate_region_set(*r);
    json j;
    j["image_id"] = r->image_id;
    json feats = json::array();
    for (Eigen::Index i = 0; i < r->features.rows(); ++i) {
      json row = json::array();
      for (Eigen::Index c = 0; c < r->features.cols(); ++c)
        row.push_back(r->features(i, c));
      feats.push_back(std::move(row));
    }
    j["features"] = std::move(feats);
    j["concepts"] = r->concepts;
    if (!r->boxes.empty()) {
      json boxes = json::array();
      for (const auto& b : r->boxes)
        boxes.push_back(json::array({b[0], b[1], b[2], b[3]}));
      j["boxes"] = std::move(boxes);
    }
    out << j.dump() << "\n";
  }
}

std::vector<std::string> load_tags(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open tags file: " + path);
  std::vector<std::string> tags;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) tags.push_back(line);
  }
  return tags;
}

void save_tags(const std::string& path, const std::vector<std::string>& tags) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write tags file: " + path);
  for (const auto& t : tags) out << t << "\n";
}

std::string normalize_tag(const std::string& tag) {
  std::string out;
  bool in_space = false;
  for (char ch : tag) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      in_space = !out.empty();
      continue;
    }
    if (in_space) {
      out.push_back('_');
      in_space = false;
    }
    out.push_back(static_cast<char>(
        std::tolower(static_cast<unsigned char>(ch))));
  }
  return out;
}

}  // namespace vgdial
