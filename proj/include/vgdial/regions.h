#pragma once

#include <Eigen/Core>
#include <array>
#include <map>
#include <string>
#include <vector>

namespace vgdial {

// Detector output for one image: K region feature vectors with their
// textual concept tags, plus optional bounding boxes.
struct RegionSet {
  std::string image_id;
  Eigen::MatrixXd features;                  // K x d_obj
  std::vector<std::string> concepts;         // K tags
  std::vector<std::array<double, 4>> boxes;  // empty, or K x [x1,y1,x2,y2]

  int k() const { return static_cast<int>(features.rows()); }
  int d_obj() const { return static_cast<int>(features.cols()); }
};

// Throws if the shape invariants do not hold (K > 0, features/concepts
// aligned, finite values, boxes either absent or K long).
void validate_region_set(const RegionSet& r);

// regions.jsonl: one record per line, keyed by image_id.
std::map<std::string, RegionSet> load_regions(const std::string& path);
void save_regions(const std::string& path,
                  const std::vector<const RegionSet*>& records);

// tags.txt: detector tag vocabulary, one tag per line.
std::vector<std::string> load_tags(const std::string& path);
void save_tags(const std::string& path, const std::vector<std::string>& tags);

// Canonical tag form: lowercase, inner whitespace joined by underscores,
// so every concept is a single vocabulary token.
std::string normalize_tag(const std::string& tag);

}  // namespace vgdial
