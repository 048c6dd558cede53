#include "vgdial/mips_index.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "vgdial/io.h"

namespace vgdial {

namespace {
constexpr uint32_t kIndexVersion = 1;
}

VectorIndex::VectorIndex(int dim) : dim_(dim) {
  if (dim < 1) throw std::invalid_argument("index dimension must be >= 1");
}

void VectorIndex::add(const std::string& id, const Eigen::VectorXd& v) {
  if (frozen_) throw std::runtime_error("index is frozen");
  if (v.size() != dim_)
    throw std::invalid_argument("vector dimension mismatch: expected " +
                                std::to_string(dim_) + ", got " +
                                std::to_string(v.size()));
  if (id_slot_.count(id))
    throw std::invalid_argument("duplicate id: " + id);
  const double norm = v.norm();
  if (std::abs(norm - 1.0) > 1e-6)
    throw std::invalid_argument("vector for '" + id +
                                "' is not unit-normalized");

  std::vector<float> row(static_cast<size_t>(dim_));
  for (int i = 0; i < dim_; ++i) row[static_cast<size_t>(i)] =
      static_cast<float>(v(i));
  id_slot_.emplace(id, count());
  ids_.push_back(id);
  rows_.push_back(std::move(row));
}

std::vector<std::pair<std::string, double>> VectorIndex::search_top_k(
    const Eigen::VectorXd& q, int k) const {
  if (count() == 0) throw std::runtime_error("search over empty index");
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  if (q.size() != dim_)
    throw std::invalid_argument("query dimension mismatch");

  std::vector<float> qf(static_cast<size_t>(dim_));
  for (int i = 0; i < dim_; ++i) qf[static_cast<size_t>(i)] =
      static_cast<float>(q(i));

  std::vector<std::pair<std::string, double>> scored;
  scored.reserve(static_cast<size_t>(count()));
  for (int64_t r = 0; r < count(); ++r) {
    const auto& row = rows_[static_cast<size_t>(r)];
    double dot = 0.0;
    for (int i = 0; i < dim_; ++i)
      dot += static_cast<double>(row[static_cast<size_t>(i)]) *
             static_cast<double>(qf[static_cast<size_t>(i)]);
    scored.emplace_back(ids_[static_cast<size_t>(r)], dot);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (static_cast<int64_t>(k) < count())
    scored.resize(static_cast<size_t>(k));
  return scored;
}

std::vector<std::vector<std::pair<std::string, double>>>
VectorIndex::batch_search(const Eigen::MatrixXd& queries, int k) const {
  std::vector<std::vector<std::pair<std::string, double>>> out;
  out.reserve(static_cast<size_t>(queries.rows()));
  for (Eigen::Index r = 0; r < queries.rows(); ++r)
    out.push_back(search_top_k(queries.row(r).transpose(), k));
  return out;
}

void VectorIndex::save(const std::string& path) const {
  BinaryWriter w(path);
  w.magic("MIDX");
  w.u32(kIndexVersion);
  w.u32(static_cast<uint32_t>(dim_));
  w.u64(static_cast<uint64_t>(count()));
  for (const auto& id : ids_) w.str(id);
  for (const auto& row : rows_)
    for (float x : row) w.f32(x);
}

VectorIndex VectorIndex::load(const std::string& path) {
  BinaryReader r(path, "index");
  r.expect_magic("MIDX", "index");
  const uint32_t version = r.u32();
  if (version != kIndexVersion)
    throw std::runtime_error("unsupported index version " +
                             std::to_string(version));
  const uint32_t dim = r.u32();
  const uint64_t n = r.u64();
  VectorIndex index(static_cast<int>(dim));
  std::vector<std::string> ids;
  ids.reserve(n);
  for (uint64_t i = 0; i < n; ++i) ids.push_back(r.str());
  for (uint64_t i = 0; i < n; ++i) {
    std::vector<float> row(dim);
    for (uint32_t d = 0; d < dim; ++d) row[d] = r.f32();
    index.id_slot_.emplace(ids[i], static_cast<int64_t>(i));
    index.ids_.push_back(ids[i]);
    index.rows_.push_back(std::move(row));
  }
  index.freeze();
  return index;
}

}  // namespace vgdial
