#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace vgdial {

// Exact inner-product search over unit-normalized embeddings. Vectors are
// quantized to 32-bit floats on insertion so that search scores match the
// on-disk representation bit for bit. Append-only until freeze(); frozen
// or loaded indexes are immutable and safe for concurrent searches.
class VectorIndex {
 public:
  explicit VectorIndex(int dim);

  int dim() const { return dim_; }
  int64_t count() const { return static_cast<int64_t>(ids_.size()); }
  const std::vector<std::string>& ids() const { return ids_; }
  bool frozen() const { return frozen_; }

  void add(const std::string& id, const Eigen::VectorXd& v);
  void freeze() { frozen_ = true; }

  // Highest inner products first; equal scores break by ascending id.
  std::vector<std::pair<std::string, double>> search_top_k(
      const Eigen::VectorXd& q, int k) const;
  std::vector<std::vector<std::pair<std::string, double>>> batch_search(
      const Eigen::MatrixXd& queries, int k) const;

  void save(const std::string& path) const;
  static VectorIndex load(const std::string& path);

 private:
  int dim_;
  bool frozen_ = false;
  std::vector<std::string> ids_;
  std::unordered_map<std::string, int64_t> id_slot_;
  std::vector<std::vector<float>> rows_;
};

}  // namespace vgdial
