#pragma once

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "vgdial/rng.h"

namespace vgdial::nn {

using Matrix = Eigen::MatrixXd;

// A trainable weight. Gradients accumulate into `grad` when a Graph that
// references the parameter runs backward().
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)) {
    grad = Matrix::Zero(value.rows(), value.cols());
  }

  void zero_grad() { grad.setZero(); }
  Eigen::Index size() const { return value.size(); }
};

// Ordered collection of parameters; the order is the serialization and
// optimizer order, so it must be identical across runs.
class ParameterSet {
 public:
  Parameter& add(const std::string& name, Matrix init) {
    params_.push_back(std::make_unique<Parameter>(name, std::move(init)));
    return *params_.back();
  }

  std::vector<Parameter*> all() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }
  std::vector<const Parameter*> all() const {
    std::vector<const Parameter*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  Parameter* find(const std::string& name) {
    for (auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  size_t count() const { return params_.size(); }
  Eigen::Index scalar_count() const {
    Eigen::Index n = 0;
    for (auto& p : params_) n += p->size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

// One node of the dynamically built computation graph.
struct Node {
  Matrix value;
  Matrix grad;
  bool needs_grad = false;
  Parameter* param = nullptr;  // set for leaf nodes wrapping a Parameter
  std::function<void(Node&)> backward_fn;
  std::vector<std::shared_ptr<Node>> inputs;

  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
  void ensure_grad() {
    if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
  }
};

using NodePtr = std::shared_ptr<Node>;

// Reverse-mode tape over Eigen matrices. Each forward pass builds a fresh
// Graph; backward() accumulates parameter gradients. All math is double
// precision, which the finite-difference checks in the test suite rely on.
class Graph {
 public:
  // --- leaves ---
  NodePtr leaf(Parameter& p);           // tracked, grads flow to p.grad
  NodePtr constant(Matrix v);           // untracked input data
  NodePtr scalar(double v) { return constant(Matrix::Constant(1, 1, v)); }

  // --- elementwise / shape ---
  NodePtr add(NodePtr a, NodePtr b);              // same shape
  NodePtr sub(NodePtr a, NodePtr b);              // same shape
  NodePtr add_rowvec(NodePtr a, NodePtr row);     // row broadcast over rows
  NodePtr scale(NodePtr a, double s);
  NodePtr add_const(NodePtr a, double c);
  NodePtr gelu(NodePtr a);
  NodePtr relu(NodePtr a);

  // --- linear algebra ---
  NodePtr matmul(NodePtr a, NodePtr b);
  NodePtr transpose(NodePtr a);
  NodePtr concat_cols(const std::vector<NodePtr>& parts);
  NodePtr concat_rows(const std::vector<NodePtr>& parts);
  NodePtr slice_rows(NodePtr a, Eigen::Index start, Eigen::Index count);
  NodePtr slice_cols(NodePtr a, Eigen::Index start, Eigen::Index count);
  NodePtr gather_rows(NodePtr table, const std::vector<int>& idx);
  NodePtr mean_rows(NodePtr a);  // 1 x cols

  // --- reductions ---
  NodePtr sum_all(NodePtr a);  // 1 x 1

  // --- normalization / distributions ---
  NodePtr layer_norm(NodePtr x, NodePtr gain, NodePtr bias,
                     double eps = 1e-5);           // rowwise
  NodePtr l2_normalize_rows(NodePtr x, double eps = 1e-12);  // each row
  NodePtr softmax_rows(NodePtr x);
  NodePtr log_softmax_rows(NodePtr x);
  // Softmax per row restricted to allowed columns; disallowed entries are
  // exactly zero in the output. `allowed` is rows x cols, row-major bools.
  NodePtr masked_softmax_rows(NodePtr x, const std::vector<uint8_t>& allowed);

  // --- fused task-specific ops ---
  // Zeroes entries of a 1 x V row everywhere except the given column set.
  NodePtr keep_only_columns(NodePtr row, const std::vector<int>& cols);
  // -sum of selected entries; pairs are (row, col) into a log-prob matrix.
  NodePtr neg_select_sum(NodePtr logprobs,
                         const std::vector<std::pair<int, int>>& picks);
  // In-batch hinge: scores is B x B with positives on the diagonal.
  // loss = sum_{i != j} max(0, margin - S_ii + S_ij).
  NodePtr hinge_in_batch(NodePtr scores, double margin);

  void backward(NodePtr loss);

 private:
  NodePtr make(Matrix value, std::vector<NodePtr> inputs,
               std::function<void(Node&)> backward_fn);
  std::vector<NodePtr> order_;  // creation order = topological order
};

// Xavier-uniform init for a rows x cols weight.
Matrix xavier_init(Eigen::Index rows, Eigen::Index cols, Rng& rng);
// Gaussian init with the given stddev.
Matrix gaussian_init(Eigen::Index rows, Eigen::Index cols, double stddev,
                     Rng& rng);

// Adam with bias correction; step order follows the ParameterSet order.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Parameter*> params, double lr,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step();
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Matrix> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace vgdial::nn
