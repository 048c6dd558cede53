#include "vgdial/autodiff.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace vgdial::nn {

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
const double kInvSqrt2Pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }
double gelu_grad_scalar(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
         x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}
}  // namespace

NodePtr Graph::make(Matrix value, std::vector<NodePtr> inputs,
                    std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->inputs = std::move(inputs);
  n->backward_fn = std::move(backward_fn);
  for (auto& in : n->inputs)
    if (in->needs_grad) n->needs_grad = true;
  order_.push_back(n);
  return n;
}

NodePtr Graph::leaf(Parameter& p) {
  auto n = std::make_shared<Node>();
  n->value = p.value;
  n->needs_grad = true;
  n->param = &p;
  order_.push_back(n);
  return n;
}

NodePtr Graph::constant(Matrix v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  order_.push_back(n);
  return n;
}

NodePtr Graph::add(NodePtr a, NodePtr b) {
  if (a->rows() != b->rows() || a->cols() != b->cols())
    throw std::invalid_argument("add: shape mismatch");
  return make(a->value + b->value, {a, b}, [](Node& n) {
    if (n.inputs[0]->needs_grad) n.inputs[0]->grad += n.grad;
    if (n.inputs[1]->needs_grad) n.inputs[1]->grad += n.grad;
  });
}

NodePtr Graph::sub(NodePtr a, NodePtr b) {
  if (a->rows() != b->rows() || a->cols() != b->cols())
    throw std::invalid_argument("sub: shape mismatch");
  return make(a->value - b->value, {a, b}, [](Node& n) {
    if (n.inputs[0]->needs_grad) n.inputs[0]->grad += n.grad;
    if (n.inputs[1]->needs_grad) n.inputs[1]->grad -= n.grad;
  });
}

NodePtr Graph::add_rowvec(NodePtr a, NodePtr row) {
  if (row->rows() != 1 || row->cols() != a->cols())
    throw std::invalid_argument("add_rowvec: shape mismatch");
  Matrix out = a->value.rowwise() + row->value.row(0);
  return make(std::move(out), {a, row}, [](Node& n) {
    if (n.inputs[0]->needs_grad) n.inputs[0]->grad += n.grad;
    if (n.inputs[1]->needs_grad)
      n.inputs[1]->grad.row(0) += n.grad.colwise().sum();
  });
}

NodePtr Graph::scale(NodePtr a, double s) {
  return make(a->value * s, {a}, [s](Node& n) {
    if (n.inputs[0]->needs_grad) n.inputs[0]->grad += n.grad * s;
  });
}

NodePtr Graph::add_const(NodePtr a, double c) {
  return make(a->value.array() + c, {a}, [](Node& n) {
    if (n.inputs[0]->needs_grad) n.inputs[0]->grad += n.grad;
  });
}

NodePtr Graph::gelu(NodePtr a) {
  Matrix out = a->value.unaryExpr([](double x) { return gelu_scalar(x); });
  return make(std::move(out), {a}, [](Node& n) {
    if (!n.inputs[0]->needs_grad) return;
    const Matrix& x = n.inputs[0]->value;
    n.inputs[0]->grad.array() +=
        n.grad.array() *
        x.unaryExpr([](double v) { return gelu_grad_scalar(v); }).array();
  });
}

NodePtr Graph::relu(NodePtr a) {
  Matrix out = a->value.cwiseMax(0.0);
  return make(std::move(out), {a}, [](Node& n) {
    if (!n.inputs[0]->needs_grad) return;
    n.inputs[0]->grad.array() +=
        n.grad.array() * (n.inputs[0]->value.array() > 0.0).cast<double>();
  });
}

NodePtr Graph::matmul(NodePtr a, NodePtr b) {
  if (a->cols() != b->rows())
    throw std::invalid_argument("matmul: inner dimension mismatch");
  return make(a->value * b->value, {a, b}, [](Node& n) {
    if (n.inputs[0]->needs_grad)
      n.inputs[0]->grad.noalias() += n.grad * n.inputs[1]->value.transpose();
    if (n.inputs[1]->needs_grad)
      n.inputs[1]->grad.noalias() += n.inputs[0]->value.transpose() * n.grad;
  });
}

NodePtr Graph::transpose(NodePtr a) {
  return make(a->value.transpose(), {a}, [](Node& n) {
    if (n.inputs[0]->needs_grad) n.inputs[0]->grad += n.grad.transpose();
  });
}

NodePtr Graph::concat_cols(const std::vector<NodePtr>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  Eigen::Index rows = parts[0]->rows(), cols = 0;
  for (auto& p : parts) {
    if (p->rows() != rows) throw std::invalid_argument("concat_cols: rows");
    cols += p->cols();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (auto& p : parts) {
    out.middleCols(at, p->cols()) = p->value;
    at += p->cols();
  }
  return make(std::move(out), parts, [](Node& n) {
    Eigen::Index at = 0;
    for (auto& in : n.inputs) {
      if (in->needs_grad) in->grad += n.grad.middleCols(at, in->cols());
      at += in->cols();
    }
  });
}

NodePtr Graph::concat_rows(const std::vector<NodePtr>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  Eigen::Index cols = parts[0]->cols(), rows = 0;
  for (auto& p : parts) {
    if (p->cols() != cols) throw std::invalid_argument("concat_rows: cols");
    rows += p->rows();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (auto& p : parts) {
    out.middleRows(at, p->rows()) = p->value;
    at += p->rows();
  }
  return make(std::move(out), parts, [](Node& n) {
    Eigen::Index at = 0;
    for (auto& in : n.inputs) {
      if (in->needs_grad) in->grad += n.grad.middleRows(at, in->rows());
      at += in->rows();
    }
  });
}

NodePtr Graph::slice_rows(NodePtr a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a->rows())
    throw std::invalid_argument("slice_rows: out of range");
  Matrix out = a->value.middleRows(start, count);
  return make(std::move(out), {a}, [start, count](Node& n) {
    if (n.inputs[0]->needs_grad)
      n.inputs[0]->grad.middleRows(start, count) += n.grad;
  });
}

NodePtr Graph::slice_cols(NodePtr a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a->cols())
    throw std::invalid_argument("slice_cols: out of range");
  Matrix out = a->value.middleCols(start, count);
  return make(std::move(out), {a}, [start, count](Node& n) {
    if (n.inputs[0]->needs_grad)
      n.inputs[0]->grad.middleCols(start, count) += n.grad;
  });
}

NodePtr Graph::gather_rows(NodePtr table, const std::vector<int>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), table->cols());
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= table->rows())
      throw std::invalid_argument("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = table->value.row(idx[i]);
  }
  return make(std::move(out), {table}, [idx](Node& n) {
    if (!n.inputs[0]->needs_grad) return;
    for (size_t i = 0; i < idx.size(); ++i)
      n.inputs[0]->grad.row(idx[i]) +=
          n.grad.row(static_cast<Eigen::Index>(i));
  });
}

NodePtr Graph::mean_rows(NodePtr a) {
  if (a->rows() == 0) throw std::invalid_argument("mean_rows: empty");
  Matrix out = a->value.colwise().mean();
  return make(std::move(out), {a}, [](Node& n) {
    if (!n.inputs[0]->needs_grad) return;
    double inv = 1.0 / static_cast<double>(n.inputs[0]->rows());
    n.inputs[0]->grad.noalias() +=
        Matrix::Ones(n.inputs[0]->rows(), 1) * (n.grad * inv);
  });
}

NodePtr Graph::sum_all(NodePtr a) {
  Matrix out = Matrix::Constant(1, 1, a->value.sum());
  return make(std::move(out), {a}, [](Node& n) {
    if (n.inputs[0]->needs_grad)
      n.inputs[0]->grad.array() += n.grad(0, 0);
  });
}

NodePtr Graph::layer_norm(NodePtr x, NodePtr gain, NodePtr bias, double eps) {
  if (gain->rows() != 1 || gain->cols() != x->cols() || bias->rows() != 1 ||
      bias->cols() != x->cols())
    throw std::invalid_argument("layer_norm: gain/bias shape");
  const Eigen::Index rows = x->rows(), cols = x->cols();
  Matrix xhat(rows, cols);
  Eigen::VectorXd inv_sigma(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    double mu = x->value.row(r).mean();
    double var = (x->value.row(r).array() - mu).square().mean();
    double is = 1.0 / std::sqrt(var + eps);
    inv_sigma(r) = is;
    xhat.row(r) = (x->value.row(r).array() - mu) * is;
  }
  Matrix out =
      (xhat.array().rowwise() * gain->value.row(0).array()).rowwise() +
      bias->value.row(0).array();
  return make(std::move(out), {x, gain, bias},
              [xhat, inv_sigma](Node& n) {
                NodePtr x = n.inputs[0], gain = n.inputs[1],
                        bias = n.inputs[2];
                const Eigen::Index rows = x->rows(), cols = x->cols();
                if (gain->needs_grad)
                  gain->grad.row(0) +=
                      (n.grad.array() * xhat.array()).colwise().sum().matrix();
                if (bias->needs_grad)
                  bias->grad.row(0) += n.grad.colwise().sum();
                if (!x->needs_grad) return;
                for (Eigen::Index r = 0; r < rows; ++r) {
                  Eigen::ArrayXd dxhat =
                      n.grad.row(r).array() * gain->value.row(0).array();
                  double m1 = dxhat.mean();
                  double m2 = (dxhat * xhat.row(r).transpose().array()).mean();
                  x->grad.row(r).array() +=
                      inv_sigma(r) *
                      (dxhat - m1 - xhat.row(r).transpose().array() * m2);
                }
                (void)cols;
              });
}

NodePtr Graph::l2_normalize_rows(NodePtr x, double eps) {
  Eigen::VectorXd norms(x->rows());
  Matrix out(x->rows(), x->cols());
  for (Eigen::Index r = 0; r < x->rows(); ++r) {
    norms(r) = std::sqrt(x->value.row(r).squaredNorm() + eps);
    out.row(r) = x->value.row(r) / norms(r);
  }
  return make(std::move(out), {x}, [norms](Node& n) {
    if (!n.inputs[0]->needs_grad) return;
    const Matrix& x = n.inputs[0]->value;
    for (Eigen::Index r = 0; r < n.rows(); ++r) {
      double norm = norms(r);
      double dot = (n.grad.row(r).array() * x.row(r).array()).sum();
      n.inputs[0]->grad.row(r) +=
          n.grad.row(r) / norm - x.row(r) * (dot / (norm * norm * norm));
    }
  });
}

NodePtr Graph::softmax_rows(NodePtr x) {
  Matrix out(x->rows(), x->cols());
  for (Eigen::Index r = 0; r < x->rows(); ++r) {
    Eigen::ArrayXd row = x->value.row(r).array();
    Eigen::ArrayXd e = (row - row.maxCoeff()).exp();
    out.row(r) = (e / e.sum()).matrix();
  }
  return make(std::move(out), {x}, [](Node& n) {
    if (!n.inputs[0]->needs_grad) return;
    for (Eigen::Index r = 0; r < n.rows(); ++r) {
      Eigen::ArrayXd y = n.value.row(r).array();
      Eigen::ArrayXd dy = n.grad.row(r).array();
      double s = (dy * y).sum();
      n.inputs[0]->grad.row(r).array() += y * (dy - s);
    }
  });
}

NodePtr Graph::log_softmax_rows(NodePtr x) {
  Matrix out(x->rows(), x->cols());
  for (Eigen::Index r = 0; r < x->rows(); ++r) {
    Eigen::ArrayXd row = x->value.row(r).array();
    double mx = row.maxCoeff();
    double lse = mx + std::log((row - mx).exp().sum());
    out.row(r) = (row - lse).matrix();
  }
  return make(std::move(out), {x}, [](Node& n) {
    if (!n.inputs[0]->needs_grad) return;
    for (Eigen::Index r = 0; r < n.rows(); ++r) {
      Eigen::ArrayXd p = n.value.row(r).array().exp();
      Eigen::ArrayXd dy = n.grad.row(r).array();
      n.inputs[0]->grad.row(r).array() += dy - p * dy.sum();
    }
  });
}

NodePtr Graph::masked_softmax_rows(NodePtr x,
                                   const std::vector<uint8_t>& allowed) {
  const Eigen::Index rows = x->rows(), cols = x->cols();
  if (static_cast<Eigen::Index>(allowed.size()) != rows * cols)
    throw std::invalid_argument("masked_softmax_rows: mask size");
  Matrix out = Matrix::Zero(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < cols; ++c)
      if (allowed[r * cols + c]) mx = std::max(mx, x->value(r, c));
    if (!std::isfinite(mx))
      throw std::runtime_error("masked_softmax_rows: row with no allowed key");
    double denom = 0.0;
    for (Eigen::Index c = 0; c < cols; ++c)
      if (allowed[r * cols + c]) denom += std::exp(x->value(r, c) - mx);
    for (Eigen::Index c = 0; c < cols; ++c)
      if (allowed[r * cols + c])
        out(r, c) = std::exp(x->value(r, c) - mx) / denom;
  }
  return make(std::move(out), {x}, [allowed](Node& n) {
    if (!n.inputs[0]->needs_grad) return;
    const Eigen::Index cols = n.cols();
    for (Eigen::Index r = 0; r < n.rows(); ++r) {
      double s = 0.0;
      for (Eigen::Index c = 0; c < cols; ++c)
        if (allowed[r * cols + c]) s += n.grad(r, c) * n.value(r, c);
      for (Eigen::Index c = 0; c < cols; ++c)
        if (allowed[r * cols + c])
          n.inputs[0]->grad(r, c) += n.value(r, c) * (n.grad(r, c) - s);
    }
  });
}

NodePtr Graph::keep_only_columns(NodePtr row, const std::vector<int>& cols) {
  if (row->rows() != 1) throw std::invalid_argument("keep_only_columns: row");
  Matrix out = Matrix::Zero(1, row->cols());
  for (int c : cols) {
    if (c < 0 || c >= row->cols())
      throw std::invalid_argument("keep_only_columns: column out of range");
    out(0, c) = row->value(0, c);
  }
  return make(std::move(out), {row}, [cols](Node& n) {
    if (!n.inputs[0]->needs_grad) return;
    for (int c : cols) n.inputs[0]->grad(0, c) += n.grad(0, c);
  });
}

NodePtr Graph::neg_select_sum(NodePtr logprobs,
                              const std::vector<std::pair<int, int>>& picks) {
  double total = 0.0;
  for (auto& [r, c] : picks) {
    if (r < 0 || r >= logprobs->rows() || c < 0 || c >= logprobs->cols())
      throw std::invalid_argument("neg_select_sum: pick out of range");
    total -= logprobs->value(r, c);
  }
  return make(Matrix::Constant(1, 1, total), {logprobs}, [picks](Node& n) {
    if (!n.inputs[0]->needs_grad) return;
    for (auto& [r, c] : picks) n.inputs[0]->grad(r, c) -= n.grad(0, 0);
  });
}

NodePtr Graph::hinge_in_batch(NodePtr scores, double margin) {
  const Eigen::Index b = scores->rows();
  if (scores->cols() != b)
    throw std::invalid_argument("hinge_in_batch: scores must be square");
  double loss = 0.0;
  for (Eigen::Index i = 0; i < b; ++i)
    for (Eigen::Index j = 0; j < b; ++j) {
      if (i == j) continue;
      loss += std::max(0.0, margin - scores->value(i, i) + scores->value(i, j));
    }
  return make(Matrix::Constant(1, 1, loss), {scores}, [margin](Node& n) {
    if (!n.inputs[0]->needs_grad) return;
    const Matrix& s = n.inputs[0]->value;
    double g = n.grad(0, 0);
    for (Eigen::Index i = 0; i < s.rows(); ++i)
      for (Eigen::Index j = 0; j < s.cols(); ++j) {
        if (i == j) continue;
        if (margin - s(i, i) + s(i, j) > 0.0) {
          n.inputs[0]->grad(i, j) += g;
          n.inputs[0]->grad(i, i) -= g;
        }
      }
  });
}

void Graph::backward(NodePtr loss) {
  if (loss->value.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar");
  for (auto& n : order_) n->ensure_grad();
  loss->grad(0, 0) = 1.0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node& n = **it;
    if (!n.needs_grad) continue;
    if (n.backward_fn) n.backward_fn(n);
    if (n.param) n.param->grad += n.grad;
  }
}

Matrix xavier_init(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      m(r, c) = (2.0 * rng.uniform_real() - 1.0) * limit;
  return m;
}

Matrix gaussian_init(Eigen::Index rows, Eigen::Index cols, double stddev,
                     Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.gaussian() * stddev;
  return m;
}

AdamOptimizer::AdamOptimizer(std::vector<Parameter*> params, double lr,
                             double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2),
      eps_(eps) {
  for (auto* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void AdamOptimizer::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, t_);
  double bc2 = 1.0 - std::pow(beta2_, t_);
  for (size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
    v_[i] = beta2_ * v_[i].array() +
            (1.0 - beta2_) * p.grad.array().square();
    Matrix mhat = m_[i] / bc1;
    Matrix vhat = v_[i] / bc2;
    p.value.array() -= lr_ * mhat.array() / (vhat.array().sqrt() + eps_);
  }
}

}  // namespace vgdial::nn
