#include "vgdial/hungarian.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace vgdial {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void validate(const CostMatrix& c) {
  if (c.entries.rows() == 0 || c.entries.rows() != c.entries.cols())
    throw std::invalid_argument("cost matrix must be square and non-empty");
  if (!c.entries.allFinite())
    throw std::invalid_argument("cost matrix has non-finite entries");
}

// Shortest-augmenting-path assignment on an n x n cost matrix.
// Returns the minimal total cost; fills `match` (row -> column) if given.
double jv_solve(const Eigen::MatrixXd& a, std::vector<int>* match) {
  const int n = static_cast<int>(a.rows());
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  double cost = 0.0;
  if (match) match->assign(n, -1);
  for (int j = 1; j <= n; ++j) {
    cost += a(p[j] - 1, j - 1);
    if (match) (*match)[p[j] - 1] = j - 1;
  }
  return cost;
}

}  // namespace

Assignment solve_assignment(const CostMatrix& c) {
  validate(c);
  const int n = c.n();
  const double optimum = jv_solve(c.entries, nullptr);
  const double eps = 1e-9 * std::max(1.0, std::abs(optimum));

  // Fix rows in order, choosing for each the smallest column that still
  // allows an optimal completion; this yields the lexicographically
  // smallest optimal permutation.
  std::vector<int> remaining(n);
  std::iota(remaining.begin(), remaining.end(), 0);
  std::vector<int> alpha(n, -1);
  double fixed_cost = 0.0;
  for (int i = 0; i < n; ++i) {
    int chosen = -1;
    for (size_t pos = 0; pos < remaining.size(); ++pos) {
      int j = remaining[pos];
      double completion = 0.0;
      if (i < n - 1) {
        const int m = n - i - 1;
        Eigen::MatrixXd sub(m, m);
        int cc = 0;
        for (int jj : remaining) {
          if (jj == j) continue;
          for (int r = 0; r < m; ++r) sub(r, cc) = c.entries(i + 1 + r, jj);
          ++cc;
        }
        completion = jv_solve(sub, nullptr);
      }
      if (fixed_cost + c.entries(i, j) + completion <= optimum + eps) {
        chosen = j;
        remaining.erase(remaining.begin() + static_cast<long>(pos));
        break;
      }
    }
    if (chosen < 0)
      throw std::runtime_error("assignment refinement failed");  // unreachable
    alpha[i] = chosen;
    fixed_cost += c.entries(i, chosen);
  }
  return {alpha, fixed_cost};
}

Assignment brute_force_assignment(const CostMatrix& c) {
  validate(c);
  const int n = c.n();
  if (n > 8) throw std::invalid_argument("oracle size limit: n must be <= 8");
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  double best_cost = kInf;
  do {
    double cost = 0.0;
    for (int i = 0; i < n; ++i) cost += c.entries(i, perm[i]);
    if (cost < best_cost) {
      best_cost = cost;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return {best, best_cost};
}

}  // namespace vgdial
