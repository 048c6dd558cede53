#pragma once

#include <Eigen/Core>
#include <vector>

namespace vgdial {

// Square assignment cost matrix; entry (i, j) is the cost of assigning
// target j to prediction i.
struct CostMatrix {
  Eigen::MatrixXd entries;

  int n() const { return static_cast<int>(entries.rows()); }
};

struct Assignment {
  std::vector<int> target_of;  // prediction index -> target index
  double total_cost = 0.0;
};

// Globally optimal assignment via the O(n^3) shortest-augmenting-path
// algorithm, refined so that among all optima the lexicographically
// smallest permutation is returned. Throws on non-square or non-finite
// input.
Assignment solve_assignment(const CostMatrix& c);

// Exhaustive minimum over all n! permutations, enumerated in
// lexicographic order so ties resolve the same way as solve_assignment.
// Limited to n <= 8.
Assignment brute_force_assignment(const CostMatrix& c);

}  // namespace vgdial
