#pragma once

// Optimal-transport solvers over a precomputed cost matrix.
//
// A plan with r rows and c columns has uniform marginals: every row sums to
// 1/r and every column to 1/c, so its total mass is one.

#include <cstddef>
#include <functional>

#include "fmgan/ndgrad.hpp"

namespace fmgan::ot {

using ndgrad::Tensor;

struct CostMatrix {
  Tensor values;

  std::size_t rows() const noexcept { return values.rows(); }
  std::size_t cols() const noexcept { return values.cols(); }
};

struct TransportPlan {
  Tensor values;

  std::size_t rows() const noexcept { return values.rows(); }
  std::size_t cols() const noexcept { return values.cols(); }
};

struct SolverConfig {
  double beta = 0.5;                // proximity penalty
  int inner_k = 1;                  // Sinkhorn sweeps per proximal step
  int outer_iters = 2000;           // proximal step budget
  double marginal_tol = 1e-6;       // stop once residual and per-step plan change drop below; 0 disables

  void validate() const;
  // Fixed-budget setting used inside training: 100 steps, no early exit.
  static SolverConfig training() { return {0.5, 1, 100, 0.0}; }
};

struct SolveResult {
  TransportPlan plan;
  double value = 0.0;     // <T, C>, without any regularizer
  double residual = 0.0;  // marginal_residual(plan)
  int iterations = 0;
};

// Called after every outer iteration with the 1-based iteration index and current plan.
using IterationObserver = std::function<void(int, const TransportPlan&)>;

// Inexact proximal point OT. Starts from T = 1 1^T and sigma = 1/c, forms the
// kernel A = exp(-C / beta) and repeats: Q = A .* T; K sweeps of
// delta = 1 / (r Q sigma), sigma = 1 / (c Q^T delta); T = diag(delta) Q diag(sigma).
SolveResult ipot(const CostMatrix& cost, const SolverConfig& cfg, const IterationObserver& observer = {});

// Entropic OT on the kernel exp(-C / eps) with the same scaling updates.
// The reported value is <T, C> without the entropy term.
SolveResult sinkhorn(const CostMatrix& cost, double eps, int iters, double tol = 0.0,
                     const IterationObserver& observer = {});

// Brute force over all n! permutation plans scaled by 1/n. Square costs, n <= 8.
SolveResult exact_emd_oracle(const CostMatrix& cost);

double transport_value(const TransportPlan& plan, const CostMatrix& cost);
double marginal_residual(const TransportPlan& plan);

}  // namespace fmgan::ot
