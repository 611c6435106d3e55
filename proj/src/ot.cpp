#include "fmgan/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <vector>

namespace fmgan::ot {

namespace {

void require_nonempty(const CostMatrix& cost, const char* who) {
  if (cost.values.empty()) throw DimensionError(std::string(who) + ": empty cost matrix");
}

// One scaling sweep on kernel q: delta = 1/(r q sigma), sigma = 1/(c q^T delta).
void scaling_sweep(const Tensor& q, std::vector<double>& delta, std::vector<double>& sigma,
                   const char* who) {
  const std::size_t r = q.rows(), c = q.cols();
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += q(i, j) * sigma[j];
    delta[i] = 1.0 / (static_cast<double>(r) * s);
    if (!std::isfinite(delta[i])) {
      throw NumericError(std::string(who) + ": row " + std::to_string(i) +
                         " of the kernel vanished; increase the regularization parameter");
    }
  }
  for (std::size_t j = 0; j < c; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < r; ++i) s += q(i, j) * delta[i];
    sigma[j] = 1.0 / (static_cast<double>(c) * s);
    if (!std::isfinite(sigma[j])) {
      throw NumericError(std::string(who) + ": column " + std::to_string(j) +
                         " of the kernel vanished; increase the regularization parameter");
    }
  }
}

void scale_plan(const Tensor& q, const std::vector<double>& delta, const std::vector<double>& sigma,
                Tensor& plan) {
  const std::size_t r = q.rows(), c = q.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) plan(i, j) = delta[i] * q(i, j) * sigma[j];
}

}  // namespace

void SolverConfig::validate() const {
  if (!(beta > 0.0)) throw ParameterError("solver: beta must be positive");
  if (inner_k < 1) throw ParameterError("solver: inner_k must be at least 1");
  if (outer_iters < 1) throw ParameterError("solver: outer_iters must be at least 1");
  if (marginal_tol < 0.0) throw ParameterError("solver: marginal_tol must be non-negative");
}

double transport_value(const TransportPlan& plan, const CostMatrix& cost) {
  if (!plan.values.same_shape(cost.values)) {
    throw DimensionError("transport_value: plan " + plan.values.shape_string() + " vs cost " +
                         cost.values.shape_string());
  }
  const auto t = plan.values.data();
  const auto c = cost.values.data();
  return std::inner_product(t.begin(), t.end(), c.begin(), 0.0);
}

double marginal_residual(const TransportPlan& plan) {
  const Tensor& t = plan.values;
  if (t.empty()) return 0.0;
  const std::size_t r = t.rows(), c = t.cols();
  std::vector<double> col(c, 0.0);
  double worst = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      row += t(i, j);
      col[j] += t(i, j);
    }
    worst = std::max(worst, std::abs(row - 1.0 / static_cast<double>(r)));
  }
  for (double s : col) worst = std::max(worst, std::abs(s - 1.0 / static_cast<double>(c)));
  return worst;
}

SolveResult ipot(const CostMatrix& cost, const SolverConfig& cfg, const IterationObserver& observer) {
  cfg.validate();
  require_nonempty(cost, "ipot");
  const std::size_t r = cost.rows(), c = cost.cols();

  Tensor kernel(cost.values.shape());
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double ratio = cost.values(i, j) / cfg.beta;
      const double a = std::exp(-ratio);
      if (!std::isfinite(a) || !std::isfinite(ratio)) {
        std::ostringstream os;
        os << "ipot: non-finite kernel entry at (" << i << ", " << j << "), C/beta = " << ratio;
        throw NumericError(os.str());
      }
      kernel(i, j) = a;
    }
  }

  TransportPlan plan{Tensor(cost.values.shape(), 1.0)};
  std::vector<double> sigma(c, 1.0 / static_cast<double>(c));
  std::vector<double> delta(r, 0.0);
  Tensor q(cost.values.shape());

  SolveResult result;
  Tensor previous = plan.values;
  for (int t = 1; t <= cfg.outer_iters; ++t) {
    for (std::size_t k = 0; k < q.size(); ++k) q[k] = kernel[k] * plan.values[k];
    for (int k = 0; k < cfg.inner_k; ++k) scaling_sweep(q, delta, sigma, "ipot");
    scale_plan(q, delta, sigma, plan.values);
    result.iterations = t;
    if (observer) observer(t, plan);
    if (cfg.marginal_tol > 0.0) {
      // The sweeps restore the marginals long before the plan is optimal, so the
      // plan must also have stopped moving.
      double moved = 0.0;
      for (std::size_t k = 0; k < previous.size(); ++k) {
        moved = std::max(moved, std::abs(plan.values[k] - previous[k]));
      }
      if (moved < cfg.marginal_tol && marginal_residual(plan) < cfg.marginal_tol) break;
      previous = plan.values;
    }
  }
  result.residual = marginal_residual(plan);
  result.value = transport_value(plan, cost);
  result.plan = std::move(plan);
  return result;
}

SolveResult sinkhorn(const CostMatrix& cost, double eps, int iters, double tol,
                     const IterationObserver& observer) {
  if (!(eps > 0.0)) throw ParameterError("sinkhorn: eps must be positive");
  if (iters < 1) throw ParameterError("sinkhorn: iters must be at least 1");
  require_nonempty(cost, "sinkhorn");
  const std::size_t r = cost.rows(), c = cost.cols();

  Tensor kernel(cost.values.shape());
  for (std::size_t k = 0; k < kernel.size(); ++k) kernel[k] = std::exp(-cost.values[k] / eps);

  TransportPlan plan{Tensor(cost.values.shape())};
  std::vector<double> sigma(c, 1.0 / static_cast<double>(c));
  std::vector<double> delta(r, 0.0);
  SolveResult result;
  for (int t = 1; t <= iters; ++t) {
    scaling_sweep(kernel, delta, sigma, "sinkhorn");
    result.iterations = t;
    if (observer || tol > 0.0 || t == iters) {
      scale_plan(kernel, delta, sigma, plan.values);
      if (observer) observer(t, plan);
      if (tol > 0.0 && marginal_residual(plan) < tol) break;
    }
  }
  scale_plan(kernel, delta, sigma, plan.values);
  result.residual = marginal_residual(plan);
  result.value = transport_value(plan, cost);
  result.plan = std::move(plan);
  return result;
}

SolveResult exact_emd_oracle(const CostMatrix& cost) {
  require_nonempty(cost, "exact_emd_oracle");
  const std::size_t n = cost.rows();
  if (cost.cols() != n) {
    throw DimensionError("exact_emd_oracle: square cost required, got " + cost.values.shape_string());
  }
  if (n > 8) {
    throw CapacityError("exact_emd_oracle: n = " + std::to_string(n) + " exceeds the enumeration limit of 8");
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::size_t> best = perm;
  double best_sum = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += cost.values(i, perm[i]);
    if (s < best_sum) {
      best_sum = s;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  SolveResult result;
  result.plan.values = Tensor({n, n});
  for (std::size_t i = 0; i < n; ++i) result.plan.values(i, best[i]) = 1.0 / static_cast<double>(n);
  result.value = transport_value(result.plan, cost);
  result.residual = marginal_residual(result.plan);
  result.iterations = 1;
  return result;
}

}  // namespace fmgan::ot
