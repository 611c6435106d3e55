#pragma once

// Feature-mover's distance between two batches of sentence features.
//
// Features are stored one per column (d x n). The cost between columns is the
// cosine distance with each norm floored at kNormFloor. The transport plan is
// solved by IPOT off the tape and enters the differentiable value as a constant
// weight, so gradients reach the features only through the cost entries.

#include <utility>

#include "fmgan/ndgrad.hpp"
#include "fmgan/ot.hpp"

namespace fmgan::fmd {

using ndgrad::Tensor;
using ndgrad::Var;

inline constexpr double kNormFloor = 1e-8;

struct FeatureBatch {
  Tensor vectors;  // d x n

  std::size_t dim() const noexcept { return vectors.rows(); }
  std::size_t count() const noexcept { return vectors.cols(); }
};

ot::CostMatrix cosine_cost_matrix(const FeatureBatch& f, const FeatureBatch& g);

// Cosine cost as a tape op: 1 - normalize(f)^T normalize(g).
Var cosine_cost(Var f, Var g);

struct FmdResult {
  double value = 0.0;
  ot::TransportPlan plan;
  double residual = 0.0;
};

FmdResult fmd(const FeatureBatch& f, const FeatureBatch& g, const ot::SolverConfig& cfg);

// (dF, dF') of <T*, C(F, F')> with T* fixed at the solved plan.
std::pair<Tensor, Tensor> fmd_grad(const FeatureBatch& f, const FeatureBatch& g, const ot::SolverConfig& cfg);

struct FmdNode {
  Var value;  // scalar on the tape
  ot::TransportPlan plan;
  double residual = 0.0;
};

// Differentiable critic value for two feature batches on the same tape.
FmdNode fmd_loss(Var f, Var g, const ot::SolverConfig& cfg);

}  // namespace fmgan::fmd
