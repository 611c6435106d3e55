#include "fmgan/fmd.hpp"

namespace fmgan::fmd {

namespace {

void check_batches(const Tensor& f, const Tensor& g, bool equal_counts) {
  if (f.rows() != g.rows()) {
    throw DimensionError("fmd: feature dimensions differ, " + f.shape_string() + " vs " + g.shape_string());
  }
  if (equal_counts && f.cols() != g.cols()) {
    throw DimensionError("fmd: batch sizes differ, " + f.shape_string() + " vs " + g.shape_string());
  }
}

}  // namespace

Var cosine_cost(Var f, Var g) {
  check_batches(f.value(), g.value(), false);
  Var fn = ndgrad::normalize_cols(f, kNormFloor);
  Var gn = ndgrad::normalize_cols(g, kNormFloor);
  Var sim = ndgrad::matmul(ndgrad::transpose(fn), gn);
  return ndgrad::add_scalar(ndgrad::scale(sim, -1.0), 1.0);
}

ot::CostMatrix cosine_cost_matrix(const FeatureBatch& f, const FeatureBatch& g) {
  ndgrad::Tape tape;
  Var c = cosine_cost(tape.constant(f.vectors), tape.constant(g.vectors));
  return ot::CostMatrix{c.value()};
}

FmdNode fmd_loss(Var f, Var g, const ot::SolverConfig& cfg) {
  check_batches(f.value(), g.value(), true);
  Var cost = cosine_cost(f, g);
  ot::SolveResult solved = ot::ipot(ot::CostMatrix{cost.value()}, cfg);
  FmdNode out{ndgrad::dot_const(cost, solved.plan.values), std::move(solved.plan), solved.residual};
  return out;
}

FmdResult fmd(const FeatureBatch& f, const FeatureBatch& g, const ot::SolverConfig& cfg) {
  ndgrad::Tape tape;
  FmdNode node = fmd_loss(tape.constant(f.vectors), tape.constant(g.vectors), cfg);
  return {node.value.value().item(), std::move(node.plan), node.residual};
}

std::pair<Tensor, Tensor> fmd_grad(const FeatureBatch& f, const FeatureBatch& g, const ot::SolverConfig& cfg) {
  ndgrad::Tape tape;
  Var fv = tape.leaf("f", f.vectors);
  Var gv = tape.leaf("g", g.vectors);
  ndgrad::Gradients grads = tape.backward(fmd_loss(fv, gv, cfg).value);
  return {std::move(grads.at("f")), std::move(grads.at("g"))};
}

}  // namespace fmgan::fmd
