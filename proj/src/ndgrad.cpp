#include "fmgan/ndgrad.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>

namespace fmgan::ndgrad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_mat(const Tensor& t) { return ConstMap(t.data().data(), t.rows(), t.cols()); }
MutMap as_mat(Tensor& t) { return MutMap(t.data().data(), t.rows(), t.cols()); }

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

Tensor like(const Tensor& t) { return Tensor(t.shape()); }

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  if (shape_.empty() || shape_.size() > 2) throw DimensionError("tensor rank must be 1 or 2");
  for (auto e : shape_) {
    if (e == 0) throw DimensionError("tensor extents must be positive");
  }
  data_.assign(product(shape_), fill);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty() || shape_.size() > 2) throw DimensionError("tensor rank must be 1 or 2");
  for (auto e : shape_) {
    if (e == 0) throw DimensionError("tensor extents must be positive");
  }
  if (data_.size() != product(shape_)) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string());
  }
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

double Tensor::item() const {
  if (data_.size() != 1) throw ContractError("item() on non-scalar tensor " + shape_string());
  return data_[0];
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
  os << ']';
  return os.str();
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same(*this, other, "+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (auto& v : data_) v *= s;
  return *this;
}

double safe_exp(double x) noexcept { return std::exp(std::max(x, -700.0)); }

double max_abs(const Tensor& a) noexcept {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner extents differ, " + a.shape_string() + " x " +
                         b.shape_string());
  }
  Tensor out({a.rows(), b.cols()});
  as_mat(out).noalias() = as_mat(a) * as_mat(b);
  return out;
}

Tensor transpose(const Tensor& a) {
  Tensor out({a.cols(), a.rows()});
  as_mat(out) = as_mat(a).transpose();
  return out;
}

Tensor softmax(const Tensor& a, double temperature) {
  if (!(temperature > 0.0)) {
    throw ParameterError("softmax: temperature must be positive, got " + std::to_string(temperature));
  }
  Tensor out = like(a);
  const std::size_t r = a.rows(), c = a.cols();
  for (std::size_t j = 0; j < c; ++j) {
    double mx = a(0, j);
    for (std::size_t i = 1; i < r; ++i) mx = std::max(mx, a(i, j));
    double z = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
      const double e = safe_exp((a(i, j) - mx) / temperature);
      out(i, j) = e;
      z += e;
    }
    for (std::size_t i = 0; i < r; ++i) out(i, j) /= z;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Tape::leaf(const std::string& name, const Tensor& value, bool requires_grad) {
  if (auto it = leaves_.find(name); it != leaves_.end()) return Var{this, it->second};
  Var v = push(value, requires_grad, nullptr);
  nodes_[v.id].leaf_name = name;
  leaves_.emplace(name, v.id);
  return v;
}

Var Tape::push(Tensor value, bool requires_grad, Backward backward) {
  if (!value.all_finite()) {
    throw NumericError("non-finite value produced by op at tape node " +
                       std::to_string(nodes_.size()) + " with shape " + value.shape_string());
  }
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = like(n.value);
  return n.grad;
}

Gradients Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("backward: loss belongs to a different tape");
  if (value(loss).size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + value(loss).shape_string());
  }
  for (auto& n : nodes_) n.grad = Tensor();
  if (nodes_[loss.id].requires_grad) {
    grad(loss.id).fill(1.0);
    for (std::size_t k = loss.id + 1; k-- > 0;) {
      Node& n = nodes_[k];
      if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
      // The closure may touch other nodes' gradient slots but never resizes nodes_.
      n.backward(*this, n.grad);
    }
  }
  Gradients out;
  for (const auto& [name, id] : leaves_) {
    const Node& n = nodes_[id];
    if (!n.requires_grad) continue;
    out.emplace(name, n.grad.empty() ? like(n.value) : n.grad);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ops

namespace {

bool any_grad(std::initializer_list<Var> vs) {
  return std::any_of(vs.begin(), vs.end(), [](Var v) { return v.tape->requires_grad(v); });
}

void same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw ContractError("operands live on different tapes");
}

// Accumulate g into the gradient of v when v is trainable.
template <typename F>
void accumulate(Tape& t, Var v, F&& fn) {
  if (t.requires_grad(v)) fn(t.grad(v.id));
}

}  // namespace

Var matmul(Var a, Var b) {
  same_tape(a, b);
  Tape& t = *a.tape;
  Tensor out = matmul(a.value(), b.value());
  return t.push(std::move(out), any_grad({a, b}), [a, b](Tape& t, const Tensor& g) {
    accumulate(t, a, [&](Tensor& ga) { as_mat(ga).noalias() += as_mat(g) * as_mat(t.value(b)).transpose(); });
    accumulate(t, b, [&](Tensor& gb) { as_mat(gb).noalias() += as_mat(t.value(a)).transpose() * as_mat(g); });
  });
}

Var transpose(Var a) {
  Tape& t = *a.tape;
  return t.push(transpose(a.value()), any_grad({a}), [a](Tape& t, const Tensor& g) {
    accumulate(t, a, [&](Tensor& ga) { as_mat(ga) += as_mat(g).transpose(); });
  });
}

Var add(Var a, Var b) {
  same_tape(a, b);
  require_same(a.value(), b.value(), "add");
  Tensor out = a.value();
  out += b.value();
  return a.tape->push(std::move(out), any_grad({a, b}), [a, b](Tape& t, const Tensor& g) {
    accumulate(t, a, [&](Tensor& ga) { ga += g; });
    accumulate(t, b, [&](Tensor& gb) { gb += g; });
  });
}

Var sub(Var a, Var b) {
  same_tape(a, b);
  require_same(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->push(std::move(out), any_grad({a, b}), [a, b](Tape& t, const Tensor& g) {
    accumulate(t, a, [&](Tensor& ga) { ga += g; });
    accumulate(t, b, [&](Tensor& gb) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    });
  });
}

Var mul(Var a, Var b) {
  same_tape(a, b);
  require_same(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->push(std::move(out), any_grad({a, b}), [a, b](Tape& t, const Tensor& g) {
    accumulate(t, a, [&](Tensor& ga) {
      const Tensor& bv = t.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    });
    accumulate(t, b, [&](Tensor& gb) {
      const Tensor& av = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    });
  });
}

Var add_bias(Var a, Var bias) {
  same_tape(a, bias);
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  if (bv.size() != av.rows()) {
    throw DimensionError("add_bias: bias " + bv.shape_string() + " does not match rows of " +
                         av.shape_string());
  }
  Tensor out = av;
  const std::size_t r = av.rows(), c = av.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) += bv[i];
  return a.tape->push(std::move(out), any_grad({a, bias}), [a, bias](Tape& t, const Tensor& g) {
    accumulate(t, a, [&](Tensor& ga) { ga += g; });
    accumulate(t, bias, [&](Tensor& gb) {
      const std::size_t r = g.rows(), c = g.cols();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gb[i] += g(i, j);
    });
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  out *= s;
  return a.tape->push(std::move(out), any_grad({a}), [a, s](Tape& t, const Tensor& g) {
    accumulate(t, a, [&](Tensor& ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
  });
}

Var add_scalar(Var a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v += s;
  return a.tape->push(std::move(out), any_grad({a}), [a](Tape& t, const Tensor& g) {
    accumulate(t, a, [&](Tensor& ga) { ga += g; });
  });
}

Var tanh(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = std::tanh(v);
  Tape& tp = *a.tape;
  const bool rg = any_grad({a});
  Var self{&tp, tp.size()};
  return tp.push(std::move(out), rg, [a, self](Tape& t, const Tensor& g) {
    accumulate(t, a, [&](Tensor& ga) {
      const Tensor& y = t.value(self);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
    });
  });
}

Var sigmoid(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = 1.0 / (1.0 + safe_exp(-v));
  Tape& tp = *a.tape;
  Var self{&tp, tp.size()};
  return tp.push(std::move(out), any_grad({a}), [a, self](Tape& t, const Tensor& g) {
    accumulate(t, a, [&](Tensor& ga) {
      const Tensor& y = t.value(self);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
    });
  });
}

Var abs(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = std::abs(v);
  return a.tape->push(std::move(out), any_grad({a}), [a](Tape& t, const Tensor& g) {
    accumulate(t, a, [&](Tensor& ga) {
      const Tensor& x = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += x[i] > 0 ? g[i] : (x[i] < 0 ? -g[i] : 0.0);
    });
  });
}

Var softmax(Var a, double temperature) {
  Tensor out = softmax(a.value(), temperature);
  Tape& tp = *a.tape;
  Var self{&tp, tp.size()};
  return tp.push(std::move(out), any_grad({a}), [a, self, temperature](Tape& t, const Tensor& g) {
    accumulate(t, a, [&](Tensor& ga) {
      const Tensor& y = t.value(self);
      const std::size_t r = y.rows(), c = y.cols();
      for (std::size_t j = 0; j < c; ++j) {
        double dot = 0.0;
        for (std::size_t i = 0; i < r; ++i) dot += g(i, j) * y(i, j);
        for (std::size_t i = 0; i < r; ++i) ga(i, j) += y(i, j) * (g(i, j) - dot) / temperature;
      }
    });
  });
}

Var log_softmax(Var a) {
  const Tensor& av = a.value();
  Tensor out = like(av);
  const std::size_t r = av.rows(), c = av.cols();
  for (std::size_t j = 0; j < c; ++j) {
    double mx = av(0, j);
    for (std::size_t i = 1; i < r; ++i) mx = std::max(mx, av(i, j));
    double z = 0.0;
    for (std::size_t i = 0; i < r; ++i) z += safe_exp(av(i, j) - mx);
    const double lse = mx + std::log(z);
    for (std::size_t i = 0; i < r; ++i) out(i, j) = av(i, j) - lse;
  }
  Tape& tp = *a.tape;
  Var self{&tp, tp.size()};
  return tp.push(std::move(out), any_grad({a}), [a, self](Tape& t, const Tensor& g) {
    accumulate(t, a, [&](Tensor& ga) {
      const Tensor& y = t.value(self);
      const std::size_t r = y.rows(), c = y.cols();
      for (std::size_t j = 0; j < c; ++j) {
        double gs = 0.0;
        for (std::size_t i = 0; i < r; ++i) gs += g(i, j);
        for (std::size_t i = 0; i < r; ++i) ga(i, j) += g(i, j) - std::exp(y(i, j)) * gs;
      }
    });
  });
}

Var max_over_time(Var feature_map) {
  const Tensor& x = feature_map.value();
  const std::size_t d = x.rows(), len = x.rank() == 2 ? x.cols() : 0;
  if (len == 0) throw DimensionError("max_over_time: empty time axis in " + x.shape_string());
  Tensor out({d});
  std::vector<std::size_t> arg(d, 0);
  for (std::size_t i = 0; i < d; ++i) {
    double best = x(i, 0);
    for (std::size_t t = 1; t < len; ++t) {
      if (x(i, t) > best) {
        best = x(i, t);
        arg[i] = t;
      }
    }
    out[i] = best;
  }
  return feature_map.tape->push(std::move(out), any_grad({feature_map}),
                                [feature_map, arg = std::move(arg)](Tape& t, const Tensor& g) {
                                  accumulate(t, feature_map, [&](Tensor& gx) {
                                    for (std::size_t i = 0; i < arg.size(); ++i) gx(i, arg[i]) += g[i];
                                  });
                                });
}

Var maximum(std::span<const Var> inputs) {
  if (inputs.empty()) throw DimensionError("maximum: no inputs");
  Tape& tp = *inputs[0].tape;
  const Tensor& first = inputs[0].value();
  Tensor out = first;
  std::vector<std::uint32_t> arg(first.size(), 0);
  bool rg = false;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (inputs[k].tape != &tp) throw ContractError("maximum: operands on different tapes");
    rg = rg || tp.requires_grad(inputs[k]);
    if (k == 0) continue;
    const Tensor& x = inputs[k].value();
    require_same(first, x, "maximum");
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] > out[i]) {
        out[i] = x[i];
        arg[i] = static_cast<std::uint32_t>(k);
      }
    }
  }
  std::vector<Var> ins(inputs.begin(), inputs.end());
  return tp.push(std::move(out), rg, [ins = std::move(ins), arg = std::move(arg)](Tape& t, const Tensor& g) {
    for (std::size_t i = 0; i < arg.size(); ++i) {
      const Var src = ins[arg[i]];
      if (t.requires_grad(src)) t.grad(src.id)[i] += g[i];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  Tape& tp = *parts[0].tape;
  const std::size_t c = parts[0].value().cols();
  std::size_t r = 0;
  bool rg = false;
  for (const Var& p : parts) {
    if (p.tape != &tp) throw ContractError("concat_rows: operands on different tapes");
    if (p.value().cols() != c) {
      throw DimensionError("concat_rows: column mismatch " + parts[0].value().shape_string() + " vs " +
                           p.value().shape_string());
    }
    r += p.value().rows();
    rg = rg || tp.requires_grad(p);
  }
  Tensor out = parts[0].value().rank() == 1 ? Tensor({r}) : Tensor({r, c});
  std::size_t off = 0;
  for (const Var& p : parts) {
    const auto src = p.value().data();
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(off * c));
    off += p.value().rows();
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return tp.push(std::move(out), rg, [ins = std::move(ins), c](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (const Var& p : ins) {
      const std::size_t n = t.value(p).size();
      if (t.requires_grad(p)) {
        Tensor& gp = t.grad(p.id);
        for (std::size_t i = 0; i < n; ++i) gp[i] += g[off * c + i];
      }
      off += n / c;
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  const Tensor& x = a.value();
  if (count == 0 || begin + count > x.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of " + x.shape_string());
  }
  const std::size_t c = x.cols();
  Tensor out = x.rank() == 1 ? Tensor({count}) : Tensor({count, c});
  std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(begin * c), count * c, out.data().begin());
  return a.tape->push(std::move(out), any_grad({a}), [a, begin, c](Tape& t, const Tensor& g) {
    accumulate(t, a, [&](Tensor& ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[begin * c + i] += g[i];
    });
  });
}

Var gather_cols(Var table, std::span<const int> ids) {
  const Tensor& w = table.value();
  if (ids.empty()) throw DimensionError("gather_cols: empty id list");
  const std::size_t k = w.rows(), v = w.cols();
  Tensor out({k, ids.size()});
  for (std::size_t j = 0; j < ids.size(); ++j) {
    if (ids[j] < 0 || static_cast<std::size_t>(ids[j]) >= v) {
      throw RangeError("gather_cols: id " + std::to_string(ids[j]) + " outside table of " +
                       std::to_string(v) + " columns");
    }
    for (std::size_t i = 0; i < k; ++i) out(i, j) = w(i, static_cast<std::size_t>(ids[j]));
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return table.tape->push(std::move(out), any_grad({table}), [table, idv = std::move(idv)](Tape& t, const Tensor& g) {
    accumulate(t, table, [&](Tensor& gw) {
      const std::size_t k = g.rows();
      for (std::size_t j = 0; j < idv.size(); ++j)
        for (std::size_t i = 0; i < k; ++i) gw(i, static_cast<std::size_t>(idv[j])) += g(i, j);
    });
  });
}

Var pick(Var a, std::span<const int> ids) {
  const Tensor& x = a.value();
  if (ids.size() != x.cols()) {
    throw DimensionError("pick: " + std::to_string(ids.size()) + " ids for " + x.shape_string());
  }
  Tensor out({ids.size()});
  for (std::size_t j = 0; j < ids.size(); ++j) {
    if (ids[j] < 0 || static_cast<std::size_t>(ids[j]) >= x.rows()) {
      throw RangeError("pick: id " + std::to_string(ids[j]) + " outside " + x.shape_string());
    }
    out[j] = x(static_cast<std::size_t>(ids[j]), j);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return a.tape->push(std::move(out), any_grad({a}), [a, idv = std::move(idv)](Tape& t, const Tensor& g) {
    accumulate(t, a, [&](Tensor& ga) {
      for (std::size_t j = 0; j < idv.size(); ++j) ga(static_cast<std::size_t>(idv[j]), j) += g[j];
    });
  });
}

Var normalize_cols(Var a, double floor) {
  const Tensor& x = a.value();
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out = x;
  std::vector<double> norms(c, 0.0);
  std::vector<bool> floored(c, false);
  for (std::size_t j = 0; j < c; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < r; ++i) s += x(i, j) * x(i, j);
    const double n = std::sqrt(s);
    floored[j] = n < floor;
    norms[j] = floored[j] ? floor : n;
    for (std::size_t i = 0; i < r; ++i) out(i, j) /= norms[j];
  }
  Tape& tp = *a.tape;
  Var self{&tp, tp.size()};
  return tp.push(std::move(out), any_grad({a}),
                 [a, self, norms = std::move(norms), floored = std::move(floored)](Tape& t, const Tensor& g) {
                   accumulate(t, a, [&](Tensor& ga) {
                     const Tensor& y = t.value(self);
                     const std::size_t r = y.rows(), c = y.cols();
                     for (std::size_t j = 0; j < c; ++j) {
                       double proj = 0.0;
                       if (!floored[j]) {
                         for (std::size_t i = 0; i < r; ++i) proj += y(i, j) * g(i, j);
                       }
                       for (std::size_t i = 0; i < r; ++i) ga(i, j) += (g(i, j) - y(i, j) * proj) / norms[j];
                     }
                   });
                 });
}

Var dot_const(Var a, const Tensor& weights) {
  require_same(a.value(), weights, "dot_const");
  const auto av = a.value().data();
  const auto wv = weights.data();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * wv[i];
  return a.tape->push(Tensor::scalar(s), any_grad({a}), [a, weights](Tape& t, const Tensor& g) {
    accumulate(t, a, [&](Tensor& ga) {
      const double gs = g[0];
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gs * weights[i];
    });
  });
}

Var sum(Var a) {
  const auto av = a.value().data();
  const double s = std::accumulate(av.begin(), av.end(), 0.0);
  return a.tape->push(Tensor::scalar(s), any_grad({a}), [a](Tape& t, const Tensor& g) {
    accumulate(t, a, [&](Tensor& ga) {
      for (auto& v : ga.data()) v += g[0];
    });
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

// ---------------------------------------------------------------------------
// Gradient checking

double evaluate(const ScalarFn& f, const std::map<std::string, Tensor>& params) {
  Tape tape;
  std::map<std::string, Var> vars;
  for (const auto& [name, value] : params) vars.emplace(name, tape.leaf(name, value, false));
  const Tensor& out = f(tape, vars).value();
  return out.item();
}

double grad_check(const ScalarFn& f, const std::map<std::string, Tensor>& params, double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) {
    throw ParameterError("grad_check: eps must lie in (0, 1e-2], got " + std::to_string(eps));
  }
  Gradients analytic;
  {
    Tape tape;
    std::map<std::string, Var> vars;
    for (const auto& [name, value] : params) vars.emplace(name, tape.leaf(name, value, true));
    analytic = tape.backward(f(tape, vars));
  }
  std::map<std::string, Tensor> probe = params;
  double worst = 0.0;
  for (auto& [name, value] : probe) {
    const Tensor& ga = analytic.at(name);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + eps;
      const double up = evaluate(f, probe);
      value[i] = saved - eps;
      const double down = evaluate(f, probe);
      value[i] = saved;
      const double fd = (up - down) / (2.0 * eps);
      if (!std::isfinite(fd) || !std::isfinite(ga[i])) {
        throw NumericError("grad_check: non-finite derivative for " + name + "[" + std::to_string(i) + "]");
      }
      worst = std::max(worst, std::abs(ga[i] - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

}  // namespace fmgan::ndgrad
