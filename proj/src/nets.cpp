#include "fmgan/nets.hpp"

#include <cmath>
#include <cstring>
#include <limits>

namespace fmgan::nets {

void NetConfig::validate() const {
  if (vocab <= static_cast<std::size_t>(textdata::kReserved)) throw ConfigError("nets: vocab must exceed the reserved ids");
  if (embed_dim == 0 || hidden == 0 || filters == 0) throw ConfigError("nets: dimensions must be positive");
  if (max_len < 1) throw ConfigError("nets: max_len must be at least 1");
  if (windows.empty()) throw ConfigError("nets: at least one window size is required");
  for (auto l : windows) {
    if (l == 0) throw ConfigError("nets: window sizes must be positive");
    if (l > max_len) {
      throw ConfigError("nets: window size " + std::to_string(l) + " exceeds max_len " + std::to_string(max_len));
    }
  }
  if (!(recurrent_init > 0.0) || !(embed_init > 0.0)) throw ConfigError("nets: init scales must be positive");
}

double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * textdata::unit_uniform(rng); }

Tensor uniform_tensor(std::mt19937_64& rng, std::vector<std::size_t> shape, double scale) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = uniform(rng, -scale, scale);
  return t;
}

void add_lstm_params(ParamMap& params, const std::string& prefix, std::size_t in, std::size_t drive,
                     std::size_t hidden, double scale, std::mt19937_64& rng) {
  params[prefix + "Wx"] = uniform_tensor(rng, {4 * hidden, in}, scale);
  params[prefix + "Wh"] = uniform_tensor(rng, {4 * hidden, hidden}, scale);
  if (drive > 0) params[prefix + "Wz"] = uniform_tensor(rng, {4 * hidden, drive}, scale);
  params[prefix + "b"] = Tensor({4 * hidden});
}

void add_extractor_params(ParamMap& params, const std::string& prefix, std::size_t embed_dim,
                          const std::vector<std::size_t>& windows, std::size_t filters, std::mt19937_64& rng) {
  for (auto l : windows) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(embed_dim * l));
    params[prefix + "W" + std::to_string(l)] = uniform_tensor(rng, {filters, embed_dim * l}, scale);
    params[prefix + "b" + std::to_string(l)] = Tensor({filters});
  }
}

void add_embedding(ParamMap& params, std::size_t embed_dim, std::size_t vocab, double scale, std::mt19937_64& rng) {
  Tensor e = uniform_tensor(rng, {embed_dim, vocab}, scale);
  for (std::size_t r = 0; r < embed_dim; ++r) e(r, textdata::kPad) = 0.0;
  params[kEmbedding] = std::move(e);
}

ParamMap init_params(const NetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ParamMap params;
  add_lstm_params(params, "gen.", cfg.embed_dim, cfg.noise_dim, cfg.hidden, cfg.recurrent_init, rng);
  params["gen.V"] = uniform_tensor(rng, {cfg.vocab, cfg.hidden}, cfg.recurrent_init);
  add_embedding(params, cfg.embed_dim, cfg.vocab, cfg.embed_init, rng);
  add_extractor_params(params, "ext.", cfg.embed_dim, cfg.windows, cfg.filters, rng);
  return params;
}

bool has_prefix(const std::string& name, const std::string& prefix) { return name.rfind(prefix, 0) == 0; }

VarMap bind_params(Tape& tape, const ParamMap& params, const std::function<bool(const std::string&)>& trainable) {
  VarMap vars;
  for (const auto& [name, value] : params) vars[name] = tape.leaf(name, value, trainable(name));
  return vars;
}

VarMap bind_constants(Tape& tape, const ParamMap& params) {
  return bind_params(tape, params, [](const std::string&) { return false; });
}

namespace {

Var lookup(const VarMap& vars, const std::string& name) {
  auto it = vars.find(name);
  if (it == vars.end()) throw ContractError("nets: missing parameter " + name);
  return it->second;
}

}  // namespace

LstmVars LstmVars::from(const VarMap& vars, const std::string& prefix) {
  LstmVars c;
  c.wx = lookup(vars, prefix + "Wx");
  c.wh = lookup(vars, prefix + "Wh");
  c.b = lookup(vars, prefix + "b");
  if (auto it = vars.find(prefix + "Wz"); it != vars.end()) c.wz = it->second;
  c.hidden = c.wh.value().cols();
  if (c.wh.value().rows() != 4 * c.hidden || c.wx.value().rows() != 4 * c.hidden) {
    throw DimensionError("nets: LSTM " + prefix + " gate blocks must have 4h rows");
  }
  return c;
}

Var LstmVars::offset(Var drive, std::size_t batch) const {
  Tape& tape = *b.tape;
  if (!has_drive()) return ndgrad::add_bias(tape.constant(Tensor({4 * hidden, batch})), b);
  if (drive.value().cols() != batch) throw DimensionError("nets: drive batch mismatch");
  return ndgrad::add_bias(ndgrad::matmul(wz, drive), b);
}

LstmState LstmVars::zero_state(Tape& tape, std::size_t batch) const {
  return {tape.constant(Tensor({hidden, batch})), tape.constant(Tensor({hidden, batch}))};
}

LstmState lstm_cell(const LstmVars& cell, Var x, const LstmState& prev, Var offset) {
  const std::size_t h = cell.hidden;
  Var gates = ndgrad::matmul(cell.wx, x) + ndgrad::matmul(cell.wh, prev.h) + offset;
  Var i = ndgrad::sigmoid(ndgrad::slice_rows(gates, 0, h));
  Var f = ndgrad::sigmoid(ndgrad::slice_rows(gates, h, h));
  Var g = ndgrad::tanh(ndgrad::slice_rows(gates, 2 * h, h));
  Var o = ndgrad::sigmoid(ndgrad::slice_rows(gates, 3 * h, h));
  Var c = ndgrad::mul(f, prev.c) + ndgrad::mul(i, g);
  return {ndgrad::mul(o, ndgrad::tanh(c)), c};
}

GeneratorVars GeneratorVars::from(const VarMap& vars, const std::string& prefix) {
  GeneratorVars g{LstmVars::from(vars, prefix), lookup(vars, prefix + "V"), lookup(vars, kEmbedding)};
  if (g.v.value().cols() != g.cell.hidden) throw DimensionError("nets: V must have h columns");
  if (g.v.value().rows() != g.embed.value().cols()) throw DimensionError("nets: V rows must equal the vocab size");
  return g;
}

StepOutput lstm_step(const GeneratorVars& g, Var w_prev, const LstmState& prev, Var z) {
  LstmState s = lstm_cell(g.cell, w_prev, prev, g.cell.offset(z, w_prev.value().cols()));
  return {s, ndgrad::matmul(g.v, s.h)};
}

namespace {

Var bos_inputs(const GeneratorVars& g, std::size_t batch) {
  std::vector<int> ids(batch, textdata::kBos);
  return ndgrad::gather_cols(g.embed, ids);
}

}  // namespace

std::vector<Var> generate_soft(const GeneratorVars& g, Var z, std::size_t len, double tau) {
  if (!(tau > 0.0)) throw ParameterError("generate_soft: temperature must be positive");
  const std::size_t n = z.value().cols();
  Var offset = g.cell.offset(z, n);
  LstmState state = g.cell.zero_state(*z.tape, n);
  Var w = bos_inputs(g, n);
  std::vector<Var> words;
  words.reserve(len);
  for (std::size_t t = 0; t < len; ++t) {
    state = lstm_cell(g.cell, w, state, offset);
    Var p = ndgrad::softmax(ndgrad::matmul(g.v, state.h), tau);
    w = ndgrad::matmul(g.embed, p);
    words.push_back(w);
  }
  return words;
}

HardRollout generate_hard(const GeneratorVars& g, Var z, std::size_t len) {
  if (len < 1) throw ParameterError("generate_hard: length must be at least 1");
  const std::size_t n = z.value().cols();
  Var offset = g.cell.offset(z, n);
  LstmState state = g.cell.zero_state(*z.tape, n);
  Var w = bos_inputs(g, n);
  HardRollout out;
  out.sequences.assign(n, Sequence(len, textdata::kPad));
  out.min_gap = std::numeric_limits<double>::infinity();
  std::vector<int> ids(n);
  for (std::size_t t = 0; t < len; ++t) {
    state = lstm_cell(g.cell, w, state, offset);
    const Tensor logits = ndgrad::matmul(g.v.value(), state.h.value());
    for (std::size_t j = 0; j < n; ++j) {
      std::size_t best = 0;
      double top = logits(0, j), second = -std::numeric_limits<double>::infinity();
      for (std::size_t r = 1; r < logits.rows(); ++r) {
        const double a = logits(r, j);
        if (a > top) {
          second = top;
          top = a;
          best = r;
        } else if (a > second) {
          second = a;
        }
      }
      out.min_gap = std::min(out.min_gap, top - second);
      ids[j] = static_cast<int>(best);
      out.sequences[j][t] = ids[j];
    }
    w = ndgrad::gather_cols(g.embed, ids);
  }
  return out;
}

std::vector<Var> teacher_forced_logits(const GeneratorVars& g, Var z, const std::vector<Var>& inputs) {
  const std::size_t n = z.value().cols();
  Var offset = g.cell.offset(z, n);
  LstmState state = g.cell.zero_state(*z.tape, n);
  std::vector<Var> logits;
  logits.reserve(inputs.size());
  for (Var x : inputs) {
    state = lstm_cell(g.cell, x, state, offset);
    logits.push_back(ndgrad::matmul(g.v, state.h));
  }
  return logits;
}

ExtractorVars ExtractorVars::from(const VarMap& vars, const std::vector<std::size_t>& windows,
                                  const std::string& prefix) {
  ExtractorVars e;
  e.windows = windows;
  for (auto l : windows) {
    e.w.push_back(lookup(vars, prefix + "W" + std::to_string(l)));
    e.b.push_back(lookup(vars, prefix + "b" + std::to_string(l)));
  }
  return e;
}

Var extract_features(const ExtractorVars& ext, std::span<const Var> steps) {
  if (steps.empty()) throw DimensionError("extract_features: empty sentence");
  const std::size_t len = steps.size();
  std::vector<Var> pooled;
  pooled.reserve(ext.windows.size());
  for (std::size_t wi = 0; wi < ext.windows.size(); ++wi) {
    const std::size_t l = ext.windows[wi];
    if (l > len) {
      throw ConfigError("extract_features: window size " + std::to_string(l) + " exceeds sentence length " +
                        std::to_string(len));
    }
    std::vector<Var> activations;
    activations.reserve(len - l + 1);
    for (std::size_t p = 0; p + l <= len; ++p) {
      Var window = l == 1 ? steps[p] : ndgrad::concat_rows(steps.subspan(p, l));
      activations.push_back(ndgrad::tanh(ndgrad::add_bias(ndgrad::matmul(ext.w[wi], window), ext.b[wi])));
    }
    pooled.push_back(activations.size() == 1 ? activations[0] : ndgrad::maximum(activations));
  }
  return pooled.size() == 1 ? pooled[0] : ndgrad::concat_rows(pooled);
}

std::uint64_t fingerprint(const ParamMap& params, const std::function<bool(const std::string&)>& which) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [name, t] : params) {
    if (!which(name)) continue;
    mix(name.data(), name.size());
    mix(t.data().data(), t.size() * sizeof(double));
  }
  return h;
}

}  // namespace fmgan::nets
