#include "fmgan/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "fmgan/fmd.hpp"

namespace fmgan::train {

namespace {

// splitmix64 step, used to derive independent stream seeds from the run seed.
std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

bool all_finite(const Gradients& grads) {
  return std::all_of(grads.begin(), grads.end(), [](const auto& kv) { return kv.second.all_finite(); });
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void adam_step(ParamMap& params, const Gradients& grads, AdamState& state, const AdamConfig& cfg) {
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw ContractError("adam: gradient for unknown parameter " + name);
    Tensor& p = it->second;
    if (!p.same_shape(g)) throw DimensionError("adam: gradient shape mismatch for " + name);
    auto [mi, fresh_m] = state.m.try_emplace(name, Tensor(p.shape()));
    auto [vi, fresh_v] = state.v.try_emplace(name, Tensor(p.shape()));
    Tensor& m = mi->second;
    Tensor& v = vi->second;
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      p[k] -= cfg.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.eps);
    }
  }
}

double clip_global_norm(Gradients& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (double x : g.data()) sq += x * x;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [name, g] : grads) g *= s;
  }
  return norm;
}

void TrainConfig::validate() const {
  net.validate();
  solver.validate();
  if (batch < 2) throw ConfigError("train.batch must be at least 2");
  if (critic_steps < 1) throw ConfigError("train.critic_steps must be at least 1");
  if (iterations < 0) throw ConfigError("train.iterations must be non-negative");
  if (!(lr_critic >= 0.0) || !(lr_generator >= 0.0)) throw ConfigError("learning rates must be non-negative");
  if (!(tau > 0.0) || !(tau_final > 0.0)) throw ConfigError("train.tau must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("adam betas must be in [0, 1)");
  }
  if (clip < 0.0) throw ConfigError("train.clip must be non-negative");
  if (heldout_every < 0 || eval_every < 0) throw ConfigError("evaluation intervals must be non-negative");
  if (heldout_size < 2) throw ConfigError("train.heldout_size must be at least 2");
  if (eval_samples < 2) throw ConfigError("train.eval_samples must be at least 2");
}

double TrainConfig::temperature(int iter) const {
  if (tau_final == tau || iterations <= 1) return tau;
  const double frac = std::clamp(static_cast<double>(iter - 1) / static_cast<double>(iterations - 1), 0.0, 1.0);
  return tau + (tau_final - tau) * frac;
}

bool TrainConfig::critic_owns(const std::string& name) const {
  if (name == nets::kEmbedding) return embedding_owner == EmbeddingOwner::critic;
  return nets::has_prefix(name, "ext.");
}

bool TrainConfig::generator_owns(const std::string& name) const {
  if (name == nets::kEmbedding) return embedding_owner == EmbeddingOwner::generator;
  return nets::has_prefix(name, "gen.");
}

std::vector<std::size_t> permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(textdata::unit_uniform(rng) * static_cast<double>(i));
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

Tensor gaussian(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  Tensor t({rows, cols});
  for (auto& v : t.data()) v = textdata::standard_normal(rng);
  return t;
}

BatchSampler::BatchSampler(std::size_t corpus_size, std::size_t batch, std::uint64_t seed)
    : size_(corpus_size), batch_(batch), seed_(seed) {
  if (batch == 0 || corpus_size < batch) {
    throw InputError("dataset of " + std::to_string(corpus_size) + " sentences is smaller than the batch size " +
                     std::to_string(batch));
  }
  reshuffle();
}

void BatchSampler::reshuffle() {
  std::mt19937_64 rng(derive(seed_, static_cast<std::uint64_t>(epoch_)));
  order_ = permutation(size_, rng);
}

std::vector<std::size_t> BatchSampler::next() {
  if (cursor_ + batch_ > size_) {
    ++epoch_;
    cursor_ = 0;
    reshuffle();
  }
  std::vector<std::size_t> out(order_.begin() + static_cast<long>(cursor_),
                               order_.begin() + static_cast<long>(cursor_ + batch_));
  cursor_ += batch_;
  return out;
}

void BatchSampler::restore(long epoch, std::size_t cursor) {
  epoch_ = epoch;
  cursor_ = cursor;
  reshuffle();
}

std::vector<LogRecord> TrainHistory::phase(const std::string& name) const {
  std::vector<LogRecord> out;
  for (const auto& r : records)
    if (r.phase == name) out.push_back(r);
  return out;
}

std::string metrics_header(const std::vector<std::string>& extra_columns) {
  std::string h = kMetricsHeader;
  for (const auto& c : extra_columns) h += "," + c;
  return h;
}

std::string to_csv_row(const LogRecord& r, const std::vector<std::string>& extra_columns) {
  auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
  std::ostringstream os;
  os << r.iter << ',' << r.phase << ',' << fmt(r.fmd) << ',' << fmt(r.residual) << ',' << opt(r.bleu2) << ','
     << opt(r.bleu3) << ',' << opt(r.selfbleu2) << ',' << opt(r.selfbleu3) << ',' << fmt(std::round(r.wall_ms));
  for (const auto& c : extra_columns) {
    os << ',';
    if (auto it = r.extra.find(c); it != r.extra.end()) os << fmt(it->second);
  }
  return os.str();
}

Trainer::Trainer(TrainConfig cfg, textdata::Corpus train, textdata::Corpus test, std::uint64_t config_hash)
    : cfg_(std::move(cfg)),
      train_(std::move(train)),
      test_(std::move(test)),
      config_hash_(config_hash),
      sampler_((cfg_.validate(), train_.size()), cfg_.batch, derive(cfg_.seed, 2)),
      rng_(derive(cfg_.seed, 1)),
      start_(std::chrono::steady_clock::now()) {
  for (const auto* c : {&train_, &test_}) {
    if (c->max_len != cfg_.net.max_len) {
      throw ConfigError("corpus length " + std::to_string(c->max_len) + " differs from net.max_len " +
                        std::to_string(cfg_.net.max_len));
    }
    c->validate(cfg_.net.vocab);
  }
  if (test_.size() < 2) throw InputError("test split needs at least 2 sentences");
  params_ = nets::init_params(cfg_.net, cfg_.seed);

  std::mt19937_64 held(derive(cfg_.seed, 3));
  const std::size_t h = std::min(cfg_.heldout_size, test_.size());
  auto order = permutation(test_.size(), held);
  for (std::size_t i = 0; i < h; ++i) heldout_batch_.push_back(&test_.sequences[order[i]]);
  heldout_z_ = gaussian(held, cfg_.net.noise_dim, h);
  std::mt19937_64 ev(derive(cfg_.seed, 4));
  eval_z_ = gaussian(ev, cfg_.net.noise_dim, cfg_.eval_samples);
}

namespace {

struct Objective {
  fmd::FmdNode node;
  Var real, fake;
};

Objective objective(const TrainConfig& cfg, ndgrad::Tape& tape, const nets::VarMap& vars, const Batch& real,
                    const Tensor& z, double tau) {
  if (z.cols() != real.size()) throw DimensionError("noise batch and real batch sizes differ");
  auto g = nets::GeneratorVars::from(vars);
  auto ext = nets::ExtractorVars::from(vars, cfg.net.windows);
  Var fake = nets::extract_features(ext, nets::generate_soft(g, tape.constant(z), cfg.net.max_len, tau));
  Var truth = nets::extract_features(ext, textdata::embed_batch(vars.at(nets::kEmbedding), real));
  return {fmd::fmd_loss(truth, fake, cfg.solver), truth, fake};
}

std::string cost_extrema(const Objective& o) {
  auto c = fmd::cosine_cost_matrix({o.real.value()}, {o.fake.value()});
  auto [lo, hi] = std::minmax_element(c.values.data().begin(), c.values.data().end());
  return "cost range [" + fmt(*lo) + ", " + fmt(*hi) + "]";
}

LogRecord record(const char* phase, const UpdateResult& r) {
  LogRecord out;
  out.phase = phase;
  out.fmd = r.fmd;
  out.residual = r.residual;
  return out;
}

}  // namespace

UpdateResult Trainer::evaluate_fmd(const Batch& real, const Tensor& z, double tau) const {
  ndgrad::Tape tape;
  auto vars = nets::bind_constants(tape, params_);
  Objective o = objective(cfg_, tape, vars, real, z, tau);
  return {o.node.value.value().item(), o.node.residual, 0.0};
}

UpdateResult Trainer::critic_update(const Batch& real, const Tensor& z, double tau) {
  ndgrad::Tape tape;
  auto vars = nets::bind_params(tape, params_, [this](const std::string& n) { return cfg_.critic_owns(n); });
  Objective o = [&] {
    try {
      return objective(cfg_, tape, vars, real, z, tau);
    } catch (const NumericError& e) {
      throw NumericError("critic update at iteration " + std::to_string(iter_) + ": " + e.what());
    }
  }();
  Gradients grads = tape.backward(ndgrad::scale(o.node.value, -1.0));
  if (!all_finite(grads)) {
    throw NumericError("critic update at iteration " + std::to_string(iter_) + ": non-finite gradient, " +
                       cost_extrema(o));
  }
  if (auto it = grads.find(nets::kEmbedding); it != grads.end()) {
    for (std::size_t r = 0; r < it->second.rows(); ++r) it->second(r, textdata::kPad) = 0.0;
  }
  UpdateResult out{o.node.value.value().item(), o.node.residual, clip_global_norm(grads, cfg_.clip)};
  adam_step(params_, grads, adam_critic_, {cfg_.lr_critic, cfg_.adam_beta1, cfg_.adam_beta2, 1e-8});
  return out;
}

UpdateResult Trainer::generator_update(const Batch& real, const Tensor& z, double tau) {
  ndgrad::Tape tape;
  auto vars = nets::bind_params(tape, params_, [this](const std::string& n) { return cfg_.generator_owns(n); });
  Objective o = [&] {
    try {
      return objective(cfg_, tape, vars, real, z, tau);
    } catch (const NumericError& e) {
      throw NumericError("generator update at iteration " + std::to_string(iter_) + ": " + e.what());
    }
  }();
  Gradients grads = tape.backward(o.node.value);
  if (!all_finite(grads)) {
    throw NumericError("generator update at iteration " + std::to_string(iter_) + ": non-finite gradient, " +
                       cost_extrema(o));
  }
  if (auto it = grads.find(nets::kEmbedding); it != grads.end()) {
    for (std::size_t r = 0; r < it->second.rows(); ++r) it->second(r, textdata::kPad) = 0.0;
  }
  UpdateResult out{o.node.value.value().item(), o.node.residual, clip_global_norm(grads, cfg_.clip)};
  adam_step(params_, grads, adam_generator_, {cfg_.lr_generator, cfg_.adam_beta1, cfg_.adam_beta2, 1e-8});
  return out;
}

Batch Trainer::sample_batch() {
  Batch b;
  for (auto i : sampler_.next()) b.push_back(&train_.sequences[i]);
  return b;
}

Tensor Trainer::sample_noise(std::size_t count) { return gaussian(rng_, cfg_.net.noise_dim, count); }

LogRecord& Trainer::log(LogRecord r) {
  r.step = ++step_;
  r.iter = iter_;
  r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  history_.records.push_back(std::move(r));
  if (sink_) sink_(history_.records.back());
  return history_.records.back();
}

void Trainer::step() {
  ++iter_;
  const double tau = cfg_.temperature(iter_);
  Batch last;
  Tensor last_z;
  for (int j = 0; j < cfg_.critic_steps; ++j) {
    last = sample_batch();
    last_z = sample_noise(cfg_.batch);
    auto r = critic_update(last, last_z, tau);
    log(record("critic", r));
  }
  if (!cfg_.reuse_batch) {
    last = sample_batch();
    last_z = sample_noise(cfg_.batch);
  }
  auto r = generator_update(last, last_z, tau);
  log(record("generator", r));
  if (cfg_.heldout_every > 0 && iter_ % cfg_.heldout_every == 0) heldout_fmd();
  if (cfg_.eval_every > 0 && iter_ % cfg_.eval_every == 0) evaluate();
}

double Trainer::heldout_fmd() {
  auto r = evaluate_fmd(heldout_batch_, heldout_z_, cfg_.temperature(std::max(iter_, 1)));
  log(record("heldout", r));
  return r.fmd;
}

LogRecord Trainer::evaluate() {
  auto fmd_now = evaluate_fmd(heldout_batch_, heldout_z_, cfg_.temperature(std::max(iter_, 1)));
  auto gen = samples_for(eval_z_);
  LogRecord r = record("eval", fmd_now);
  r.bleu2 = textdata::test_bleu(gen, test_.sequences, 2);
  r.bleu3 = textdata::test_bleu(gen, test_.sequences, 3);
  r.selfbleu2 = textdata::self_bleu(gen, 2);
  r.selfbleu3 = textdata::self_bleu(gen, 3);
  return log(r);
}

void Trainer::run(const std::function<void(const LogRecord&)>& on_record,
                  const std::function<void(int)>& on_iteration) {
  sink_ = on_record;
  if (iter_ == 0 && history_.records.empty()) {
    heldout_fmd();
    evaluate();
  }
  while (iter_ < cfg_.iterations) {
    step();
    if (on_iteration) on_iteration(iter_);
  }
  if (cfg_.eval_every > 0 && iter_ % cfg_.eval_every != 0 && iter_ > 0 &&
      (history_.records.empty() || history_.records.back().phase != "eval" || history_.records.back().iter != iter_)) {
    evaluate();
  }
  sink_ = {};
}

std::vector<textdata::Sequence> Trainer::samples_for(const Tensor& z) const {
  ndgrad::Tape tape;
  auto vars = nets::bind_constants(tape, params_);
  return nets::generate_hard(nets::GeneratorVars::from(vars), tape.constant(z), cfg_.net.max_len).sequences;
}

std::vector<textdata::Sequence> Trainer::samples(std::size_t count) const {
  std::mt19937_64 rng(derive(cfg_.seed, 5));
  return samples_for(gaussian(rng, cfg_.net.noise_dim, count));
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.meta["seed"] = std::to_string(cfg_.seed);
  ck.meta["config_hash"] = hex(config_hash_);
  ck.meta["iteration"] = std::to_string(iter_);
  ck.meta["step"] = std::to_string(step_);
  ck.meta["adam_critic_step"] = std::to_string(adam_critic_.step);
  ck.meta["adam_generator_step"] = std::to_string(adam_generator_.step);
  ck.meta["sampler_epoch"] = std::to_string(sampler_.epoch());
  ck.meta["sampler_cursor"] = std::to_string(sampler_.cursor());
  std::ostringstream rng;
  rng << rng_;
  ck.meta["rng"] = rng.str();
  ck.meta["max_len"] = std::to_string(cfg_.net.max_len);
  std::string windows;
  for (auto l : cfg_.net.windows) windows += (windows.empty() ? "" : ",") + std::to_string(l);
  ck.meta["windows"] = windows;
  for (const auto& [name, t] : params_) ck.tensors[name] = t;
  for (const auto& [name, t] : adam_critic_.m) ck.tensors["adam.critic.m:" + name] = t;
  for (const auto& [name, t] : adam_critic_.v) ck.tensors["adam.critic.v:" + name] = t;
  for (const auto& [name, t] : adam_generator_.m) ck.tensors["adam.generator.m:" + name] = t;
  for (const auto& [name, t] : adam_generator_.v) ck.tensors["adam.generator.v:" + name] = t;
  return ck;
}

void Trainer::save(const std::string& path) const { checkpoint().save(path); }

void Trainer::restore(const Checkpoint& ck) {
  const std::string hash = ck.get("config_hash");
  if (config_hash_ != 0 && hash != hex(0) && hash != hex(config_hash_)) {
    throw ConfigError("checkpoint config hash " + hash + " does not match the run config " + hex(config_hash_));
  }
  if (std::stoull(ck.get("seed")) != cfg_.seed) throw ConfigError("checkpoint seed differs from the run seed");
  ParamMap params;
  AdamState critic, generator;
  const std::string prefixes[4] = {"adam.critic.m:", "adam.critic.v:", "adam.generator.m:", "adam.generator.v:"};
  std::map<std::string, Tensor>* slots[4] = {&critic.m, &critic.v, &generator.m, &generator.v};
  for (const auto& [name, t] : ck.tensors) {
    bool placed = false;
    for (int k = 0; k < 4 && !placed; ++k) {
      if (nets::has_prefix(name, prefixes[k])) {
        (*slots[k])[name.substr(prefixes[k].size())] = t;
        placed = true;
      }
    }
    if (placed) continue;
    auto it = params_.find(name);
    if (it == params_.end()) throw InputError("checkpoint: unknown parameter " + name);
    if (it->second.shape() != t.shape()) throw InputError("checkpoint: shape mismatch for " + name);
    params[name] = t;
  }
  if (params.size() != params_.size()) throw InputError("checkpoint: missing parameters");
  critic.step = std::stol(ck.get("adam_critic_step"));
  generator.step = std::stol(ck.get("adam_generator_step"));
  std::istringstream rng(ck.get("rng"));
  std::mt19937_64 restored;
  if (!(rng >> restored)) throw InputError("checkpoint: bad rng state");

  params_ = std::move(params);
  adam_critic_ = std::move(critic);
  adam_generator_ = std::move(generator);
  rng_ = restored;
  sampler_.restore(std::stol(ck.get("sampler_epoch")), std::stoul(ck.get("sampler_cursor")));
  iter_ = std::stoi(ck.get("iteration"));
  step_ = std::stol(ck.get("step"));
}

}  // namespace fmgan::train
