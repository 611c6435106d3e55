#include "fmgan/condext.hpp"

#include <cmath>
#include <sstream>

namespace fmgan::condext {

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed + 0x9e3779b97f4a7c15ull * (stream + 11);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

Var broadcast_column(Var table, int column, std::size_t n) {
  std::vector<int> ids(n, column);
  return ndgrad::gather_cols(table, ids);
}

std::vector<Var> embed(Var embedding, const Batch& batch) { return textdata::embed_batch(embedding, batch); }

void check_pair(const Batch& b1, const Batch& b2) {
  if (b1.size() != b2.size() || b1.empty()) {
    throw DimensionError("batch sizes differ: " + std::to_string(b1.size()) + " vs " + std::to_string(b2.size()));
  }
}

Corpus with_split(Corpus c, const std::string& source, const std::string& split) {
  c.source = source;
  c.split = split;
  return c;
}

}  // namespace

void CondConfig::validate() const {
  base.validate();
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (style_dim == 0) throw ConfigError("style_dim must be positive");
}

// ---------------------------------------------------------------------------
// Style transfer

ParamMap init_style_params(const CondConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto& n = cfg.base.net;
  std::mt19937_64 rng(seed);
  ParamMap p;
  nets::add_lstm_params(p, "enc.", n.embed_dim, 0, n.hidden, n.recurrent_init, rng);
  p["style.E"] = nets::uniform_tensor(rng, {cfg.style_dim, 2}, 1.0);
  nets::add_lstm_params(p, "dec.", n.embed_dim, n.hidden + 2 * cfg.style_dim, n.hidden, n.recurrent_init, rng);
  p["dec.V"] = nets::uniform_tensor(rng, {n.vocab, n.hidden}, n.recurrent_init);
  nets::add_embedding(p, n.embed_dim, n.vocab, n.embed_init, rng);
  nets::add_extractor_params(p, "ext.", n.embed_dim, n.windows, n.filters, rng);
  return p;
}

StyleVars StyleVars::from(const VarMap& vars, const nets::NetConfig& net) {
  return {nets::LstmVars::from(vars, "enc."), vars.at("style.E"), nets::GeneratorVars::from(vars, "dec."),
          nets::ExtractorVars::from(vars, net.windows)};
}

Var encode(const StyleVars& m, const std::vector<Var>& steps, int style) {
  if (steps.empty()) throw DimensionError("encode: empty sentence");
  const std::size_t n = steps[0].value().cols();
  Var offset = m.encoder.offset(Var{}, n);
  nets::LstmState s = m.encoder.zero_state(*steps[0].tape, n);
  for (Var x : steps) s = nets::lstm_cell(m.encoder, x, s, offset);
  Var parts[] = {s.h, broadcast_column(m.style, style, n)};
  return ndgrad::concat_rows(parts);
}

Var decoder_drive(const StyleVars& m, Var z, int target_style) {
  Var parts[] = {z, broadcast_column(m.style, target_style, z.value().cols())};
  return ndgrad::concat_rows(parts);
}

namespace {

// Teacher-forced mean NLL over non-PAD target tokens of one batch.
Var batch_nll(const StyleVars& m, const Batch& batch, int style) {
  auto steps = embed(m.decoder.embed, batch);
  Var z = encode(m, steps, style);
  const std::size_t n = batch.size(), len = steps.size();
  std::vector<Var> inputs;
  inputs.reserve(len);
  inputs.push_back(broadcast_column(m.decoder.embed, textdata::kBos, n));
  for (std::size_t t = 0; t + 1 < len; ++t) inputs.push_back(steps[t]);
  auto logits = nets::teacher_forced_logits(m.decoder, decoder_drive(m, z, style), inputs);
  Var total;
  double count = 0.0;
  std::vector<int> ids(n);
  for (std::size_t t = 0; t < len; ++t) {
    Tensor mask({n});
    for (std::size_t j = 0; j < n; ++j) {
      ids[j] = (*batch[j])[t];
      mask[j] = ids[j] == textdata::kPad ? 0.0 : 1.0;
      count += mask[j];
    }
    Var term = ndgrad::dot_const(ndgrad::pick(ndgrad::log_softmax(logits[t]), ids), mask);
    total = t == 0 ? term : total + term;
  }
  if (count == 0.0) throw InputError("reconstruction: batch has no tokens");
  return ndgrad::scale(total, -1.0 / count);
}

AdvTerms adv_sum(fmd::FmdNode a, fmd::FmdNode b) {
  Var total = a.value + b.value;
  return {std::move(a), std::move(b), total};
}

}  // namespace

Var reconstruction_loss(const StyleVars& m, const Batch& batch1, const Batch& batch2) {
  return batch_nll(m, batch1, 0) + batch_nll(m, batch2, 1);
}

AdvTerms style_adv_loss(const StyleVars& m, const Batch& batch1, const Batch& batch2, double tau,
                        const ot::SolverConfig& solver) {
  check_pair(batch1, batch2);
  auto x1 = embed(m.decoder.embed, batch1);
  auto x2 = embed(m.decoder.embed, batch2);
  const std::size_t len = x1.size();
  Var to2 = nets::extract_features(
      m.extractor, nets::generate_soft(m.decoder, decoder_drive(m, encode(m, x1, 0), 1), len, tau));
  Var to1 = nets::extract_features(
      m.extractor, nets::generate_soft(m.decoder, decoder_drive(m, encode(m, x2, 1), 0), len, tau));
  Var real2 = nets::extract_features(m.extractor, x2);
  Var real1 = nets::extract_features(m.extractor, x1);
  return adv_sum(fmd::fmd_loss(to2, real2, solver), fmd::fmd_loss(to1, real1, solver));
}

Var style_objective(Var reconstruction, Var adversarial, double lambda) {
  if (!(lambda >= 0.0)) throw ParameterError("style_objective: lambda must be non-negative");
  if (lambda == 0.0) return reconstruction;
  return reconstruction + ndgrad::scale(adversarial, lambda);
}

std::vector<Sequence> transfer(const StyleVars& m, const Batch& batch, int source_style, std::size_t len) {
  auto x = embed(m.decoder.embed, batch);
  Var drive = decoder_drive(m, encode(m, x, source_style), 1 - source_style);
  return nets::generate_hard(m.decoder, drive, len).sequences;
}

double transfer_accuracy(const std::vector<Sequence>& transferred, const textdata::MarkovChain& source,
                         const textdata::MarkovChain& target) {
  if (transferred.empty()) throw InputError("transfer_accuracy: no sentences");
  std::size_t hits = 0;
  for (const auto& s : transferred) hits += target.log_likelihood(s) > source.log_likelihood(s);
  return static_cast<double>(hits) / static_cast<double>(transferred.size());
}

// ---------------------------------------------------------------------------
// Substitution cipher

ParamMap init_cipher_params(const CondConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto& n = cfg.base.net;
  std::mt19937_64 rng(seed);
  ParamMap p;
  for (const char* g : {"g1.", "g2."}) {
    p[std::string(g) + "M"] = nets::uniform_tensor(rng, {n.vocab, n.embed_dim}, n.recurrent_init);
    p[std::string(g) + "c"] = Tensor({n.vocab});
  }
  nets::add_embedding(p, n.embed_dim, n.vocab, n.embed_init, rng);
  nets::add_extractor_params(p, "ext1.", n.embed_dim, n.windows, n.filters, rng);
  nets::add_extractor_params(p, "ext2.", n.embed_dim, n.windows, n.filters, rng);
  return p;
}

CipherVars CipherVars::from(const VarMap& vars, const nets::NetConfig& net) {
  return {vars.at("g1.M"),
          vars.at("g1.c"),
          vars.at("g2.M"),
          vars.at("g2.c"),
          vars.at(nets::kEmbedding),
          nets::ExtractorVars::from(vars, net.windows, "ext1."),
          nets::ExtractorVars::from(vars, net.windows, "ext2.")};
}

std::vector<Var> map_words(Var m, Var c, Var embed_w, const std::vector<Var>& steps, double tau) {
  std::vector<Var> out;
  out.reserve(steps.size());
  for (Var w : steps) {
    Var logits = ndgrad::add_bias(ndgrad::matmul(m, w), c);
    out.push_back(ndgrad::matmul(embed_w, ndgrad::softmax(logits, tau)));
  }
  return out;
}

Var feature_l1(Var a, Var b) {
  if (a.value().shape() != b.value().shape()) throw DimensionError("feature_l1: shape mismatch");
  return ndgrad::scale(ndgrad::sum(ndgrad::abs(a - b)), 1.0 / static_cast<double>(a.value().cols()));
}

Var cycle_loss(const CipherVars& m, const Batch& batch1, const Batch& batch2, double tau) {
  check_pair(batch1, batch2);
  auto x1 = embed(m.embed, batch1);
  auto x2 = embed(m.embed, batch2);
  auto back1 = map_words(m.m2, m.c2, m.embed, map_words(m.m1, m.c1, m.embed, x1, tau), tau);
  auto back2 = map_words(m.m1, m.c1, m.embed, map_words(m.m2, m.c2, m.embed, x2, tau), tau);
  Var term1 = feature_l1(nets::extract_features(m.f1, back1), nets::extract_features(m.f1, x1));
  Var term2 = feature_l1(nets::extract_features(m.f2, back2), nets::extract_features(m.f2, x2));
  return term1 + term2;
}

AdvTerms cipher_adv_loss(const CipherVars& m, const Batch& batch1, const Batch& batch2, double tau,
                         const ot::SolverConfig& solver) {
  check_pair(batch1, batch2);
  auto x1 = embed(m.embed, batch1);
  auto x2 = embed(m.embed, batch2);
  Var to1 = nets::extract_features(m.f1, map_words(m.m2, m.c2, m.embed, x2, tau));
  Var to2 = nets::extract_features(m.f2, map_words(m.m1, m.c1, m.embed, x1, tau));
  return adv_sum(fmd::fmd_loss(to1, nets::extract_features(m.f1, x1), solver),
                 fmd::fmd_loss(to2, nets::extract_features(m.f2, x2), solver));
}

std::vector<int> word_map(const CipherVars& m, bool first) {
  const Tensor logits = ndgrad::matmul(first ? m.m1.value() : m.m2.value(), m.embed.value());
  const Tensor& bias = first ? m.c1.value() : m.c2.value();
  std::vector<int> out(logits.cols());
  for (std::size_t a = 0; a < logits.cols(); ++a) {
    std::size_t best = 0;
    for (std::size_t r = 1; r < logits.rows(); ++r)
      if (logits(r, a) + bias[r] > logits(best, a) + bias[best]) best = r;
    out[a] = static_cast<int>(best);
  }
  return out;
}

double decipher_accuracy(const CipherVars& m, const Corpus& plain, const Corpus& ciphered,
                         const std::vector<std::size_t>& key) {
  const int reserved = textdata::kReserved;
  std::vector<int> to_cipher(reserved + key.size(), -1), to_plain(reserved + key.size(), -1);
  for (std::size_t s = 0; s < key.size(); ++s) {
    to_cipher[reserved + s] = reserved + static_cast<int>(key[s]);
    to_plain[reserved + static_cast<int>(key[s])] = reserved + static_cast<int>(s);
  }
  auto score = [](const Corpus& c, const std::vector<int>& mapped, const std::vector<int>& truth) {
    double hits = 0.0, total = 0.0;
    for (const auto& seq : c.sequences) {
      for (int id : seq) {
        if (id < textdata::kReserved || static_cast<std::size_t>(id) >= truth.size()) continue;
        hits += mapped[static_cast<std::size_t>(id)] == truth[static_cast<std::size_t>(id)];
        total += 1.0;
      }
    }
    if (total == 0.0) throw InputError("decipher_accuracy: corpus has no content words");
    return hits / total;
  };
  return 0.5 * (score(plain, word_map(m, true), to_cipher) + score(ciphered, word_map(m, false), to_plain));
}

// ---------------------------------------------------------------------------
// Toy tasks

StyleTask make_style_task(std::size_t states, std::size_t successors, std::size_t train_size,
                          std::size_t test_size, std::size_t len, std::uint64_t seed) {
  StyleTask t;
  t.chain1 = textdata::random_sparse_chain(states, successors, mix(seed, 1));
  t.chain2 = textdata::random_sparse_chain(states, successors, mix(seed, 2));
  t.train1 = with_split(textdata::synth_corpus(t.chain1, train_size, len, mix(seed, 3)), "style1", "train");
  t.train2 = with_split(textdata::synth_corpus(t.chain2, train_size, len, mix(seed, 4)), "style2", "train");
  t.test1 = with_split(textdata::synth_corpus(t.chain1, test_size, len, mix(seed, 5)), "style1", "test");
  t.test2 = with_split(textdata::synth_corpus(t.chain2, test_size, len, mix(seed, 6)), "style2", "test");
  return t;
}

Sequence apply_key(const Sequence& s, const std::vector<std::size_t>& key) {
  Sequence out = s;
  for (auto& id : out) {
    const long state = id - textdata::kReserved;
    if (state >= 0 && static_cast<std::size_t>(state) < key.size()) {
      id = textdata::kReserved + static_cast<int>(key[static_cast<std::size_t>(state)]);
    }
  }
  return out;
}

CipherTask make_cipher_task(std::size_t states, std::size_t successors, std::size_t train_size,
                            std::size_t test_size, std::size_t len, std::uint64_t seed) {
  CipherTask t;
  t.chain = textdata::random_sparse_chain(states, successors, mix(seed, 1));
  std::mt19937_64 rng(mix(seed, 2));
  t.key = train::permutation(states, rng);
  auto cipher = [&](Corpus c) {
    for (auto& s : c.sequences) s = apply_key(s, t.key);
    return c;
  };
  t.train1 = with_split(textdata::synth_corpus(t.chain, train_size, len, mix(seed, 3)), "plain", "train");
  t.train2 = with_split(cipher(textdata::synth_corpus(t.chain, train_size, len, mix(seed, 4))), "cipher", "train");
  t.test1 = with_split(textdata::synth_corpus(t.chain, test_size, len, mix(seed, 5)), "plain", "test");
  t.test2 = with_split(cipher(textdata::synth_corpus(t.chain, test_size, len, mix(seed, 6))), "cipher", "test");
  return t;
}

// ---------------------------------------------------------------------------
// Trainers

PairTrainer::PairTrainer(CondConfig cfg, Corpus train1, Corpus train2, ParamMap params, std::uint64_t config_hash)
    : cfg_(std::move(cfg)),
      train1_(std::move(train1)),
      train2_(std::move(train2)),
      config_hash_(config_hash),
      params_(std::move(params)),
      sampler1_((cfg_.validate(), train1_.size()), cfg_.base.batch, mix(cfg_.base.seed, 21)),
      sampler2_(train2_.size(), cfg_.base.batch, mix(cfg_.base.seed, 22)),
      start_(std::chrono::steady_clock::now()) {
  for (const auto* c : {&train1_, &train2_}) {
    if (c->max_len != cfg_.base.net.max_len) throw ConfigError("corpus length differs from net.max_len");
    c->validate(cfg_.base.net.vocab);
  }
}

train::LogRecord& PairTrainer::log(train::LogRecord r) {
  r.step = ++step_;
  r.iter = iter_;
  r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  history_.records.push_back(std::move(r));
  if (sink_) sink_(history_.records.back());
  return history_.records.back();
}

void PairTrainer::update(bool critic) {
  Batch b1, b2;
  for (auto i : sampler1_.next()) b1.push_back(&train1_.sequences[i]);
  for (auto i : sampler2_.next()) b2.push_back(&train2_.sequences[i]);
  Tape tape;
  auto vars = nets::bind_params(tape, params_, [&](const std::string& n) { return critic_owns(n) == critic; });
  Objectives o = objectives(tape, vars, b1, b2);
  ndgrad::Gradients grads = tape.backward(critic ? ndgrad::scale(o.critic, -1.0) : o.min);
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) {
      throw NumericError("non-finite gradient for " + name + " at iteration " + std::to_string(iter_));
    }
  }
  if (auto it = grads.find(nets::kEmbedding); it != grads.end()) {
    for (std::size_t r = 0; r < it->second.rows(); ++r) it->second(r, textdata::kPad) = 0.0;
  }
  train::clip_global_norm(grads, cfg_.base.clip);
  const auto& b = cfg_.base;
  train::adam_step(params_, grads, critic ? adam_critic_ : adam_min_,
                   {critic ? b.lr_critic : b.lr_generator, b.adam_beta1, b.adam_beta2, 1e-8});
  train::LogRecord r;
  r.phase = critic ? "critic" : "generator";
  r.fmd = o.adv.mean_value();
  r.residual = o.adv.residual();
  log(r);
}

void PairTrainer::step() {
  ++iter_;
  for (int j = 0; j < cfg_.base.critic_steps; ++j) update(true);
  update(false);
  if (cfg_.base.eval_every > 0 && iter_ % cfg_.base.eval_every == 0) evaluate();
}

train::LogRecord PairTrainer::evaluate() {
  train::LogRecord r;
  r.phase = "eval";
  fill_eval(r);
  return log(r);
}

void PairTrainer::run(const std::function<void(const train::LogRecord&)>& on_record,
                      const std::function<void(int)>& on_iteration) {
  sink_ = on_record;
  if (iter_ == 0 && history_.records.empty()) evaluate();
  while (iter_ < cfg_.base.iterations) {
    step();
    if (on_iteration) on_iteration(iter_);
  }
  if (cfg_.base.eval_every > 0 && iter_ % cfg_.base.eval_every != 0 && iter_ > 0) evaluate();
  sink_ = {};
}

Checkpoint PairTrainer::checkpoint() const {
  Checkpoint ck;
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash_));
  ck.meta["seed"] = std::to_string(cfg_.base.seed);
  ck.meta["config_hash"] = hash;
  ck.meta["iteration"] = std::to_string(iter_);
  ck.meta["step"] = std::to_string(step_);
  ck.meta["adam_critic_step"] = std::to_string(adam_critic_.step);
  ck.meta["adam_min_step"] = std::to_string(adam_min_.step);
  ck.meta["sampler1"] = std::to_string(sampler1_.epoch()) + " " + std::to_string(sampler1_.cursor());
  ck.meta["sampler2"] = std::to_string(sampler2_.epoch()) + " " + std::to_string(sampler2_.cursor());
  for (const auto& [name, t] : params_) ck.tensors[name] = t;
  for (const auto& [name, t] : adam_critic_.m) ck.tensors["adam.critic.m:" + name] = t;
  for (const auto& [name, t] : adam_critic_.v) ck.tensors["adam.critic.v:" + name] = t;
  for (const auto& [name, t] : adam_min_.m) ck.tensors["adam.min.m:" + name] = t;
  for (const auto& [name, t] : adam_min_.v) ck.tensors["adam.min.v:" + name] = t;
  return ck;
}

void PairTrainer::save(const std::string& path) const { checkpoint().save(path); }

void PairTrainer::restore(const Checkpoint& ck) {
  char mine[17];
  std::snprintf(mine, sizeof mine, "%016llx", static_cast<unsigned long long>(config_hash_));
  const std::string hash = ck.get("config_hash");
  if (config_hash_ != 0 && hash != std::string(16, '0') && hash != mine)
    throw ConfigError("checkpoint config hash " + hash + " does not match the run config " + mine);
  if (std::stoull(ck.get("seed")) != cfg_.base.seed) throw ConfigError("checkpoint seed differs from the run seed");
  ParamMap params;
  train::AdamState critic, min;
  for (const auto& [name, t] : ck.tensors) {
    const auto colon = name.find(':');
    if (colon != std::string::npos) {
      const std::string slot = name.substr(0, colon), key = name.substr(colon + 1);
      if (slot == "adam.critic.m") critic.m[key] = t;
      else if (slot == "adam.critic.v") critic.v[key] = t;
      else if (slot == "adam.min.m") min.m[key] = t;
      else if (slot == "adam.min.v") min.v[key] = t;
      else throw InputError("checkpoint: unknown tensor " + name);
      continue;
    }
    auto it = params_.find(name);
    if (it == params_.end() || it->second.shape() != t.shape()) throw InputError("checkpoint: bad parameter " + name);
    params[name] = t;
  }
  if (params.size() != params_.size()) throw InputError("checkpoint: missing parameters");
  critic.step = std::stol(ck.get("adam_critic_step"));
  min.step = std::stol(ck.get("adam_min_step"));
  long e1 = 0, e2 = 0;
  std::size_t c1 = 0, c2 = 0;
  std::istringstream(ck.get("sampler1")) >> e1 >> c1;
  std::istringstream(ck.get("sampler2")) >> e2 >> c2;
  params_ = std::move(params);
  adam_critic_ = std::move(critic);
  adam_min_ = std::move(min);
  sampler1_.restore(e1, c1);
  sampler2_.restore(e2, c2);
  iter_ = std::stoi(ck.get("iteration"));
  step_ = std::stol(ck.get("step"));
}

namespace {

Batch all_of(const Corpus& c, std::size_t limit) {
  Batch b;
  for (std::size_t i = 0; i < std::min(limit, c.size()); ++i) b.push_back(&c.sequences[i]);
  return b;
}

}  // namespace

StyleTrainer::StyleTrainer(CondConfig cfg, StyleTask task, std::uint64_t config_hash)
    : PairTrainer(cfg, task.train1, task.train2, init_style_params(cfg, cfg.base.seed), config_hash),
      task_(std::move(task)) {}

bool StyleTrainer::critic_owns(const std::string& name) const {
  if (name == nets::kEmbedding) return cfg_.base.embedding_owner == train::EmbeddingOwner::critic;
  return nets::has_prefix(name, "ext.");
}

PairTrainer::Objectives StyleTrainer::objectives(Tape& tape, const VarMap& vars, const Batch& b1,
                                                 const Batch& b2) const {
  (void)tape;
  StyleVars m = StyleVars::from(vars, cfg_.base.net);
  AdvTerms adv = style_adv_loss(m, b1, b2, tau(), cfg_.base.solver);
  Var critic = ndgrad::scale(adv.total, cfg_.lambda);
  Var min = style_objective(reconstruction_loss(m, b1, b2), adv.total, cfg_.lambda);
  return {std::move(adv), critic, min};
}

double StyleTrainer::accuracy() const {
  Tape tape;
  StyleVars m = StyleVars::from(nets::bind_constants(tape, params_), cfg_.base.net);
  const std::size_t len = cfg_.base.net.max_len;
  auto to2 = transfer(m, all_of(task_.test1, cfg_.base.eval_samples), 0, len);
  auto to1 = transfer(m, all_of(task_.test2, cfg_.base.eval_samples), 1, len);
  return 0.5 * (transfer_accuracy(to2, task_.chain1, task_.chain2) + transfer_accuracy(to1, task_.chain2, task_.chain1));
}

double StyleTrainer::reconstruction_nll() const {
  Tape tape;
  StyleVars m = StyleVars::from(nets::bind_constants(tape, params_), cfg_.base.net);
  const std::size_t n = std::min({cfg_.base.eval_samples, task_.test1.size(), task_.test2.size()});
  return 0.5 * reconstruction_loss(m, all_of(task_.test1, n), all_of(task_.test2, n)).value().item();
}

void StyleTrainer::fill_eval(train::LogRecord& r) const {
  Tape tape;
  StyleVars m = StyleVars::from(nets::bind_constants(tape, params_), cfg_.base.net);
  const std::size_t n = std::min({cfg_.base.eval_samples, task_.test1.size(), task_.test2.size()});
  Batch b1 = all_of(task_.test1, n), b2 = all_of(task_.test2, n);
  AdvTerms adv = style_adv_loss(m, b1, b2, tau(), cfg_.base.solver);
  r.fmd = adv.mean_value();
  r.residual = adv.residual();
  const std::size_t len = cfg_.base.net.max_len;
  auto to2 = transfer(m, b1, 0, len);
  auto to1 = transfer(m, b2, 1, len);
  r.bleu2 = 0.5 * (textdata::test_bleu(to2, task_.test2.sequences, 2) + textdata::test_bleu(to1, task_.test1.sequences, 2));
  r.bleu3 = 0.5 * (textdata::test_bleu(to2, task_.test2.sequences, 3) + textdata::test_bleu(to1, task_.test1.sequences, 3));
  r.selfbleu2 = 0.5 * (textdata::self_bleu(to2, 2) + textdata::self_bleu(to1, 2));
  r.selfbleu3 = 0.5 * (textdata::self_bleu(to2, 3) + textdata::self_bleu(to1, 3));
  r.extra["accuracy"] =
      0.5 * (transfer_accuracy(to2, task_.chain1, task_.chain2) + transfer_accuracy(to1, task_.chain2, task_.chain1));
  r.extra["rec_nll"] = 0.5 * reconstruction_loss(m, b1, b2).value().item();
}

CipherTrainer::CipherTrainer(CondConfig cfg, CipherTask task, std::uint64_t config_hash)
    : PairTrainer(cfg, task.train1, task.train2, init_cipher_params(cfg, cfg.base.seed), config_hash),
      task_(std::move(task)) {}

bool CipherTrainer::critic_owns(const std::string& name) const {
  if (name == nets::kEmbedding) return cfg_.base.embedding_owner == train::EmbeddingOwner::critic;
  return nets::has_prefix(name, "ext1.") || nets::has_prefix(name, "ext2.");
}

PairTrainer::Objectives CipherTrainer::objectives(Tape& tape, const VarMap& vars, const Batch& b1,
                                                  const Batch& b2) const {
  (void)tape;
  CipherVars m = CipherVars::from(vars, cfg_.base.net);
  AdvTerms adv = cipher_adv_loss(m, b1, b2, tau(), cfg_.base.solver);
  Var total = style_objective(cycle_loss(m, b1, b2, tau()), adv.total, cfg_.lambda);
  return {std::move(adv), total, total};
}

double CipherTrainer::accuracy() const {
  Tape tape;
  CipherVars m = CipherVars::from(nets::bind_constants(tape, params_), cfg_.base.net);
  return decipher_accuracy(m, task_.test1, task_.test2, task_.key);
}

void CipherTrainer::fill_eval(train::LogRecord& r) const {
  Tape tape;
  CipherVars m = CipherVars::from(nets::bind_constants(tape, params_), cfg_.base.net);
  const std::size_t n = std::min({cfg_.base.eval_samples, task_.test1.size(), task_.test2.size()});
  Batch b1 = all_of(task_.test1, n), b2 = all_of(task_.test2, n);
  AdvTerms adv = cipher_adv_loss(m, b1, b2, tau(), cfg_.base.solver);
  r.fmd = adv.mean_value();
  r.residual = adv.residual();
  r.extra["accuracy"] = decipher_accuracy(m, task_.test1, task_.test2, task_.key);
  r.extra["cycle"] = cycle_loss(m, b1, b2, tau()).value().item();
}

}  // namespace fmgan::condext
