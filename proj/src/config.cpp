#include "fmgan/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "fmgan/error.hpp"

namespace fmgan::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

template <class T>
bool parse_number(const std::string& s, T& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && !s.empty();
}

bool parse_bool(const std::string& s, bool& out) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return out = true, true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return out = false, true;
  return false;
}

bool valid(Type type, const std::string& v) {
  long l = 0;
  double d = 0.0;
  bool b = false;
  switch (type) {
    case Type::integer: return parse_number(v, l);
    case Type::real: return parse_number(v, d);
    case Type::boolean: return parse_bool(v, b);
    case Type::text: return true;
    case Type::owner: return v == "critic" || v == "generator";
    case Type::integer_list:
      for (const auto& x : split_list(v))
        if (!parse_number(x, l) || l < 0) return false;
      return !v.empty();
    case Type::real_list:
      for (const auto& x : split_list(v))
        if (!parse_number(x, d)) return false;
      return !v.empty();
  }
  return false;
}

const char* type_name(Type type) {
  switch (type) {
    case Type::integer: return "an integer";
    case Type::real: return "a number";
    case Type::boolean: return "true or false";
    case Type::text: return "text";
    case Type::owner: return "critic or generator";
    case Type::integer_list: return "a comma-separated list of non-negative integers";
    case Type::real_list: return "a comma-separated list of numbers";
  }
  return "?";
}

const Key& find_key(const std::string& full) {
  for (const auto& k : keys())
    if (k.name == full) return k;
  throw ConfigError("unknown config key '" + full + "'");
}

// Keys that do not change what a training run computes.
bool outside_hash(const std::string& key) {
  static const char* const prefixes[] = {"out.", "generate.", "eval.", "bench."};
  for (const char* p : prefixes)
    if (key.rfind(p, 0) == 0) return true;
  return key == "train.checkpoint_every" || key == "train.resume" || key == "train.eval_every" || key == "train.heldout_every";
}

}  // namespace

const std::vector<Key>& keys() {
  static const std::vector<Key> all = {
      {"net.embed_dim", Type::integer, "64", "word embedding size k"},
      {"net.hidden", Type::integer, "128", "LSTM hidden size h"},
      {"net.noise_dim", Type::integer, "32", "generator noise size"},
      {"net.max_len", Type::integer, "12", "sentence length L (longer sentences are truncated)"},
      {"net.windows", Type::integer_list, "3,4,5", "convolution window sizes"},
      {"net.filters", Type::integer, "32", "filters per window size"},
      {"net.recurrent_init", Type::real, "0.08", "uniform init range of LSTM and decoding weights"},
      {"net.embed_init", Type::real, "1.0", "uniform init range of the word embedding"},

      {"train.batch", Type::integer, "32", "mini-batch size n"},
      {"train.lr_critic", Type::real, "1e-4", "Adam step size of the feature extractor"},
      {"train.lr_generator", Type::real, "1e-4", "Adam step size of the generator"},
      {"train.adam_beta1", Type::real, "0.5", "Adam first-moment decay"},
      {"train.adam_beta2", Type::real, "0.999", "Adam second-moment decay"},
      {"train.iterations", Type::integer, "2000", "outer iterations N"},
      {"train.critic_steps", Type::integer, "5", "critic updates per generator update J"},
      {"train.tau", Type::real, "0.1", "soft-argmax temperature"},
      {"train.tau_final", Type::real, "0.1", "temperature reached by a linear anneal at the last iteration"},
      {"train.clip", Type::real, "5.0", "global gradient-norm clip for both players"},
      {"train.embedding_owner", Type::owner, "critic", "player that updates the word embedding"},
      {"train.reuse_batch", Type::boolean, "false", "generator step reuses the last critic batch and noise"},
      {"train.seed", Type::integer, "1", "seed for init, batches and noise (FMD_SEED overrides)"},
      {"train.heldout_every", Type::integer, "10", "held-out FMD interval in iterations"},
      {"train.heldout_size", Type::integer, "128", "held-out batch size"},
      {"train.eval_every", Type::integer, "100", "BLEU evaluation interval in iterations"},
      {"train.eval_samples", Type::integer, "500", "generated sentences per evaluation"},
      {"train.checkpoint_every", Type::integer, "500", "checkpoint interval in iterations (0: final only)"},
      {"train.resume", Type::text, "", "checkpoint of the same config to continue from"},

      {"solver.beta", Type::real, "0.5", "IPOT proximity penalty"},
      {"solver.inner_k", Type::integer, "1", "IPOT inner sweeps per proximal step"},
      {"solver.outer_iters", Type::integer, "100", "IPOT proximal steps per FMD evaluation"},
      {"solver.marginal_tol", Type::real, "0", "early-exit tolerance inside training (0: fixed budget)"},

      {"data.train", Type::text, "", "training corpus, one sentence per line (empty: toy Markov corpus)"},
      {"data.test", Type::text, "", "reference corpus for BLEU"},
      {"data.vocab_size", Type::integer, "5728", "vocabulary cap including the four reserved tokens"},
      {"data.min_count", Type::integer, "1", "minimum token count to enter the vocabulary"},
      {"data.chain", Type::text, "", "Markov chain file for the toy corpus (empty: random chain)"},
      {"data.chain2", Type::text, "", "second chain file for style-train"},
      {"data.toy_states", Type::integer, "20", "states of a random toy chain"},
      {"data.toy_successors", Type::integer, "3", "successors per state of a random toy chain"},
      {"data.toy_seed", Type::integer, "1234", "seed of the toy chains, corpora and cipher key"},
      {"data.toy_train", Type::integer, "10000", "toy training sentences (per side for style and cipher)"},
      {"data.toy_test", Type::integer, "1000", "toy test sentences (per side for style and cipher)"},

      {"cond.lambda", Type::real, "1.0", "weight of the adversarial term"},
      {"cond.style_dim", Type::integer, "8", "style code size"},

      {"bench.cost", Type::text, "", "cost matrix file, one row per line (empty: random instances)"},
      {"bench.sizes", Type::integer_list, "2,3,4,5,6", "sizes of random instances"},
      {"bench.instances", Type::integer, "200", "random instances"},
      {"bench.epsilons", Type::real_list, "1,0.1,0.01", "Sinkhorn regularization strengths"},
      {"bench.max_iters", Type::integer, "2000", "iteration cap for every solver"},
      {"bench.tol", Type::real, "1e-6", "marginal residual stopping tolerance"},

      {"generate.checkpoint", Type::text, "", "checkpoint to sample from"},
      {"generate.vocab", Type::text, "", "vocabulary file written by train"},
      {"generate.n", Type::integer, "10", "sentences to write"},

      {"eval.candidates", Type::text, "", "generated sentences, one per line"},
      {"eval.references", Type::text, "", "reference sentences, one per line"},
      {"eval.max_n", Type::integer, "4", "highest BLEU order reported"},

      {"out.dir", Type::text, "run", "output directory"},
  };
  return all;
}

Config Config::defaults(const std::string& command) {
  Config c;
  for (const auto& k : keys()) c.values_[k.name] = k.fallback;
  if (command == "cipher-train") {
    c.values_["train.iterations"] = "3000";
  }
  return c;
}

std::string Config::resolve(const std::string& key) {
  const std::string k = trim(key);
  if (k.find('.') != std::string::npos) return find_key(k).name;
  std::vector<std::string> hits;
  for (const auto& entry : keys()) {
    const auto dot = entry.name.rfind('.');
    if (entry.name.compare(dot + 1, std::string::npos, k) == 0) hits.push_back(entry.name);
  }
  if (hits.empty()) throw ConfigError("unknown config key '" + k + "'");
  if (hits.size() > 1) {
    std::string all;
    for (const auto& h : hits) all += (all.empty() ? "" : ", ") + h;
    throw ConfigError("ambiguous config key '" + k + "' (" + all + ")");
  }
  return hits.front();
}

void Config::set(const std::string& key, const std::string& value) {
  const std::string full = resolve(key);
  const Key& k = find_key(full);
  const std::string v = trim(value);
  if (!valid(k.type, v)) {
    throw ConfigError("config key '" + full + "' expects " + type_name(k.type) + ", got '" + v + "'");
  }
  values_[full] = v;
}

void Config::load_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": expected key = value");
    }
    set(line.substr(0, eq), line.substr(eq + 1));
  }
}

void Config::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  load_text(buf.str(), path);
}

const std::string& Config::get(const std::string& key) const { return values_.at(resolve(key)); }

long Config::integer(const std::string& key) const {
  long v = 0;
  if (!parse_number(get(key), v)) throw ConfigError("config key '" + resolve(key) + "' is not an integer");
  return v;
}

double Config::real(const std::string& key) const {
  double v = 0.0;
  if (!parse_number(get(key), v)) throw ConfigError("config key '" + resolve(key) + "' is not a number");
  return v;
}

bool Config::boolean(const std::string& key) const {
  bool v = false;
  if (!parse_bool(get(key), v)) throw ConfigError("config key '" + resolve(key) + "' is not a boolean");
  return v;
}

std::vector<std::size_t> Config::sizes(const std::string& key) const {
  std::vector<std::size_t> out;
  for (const auto& x : split_list(get(key))) {
    long v = 0;
    if (!parse_number(x, v) || v < 0) throw ConfigError("config key '" + resolve(key) + "' is not an integer list");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::vector<double> Config::reals(const std::string& key) const {
  std::vector<double> out;
  for (const auto& x : split_list(get(key))) {
    double v = 0.0;
    if (!parse_number(x, v)) throw ConfigError("config key '" + resolve(key) + "' is not a number list");
    out.push_back(v);
  }
  return out;
}

std::string Config::dump() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::uint64_t Config::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  auto feed = [&](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
    h ^= 0xff;
    h *= 1099511628211ull;
  };
  // N only shapes the trajectory through the temperature anneal, so a run can be extended.
  const bool annealed = real("train.tau") != real("train.tau_final");
  for (const auto& [k, v] : values_) {
    if (outside_hash(k) || (k == "train.iterations" && !annealed)) continue;
    feed(k);
    feed(v);
  }
  return h;
}

ot::SolverConfig Config::solver() const {
  ot::SolverConfig s;
  s.beta = real("solver.beta");
  s.inner_k = static_cast<int>(integer("solver.inner_k"));
  s.outer_iters = static_cast<int>(integer("solver.outer_iters"));
  s.marginal_tol = real("solver.marginal_tol");
  return s;
}

namespace {

std::size_t count(const Config& c, const std::string& key) {
  const long v = c.integer(key);
  if (v < 0) throw ConfigError("config key '" + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

}  // namespace

train::TrainConfig Config::train() const {
  train::TrainConfig t;
  t.net.embed_dim = count(*this, "net.embed_dim");
  t.net.hidden = count(*this, "net.hidden");
  t.net.noise_dim = count(*this, "net.noise_dim");
  t.net.max_len = count(*this, "net.max_len");
  t.net.windows = sizes("net.windows");
  t.net.filters = count(*this, "net.filters");
  t.net.recurrent_init = real("net.recurrent_init");
  t.net.embed_init = real("net.embed_init");
  t.batch = count(*this, "train.batch");
  t.lr_critic = real("train.lr_critic");
  t.lr_generator = real("train.lr_generator");
  t.adam_beta1 = real("train.adam_beta1");
  t.adam_beta2 = real("train.adam_beta2");
  t.iterations = static_cast<int>(integer("train.iterations"));
  t.critic_steps = static_cast<int>(integer("train.critic_steps"));
  t.tau = real("train.tau");
  t.tau_final = real("train.tau_final");
  t.solver = solver();
  t.clip = real("train.clip");
  t.embedding_owner =
      get("train.embedding_owner") == "generator" ? train::EmbeddingOwner::generator : train::EmbeddingOwner::critic;
  t.reuse_batch = boolean("train.reuse_batch");
  t.seed = static_cast<std::uint64_t>(integer("train.seed"));
  t.heldout_every = static_cast<int>(integer("train.heldout_every"));
  t.heldout_size = count(*this, "train.heldout_size");
  t.eval_every = static_cast<int>(integer("train.eval_every"));
  t.eval_samples = count(*this, "train.eval_samples");
  return t;
}

condext::CondConfig Config::cond() const {
  condext::CondConfig c;
  c.base = train();
  c.lambda = real("cond.lambda");
  c.style_dim = count(*this, "cond.style_dim");
  return c;
}

}  // namespace fmgan::config
