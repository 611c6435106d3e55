#include "fmgan/cli.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "fmgan/condext.hpp"
#include "fmgan/config.hpp"
#include "fmgan/error.hpp"
#include "fmgan/plot.hpp"
#include "fmgan/textdata.hpp"
#include "fmgan/train.hpp"

namespace fmgan::cli {

namespace fs = std::filesystem;
using config::Config;
using ndgrad::Tensor;
using ndgrad::Var;

namespace {

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

fs::path outdir(const Config& c) {
  fs::path dir = c.get("out.dir");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

std::string existing_path(const Config& c, const std::string& key) {
  const std::string& p = c.get(key);
  if (p.empty()) throw ConfigError("config key '" + key + "' must name a file");
  if (!fs::exists(p)) throw ConfigError("config key '" + key + "': no such file " + p);
  return p;
}

textdata::MarkovChain chain_from(const Config& c, const std::string& key, std::uint64_t stream) {
  if (!c.get(key).empty()) return textdata::MarkovChain::load(existing_path(c, key));
  return textdata::random_sparse_chain(static_cast<std::size_t>(c.integer("data.toy_states")),
                                       static_cast<std::size_t>(c.integer("data.toy_successors")),
                                       stream_seed(static_cast<std::uint64_t>(c.integer("data.toy_seed")), stream));
}

// Streams records to metrics.csv and keeps them for the plots.
class MetricsSink {
 public:
  MetricsSink(const fs::path& path, std::vector<std::string> extra, bool append)
      : out_(path, append ? std::ios::app : std::ios::trunc), extra_(std::move(extra)) {
    if (!out_) throw InputError("cannot write " + path.string());
    if (!append) out_ << train::metrics_header(extra_) << "\n";
  }

  void operator()(const train::LogRecord& r) {
    out_ << train::to_csv_row(r, extra_) << "\n";
    out_.flush();
    records_.push_back(r);
  }

  const std::vector<train::LogRecord>& records() const { return records_; }

 private:
  std::ofstream out_;
  std::vector<std::string> extra_;
  std::vector<train::LogRecord> records_;
};

plot::Series series_of(const std::vector<train::LogRecord>& records, const std::string& phase,
                       const std::string& name = {}) {
  plot::Series s{name.empty() ? phase : name, {}, {}};
  for (const auto& r : records) {
    if (r.phase != phase) continue;
    s.x.push_back(r.iter);
    s.y.push_back(r.fmd);
  }
  return s;
}

void fmd_plot(const fs::path& dir, const std::vector<train::LogRecord>& records, const std::string& title) {
  std::vector<plot::Series> s{series_of(records, "critic"), series_of(records, "generator"),
                              series_of(records, "heldout"), series_of(records, "eval")};
  std::erase_if(s, [](const plot::Series& x) { return x.x.empty(); });
  plot::write_svg((dir / "fmd.svg").string(), s, {title, "iteration", "FMD"});
}

void extra_plot(const fs::path& dir, const std::vector<train::LogRecord>& records, const std::string& column,
                const std::string& title) {
  plot::Series s{column, {}, {}};
  for (const auto& r : records) {
    if (r.phase != "eval" || !r.extra.count(column)) continue;
    s.x.push_back(r.iter);
    s.y.push_back(r.extra.at(column));
  }
  plot::write_svg((dir / (column + ".svg")).string(), {s}, {title, "iteration", column});
}

// Test-BLEU against self-BLEU over the evaluation points.
void quality_diversity(const fs::path& dir, const std::vector<train::LogRecord>& records) {
  std::string csv = "iter,bleu2,bleu3,selfbleu2,selfbleu3\n";
  plot::Series b2{"BLEU-2", {}, {}}, b3{"BLEU-3", {}, {}};
  for (const auto& r : records) {
    if (r.phase != "eval" || !r.bleu2) continue;
    csv += std::to_string(r.iter) + "," + fmt(*r.bleu2) + "," + fmt(*r.bleu3) + "," + fmt(*r.selfbleu2) + "," +
           fmt(*r.selfbleu3) + "\n";
    b2.x.push_back(*r.bleu2);
    b2.y.push_back(*r.selfbleu2);
    b3.x.push_back(*r.bleu3);
    b3.y.push_back(*r.selfbleu3);
  }
  write_text(dir / "quality_diversity.csv", csv);
  plot::Axes axes{"quality against diversity", "test-BLEU (higher is better)", "self-BLEU (lower is better)"};
  axes.markers = true;
  plot::write_svg((dir / "quality_diversity.svg").string(), {b2, b3}, axes);
}

template <class T>
void checkpointing(T& trainer, const fs::path& path, const Config& c, std::function<void(int)>& hook) {
  const long every = c.integer("train.checkpoint_every");
  hook = [&trainer, path, every](int iter) {
    if (every > 0 && iter % every == 0) trainer.save(path.string());
  };
}

template <class T>
void maybe_resume(T& trainer, const Config& c, std::ostream& out) {
  const std::string& path = c.get("train.resume");
  if (path.empty()) return;
  trainer.restore(Checkpoint::load(existing_path(c, "train.resume")));
  out << "resumed from " << path << " at iteration " << trainer.iteration() << "\n";
}

// ---------------------------------------------------------------------------

}  // namespace

ToyCorpus toy_corpus(const Config& c) {
  ToyCorpus toy;
  toy.chain = chain_from(c, "data.chain", 1);
  toy.vocab = textdata::chain_vocab(toy.chain.states);
  const auto seed = static_cast<std::uint64_t>(c.integer("data.toy_seed"));
  const auto len = static_cast<std::size_t>(c.integer("net.max_len"));
  toy.train = textdata::synth_corpus(toy.chain, static_cast<std::size_t>(c.integer("data.toy_train")), len,
                                     stream_seed(seed, 2));
  toy.test = textdata::synth_corpus(toy.chain, static_cast<std::size_t>(c.integer("data.toy_test")), len,
                                    stream_seed(seed, 3));
  return toy;
}

condext::StyleTask style_task(const Config& c) {
  const auto seed = static_cast<std::uint64_t>(c.integer("data.toy_seed"));
  const auto len = static_cast<std::size_t>(c.integer("net.max_len"));
  const auto n_train = static_cast<std::size_t>(c.integer("data.toy_train"));
  const auto n_test = static_cast<std::size_t>(c.integer("data.toy_test"));
  condext::StyleTask task;
  task.chain1 = chain_from(c, "data.chain", 11);
  task.chain2 = chain_from(c, "data.chain2", 12);
  if (task.chain1.states != task.chain2.states) throw ConfigError("data.chain2 must have as many states as data.chain");
  task.train1 = textdata::synth_corpus(task.chain1, n_train, len, stream_seed(seed, 13));
  task.train2 = textdata::synth_corpus(task.chain2, n_train, len, stream_seed(seed, 14));
  task.test1 = textdata::synth_corpus(task.chain1, n_test, len, stream_seed(seed, 15));
  task.test2 = textdata::synth_corpus(task.chain2, n_test, len, stream_seed(seed, 16));
  return task;
}

condext::CipherTask cipher_task(const Config& c) {
  const auto seed = static_cast<std::uint64_t>(c.integer("data.toy_seed"));
  const auto len = static_cast<std::size_t>(c.integer("net.max_len"));
  const auto n_train = static_cast<std::size_t>(c.integer("data.toy_train"));
  const auto n_test = static_cast<std::size_t>(c.integer("data.toy_test"));
  condext::CipherTask task;
  task.chain = chain_from(c, "data.chain", 21);
  std::mt19937_64 key_rng(stream_seed(seed, 22));
  task.key = train::permutation(task.chain.states, key_rng);
  auto ciphered = [&](textdata::Corpus corpus) {
    for (auto& s : corpus.sequences) s = condext::apply_key(s, task.key);
    return corpus;
  };
  task.train1 = textdata::synth_corpus(task.chain, n_train, len, stream_seed(seed, 23));
  task.train2 = ciphered(textdata::synth_corpus(task.chain, n_train, len, stream_seed(seed, 24)));
  task.test1 = textdata::synth_corpus(task.chain, n_test, len, stream_seed(seed, 25));
  task.test2 = ciphered(textdata::synth_corpus(task.chain, n_test, len, stream_seed(seed, 26)));
  return task;
}

namespace {

int cmd_train(const Config& c, std::ostream& out) {
  train::TrainConfig tc = c.train();
  const fs::path dir = outdir(c);
  textdata::Vocab vocab;
  textdata::Corpus train_set, test_set;
  std::optional<textdata::MarkovChain> chain;
  if (c.get("data.train").empty()) {
    ToyCorpus toy = toy_corpus(c);
    chain = toy.chain;
    vocab = toy.vocab;
    train_set = std::move(toy.train);
    test_set = std::move(toy.test);
  } else {
    const auto lines = textdata::read_lines(existing_path(c, "data.train"));
    vocab = textdata::build_vocab(lines, static_cast<int>(c.integer("data.min_count")),
                                  static_cast<std::size_t>(c.integer("data.vocab_size")));
    train_set = textdata::encode_corpus(vocab, lines, tc.net.max_len, c.get("data.train"), "train");
    test_set = textdata::encode_corpus(vocab, textdata::read_lines(existing_path(c, "data.test")), tc.net.max_len,
                                       c.get("data.test"), "test");
  }
  tc.net.vocab = vocab.size();
  vocab.save((dir / "vocab.txt").string());

  train::Trainer trainer(tc, train_set, test_set, c.hash());
  maybe_resume(trainer, c, out);
  MetricsSink sink(dir / "metrics.csv", {}, trainer.iteration() > 0);
  std::function<void(int)> hook;
  checkpointing(trainer, dir / "checkpoint.bin", c, hook);
  trainer.run([&](const train::LogRecord& r) { sink(r); }, hook);
  trainer.save((dir / "checkpoint.bin").string());

  const auto samples = trainer.samples(tc.eval_samples);
  std::string text;
  for (const auto& s : samples) text += textdata::decode(vocab, s) + "\n";
  write_text(dir / "samples.txt", text);
  fmd_plot(dir, sink.records(), "FMD during training");
  quality_diversity(dir, sink.records());

  auto evals = trainer.history().phase("eval");
  auto held = trainer.history().phase("heldout");
  if (!evals.empty()) {
    const auto& e = evals.back();
    out << "iteration " << e.iter << ": heldout fmd " << fmt(held.empty() ? e.fmd : held.back().fmd) << ", bleu2 "
        << fmt(*e.bleu2) << ", bleu3 " << fmt(*e.bleu3) << ", self-bleu2 " << fmt(*e.selfbleu2) << ", self-bleu3 "
        << fmt(*e.selfbleu3);
    if (chain) {
      textdata::Corpus gen{samples, tc.net.max_len, "generator", "samples"};
      out << ", bigram tv " << fmt(textdata::bigram_tv_distance(gen, *chain));
    }
    out << "\n";
  }
  out << "outputs in " << dir.string() << "\n";
  return 0;
}

int cmd_style(const Config& c, std::ostream& out) {
  condext::CondConfig cc = c.cond();
  const fs::path dir = outdir(c);
  condext::StyleTask task = style_task(c);
  cc.base.net.vocab = textdata::kReserved + task.chain1.states;
  const auto vocab = textdata::chain_vocab(task.chain1.states);
  vocab.save((dir / "vocab.txt").string());

  condext::StyleTrainer trainer(cc, task, c.hash());
  maybe_resume(trainer, c, out);
  MetricsSink sink(dir / "metrics.csv", trainer.extra_columns(), trainer.iteration() > 0);
  std::function<void(int)> hook;
  checkpointing(trainer, dir / "checkpoint.bin", c, hook);
  trainer.run([&](const train::LogRecord& r) { sink(r); }, hook);
  trainer.save((dir / "checkpoint.bin").string());

  fmd_plot(dir, sink.records(), "FMD during style training");
  extra_plot(dir, sink.records(), "accuracy", "transfer accuracy");
  extra_plot(dir, sink.records(), "rec_nll", "reconstruction NLL");
  const auto evals = trainer.history().phase("eval");
  if (!evals.empty()) {
    out << "iteration " << evals.back().iter << ": transfer accuracy " << fmt(evals.back().extra.at("accuracy"))
        << ", reconstruction nll " << fmt(evals.back().extra.at("rec_nll")) << " (uniform "
        << fmt(std::log(static_cast<double>(cc.base.net.vocab))) << ")\n";
  }
  out << "outputs in " << dir.string() << "\n";
  return 0;
}

int cmd_cipher(const Config& c, std::ostream& out) {
  condext::CondConfig cc = c.cond();
  const fs::path dir = outdir(c);
  condext::CipherTask task = cipher_task(c);
  cc.base.net.vocab = textdata::kReserved + task.chain.states;

  std::string key_text = "plain,cipher\n";
  for (std::size_t s = 0; s < task.key.size(); ++s) {
    key_text += std::to_string(s) + "," + std::to_string(task.key[s]) + "\n";
  }
  write_text(dir / "key.csv", key_text);

  condext::CipherTrainer trainer(cc, task, c.hash());
  maybe_resume(trainer, c, out);
  MetricsSink sink(dir / "metrics.csv", trainer.extra_columns(), trainer.iteration() > 0);
  std::function<void(int)> hook;
  checkpointing(trainer, dir / "checkpoint.bin", c, hook);
  trainer.run([&](const train::LogRecord& r) { sink(r); }, hook);
  trainer.save((dir / "checkpoint.bin").string());

  fmd_plot(dir, sink.records(), "FMD during cipher training");
  extra_plot(dir, sink.records(), "accuracy", "word-mapping accuracy");
  out << "iteration " << trainer.iteration() << ": word-mapping accuracy " << fmt(trainer.accuracy()) << "\n";
  out << "outputs in " << dir.string() << "\n";
  return 0;
}

int cmd_generate(const Config& c, std::ostream& out) {
  const Checkpoint ck = Checkpoint::load(existing_path(c, "generate.checkpoint"));
  const textdata::Vocab vocab = textdata::Vocab::load(existing_path(c, "generate.vocab"));
  const long n = c.integer("generate.n");
  if (n < 0) throw ConfigError("config key 'generate.n' must be non-negative");
  if (!ck.tensors.count("gen.V") || !ck.tensors.count(nets::kEmbedding)) {
    throw InputError("checkpoint has no generator parameters");
  }
  if (ck.tensors.at("gen.V").rows() != vocab.size()) {
    throw InputError("vocabulary size " + std::to_string(vocab.size()) + " does not match the checkpoint (" +
                     std::to_string(ck.tensors.at("gen.V").rows()) + ")");
  }
  nets::ParamMap params;
  for (const auto& [name, t] : ck.tensors)
    if (nets::has_prefix(name, "gen.") || name == nets::kEmbedding) params[name] = t;
  const std::size_t len = std::stoul(ck.get("max_len"));
  const std::size_t noise = params.at("gen.Wz").cols();

  const fs::path dir = outdir(c);
  std::string text;
  if (n > 0) {
    std::mt19937_64 rng(stream_seed(static_cast<std::uint64_t>(c.integer("train.seed")), 7));
    ndgrad::Tape tape;
    auto vars = nets::bind_constants(tape, params);
    Var z = tape.constant(train::gaussian(rng, noise, static_cast<std::size_t>(n)));
    auto rollout = nets::generate_hard(nets::GeneratorVars::from(vars), z, len);
    for (const auto& s : rollout.sequences) text += textdata::decode(vocab, s) + "\n";
  }
  write_text(dir / "samples.txt", text);
  out << "wrote " << n << " sentences to " << (dir / "samples.txt").string() << "\n";
  return 0;
}

std::vector<textdata::Sequence> encode_all(const textdata::Vocab& vocab, const std::vector<std::string>& lines,
                                           std::size_t len) {
  std::vector<textdata::Sequence> out;
  out.reserve(lines.size());
  for (const auto& l : lines) out.push_back(textdata::encode(vocab, l, len));
  return out;
}

int cmd_eval(const Config& c, std::ostream& out) {
  const auto cand = textdata::read_lines(existing_path(c, "eval.candidates"));
  const auto refs = textdata::read_lines(existing_path(c, "eval.references"));
  const long max_n = c.integer("eval.max_n");
  if (max_n < 1 || max_n > 5) throw ConfigError("config key 'eval.max_n' must be in 1..5");
  std::vector<std::string> both = refs;
  both.insert(both.end(), cand.begin(), cand.end());
  std::size_t len = 1;
  for (const auto& l : both) len = std::max(len, textdata::tokenize(l).size());
  const auto vocab = textdata::build_vocab(both, 1, std::numeric_limits<std::size_t>::max());
  const auto cs = encode_all(vocab, cand, len);
  const auto rs = encode_all(vocab, refs, len);

  std::string csv = "metric,value\n";
  auto emit = [&](const std::string& name, double v) {
    csv += name + "," + fmt(v) + "\n";
    out << name << " " << fmt(v) << "\n";
  };
  for (int k = 2; k <= max_n; ++k) emit("bleu" + std::to_string(k), textdata::test_bleu(cs, rs, k));
  if (cs.size() >= 2) {
    for (int k = 2; k <= max_n; ++k) emit("selfbleu" + std::to_string(k), textdata::self_bleu(cs, k));
  }
  write_text(outdir(c) / "eval.csv", csv);
  return 0;
}

ot::CostMatrix read_cost(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    for (char& ch : line)
      if (ch == ',' || ch == ';') ch = ' ';
    std::istringstream ls(line);
    std::vector<double> row;
    std::string tok;
    while (ls >> tok) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw InputError(path + ": not a number: " + tok);
      }
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InputError(path + ": empty cost matrix");
  ot::CostMatrix cost{Tensor({rows.size(), rows[0].size()})};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw InputError(path + ": rows have different lengths");
    for (std::size_t j = 0; j < rows[i].size(); ++j) cost.values(i, j) = rows[i][j];
  }
  return cost;
}

struct Trace {
  std::vector<double> iter, value, residual;

  ot::IterationObserver observer(const ot::CostMatrix& cost) {
    return [this, &cost](int it, const ot::TransportPlan& plan) {
      iter.push_back(it);
      value.push_back(ot::transport_value(plan, cost));
      residual.push_back(ot::marginal_residual(plan));
    };
  }

  std::string csv() const {
    std::string s = "iter,value,residual\n";
    char buf[96];
    for (std::size_t i = 0; i < iter.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", static_cast<int>(iter[i]), value[i], residual[i]);
      s += buf;
    }
    return s;
  }
};

int cmd_ot_bench(const Config& c, std::ostream& out) {
  const fs::path dir = outdir(c);
  std::vector<ot::CostMatrix> costs;
  if (!c.get("bench.cost").empty()) {
    costs.push_back(read_cost(existing_path(c, "bench.cost")));
  } else {
    const auto sizes = c.sizes("bench.sizes");
    const long count = c.integer("bench.instances");
    if (sizes.empty() || count < 1) throw ConfigError("config key 'bench.instances' must be positive");
    std::mt19937_64 rng(stream_seed(static_cast<std::uint64_t>(c.integer("train.seed")), 31));
    for (long i = 0; i < count; ++i) {
      const std::size_t n = sizes[static_cast<std::size_t>(i) % sizes.size()];
      if (n < 1) throw ConfigError("config key 'bench.sizes' must be positive");
      ot::CostMatrix cost{Tensor({n, n})};
      for (auto& v : cost.values.data()) v = 2.0 * textdata::unit_uniform(rng);
      costs.push_back(std::move(cost));
    }
  }
  ot::SolverConfig ipot_cfg = c.solver();
  ipot_cfg.outer_iters = static_cast<int>(c.integer("bench.max_iters"));
  ipot_cfg.marginal_tol = c.real("bench.tol");
  ipot_cfg.validate();
  const auto eps = c.reals("bench.epsilons");

  struct Method {
    std::string name;
    double param;
    double err_sum = 0.0, err_max = 0.0, iter_sum = 0.0, ms_sum = 0.0, res_max = 0.0;
    std::size_t with_oracle = 0;
  };
  std::vector<Method> methods{{"ipot", ipot_cfg.beta}};
  for (double e : eps) methods.push_back({"sinkhorn", e});

  std::string summary = "instance,n,method,param,value,oracle,abs_error,residual,iterations,wall_ms\n";
  std::vector<plot::Series> value_series, residual_series;
  double oracle0 = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i < costs.size(); ++i) {
    const auto& cost = costs[i];
    const bool square_small = cost.rows() == cost.cols() && cost.rows() <= 8;
    const double oracle =
        square_small ? ot::exact_emd_oracle(cost).value : std::numeric_limits<double>::quiet_NaN();
    if (i == 0) oracle0 = oracle;
    for (auto& m : methods) {
      Trace trace;
      const auto t0 = std::chrono::steady_clock::now();
      const ot::SolveResult r =
          m.name == "ipot" ? ot::ipot(cost, ipot_cfg, i == 0 ? trace.observer(cost) : ot::IterationObserver{})
                           : ot::sinkhorn(cost, m.param, ipot_cfg.outer_iters, ipot_cfg.marginal_tol,
                                          i == 0 ? trace.observer(cost) : ot::IterationObserver{});
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      const double err = std::abs(r.value - oracle);
      summary += std::to_string(i) + "," + std::to_string(cost.rows()) + "," + m.name + "," + fmt(m.param) + "," +
                 fmt(r.value) + "," + fmt(oracle) + "," + fmt(err) + "," + fmt(r.residual) + "," +
                 std::to_string(r.iterations) + "," + fmt(ms) + "\n";
      if (square_small) {
        m.err_sum += err;
        m.err_max = std::max(m.err_max, err);
        ++m.with_oracle;
      }
      m.iter_sum += r.iterations;
      m.ms_sum += ms;
      m.res_max = std::max(m.res_max, r.residual);
      if (i == 0) {
        const std::string label = m.name == "ipot" ? "IPOT" : "Sinkhorn eps=" + fmt(m.param);
        const std::string file = m.name == "ipot" ? "ipot_trace.csv" : "sinkhorn_eps" + fmt(m.param) + "_trace.csv";
        write_text(dir / file, trace.csv());
        value_series.push_back({label, trace.iter, trace.value});
        residual_series.push_back({label, trace.iter, trace.residual});
      }
    }
  }
  write_text(dir / "summary.csv", summary);

  // Accuracy against cost per method, the solver analogue of a quality/diversity table.
  std::string table = "method,param,instances,mean_abs_error,max_abs_error,max_residual,mean_iterations,mean_ms\n";
  for (const auto& m : methods) {
    const double k = static_cast<double>(costs.size());
    const double mean_err = m.with_oracle ? m.err_sum / static_cast<double>(m.with_oracle)
                                          : std::numeric_limits<double>::quiet_NaN();
    table += m.name + "," + fmt(m.param) + "," + std::to_string(costs.size()) + "," + fmt(mean_err) + "," +
             fmt(m.with_oracle ? m.err_max : std::numeric_limits<double>::quiet_NaN()) + "," + fmt(m.res_max) + "," +
             fmt(m.iter_sum / k) + "," + fmt(m.ms_sum / k) + "\n";
    out << m.name << " " << fmt(m.param) << ": mean |value - oracle| " << fmt(mean_err) << ", max residual "
        << fmt(m.res_max) << ", mean iterations " << fmt(m.iter_sum / k) << "\n";
  }
  write_text(dir / "methods.csv", table);

  if (std::isfinite(oracle0) && !value_series.empty()) {
    double last = 1.0;
    for (const auto& s : value_series) last = std::max(last, s.x.empty() ? 1.0 : s.x.back());
    value_series.push_back({"exact", {1.0, last}, {oracle0, oracle0}});
  }
  plot::write_svg((dir / "convergence.svg").string(), value_series, {"transport value, first instance", "iteration", "<T, C>"});
  plot::Axes res{"marginal residual, first instance", "iteration", "residual"};
  res.log_y = true;
  plot::write_svg((dir / "residual.svg").string(), residual_series, res);
  out << "outputs in " << dir.string() << "\n";
  return 0;
}

// --key value / --key=value pairs left over after the fixed options.
std::vector<std::pair<std::string, std::string>> overrides(const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    std::string a = extras[i];
    if (a.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + a + "'");
    a.erase(0, 2);
    std::string value;
    if (auto eq = a.find('='); eq != std::string::npos) {
      value = a.substr(eq + 1);
      a.erase(eq);
    } else {
      if (i + 1 >= extras.size()) throw ConfigError("option --" + a + " needs a value");
      value = extras[++i];
    }
    for (char& ch : a)
      if (ch == '-') ch = '_';
    out.emplace_back(a, value);
  }
  return out;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Feature-mover's distance text GAN"};
  app.require_subcommand(1);
  struct Command {
    const char* name;
    const char* help;
    int (*fn)(const Config&, std::ostream&);
  };
  const Command commands[] = {
      {"train", "adversarial text generation on a corpus or the toy Markov corpus", cmd_train},
      {"style-train", "style transfer between two toy Markov chains", cmd_style},
      {"cipher-train", "unsupervised deciphering of a toy substitution cipher", cmd_cipher},
      {"generate", "sample sentences from a training checkpoint", cmd_generate},
      {"eval", "BLEU and self-BLEU of a candidate file against a reference file", cmd_eval},
      {"ot-bench", "IPOT and Sinkhorn against the exact solver", cmd_ot_bench},
  };
  std::string config_path, dir;
  bool list_keys = false;
  std::vector<CLI::App*> subs;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", config_path, "key = value config file");
    sub->add_option("--outdir", dir, "output directory (out.dir)");
    sub->add_flag("--list-keys", list_keys, "print every config key with its default and exit");
    sub->allow_extras();
    sub->footer("Any config key can be given as --key value; a key's last component is enough when unique.");
    subs.push_back(sub);
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    for (auto* s : subs)
      if (s->parsed()) out << s->help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return e.get_exit_code() == 0 ? 0 : exit_code(ErrorKind::config);
  }

  for (std::size_t k = 0; k < subs.size(); ++k) {
    auto* sub = subs[k];
    if (!sub->parsed()) continue;
    try {
      Config cfg = Config::defaults(commands[k].name);
      if (list_keys) {
        for (const auto& key : config::keys()) {
          out << key.name << " = " << cfg.get(key.name) << "  # " << key.doc << "\n";
        }
        return 0;
      }
      if (!config_path.empty()) cfg.load_file(config_path);
      if (const char* env = std::getenv("FMD_SEED"); env && *env) cfg.set("train.seed", env);
      for (const auto& [key, value] : overrides(sub->remaining())) cfg.set(key, value);
      if (!dir.empty()) cfg.set("out.dir", dir);
      write_text(outdir(cfg) / "resolved.cfg", cfg.dump());
      return commands[k].fn(cfg, out);
    } catch (const Error& e) {
      err << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
      return exit_code(e.kind());
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return 1;
    }
  }
  return 1;
}

}  // namespace fmgan::cli
