#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "fmgan/fmd.hpp"
#include "fmgan/nets.hpp"
#include "testing.hpp"

using namespace fmgan;
using namespace fmgan::nets;

namespace {

NetConfig small_config() {
  NetConfig c;
  c.vocab = 8;
  c.embed_dim = 4;
  c.hidden = 5;
  c.noise_dim = 3;
  c.max_len = 6;
  c.windows = {2, 3};
  c.filters = 3;
  return c;
}

Tensor noise(std::mt19937_64& rng, std::size_t dim, std::size_t n) {
  Tensor z({dim, n});
  for (auto& v : z.data()) v = textdata::standard_normal(rng);
  return z;
}

ParamMap zeroed(ParamMap p) {
  for (auto& [name, t] : p) t.fill(0.0);
  return p;
}

bool is_ext(const std::string& name) { return has_prefix(name, "ext."); }

}  // namespace

TEST_CASE("lstm_step with zero weights") {
  NetConfig cfg = small_config();
  ParamMap p = zeroed(init_params(cfg, 1));
  Tape tape;
  auto vars = bind_constants(tape, p);
  auto g = GeneratorVars::from(vars);
  const std::size_t n = 2;
  LstmState s0 = g.cell.zero_state(tape, n);
  std::mt19937_64 rng(3);
  Var w = tape.constant(testing::random_tensor(rng, cfg.embed_dim, n));
  Var z = tape.constant(noise(rng, cfg.noise_dim, n));
  StepOutput out = lstm_step(g, w, s0, z);
  CHECK(ndgrad::max_abs(out.state.h.value()) == 0.0);
  CHECK(ndgrad::max_abs(out.logits.value()) == 0.0);
}

TEST_CASE("lstm_step is deterministic and matches finite differences") {
  NetConfig cfg = small_config();
  ParamMap p = init_params(cfg, 2);
  for (auto& [name, t] : p)
    if (has_prefix(name, "gen.")) t *= 5.0;
  std::mt19937_64 rng(4);
  Tensor w0 = testing::random_tensor(rng, cfg.embed_dim, 3);
  Tensor z0 = noise(rng, cfg.noise_dim, 3);
  Tensor h0 = testing::random_tensor(rng, cfg.hidden, 3);
  Tensor c0 = testing::random_tensor(rng, cfg.hidden, 3);
  Tensor weights = testing::random_tensor(rng, cfg.vocab, 3);

  ndgrad::ScalarFn f = [&](Tape& tape, const VarMap& vars) {
    VarMap all = vars;
    all[kEmbedding] = tape.constant(p.at(kEmbedding));
    auto g = GeneratorVars::from(all);
    LstmState prev{tape.constant(h0), tape.constant(c0)};
    StepOutput s1 = lstm_step(g, tape.constant(w0), prev, tape.constant(z0));
    StepOutput s2 = lstm_step(g, tape.constant(w0), s1.state, tape.constant(z0));
    return ndgrad::dot_const(ndgrad::tanh(s2.logits), weights) + ndgrad::sum(s2.state.c);
  };
  ParamMap gen;
  for (auto& [name, t] : p)
    if (has_prefix(name, "gen.")) gen[name] = t;
  CHECK(ndgrad::evaluate(f, gen) == ndgrad::evaluate(f, gen));
  CHECK(ndgrad::grad_check(f, gen, 1e-5) <= 1e-4);
}

TEST_CASE("generate_hard") {
  NetConfig cfg = small_config();
  std::mt19937_64 rng(5);
  Tensor z = noise(rng, cfg.noise_dim, 4);

  SUBCASE("same z gives the same sequences") {
    ParamMap p = init_params(cfg, 7);
    Tape t1, t2;
    auto a = generate_hard(GeneratorVars::from(bind_constants(t1, p)), t1.constant(z), cfg.max_len);
    auto b = generate_hard(GeneratorVars::from(bind_constants(t2, p)), t2.constant(z), cfg.max_len);
    CHECK(a.sequences == b.sequences);
  }
  SUBCASE("rigged decoder emits a constant token") {
    ParamMap p = zeroed(init_params(cfg, 7));
    const std::size_t h = cfg.hidden;
    for (std::size_t r = 0; r < h; ++r) {
      p["gen.b"][r] = 5.0;          // input gate open
      p["gen.b"][2 * h + r] = 5.0;  // candidate positive
      p["gen.b"][3 * h + r] = 5.0;  // output gate open
      p["gen.V"](7, r) = 1.0;
    }
    Tape tape;
    auto out = generate_hard(GeneratorVars::from(bind_constants(tape, p)), tape.constant(z), cfg.max_len);
    for (const auto& s : out.sequences) CHECK(s == textdata::Sequence(cfg.max_len, 7));
  }
  SUBCASE("ties go to the lowest id") {
    ParamMap p = zeroed(init_params(cfg, 7));
    Tape tape;
    auto out = generate_hard(GeneratorVars::from(bind_constants(tape, p)), tape.constant(z), cfg.max_len);
    for (const auto& s : out.sequences) CHECK(s == textdata::Sequence(cfg.max_len, 0));
    CHECK(out.min_gap == 0.0);
  }
}

TEST_CASE("generate_soft") {
  NetConfig cfg = small_config();
  std::mt19937_64 rng(6);
  Tensor z = noise(rng, cfg.noise_dim, 3);

  SUBCASE("equal logits give the mean embedding") {
    ParamMap p = init_params(cfg, 8);
    p["gen.V"].fill(0.0);
    Tape tape;
    auto words = generate_soft(GeneratorVars::from(bind_constants(tape, p)), tape.constant(z), cfg.max_len, 0.3);
    const Tensor& e = p.at(kEmbedding);
    for (const auto& w : words) {
      for (std::size_t r = 0; r < cfg.embed_dim; ++r) {
        double mean = 0.0;
        for (std::size_t c = 0; c < cfg.vocab; ++c) mean += e(r, c);
        mean /= static_cast<double>(cfg.vocab);
        for (std::size_t j = 0; j < 3; ++j) CHECK(w.value()(r, j) == doctest::Approx(mean).epsilon(1e-12));
      }
    }
  }
  SUBCASE("low temperature approaches the hard rollout") {
    ParamMap p = init_params(cfg, 9);
    for (auto& [name, t] : p)
      if (has_prefix(name, "gen.")) t *= 5.0;
    p["gen.V"] *= 100.0;
    const Tensor& e = p.at(kEmbedding);
    int tested = 0;
    for (int draw = 0; draw < 200 && tested < 20; ++draw) {
      Tape tape;
      auto g = GeneratorVars::from(bind_constants(tape, p));
      Var zv = tape.constant(noise(rng, cfg.noise_dim, 1));
      auto hard = generate_hard(g, zv, cfg.max_len);
      if (hard.min_gap < 1.0) continue;
      ++tested;
      auto soft = generate_soft(g, zv, cfg.max_len, 0.01);
      double worst = 0.0;
      for (std::size_t t = 0; t < cfg.max_len; ++t)
        for (std::size_t r = 0; r < cfg.embed_dim; ++r)
          worst = std::max(worst, std::abs(soft[t].value()(r, 0) - e(r, static_cast<std::size_t>(hard.sequences[0][t]))));
      CHECK(worst <= 1e-3 * ndgrad::max_abs(e));
    }
    CHECK(tested == 20);
  }
  SUBCASE("gradient matches finite differences") {
    ParamMap p = init_params(cfg, 10);
    for (auto& [name, t] : p)
      if (has_prefix(name, "gen.")) t *= 5.0;
    Tensor weights = testing::random_tensor(rng, cfg.embed_dim, 3);
    ndgrad::ScalarFn f = [&](Tape& tape, const VarMap& vars) {
      auto g = GeneratorVars::from(vars);
      auto words = generate_soft(g, tape.constant(z), cfg.max_len, 0.5);
      Var total = ndgrad::dot_const(words[0], weights);
      for (std::size_t t = 1; t < words.size(); ++t) total = total + ndgrad::dot_const(words[t], weights);
      return total;
    };
    ParamMap gen;
    for (auto& [name, t] : p)
      if (!is_ext(name)) gen[name] = t;
    CHECK(ndgrad::grad_check(f, gen, 1e-5) <= 1e-3);
  }
  SUBCASE("temperature must be positive") {
    ParamMap p = init_params(cfg, 8);
    Tape tape;
    CHECK_THROWS_AS(generate_soft(GeneratorVars::from(bind_constants(tape, p)), tape.constant(z), 3, 0.0),
                    ParameterError);
  }
}

TEST_CASE("extract_features") {
  NetConfig cfg = small_config();
  std::mt19937_64 rng(11);
  std::vector<Tensor> steps;
  for (std::size_t t = 0; t < cfg.max_len; ++t) steps.push_back(testing::random_tensor(rng, cfg.embed_dim, 2));

  auto run = [&](const ParamMap& p, const std::vector<Tensor>& input) {
    Tape tape;
    auto vars = bind_constants(tape, p);
    std::vector<Var> s;
    for (const auto& t : input) s.push_back(tape.constant(t));
    return extract_features(ExtractorVars::from(vars, cfg.windows), s).value();
  };

  SUBCASE("zero filters give tanh of the bias") {
    ParamMap p = zeroed(init_params(cfg, 1));
    p["ext.b2"] = Tensor::vector({0.1, -0.2, 0.3});
    p["ext.b3"] = Tensor::vector({1.0, 0.0, -1.0});
    Tensor f = run(p, steps);
    REQUIRE(f.rows() == cfg.feature_dim());
    const double expected[] = {0.1, -0.2, 0.3, 1.0, 0.0, -1.0};
    for (std::size_t r = 0; r < 6; ++r)
      for (std::size_t j = 0; j < 2; ++j) CHECK(f(r, j) == doctest::Approx(std::tanh(expected[r])).epsilon(1e-14));
  }
  SUBCASE("a filter equal to one window picks that window") {
    ParamMap p = zeroed(init_params(cfg, 1));
    // Sentence 0: position 3 holds a strong pattern, other positions are small.
    std::vector<Tensor> input(cfg.max_len, Tensor({cfg.embed_dim, 2}));
    for (std::size_t t = 0; t < cfg.max_len; ++t)
      for (std::size_t r = 0; r < cfg.embed_dim; ++r) input[t](r, 0) = 0.01 * static_cast<double>(r + t);
    const double pattern[2][4] = {{1, -1, 1, -1}, {-1, 1, 1, 1}};
    for (std::size_t r = 0; r < 4; ++r) {
      input[3](r, 0) = pattern[0][r];
      input[4](r, 0) = pattern[1][r];
      p["ext.W2"](0, r) = 0.2 * pattern[0][r];
      p["ext.W2"](0, 4 + r) = 0.2 * pattern[1][r];
    }
    Tensor f = run(p, input);
    CHECK(f(0, 0) == doctest::Approx(std::tanh(0.2 * 8.0)).epsilon(1e-14));

    Tape tape;
    auto vars = bind_params(tape, p, is_ext);
    std::vector<Var> s;
    for (const auto& t : input) s.push_back(tape.constant(t));
    Var feat = extract_features(ExtractorVars::from(vars, cfg.windows), s);
    auto grads = tape.backward(ndgrad::slice_rows(ndgrad::transpose(ndgrad::slice_rows(feat, 0, 1)), 0, 1));
    // The gradient of filter 0 is the content of the winning window.
    for (std::size_t r = 0; r < 4; ++r) {
      const double d = 1.0 - std::pow(std::tanh(1.6), 2);
      CHECK(grads.at("ext.W2")(0, r) == doctest::Approx(d * pattern[0][r]).epsilon(1e-12));
    }
  }
  SUBCASE("sentences do not interact") {
    ParamMap p = init_params(cfg, 2);
    Tensor f = run(p, steps);
    std::vector<Tensor> swapped = steps;
    for (auto& t : swapped)
      for (std::size_t r = 0; r < cfg.embed_dim; ++r) std::swap(t(r, 0), t(r, 1));
    Tensor g = run(p, swapped);
    for (std::size_t r = 0; r < f.rows(); ++r) {
      CHECK(g(r, 0) == f(r, 1));
      CHECK(g(r, 1) == f(r, 0));
    }
  }
  SUBCASE("window longer than the sentence") {
    ParamMap p = init_params(cfg, 2);
    std::vector<Tensor> shorter(steps.begin(), steps.begin() + 2);
    CHECK_THROWS_AS(run(p, shorter), ConfigError);
    NetConfig bad = cfg;
    bad.windows = {7};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}

TEST_CASE("extractor ignores trailing padding when the PAD embedding is zero") {
  NetConfig cfg = small_config();
  ParamMap p = init_params(cfg, 3);
  textdata::Sequence a{4, 5, 6, 7, 0, 0}, b{4, 5, 6, 7, 0, 0};
  Tape tape;
  auto vars = bind_constants(tape, p);
  std::vector<const textdata::Sequence*> batch{&a, &b};
  auto steps = textdata::embed_batch(vars.at(kEmbedding), batch);
  for (std::size_t r = 0; r < cfg.embed_dim; ++r) CHECK(steps[5].value()(r, 0) == 0.0);
}

TEST_CASE("end-to-end FMD objective is differentiable in all parameters") {
  NetConfig cfg = small_config();
  ParamMap p = init_params(cfg, 12);
  for (auto& [name, t] : p)
    if (has_prefix(name, "gen.")) t *= 5.0;
  std::mt19937_64 rng(13);
  Tensor z = noise(rng, cfg.noise_dim, 4);
  std::vector<textdata::Sequence> real{{4, 5, 6, 7, 5, 4}, {6, 6, 7, 4, 5, 0}, {7, 4, 4, 5, 6, 7}, {5, 5, 6, 0, 0, 0}};
  std::vector<const textdata::Sequence*> batch;
  for (auto& s : real) batch.push_back(&s);
  const ot::SolverConfig solver{0.05, 1, 20000, 1e-13};

  ndgrad::ScalarFn f = [&](Tape& tape, const VarMap& vars) {
    auto ext = ExtractorVars::from(vars, cfg.windows);
    Var fake = extract_features(ext, generate_soft(GeneratorVars::from(vars), tape.constant(z), cfg.max_len, 0.5));
    auto real_steps = textdata::embed_batch(vars.at(kEmbedding), batch);
    Var truth = extract_features(ext, real_steps);
    return fmd::fmd_loss(truth, fake, solver).value;
  };
  CHECK(ndgrad::grad_check(f, p, 1e-5) <= 1e-3);
}

TEST_CASE("parameter fingerprint tracks changes") {
  ParamMap p = init_params(small_config(), 4);
  auto all = [](const std::string&) { return true; };
  const auto before = fingerprint(p, all);
  CHECK(fingerprint(p, is_ext) != before);
  p["gen.V"][0] += 1e-12;
  CHECK(fingerprint(p, all) != before);
  CHECK(fingerprint(p, is_ext) == fingerprint(init_params(small_config(), 4), is_ext));
}
