#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "fmgan/train.hpp"

using namespace fmgan;
using namespace fmgan::train;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.net.vocab = 24;
  c.net.embed_dim = 8;
  c.net.hidden = 10;
  c.net.noise_dim = 4;
  c.net.max_len = 6;
  c.net.windows = {2, 3};
  c.net.filters = 4;
  c.batch = 8;
  c.iterations = 4;
  c.critic_steps = 2;
  c.heldout_every = 2;
  c.heldout_size = 16;
  c.eval_every = 2;
  c.eval_samples = 20;
  c.seed = 17;
  return c;
}

struct ToyData {
  textdata::Corpus train, test;
};

ToyData toy_data(std::size_t train_size = 200) {
  auto chain = textdata::random_sparse_chain(20, 3, 5);
  auto tr = textdata::synth_corpus(chain, train_size, 6, 1);
  auto te = textdata::synth_corpus(chain, 60, 6, 2);
  te.split = "test";
  return {tr, te};
}

Trainer tiny_trainer(TrainConfig cfg = tiny_config()) {
  auto d = toy_data();
  return Trainer(cfg, d.train, d.test);
}

bool same_records(const TrainHistory& a, const TrainHistory& b) {
  if (a.records.size() != b.records.size()) return false;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const auto& x = a.records[i];
    const auto& y = b.records[i];
    if (x.step != y.step || x.iter != y.iter || x.phase != y.phase || x.fmd != y.fmd || x.residual != y.residual ||
        x.bleu2 != y.bleu2 || x.bleu3 != y.bleu3 || x.selfbleu2 != y.selfbleu2 || x.selfbleu3 != y.selfbleu3) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("adam with a zero gradient leaves parameters alone and decays moments") {
  ParamMap p{{"w", Tensor::vector({1.0, -2.0})}};
  AdamState s;
  s.m["w"] = Tensor::vector({0.4, 0.2});
  s.v["w"] = Tensor::vector({0.0, 0.0});
  s.step = 3;
  Gradients g{{"w", Tensor::vector({0.0, 0.0})}};
  AdamConfig cfg;
  cfg.lr = 0.0;
  adam_step(p, g, s, cfg);
  CHECK(p.at("w") == Tensor::vector({1.0, -2.0}));
  CHECK(s.m.at("w")[0] == doctest::Approx(0.2));
  CHECK(s.m.at("w")[1] == doctest::Approx(0.1));

  ParamMap q{{"w", Tensor::vector({1.0, -2.0})}};
  AdamState fresh;
  adam_step(q, g, fresh, AdamConfig{});
  CHECK(q.at("w") == Tensor::vector({1.0, -2.0}));
}

TEST_CASE("adam first step moves each coordinate by about the learning rate") {
  ParamMap p{{"w", Tensor::vector({0.0, 0.0, 0.0})}};
  Gradients g{{"w", Tensor::vector({3.0, -0.01, 1e-3})}};
  AdamState s;
  AdamConfig cfg;
  cfg.lr = 1e-4;
  adam_step(p, g, s, cfg);
  for (std::size_t k = 0; k < 3; ++k) {
    const double gk = g.at("w")[k];
    CHECK(p.at("w")[k] == doctest::Approx(-cfg.lr * gk / (std::abs(gk) + cfg.eps)).epsilon(1e-12));
  }
  CHECK(s.step == 1);
}

TEST_CASE("adam is deterministic") {
  auto run = [] {
    ParamMap p{{"w", Tensor::vector({0.5, -0.5})}};
    AdamState s;
    for (int i = 0; i < 10; ++i) {
      Gradients g{{"w", Tensor::vector({std::sin(i * 1.0), std::cos(i * 2.0)})}};
      adam_step(p, g, s, AdamConfig{});
    }
    return p.at("w");
  };
  CHECK(run() == run());
}

TEST_CASE("global norm clipping") {
  Gradients g{{"a", Tensor::vector({3.0})}, {"b", Tensor::vector({4.0})}};
  CHECK(clip_global_norm(g, 5.0) == doctest::Approx(5.0));
  CHECK(g.at("a")[0] == 3.0);
  CHECK(clip_global_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(g.at("a")[0] == doctest::Approx(0.6));
  CHECK(g.at("b")[0] == doctest::Approx(0.8));
}

TEST_CASE("batch sampler draws without replacement per epoch") {
  BatchSampler s(10, 3, 4);
  std::multiset<std::size_t> seen;
  for (int i = 0; i < 3; ++i)
    for (auto k : s.next()) seen.insert(k);
  CHECK(seen.size() == 9);
  CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 9);
  CHECK(s.epoch() == 0);
  s.next();
  CHECK(s.epoch() == 1);

  BatchSampler a(50, 5, 9), b(50, 5, 9);
  for (int i = 0; i < 30; ++i) CHECK(a.next() == b.next());
  BatchSampler c(50, 5, 9);
  c.restore(a.epoch(), a.cursor());
  CHECK(c.next() == a.next());

  CHECK_THROWS_AS(BatchSampler(3, 4, 0), InputError);
}

TEST_CASE("parameter partition covers every leaf exactly once") {
  for (auto owner : {EmbeddingOwner::critic, EmbeddingOwner::generator}) {
    TrainConfig cfg = tiny_config();
    cfg.embedding_owner = owner;
    for (const auto& [name, t] : nets::init_params(cfg.net, 1)) {
      CHECK(cfg.critic_owns(name) != cfg.generator_owns(name));
    }
    CHECK(cfg.critic_owns(nets::kEmbedding) == (owner == EmbeddingOwner::critic));
  }
}

TEST_CASE("one iteration with J = 2 logs two critic updates and one generator update") {
  TrainConfig cfg = tiny_config();
  cfg.iterations = 1;
  cfg.heldout_every = 0;
  cfg.eval_every = 0;
  Trainer t = tiny_trainer(cfg);
  t.step();
  const auto& r = t.history().records;
  REQUIRE(r.size() == 3);
  CHECK(r[0].phase == "critic");
  CHECK(r[1].phase == "critic");
  CHECK(r[2].phase == "generator");
  for (std::size_t i = 1; i < r.size(); ++i) CHECK(r[i].step > r[i - 1].step);
}

TEST_CASE("critic update") {
  Trainer t = tiny_trainer();
  const auto& cfg = t.config();
  Batch real = t.sample_batch();
  Tensor z = t.sample_noise(cfg.batch);
  auto gen = [&](const std::string& n) { return cfg.generator_owns(n); };
  auto crit = [&](const std::string& n) { return cfg.critic_owns(n); };

  SUBCASE("zero learning rate changes nothing") {
    TrainConfig c0 = tiny_config();
    c0.lr_critic = 0.0;
    Trainer t0 = tiny_trainer(c0);
    const ParamMap before = t0.params();
    t0.critic_update(real, z, c0.tau);
    CHECK(t0.params() == before);
  }
  SUBCASE("ascends the FMD and leaves the generator alone") {
    const auto gen_before = nets::fingerprint(t.params(), gen);
    const auto crit_before = nets::fingerprint(t.params(), crit);
    const double before = t.evaluate_fmd(real, z, cfg.tau).fmd;
    auto r = t.critic_update(real, z, cfg.tau);
    CHECK(r.fmd == before);
    CHECK(t.evaluate_fmd(real, z, cfg.tau).fmd > before);
    CHECK(nets::fingerprint(t.params(), gen) == gen_before);
    CHECK(nets::fingerprint(t.params(), crit) != crit_before);
  }
}

TEST_CASE("generator update") {
  Trainer t = tiny_trainer();
  const auto& cfg = t.config();
  Batch real = t.sample_batch();
  Tensor z = t.sample_noise(cfg.batch);
  auto gen = [&](const std::string& n) { return cfg.generator_owns(n); };
  auto crit = [&](const std::string& n) { return cfg.critic_owns(n); };

  SUBCASE("zero learning rate changes nothing") {
    TrainConfig c0 = tiny_config();
    c0.lr_generator = 0.0;
    Trainer t0 = tiny_trainer(c0);
    const ParamMap before = t0.params();
    t0.generator_update(real, z, c0.tau);
    CHECK(t0.params() == before);
  }
  SUBCASE("descends the FMD and leaves the critic alone") {
    const auto crit_before = nets::fingerprint(t.params(), crit);
    const double before = t.evaluate_fmd(real, z, cfg.tau).fmd;
    t.generator_update(real, z, cfg.tau);
    CHECK(t.evaluate_fmd(real, z, cfg.tau).fmd < before);
    CHECK(nets::fingerprint(t.params(), crit) == crit_before);
  }
}

TEST_CASE("training run: records, PAD embedding and determinism") {
  Trainer a = tiny_trainer();
  a.run();
  Trainer b = tiny_trainer();
  b.run();
  CHECK(same_records(a.history(), b.history()));
  CHECK(a.params() == b.params());

  const auto& recs = a.history().records;
  CHECK(a.history().phase("critic").size() == 8);
  CHECK(a.history().phase("generator").size() == 4);
  CHECK(a.history().phase("heldout").size() == 3);
  CHECK(a.history().phase("eval").size() == 3);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(std::isfinite(recs[i].fmd));
    CHECK(recs[i].fmd >= 0.0);
    CHECK(recs[i].fmd <= 2.0);
    if (i > 0) CHECK(recs[i].step > recs[i - 1].step);
  }
  for (const auto& e : a.history().phase("eval")) {
    REQUIRE(e.bleu2.has_value());
    CHECK(*e.bleu2 >= 0.0);
    CHECK(*e.selfbleu2 <= 1.0);
  }
  const Tensor& emb = a.params().at(nets::kEmbedding);
  for (std::size_t r = 0; r < emb.rows(); ++r) CHECK(emb(r, textdata::kPad) == 0.0);

  TrainConfig other = tiny_config();
  other.seed = 18;
  Trainer c = tiny_trainer(other);
  c.run();
  CHECK_FALSE(c.params() == a.params());
}

TEST_CASE("checkpoint resume continues bit-identically") {
  TrainConfig cfg = tiny_config();
  cfg.iterations = 5;
  Trainer full = tiny_trainer(cfg);
  for (int i = 0; i < 3; ++i) full.step();
  const auto path = (std::filesystem::temp_directory_path() / "fmgan_test_ckpt.bin").string();
  full.save(path);
  full.step();
  full.step();

  Trainer resumed = tiny_trainer(cfg);
  resumed.restore(Checkpoint::load(path));
  std::filesystem::remove(path);
  CHECK(resumed.iteration() == 3);
  resumed.step();
  resumed.step();
  CHECK(resumed.params() == full.params());
  const auto& a = full.history().records;
  const auto& b = resumed.history().records;
  REQUIRE(b.size() <= a.size());
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto& x = a[a.size() - b.size() + i];
    CHECK(x.fmd == b[i].fmd);
    CHECK(x.step == b[i].step);
  }

  TrainConfig changed = cfg;
  changed.seed = 99;
  Trainer wrong = tiny_trainer(changed);
  CHECK_THROWS_AS(wrong.restore(full.checkpoint()), ConfigError);
}

TEST_CASE("checkpoint file round trip") {
  Checkpoint ck;
  ck.meta["seed"] = "5";
  ck.meta["note"] = "two words";
  ck.tensors["a"] = Tensor::matrix({{1.5, -2.0}, {0.1, 1e-300}});
  ck.tensors["b"] = Tensor::vector({std::nextafter(1.0, 2.0)});
  const auto path = (std::filesystem::temp_directory_path() / "fmgan_test_ck2.bin").string();
  ck.save(path);
  Checkpoint back = Checkpoint::load(path);
  std::filesystem::remove(path);
  CHECK(back.meta == ck.meta);
  CHECK(back.tensors.at("a") == ck.tensors.at("a"));
  CHECK(back.tensors.at("b") == ck.tensors.at("b"));
  CHECK_THROWS_AS(Checkpoint::load(path), InputError);
}

TEST_CASE("training input validation") {
  auto d = toy_data(5);
  CHECK_THROWS_AS(Trainer(tiny_config(), d.train, d.test), InputError);
  TrainConfig bad = tiny_config();
  bad.net.max_len = 8;
  auto ok = toy_data();
  CHECK_THROWS_AS(Trainer(bad, ok.train, ok.test), ConfigError);
  TrainConfig j0 = tiny_config();
  j0.critic_steps = 0;
  CHECK_THROWS_AS(j0.validate(), ConfigError);
}

TEST_CASE("temperature anneal") {
  TrainConfig c = tiny_config();
  c.iterations = 11;
  c.tau = 0.1;
  c.tau_final = 0.01;
  CHECK(c.temperature(1) == doctest::Approx(0.1));
  CHECK(c.temperature(11) == doctest::Approx(0.01));
  CHECK(c.temperature(6) == doctest::Approx(0.055));
  c.tau_final = 0.1;
  CHECK(c.temperature(6) == 0.1);
}

TEST_CASE("metrics rows") {
  LogRecord r;
  r.iter = 3;
  r.phase = "critic";
  r.fmd = 0.5;
  r.residual = 0.0;
  r.wall_ms = 12.4;
  CHECK(to_csv_row(r) == "3,critic,0.5,0,,,,,12");
  r.bleu2 = 0.25;
  CHECK(to_csv_row(r) == "3,critic,0.5,0,0.25,,,,12");
}
