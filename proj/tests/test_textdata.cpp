#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "doctest.h"
#include "fmgan/textdata.hpp"
#include "testing.hpp"

using namespace fmgan;
using namespace fmgan::textdata;

namespace {

std::vector<Sequence> encode_all(const Vocab& v, const std::vector<std::string>& lines, std::size_t len = 12) {
  std::vector<Sequence> out;
  for (const auto& l : lines) out.push_back(encode(v, l, len));
  return out;
}

// Straightforward BLEU used as an oracle: explicit n-gram maps, references scanned one by one.
double naive_bleu(const std::vector<std::vector<int>>& cands, const std::vector<std::vector<int>>& refs, int max_n) {
  double clipped[6] = {}, total[6] = {};
  double c_len = 0, r_len = 0;
  for (const auto& c : cands) {
    c_len += static_cast<double>(c.size());
    double best = 1e18, best_len = 0;
    for (const auto& r : refs) {
      const double d = std::abs(static_cast<double>(r.size()) - static_cast<double>(c.size()));
      if (d < best || (d == best && static_cast<double>(r.size()) < best_len)) {
        best = d;
        best_len = static_cast<double>(r.size());
      }
    }
    r_len += best_len;
    for (int n = 1; n <= max_n; ++n) {
      std::map<std::vector<int>, int> cc;
      for (std::size_t i = 0; i + n <= c.size(); ++i) ++cc[std::vector<int>(c.begin() + i, c.begin() + i + n)];
      for (auto& [g, k] : cc) {
        int cap = 0;
        for (const auto& r : refs) {
          int m = 0;
          for (std::size_t i = 0; i + n <= r.size(); ++i) m += std::vector<int>(r.begin() + i, r.begin() + i + n) == g;
          cap = std::max(cap, m);
        }
        clipped[n] += std::min(k, cap);
        total[n] += k;
      }
    }
  }
  double log_sum = 0;
  for (int n = 1; n <= max_n; ++n) {
    if (total[n] == 0 || clipped[n] == 0) return 0.0;
    log_sum += std::log(clipped[n] / total[n]);
  }
  const double bp = c_len > r_len ? 1.0 : std::exp(1.0 - r_len / c_len);
  return bp * std::exp(log_sum / max_n);
}

std::vector<int> strip(const Sequence& s) {
  std::vector<int> out;
  for (int id : s) {
    if (id == kPad || id == kEos) break;
    if (id != kBos) out.push_back(id);
  }
  return out;
}

std::vector<Sequence> random_sequences(std::mt19937_64& rng, std::size_t count, int vocab, std::size_t len) {
  std::vector<Sequence> out;
  for (std::size_t i = 0; i < count; ++i) {
    Sequence s(len, kPad);
    const std::size_t used = 1 + rng() % len;
    for (std::size_t t = 0; t < used; ++t) s[t] = kReserved + static_cast<int>(rng() % static_cast<unsigned>(vocab));
    out.push_back(s);
  }
  return out;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("fmgan_test_" + name)).string();
}

}  // namespace

TEST_CASE("build_vocab orders by frequency and applies min_count") {
  Vocab v = build_vocab(std::vector<std::string>{"a b a"}, 1, 100);
  REQUIRE(v.size() == kReserved + 2);
  CHECK(v.id("a") == 4);
  CHECK(v.id("b") == 5);

  Vocab v2 = build_vocab(std::vector<std::string>{"a b a"}, 2, 100);
  CHECK(v2.size() == kReserved + 1);
  CHECK(v2.id("a") == 4);
  CHECK(v2.id("b") == kUnk);

  CHECK_THROWS_AS(build_vocab(std::vector<std::string>{}, 1, 100), InputError);
  CHECK_THROWS_AS(build_vocab(std::vector<std::string>{"x"}, 0, 100), ParameterError);
}

TEST_CASE("build_vocab breaks ties lexicographically and lowercases") {
  Vocab v = build_vocab(std::vector<std::string>{"Zeta alpha ZETA beta Alpha"}, 1, 100);
  CHECK(v.token(4) == "alpha");
  CHECK(v.token(5) == "zeta");
  CHECK(v.token(6) == "beta");
}

TEST_CASE("build_vocab respects the cap on a large file") {
  std::mt19937_64 rng(5);
  std::ostringstream text;
  for (int line = 0; line < 10000; ++line) {
    for (int w = 0; w < 8; ++w) text << "t" << rng() % 20000 << ' ';
    text << '\n';
  }
  std::istringstream in(text.str());
  Vocab v = build_vocab(in, 1, 5728);
  CHECK(v.size() <= 5728);
  CHECK(v.size() == 5728);
}

TEST_CASE("build_vocab is deterministic") {
  std::vector<std::string> lines{"the cat sat", "on the mat", "a dog sat on the cat"};
  CHECK(build_vocab(lines, 1, 50).tokens() == build_vocab(lines, 1, 50).tokens());
}

TEST_CASE("encode and decode") {
  Vocab v = build_vocab(std::vector<std::string>{"the cat sat on the mat"}, 1, 100);
  SUBCASE("round trip") {
    auto ids = encode(v, "the cat sat", 6);
    CHECK(ids.size() == 6);
    CHECK(ids[3] == kPad);
    CHECK(decode(v, ids) == "the cat sat");
  }
  SUBCASE("truncation") {
    auto ids = encode(v, "the cat sat on the mat", 3);
    CHECK(ids.size() == 3);
    CHECK(decode(v, ids) == "the cat sat");
  }
  SUBCASE("out of vocabulary") {
    auto ids = encode(v, "zebra yak", 4);
    CHECK(ids == Sequence{kUnk, kUnk, kPad, kPad});
  }
  SUBCASE("decode stops at EOS") {
    Sequence ids{v.id("cat"), kEos, v.id("mat")};
    CHECK(decode(v, ids) == "cat");
  }
  CHECK_THROWS_AS(encode(v, "the", 1), ParameterError);
}

TEST_CASE("round trip over a full toy corpus") {
  MarkovChain chain = random_sparse_chain(20, 3, 4);
  Vocab v = chain_vocab(20);
  Corpus c = synth_corpus(chain, 300, 12, 9);
  c.validate(v.size());
  for (const auto& s : c.sequences) CHECK(encode(v, decode(v, s), 12) == s);
}

TEST_CASE("vocab file round trip") {
  Vocab v = build_vocab(std::vector<std::string>{"x y z x"}, 1, 100);
  const auto path = temp_path("vocab.txt");
  v.save(path);
  Vocab back = Vocab::load(path);
  CHECK(back.tokens() == v.tokens());
  std::filesystem::remove(path);
}

TEST_CASE("embed selects columns and accumulates counts in the gradient") {
  std::mt19937_64 rng(1);
  Tensor table = testing::random_tensor(rng, 3, 6);
  ndgrad::Tape tape;
  Var w = tape.leaf("W", table);
  std::vector<int> ids{5, 0, 5, 2};
  Var e = embed(w, ids);
  for (std::size_t t = 0; t < ids.size(); ++t)
    for (std::size_t r = 0; r < 3; ++r) CHECK(e.value()(r, t) == table(r, static_cast<std::size_t>(ids[t])));
  auto g = tape.backward(ndgrad::sum(e));
  const auto& dw = g.at("W");
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(dw(r, 5) == 2.0);
    CHECK(dw(r, 0) == 1.0);
    CHECK(dw(r, 2) == 1.0);
    CHECK(dw(r, 1) == 0.0);
  }

  // Finite-difference oracle for the same objective.
  ndgrad::ScalarFn f = [&](ndgrad::Tape&, const std::map<std::string, Var>& p) {
    return ndgrad::sum(embed(p.at("W"), ids));
  };
  CHECK(ndgrad::grad_check(f, {{"W", table}}, 1e-5) <= 1e-8);

  std::vector<int> bad{6};
  CHECK_THROWS_AS(embed(w, bad), RangeError);
}

TEST_CASE("embed_batch is position-major") {
  std::mt19937_64 rng(2);
  Tensor table = testing::random_tensor(rng, 2, 8);
  ndgrad::Tape tape;
  Var w = tape.constant(table);
  Sequence a{4, 5, 0}, b{7, 6, 1};
  std::vector<const Sequence*> batch{&a, &b};
  auto steps = embed_batch(w, batch);
  REQUIRE(steps.size() == 3);
  CHECK(steps[1].value()(0, 0) == table(0, 5));
  CHECK(steps[1].value()(1, 1) == table(1, 6));
}

TEST_CASE("deterministic chain yields identical sequences") {
  MarkovChain chain;
  chain.states = 3;
  chain.transitions = Tensor::matrix({{0, 1, 0}, {0, 0, 1}, {1, 0, 0}});
  chain.start = {1, 0, 0};
  Corpus c = synth_corpus(chain, 50, 7, 3);
  for (const auto& s : c.sequences) CHECK(s == c.sequences[0]);
  CHECK(c.sequences[0] == Sequence{4, 5, 6, 4, 5, 6, 4});
}

TEST_CASE("uniform chain matches its bigram table") {
  MarkovChain chain;
  chain.states = 4;
  chain.transitions = Tensor({4, 4}, 0.25);
  chain.start = {0.25, 0.25, 0.25, 0.25};
  Corpus c = synth_corpus(chain, 10000, 12, 11);
  CHECK(bigram_tv_distance(c, chain) <= 0.05);
}

TEST_CASE("sparse chain corpus is close to its chain and far from another") {
  MarkovChain chain = random_sparse_chain(20, 3, 8);
  MarkovChain other = random_sparse_chain(20, 3, 9);
  Corpus c = synth_corpus(chain, 5000, 12, 1);
  CHECK(bigram_tv_distance(c, chain) <= 0.05);
  CHECK(bigram_tv_distance(c, other) >= 0.5);
}

TEST_CASE("synth_corpus is deterministic given the seed") {
  MarkovChain chain = random_sparse_chain(10, 4, 2);
  CHECK(synth_corpus(chain, 100, 12, 42).sequences == synth_corpus(chain, 100, 12, 42).sequences);
  CHECK(synth_corpus(chain, 100, 12, 42).sequences != synth_corpus(chain, 100, 12, 43).sequences);
}

TEST_CASE("invalid chains are rejected") {
  MarkovChain chain;
  chain.states = 2;
  chain.transitions = Tensor::matrix({{0.5, 0.4}, {0.5, 0.5}});
  chain.start = {1, 0};
  CHECK_THROWS_AS(synth_corpus(chain, 1, 4, 0), ParameterError);
}

TEST_CASE("chain file round trip and likelihood") {
  MarkovChain chain = random_sparse_chain(5, 2, 3);
  const auto path = temp_path("chain.txt");
  chain.save(path);
  MarkovChain back = MarkovChain::load(path);
  CHECK(back.states == 5);
  for (std::size_t k = 0; k < 25; ++k) CHECK(back.transitions[k] == doctest::Approx(chain.transitions[k]).epsilon(1e-15));
  std::filesystem::remove(path);

  std::ofstream(path) << "states = 2\ntransitions = 0 1 1 0\nstart = 1\n";
  MarkovChain two = MarkovChain::load(path);
  std::filesystem::remove(path);
  CHECK(two.start == std::vector<double>{0, 1});
  Sequence good{5, 4, 5}, bad{5, 5, 5};
  CHECK(two.log_likelihood(good) == doctest::Approx(0.0).epsilon(1e-5));
  CHECK(two.log_likelihood(bad) < -20.0);
}

TEST_CASE("BLEU examples") {
  Vocab v = build_vocab(std::vector<std::string>{"the cat is on the mat a b c d e f"}, 1, 100);
  SUBCASE("identical corpora") {
    auto c = encode_all(v, {"the cat is on the mat", "a b c d e f"});
    for (int n = 2; n <= 5; ++n) CHECK(test_bleu(c, c, n) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("clipped unigram precision") {
    auto cand = encode_all(v, {"the the the the the the the"});
    auto ref = encode_all(v, {"the cat is on the mat"});
    BleuDetail d = bleu_detail(cand, ref, 1);
    CHECK(d.precisions[0] == doctest::Approx(2.0 / 7.0).epsilon(1e-12));
  }
  SUBCASE("disjoint vocabulary") {
    auto cand = encode_all(v, {"a b c d"});
    auto ref = encode_all(v, {"the cat is on"});
    CHECK(test_bleu(cand, ref, 2) == 0.0);
  }
  SUBCASE("errors") {
    auto ref = encode_all(v, {"a b"});
    CHECK_THROWS_AS(test_bleu(std::vector<Sequence>{}, ref, 2), InputError);
    CHECK_THROWS_AS(self_bleu(ref, 2), InputError);
    CHECK_THROWS_AS(test_bleu(ref, ref, 9), ParameterError);
  }
}

TEST_CASE("brevity penalty") {
  std::vector<Sequence> cand{{4, 5, 6}}, ref{{4, 5, 6, 7, 8, 9}};
  BleuDetail d = bleu_detail(cand, ref, 2);
  CHECK(d.brevity_penalty == doctest::Approx(std::exp(1.0 - 2.0)));
  CHECK(d.score == doctest::Approx(std::exp(-1.0)));
}

TEST_CASE("self-BLEU examples") {
  std::vector<Sequence> same(5, Sequence{4, 5, 6, 7, 0});
  CHECK(self_bleu(same, 3) == doctest::Approx(1.0).epsilon(1e-12));
  std::vector<Sequence> disjoint{{4, 5, 6}, {7, 8, 9}, {10, 11, 12}};
  CHECK(self_bleu(disjoint, 2) == 0.0);
}

TEST_CASE("BLEU agrees with a naive oracle") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 40; ++trial) {
    auto cands = random_sequences(rng, 1 + rng() % 6, 4, 8);
    auto refs = random_sequences(rng, 1 + rng() % 6, 4, 8);
    const int n = 1 + static_cast<int>(rng() % 4);
    std::vector<std::vector<int>> c, r;
    for (auto& s : cands) c.push_back(strip(s));
    for (auto& s : refs) r.push_back(strip(s));
    CHECK(test_bleu(cands, refs, n) == doctest::Approx(naive_bleu(c, r, n)).epsilon(1e-12));

    if (cands.size() >= 2) {
      double expected = 0;
      for (std::size_t i = 0; i < c.size(); ++i) {
        std::vector<std::vector<int>> others;
        for (std::size_t j = 0; j < c.size(); ++j)
          if (j != i) others.push_back(c[j]);
        expected += naive_bleu({c[i]}, others, n);
      }
      expected /= static_cast<double>(c.size());
      CHECK(self_bleu(cands, n) == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("BLEU properties: permutation invariance, range, self-match") {
  std::mt19937_64 rng(78);
  for (int trial = 0; trial < 50; ++trial) {
    auto cands = random_sequences(rng, 2 + rng() % 8, 6, 10);
    auto refs = random_sequences(rng, 1 + rng() % 8, 6, 10);
    const double b = test_bleu(cands, refs, 2);
    CHECK(b >= 0.0);
    CHECK(b <= 1.0);
    auto shuffled = cands;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    CHECK(test_bleu(shuffled, refs, 2) == doctest::Approx(b).epsilon(1e-12));
    const double s = self_bleu(cands, 2);
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
    // Self-match needs at least one bigram per candidate.
    std::vector<Sequence> long_enough;
    for (auto& c : cands)
      if (strip(c).size() >= 2) long_enough.push_back(c);
    if (!long_enough.empty()) CHECK(test_bleu(long_enough, long_enough, 2) == doctest::Approx(1.0).epsilon(1e-12));
  }
}
