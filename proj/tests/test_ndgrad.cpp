#include <cmath>
#include <random>

#include "doctest.h"
#include "fmgan/ndgrad.hpp"
#include "testing.hpp"

using namespace fmgan;
using namespace fmgan::ndgrad;

TEST_CASE("matmul examples") {
  const Tensor b = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  CHECK(matmul(Tensor::identity(2), b) == b);
  const Tensor c = matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{1}, {1}}));
  CHECK(c == Tensor::matrix({{3}, {7}}));
  std::mt19937_64 rng(1);
  const Tensor z = matmul(Tensor::zeros(2, 3), testing::random_tensor(rng, 3, 4));
  CHECK(z == Tensor::zeros(2, 4));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  try {
    matmul(Tensor::zeros(2, 3), Tensor::zeros(2, 3));
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("softmax examples") {
  const Tensor u = softmax(Tensor::vector({0.3, 0.3, 0.3, 0.3}), 0.7);
  for (double v : u.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

  const Tensor p = softmax(Tensor::vector({10, 0}), 1.0);
  const double tail = std::exp(-10.0) / (1.0 + std::exp(-10.0));
  CHECK(p[1] == doctest::Approx(tail).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(4.5e-5).epsilon(0.01));
  CHECK(p[0] == doctest::Approx(0.99995).epsilon(1e-5));

  const Tensor sharp = softmax(Tensor::vector({1, 0}), 0.01);
  CHECK(sharp[0] >= 1.0 - 1e-10);

  CHECK_THROWS_AS(softmax(Tensor::vector({1, 2}), 0.0), ParameterError);
  CHECK_THROWS_AS(softmax(Tensor::vector({1, 2}), -1.0), ParameterError);
}

TEST_CASE("softmax stays in the open simplex for large inputs") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> tau(1e-3, 10.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor x = testing::random_tensor(rng, 6, 3, -1e3, 1e3);
    const Tensor y = softmax(x, tau(rng));
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < 6; ++i) {
        CHECK(y(i, j) >= 0.0);
        CHECK(y(i, j) <= 1.0);
        s += y(i, j);
      }
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("max_over_time picks the row maximum with lowest-index ties") {
  Tape tape;
  Var single = tape.leaf("s", Tensor::matrix({{2}, {-1}}));
  CHECK(max_over_time(single).value() == Tensor::vector({2, -1}));

  Var row = tape.leaf("r", Tensor::matrix({{-1, 3, 2}}));
  Var m = max_over_time(row);
  CHECK(m.value().item() == 3.0);
  Var flat = tape.leaf("e", Tensor::matrix({{5, 5, 5}}));
  Var mf = max_over_time(flat);
  CHECK(mf.value().item() == 5.0);
  Gradients g = tape.backward(add(m, mf));
  CHECK(g.at("r") == Tensor::matrix({{0, 1, 0}}));
  CHECK(g.at("e") == Tensor::matrix({{1, 0, 0}}));
}

TEST_CASE("max_over_time gradient has one nonzero per row") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    Var x = tape.leaf("x", testing::random_tensor(rng, 5, 7));
    Gradients g = tape.backward(sum(max_over_time(x)));
    for (std::size_t i = 0; i < 5; ++i) {
      int nonzero = 0;
      for (std::size_t t = 0; t < 7; ++t) nonzero += g.at("x")(i, t) != 0.0;
      CHECK(nonzero == 1);
    }
  }
}

TEST_CASE("max_over_time rejects an empty time axis") {
  Tape tape;
  Var v = tape.leaf("v", Tensor::vector({1, 2}));
  CHECK_THROWS_AS(max_over_time(v), DimensionError);
}

TEST_CASE("backward examples") {
  {
    Tape tape;
    Var x = tape.leaf("x", Tensor::scalar(4.0));
    CHECK(tape.backward(x).at("x").item() == 1.0);
  }
  {
    Tape tape;
    Var x = tape.leaf("x", Tensor::scalar(2.0));
    Var y = tape.leaf("y", Tensor::scalar(3.0));
    Var unused = tape.leaf("u", Tensor::vector({1, 2}));
    (void)unused;
    Gradients g = tape.backward(mul(x, y));
    CHECK(g.at("x").item() == 3.0);
    CHECK(g.at("y").item() == 2.0);
    CHECK(g.at("u") == Tensor::vector({0, 0}));
  }
  {
    Tape tape;
    Var x = tape.leaf("x", Tensor::vector({1, 2}));
    CHECK_THROWS_AS(tape.backward(x), ContractError);
  }
}

TEST_CASE("repeated backward passes do not accumulate across calls") {
  Tape tape;
  Var x = tape.leaf("x", Tensor::scalar(2.0));
  Var loss = mul(x, x);
  CHECK(tape.backward(loss).at("x").item() == 4.0);
  CHECK(tape.backward(loss).at("x").item() == 4.0);
}

TEST_CASE("composite LSTM cell matches finite differences") {
  std::mt19937_64 rng(11);
  const std::size_t in = 3, hid = 4, batch = 2;
  std::map<std::string, Tensor> params{
      {"W", testing::random_tensor(rng, 4 * hid, in + hid)},
      {"b", testing::random_tensor(rng, 4 * hid, 1)},
      {"x", testing::random_tensor(rng, in, batch)},
      {"h", testing::random_tensor(rng, hid, batch)},
      {"c", testing::random_tensor(rng, hid, batch)},
  };
  params["b"] = Tensor({4 * hid}, std::vector<double>(params["b"].data().begin(), params["b"].data().end()));
  ScalarFn cell = [&](Tape&, const std::map<std::string, Var>& p) {
    std::vector<Var> parts{p.at("x"), p.at("h")};
    Var gates = add_bias(matmul(p.at("W"), concat_rows(parts)), p.at("b"));
    Var i = sigmoid(slice_rows(gates, 0, hid));
    Var f = sigmoid(slice_rows(gates, hid, hid));
    Var g = tanh(slice_rows(gates, 2 * hid, hid));
    Var o = sigmoid(slice_rows(gates, 3 * hid, hid));
    Var c = add(mul(f, p.at("c")), mul(i, g));
    Var h = mul(o, tanh(c));
    return sum(mul(h, h));
  };
  CHECK(grad_check(cell, params, 1e-5) <= 1e-5);
}

TEST_CASE("grad_check examples") {
  ScalarFn square = [](Tape&, const std::map<std::string, Var>& p) { return mul(p.at("x"), p.at("x")); };
  CHECK(grad_check(square, {{"x", Tensor::scalar(3.0)}}, 1e-5) <= 1e-8);

  ScalarFn linear = [](Tape& t, const std::map<std::string, Var>& p) {
    return dot_const(p.at("x"), Tensor::vector({2.0, -3.0, 0.5})) + t.constant(Tensor::scalar(1.0));
  };
  for (double eps : {1e-2, 1e-4, 1e-7}) {
    CHECK(grad_check(linear, {{"x", Tensor::vector({1, 2, 3})}}, eps) <= 1e-8);
  }
  CHECK_THROWS_AS(grad_check(square, {{"x", Tensor::scalar(3.0)}}, 0.0), ParameterError);
  CHECK_THROWS_AS(grad_check(square, {{"x", Tensor::scalar(3.0)}}, 0.1), ParameterError);
}

TEST_CASE("non-finite forward values raise numeric errors") {
  Tape tape;
  Var x = tape.leaf("x", Tensor::scalar(1e200));
  CHECK_THROWS_AS(mul(x, x), NumericError);
}

TEST_CASE("gather_cols selects columns and scatters gradients") {
  Tape tape;
  Var w = tape.leaf("w", Tensor::matrix({{1, 2, 3}, {4, 5, 6}}));
  const std::vector<int> ids{2, 0, 2};
  Var e = gather_cols(w, ids);
  CHECK(e.value() == Tensor::matrix({{3, 1, 3}, {6, 4, 6}}));
  CHECK(tape.backward(sum(e)).at("w") == Tensor::matrix({{1, 0, 2}, {1, 0, 2}}));
  const std::vector<int> bad{3};
  CHECK_THROWS_AS(gather_cols(w, bad), RangeError);
}

namespace {

// Random composition of the differentiable ops over three leaves.
Var random_graph(std::mt19937_64& rng, Tape& tape, const std::map<std::string, Var>& p, std::size_t r,
                 std::size_t c) {
  std::uniform_int_distribution<int> pick_op(0, 13);
  std::vector<Var> pool{p.at("a"), p.at("b"), tanh(p.at("c"))};
  const int depth = 4 + static_cast<int>(rng() % 5);
  for (int step = 0; step < depth; ++step) {
    Var x = pool[rng() % pool.size()];
    Var y = pool[rng() % pool.size()];
    Var out = x;
    switch (pick_op(rng)) {
      case 0: out = add(x, y); break;
      case 1: out = sub(x, y); break;
      case 2: out = mul(x, y); break;
      case 3: out = tanh(x); break;
      case 4: out = sigmoid(x); break;
      case 5: out = softmax(x, 0.5 + static_cast<double>(rng() % 4)); break;
      case 6: out = log_softmax(x); break;
      case 7: out = matmul(transpose(x), y); out = matmul(x, out); break;
      case 8: out = normalize_cols(x, 1e-8); break;
      case 9: {
        std::vector<Var> xs{x, y};
        out = maximum(xs);
        break;
      }
      case 10: {
        std::vector<Var> xs{x, y};
        out = slice_rows(concat_rows(xs), r / 2, r);
        break;
      }
      case 11: out = add_bias(x, slice_rows(transpose(y), 0, 1) /* 1 x r */); out = scale(out, 0.7); break;
      case 12: out = add_scalar(scale(x, -1.3), 0.2); break;
      default: {
        std::vector<int> ids(c);
        for (auto& id : ids) id = static_cast<int>(rng() % r);
        Var picked = pick(x, ids);  // length c
        out = transpose(add_bias(transpose(x), picked));
        break;
      }
    }
    pool.push_back(out);
  }
  return pool.back();
}

}  // namespace

TEST_CASE("random op graphs match central finite differences") {
  std::mt19937_64 rng(2024);
  int checked = 0;
  for (int trial = 0; trial < 120; ++trial) {
    const std::size_t r = 3, c = 3;
    std::map<std::string, Tensor> params{
        {"a", testing::random_tensor(rng, r, c)},
        {"b", testing::random_tensor(rng, r, c)},
        {"c", testing::random_tensor(rng, r, c)},
    };
    const Tensor weights = testing::random_tensor(rng, r, c);
    const std::uint64_t graph_seed = rng();
    ScalarFn f = [&](Tape& tape, const std::map<std::string, Var>& p) {
      std::mt19937_64 g(graph_seed);
      Var out = random_graph(g, tape, p, r, c);
      return dot_const(out, weights);
    };
    const double err = grad_check(f, params, 1e-6);
    CHECK_MESSAGE(err <= 1e-4, "trial " << trial << " error " << err);
    ++checked;
  }
  CHECK(checked >= 100);
}

TEST_CASE("forward evaluation is deterministic") {
  std::mt19937_64 rng(5);
  const Tensor a = testing::random_tensor(rng, 8, 8);
  const Tensor b = testing::random_tensor(rng, 8, 8);
  auto run = [&] {
    Tape tape;
    Var x = tape.constant(a);
    Var y = tape.constant(b);
    return softmax(tanh(matmul(x, y)), 0.3).value();
  };
  CHECK(run() == run());
}
