#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "relmask/adam.hpp"
#include "relmask/autodiff.hpp"
#include "relmask/gradcheck.hpp"
#include "relmask/serialize.hpp"
#include "test_util.hpp"

using namespace relmask;
using relmask::testing::max_abs_diff;
using relmask::testing::random_away_from_zero;
using relmask::testing::random_tensor;

namespace {

using Fn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

// Reduces an op's output to a scalar through fixed random weights, so that
// ops with invariant sums (softmax) still have informative gradients.
Fn weighted(std::function<Var<double>(const std::vector<Var<double>>&)> op, std::uint64_t seed = 99) {
  return [op, seed](Tape<double>& tape, const std::vector<Var<double>>& xs) {
    Var<double> out = op(xs);
    std::mt19937_64 rng(seed);
    return sum(mul(out, tape.constant(random_tensor(out.shape(), rng))));
  };
}

// Direct-loop convolution, independent of im2col/GEMM.
TensorD conv_oracle(const TensorD& x, const TensorD& w, int stride, int pad) {
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), O = w.dim(0), K = w.dim(2);
  const Index Ho = (H + 2 * pad - K) / stride + 1, Wo = (W + 2 * pad - K) / stride + 1;
  TensorD out(Shape{N, O, Ho, Wo});
  for (Index n = 0; n < N; ++n)
    for (Index o = 0; o < O; ++o)
      for (Index oy = 0; oy < Ho; ++oy)
        for (Index ox = 0; ox < Wo; ++ox) {
          double acc = 0;
          for (Index c = 0; c < C; ++c)
            for (Index ki = 0; ki < K; ++ki)
              for (Index kj = 0; kj < K; ++kj) {
                const Index iy = oy * stride - pad + ki, ix = ox * stride - pad + kj;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += x.at({n, c, iy, ix}) * w.at({o, c, ki, kj});
              }
          out.at({n, o, oy, ox}) = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("matmul with identity returns the other operand") {
  std::mt19937_64 rng(1);
  Tape<double> tape;
  TensorD eye(Shape{3, 3});
  for (int i = 0; i < 3; ++i) eye.at({i, i}) = 1;
  const TensorD a = random_tensor({3, 3}, rng);
  const auto out = matmul(tape.constant(eye), tape.constant(a));
  CHECK(out.value() == a);
}

TEST_CASE("softmax rows are probability vectors even for large inputs") {
  std::mt19937_64 rng(2);
  for (double magnitude : {1.0, 100.0, 1e4}) {
    Tape<float> tape;
    const auto x = tape.constant(random_tensor<float>({7, 12}, rng, -magnitude, magnitude));
    const TensorF p = softmax(x, -1).value();
    for (Index r = 0; r < 7; ++r) {
      double s = 0;
      for (Index c = 0; c < 12; ++c) {
        CHECK(p.at({r, c}) >= 0.0f);
        s += p.at({r, c});
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("conv2d of ones with an all-ones 3x3 kernel") {
  Tape<double> tape;
  const TensorD x(Shape{1, 1, 5, 5}, 1.0);
  const TensorD w(Shape{1, 1, 3, 3}, 1.0);
  const TensorD out = conv2d(tape.constant(x), tape.constant(w), Var<double>(), 1, 1).value();
  CHECK(out.at({0, 0, 2, 2}) == 9.0);
  CHECK(out.at({0, 0, 0, 0}) == 4.0);
  CHECK(out.at({0, 0, 0, 2}) == 6.0);
  CHECK(out == conv_oracle(x, w, 1, 1));
}

TEST_CASE("conv2d matches the direct-loop oracle") {
  std::mt19937_64 rng(3);
  for (auto [stride, pad] : {std::pair{1, 1}, {2, 1}, {1, 0}, {2, 0}}) {
    const TensorD x = random_tensor({2, 3, 7, 9}, rng);
    const TensorD w = random_tensor({4, 3, 3, 3}, rng);
    Tape<double> tape;
    const TensorD out = conv2d(tape.constant(x), tape.constant(w), Var<double>(), stride, pad).value();
    CHECK(max_abs_diff(out, conv_oracle(x, w, stride, pad)) < 1e-12);
  }
}

TEST_CASE("backward of simple closed forms") {
  SUBCASE("sum") {
    Tape<double> tape;
    const auto x = tape.variable(TensorD(Shape{4}, {1, -2, 3, 0.5}));
    tape.backward(sum(x));
    CHECK(tape.grad(x) == TensorD(Shape{4}, 1.0));
  }
  SUBCASE("x*x at 3") {
    Tape<double> tape;
    const auto x = tape.variable(TensorD::scalar(3.0));
    tape.backward(mul(x, x));
    CHECK(tape.grad(x).item() == 6.0);
  }
  SUBCASE("unused leaf gets zero gradient") {
    Tape<double> tape;
    const auto x = tape.variable(TensorD(Shape{2}, 1.0));
    const auto unused = tape.variable(TensorD(Shape{3}, 1.0));
    tape.backward(sum(x));
    CHECK(tape.grad(unused) == TensorD(Shape{3}, 0.0));
  }
}

TEST_CASE("backward rejects invalid losses") {
  Tape<double> tape;
  const auto x = tape.variable(TensorD(Shape{3}, 1.0));
  CHECK_THROWS_AS(tape.backward(scale(x, 2.0)), TapeError);
  const auto c = tape.constant(TensorD::scalar(1.0));
  CHECK_THROWS_AS(tape.backward(c), TapeError);
  Tape<double> other;
  CHECK_THROWS_AS(other.backward(sum(x)), TapeError);
}

TEST_CASE("shape errors name the op and the shapes") {
  Tape<float> tape;
  const auto a = tape.constant(TensorF(Shape{2, 3}));
  const auto b = tape.constant(TensorF(Shape{4, 5}));
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,5]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(concat<float>({a, b}, 0), ShapeError);
}

TEST_CASE("non-finite forward values are rejected") {
  Tape<float> tape;
  const auto x = tape.constant(TensorF(Shape{2}, 1e30f));
  CHECK_THROWS_AS(mul(x, x), NumericalError);
}

TEST_CASE("broadcasting add/mul") {
  Tape<double> tape;
  const auto a = tape.constant(TensorD(Shape{2, 3}, {1, 2, 3, 4, 5, 6}));
  const auto b = tape.constant(TensorD(Shape{1, 3}, {1, 2, 4}));
  CHECK(add(a, b).value() == TensorD(Shape{2, 3}, {2, 4, 7, 5, 7, 10}));
  CHECK(mul(a, b).value() == TensorD(Shape{2, 3}, {1, 4, 12, 4, 10, 24}));
  const auto col = tape.constant(TensorD(Shape{2, 1}, {10, 20}));
  CHECK(sub(a, col).value() == TensorD(Shape{2, 3}, {-9, -8, -7, -16, -15, -14}));
}

TEST_CASE("concat followed by slice is the identity") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> ext(1, 4);
  for (int trial = 0; trial < 50; ++trial) {
    const int rank = 1 + trial % 4;
    const int axis = trial % rank;
    Shape base(rank);
    for (auto& d : base) d = ext(rng);
    std::vector<TensorD> parts;
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (int p = 0; p < 3; ++p) {
      Shape s = base;
      s[axis] = ext(rng);
      parts.push_back(random_tensor(s, rng));
      vars.push_back(tape.constant(parts.back()));
    }
    const auto joined = concat(vars, axis);
    Index start = 0;
    for (const auto& part : parts) {
      CHECK(slice(joined, axis, start, part.dim(axis)).value() == part);
      start += part.dim(axis);
    }
  }
}

TEST_CASE("per-op gradients match central differences") {
  std::mt19937_64 rng(5);
  auto R = [&](Shape s) { return random_away_from_zero(s, rng); };
  const double tol = 1e-4;

  SUBCASE("add/sub/mul with broadcasting") {
    CHECK(gradcheck(weighted([](auto& v) { return add(v[0], v[1]); }), {R({2, 3, 4}), R({3, 1})}) < tol);
    CHECK(gradcheck(weighted([](auto& v) { return sub(v[0], v[1]); }), {R({2, 3}), R({2, 3})}) < tol);
    CHECK(gradcheck(weighted([](auto& v) { return mul(v[0], v[1]); }), {R({4, 1, 2}), R({3, 2})}) < tol);
  }
  SUBCASE("unary") {
    CHECK(gradcheck(weighted([](auto& v) { return relu(v[0]); }), {R({3, 5})}) < tol);
    CHECK(gradcheck(weighted([](auto& v) { return abs(v[0]); }), {R({3, 5})}) < tol);
    CHECK(gradcheck(weighted([](auto& v) { return scale(v[0], -2.5); }), {R({4})}) < tol);
    CHECK(gradcheck(weighted([](auto& v) { return add_scalar(v[0], 1.0); }), {R({4})}) < tol);
  }
  SUBCASE("matmul and linear") {
    CHECK(gradcheck(weighted([](auto& v) { return matmul(v[0], v[1]); }), {R({2, 3, 4}), R({4, 5})}) < tol);
    CHECK(gradcheck(weighted([](auto& v) { return matmul(v[0], v[1]); }), {R({2, 3, 4}), R({2, 4, 2})}) < tol);
    CHECK(gradcheck(weighted([](auto& v) { return linear(v[0], v[1], v[2]); }), {R({2, 3, 4}), R({4, 5}), R({5})}) < tol);
  }
  SUBCASE("conv2d and upsampling") {
    for (auto [stride, pad] : {std::pair{1, 1}, {2, 1}, {1, 0}}) {
      auto fn = weighted([=](auto& v) { return conv2d(v[0], v[1], v[2], stride, pad); });
      CHECK(gradcheck(fn, {R({2, 2, 5, 6}), R({3, 2, 3, 3}), R({3})}) < tol);
    }
    CHECK(gradcheck(weighted([](auto& v) { return upsample2x(v[0]); }), {R({1, 2, 3, 2})}) < tol);
  }
  SUBCASE("shape ops") {
    CHECK(gradcheck(weighted([](auto& v) { return concat<double>({v[0], v[1]}, 1); }), {R({2, 3}), R({2, 2})}) < tol);
    CHECK(gradcheck(weighted([](auto& v) { return slice(v[0], 1, 1, 2); }), {R({2, 4, 3})}) < tol);
    CHECK(gradcheck(weighted([](auto& v) { return reshape(v[0], {3, -1}); }), {R({2, 3, 2})}) < tol);
    CHECK(gradcheck(weighted([](auto& v) { return transpose(v[0], {2, 0, 1}); }), {R({2, 3, 4})}) < tol);
  }
  SUBCASE("normalization") {
    CHECK(gradcheck(weighted([](auto& v) { return layernorm(v[0], v[1], v[2]); }), {R({3, 6}), R({6}), R({6})}) < tol);
    CHECK(gradcheck(weighted([](auto& v) { return softmax(v[0], -1); }), {R({3, 5})}) < tol);
    CHECK(gradcheck(weighted([](auto& v) { return softmax(v[0], 0); }), {R({3, 5})}) < tol);
    CHECK(gradcheck(weighted([](auto& v) { return log_softmax(v[0], 1); }), {R({2, 4, 3})}) < tol);
  }
  SUBCASE("indexing") {
    const std::vector<Index> ids{2, 0, 2, 1};
    CHECK(gradcheck(weighted([&](auto& v) { return embedding(v[0], std::span<const Index>(ids), Shape{2, 2}); }), {R({3, 4})}) < tol);
    const std::vector<Index> cols{1, 3};
    CHECK(gradcheck(weighted([&](auto& v) { return gather_rows(v[0], std::span<const Index>(cols)); }), {R({2, 4})}) < tol);
  }
  SUBCASE("reductions") {
    CHECK(gradcheck(weighted([](auto& v) { return sum(v[0]); }), {R({3, 2})}) < tol);
    CHECK(gradcheck(weighted([](auto& v) { return mean(v[0]); }), {R({3, 2})}) < tol);
    CHECK(gradcheck(weighted([](auto& v) { return mean(v[0], {0, 2}); }), {R({2, 3, 4})}) < tol);
    CHECK(gradcheck(weighted([](auto& v) { return max(v[0], 1); }), {R({3, 4})}) < tol);
  }
  SUBCASE("attention") {
    CHECK(gradcheck(weighted([](auto& v) { return scaled_dot_attention(v[0], v[1], v[2]); }),
                    {R({2, 3, 4}), R({2, 5, 4}), R({2, 5, 3})}) < tol);
  }
}

TEST_CASE("linear model gradient is exact to rounding") {
  std::mt19937_64 rng(6);
  auto fn = [](Tape<double>& tape, const std::vector<Var<double>>& v) {
    return sum(mul(linear(v[0], v[1], v[2]), tape.constant(TensorD(Shape{4, 2}, {1, -2, 3, 0.5, -1, 2, 0.25, 1}))));
  };
  CHECK(gradcheck(fn, {random_tensor({4, 3}, rng), random_tensor({3, 2}, rng), random_tensor({2}, rng)}) <= 1e-8);
}

TEST_CASE("two-layer MLP gradients match finite differences") {
  std::mt19937_64 rng(7);
  auto fn = [](Tape<double>& tape, const std::vector<Var<double>>& v) {
    const auto h = relu(linear(v[0], v[1], v[2]));
    const auto logits = linear(h, v[3], v[4]);
    const std::vector<Index> target{0, 2, 1, 2, 0};
    return scale(sum(gather_rows(log_softmax(logits, -1), std::span<const Index>(target))), -1.0);
    (void)tape;
  };
  const double err = gradcheck(fn, {random_tensor({5, 4}, rng), random_tensor({4, 8}, rng), random_tensor({8}, rng),
                                    random_tensor({8, 3}, rng), random_tensor({3}, rng)});
  CHECK(err <= 1e-4);
}

TEST_CASE("forward and backward are bitwise deterministic") {
  auto run = [] {
    std::mt19937_64 rng(8);
    Tape<float> tape;
    const auto x = tape.variable(random_tensor<float>({2, 3, 6, 6}, rng));
    const auto w = tape.variable(random_tensor<float>({4, 3, 3, 3}, rng));
    const auto y = softmax(reshape(relu(conv2d(x, w, Var<float>(), 2, 1)), {2, -1}), -1);
    tape.backward(sum(mul(y, y)));
    return std::pair{tape.grad(x), tape.grad(w)};
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("adam_step") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    std::vector<TensorF> params{TensorF(Shape{3}, {1, 2, 3})};
    const std::vector<TensorF> grads{TensorF(Shape{3})};
    AdamState<float> state;
    adam_step<float>(params, grads, state);
    CHECK(params[0] == TensorF(Shape{3}, {1, 2, 3}));
    CHECK(state.t == 1);
  }
  SUBCASE("first step moves each coordinate by about lr against the gradient sign") {
    std::vector<TensorD> params{TensorD(Shape{4}, {0, 0, 0, 0})};
    const std::vector<TensorD> grads{TensorD(Shape{4}, {0.5, -3.0, 1e-3, -20.0})};
    AdamState<double> state;
    state.lr = 1e-3;
    adam_step<double>(params, grads, state);
    for (Index i = 0; i < 4; ++i) {
      // Closed form: -lr * g / (|g| + eps).
      const double g = grads[0][i];
      CHECK(params[0][i] == doctest::Approx(-1e-3 * g / (std::abs(g) + 1e-8)).epsilon(1e-9));
    }
  }
  SUBCASE("repeated identical runs are bitwise identical") {
    auto run = [] {
      std::vector<TensorF> params{TensorF(Shape{2}, {0.1f, -0.2f})};
      AdamState<float> state;
      for (int i = 0; i < 5; ++i) {
        const std::vector<TensorF> grads{TensorF(Shape{2}, {0.3f * float(i), -1.0f})};
        adam_step<float>(params, grads, state);
      }
      return std::pair{params[0], state.v[0]};
    };
    CHECK(run() == run());
  }
  SUBCASE("shape mismatch") {
    std::vector<TensorF> params{TensorF(Shape{2})};
    const std::vector<TensorF> grads{TensorF(Shape{3})};
    AdamState<float> state;
    CHECK_THROWS_AS(adam_step<float>(params, grads, state), ShapeError);
  }
}

TEST_CASE("tensor records round-trip and widen/narrow dtypes") {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> ext(1, 5);
  for (int trial = 0; trial < 20; ++trial) {
    Shape s(1 + trial % 4);
    for (auto& d : s) d = ext(rng);
    const TensorD t = random_tensor(s, rng);
    std::stringstream ss;
    write_tensor(ss, "w" + std::to_string(trial), t);
    const auto back = read_tensor<double>(ss);
    CHECK(back.name == "w" + std::to_string(trial));
    CHECK(back.tensor == t);
    std::stringstream ss2;
    write_tensor(ss2, "x", t);
    CHECK(read_tensor<float>(ss2).tensor == t.cast<float>());
  }
}

TEST_CASE("tensor record byte layout") {
  std::stringstream ss;
  write_tensor(ss, "ab", TensorF(Shape{2}, {1.0f, -2.0f}));
  const std::string bytes = ss.str();
  // 4 (len) + 2 (name) + 1 (dtype) + 4 (rank) + 8 (dim) + 8 (data)
  REQUIRE(bytes.size() == 27);
  CHECK(bytes[0] == 2);
  CHECK(bytes.substr(4, 2) == "ab");
  CHECK(bytes[6] == 0);
  CHECK(bytes[7] == 1);
  CHECK(bytes[11] == 2);
  std::stringstream truncated(bytes.substr(0, 20));
  CHECK_THROWS_AS(read_tensor<float>(truncated), FormatError);
}
