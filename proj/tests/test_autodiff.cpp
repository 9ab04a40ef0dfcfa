#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "uno/autodiff.hpp"

using namespace uno;
using namespace uno::ad;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.vec()) v = u(rng);
  return t;
}

ComplexTensor random_complex(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  ComplexTensor t(std::move(shape));
  for (auto& v : t.vec()) v = {n(rng), n(rng)};
  return t;
}

Value random_like(const Value& v, std::mt19937_64& rng) {
  if (std::holds_alternative<Tensor>(v)) return random_tensor(shape_of(v), rng);
  return random_complex(shape_of(v), rng);
}

Shape half_to_real(Shape s) {
  s.back() = 2 * (s.back() - 1);
  return s;
}

double inner(const Value& a, const Value& b) {
  if (const auto* ta = std::get_if<Tensor>(&a)) return dot(ta->data(), std::get<Tensor>(b).data());
  return dot(std::get<ComplexTensor>(a).data(), std::get<ComplexTensor>(b).data());
}

// <L x, y> versus <x, L^T y> with L^T y taken from the tape.
void expect_adjoint(const Value& x0, const std::function<Var(Var)>& op, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tape tape;
  Var x = tape.param(random_like(x0, rng));
  Var y = op(x);
  const Value probe = random_like(tape.node(y.id).value, rng);
  tape.backward(y, probe);
  const double lhs = inner(tape.node(y.id).value, probe);
  const double rhs = inner(tape.node(x.id).value, tape.grad_or_zero(x.id));
  EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(lhs)));
}

}  // namespace

TEST(Primitives, AddIsComponentwise) {
  Tape t;
  Var a = t.constant(Tensor({2}, {1, 2}));
  Var b = t.constant(Tensor({2}, {3, 4}));
  EXPECT_EQ(add(a, b).value().vec(), (std::vector<double>{4, 6}));
}

TEST(Primitives, ChannelLinearIdentityIsNoOp) {
  std::mt19937_64 rng(1);
  Tape t;
  Tensor x = random_tensor({2, 3, 5, 4}, rng);
  Tensor eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  Var y = channel_linear(t.constant(x), t.constant(eye));
  EXPECT_EQ(y.value(), x);
}

TEST(Primitives, ComplexMultiply) {
  Tape t;
  Var a = t.constant(ComplexTensor({1}, {cdouble(1, 2)}));
  Var b = t.constant(ComplexTensor({1}, {cdouble(3, 4)}));
  EXPECT_EQ(cmul(a, b).cvalue()[0], cdouble(-5, 10));
}

TEST(Primitives, ShapeMismatchThrows) {
  Tape t;
  Var a = t.constant(Tensor({2}, 1.0));
  Var b = t.constant(Tensor({3}, 1.0));
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(channel_linear(t.constant(Tensor({1, 2, 4}, 1.0)), t.constant(Tensor({3, 3}, 1.0))),
               ShapeError);
}

TEST(Primitives, NonFiniteOutputThrows) {
  Tape t;
  Var a = t.constant(Tensor({2}, 1e308));
  EXPECT_THROW(scale(a, 10.0), NumericalError);
}

TEST(Primitives, GeluExactForm) {
  EXPECT_DOUBLE_EQ(gelu_value(0.0), 0.0);
  // x * Phi(x) at x = 1: Phi(1) = 0.8413447460685429...
  EXPECT_NEAR(gelu_value(1.0), 0.8413447460685429, 1e-15);
  EXPECT_NEAR(gelu_value(-1.0), -0.15865525393145707, 1e-15);
}

TEST(Backward, SumGivesOnes) {
  Tape t;
  Var x = t.param(Tensor({2, 3}, 0.5));
  t.backward(sum(x));
  EXPECT_EQ(t.real_grad(x.id), Tensor({2, 3}, 1.0));
}

TEST(Backward, SumOfSquares) {
  Tape t;
  Var x = t.param(Tensor({3}, {1, 2, 3}));
  t.backward(sum(mul(x, x)));
  EXPECT_EQ(t.real_grad(x.id).vec(), (std::vector<double>{2, 4, 6}));
}

TEST(Backward, SeedShapeMustMatch) {
  Tape t;
  Var x = t.param(Tensor({3}, 1.0));
  Var y = scale(x, 2.0);
  EXPECT_THROW(t.backward(y, Tensor({2}, 1.0)), ShapeError);
}

TEST(Backward, NonRecordingTapeRefuses) {
  Tape t(false);
  Var x = t.param(Tensor({3}, 1.0));
  EXPECT_THROW(t.backward(sum(x)), std::logic_error);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  Tape t;
  Var x = t.param(Tensor({2}, {1.5, -2.0}));
  Var y = add(x, scale(x, 3.0));  // 4x
  t.backward(sum(y));
  EXPECT_EQ(t.real_grad(x.id).vec(), (std::vector<double>{4, 4}));
}

TEST(Adjoint, LinearPrimitivesMatchTheirTransposes) {
  std::uint64_t seed = 10;
  expect_adjoint(Tensor({2, 3, 8, 6}), [](Var x) { return rfft(x, 2); }, seed++);
  expect_adjoint(Tensor({2, 3, 7, 5}), [](Var x) { return rfft(x, 2); }, seed++);
  expect_adjoint(Tensor({1, 2, 4, 6, 5}), [](Var x) { return rfft(x, 3); }, seed++);
  expect_adjoint(ComplexTensor({2, 3, 8, 4}), [](Var x) { return irfft(x, 2, 6); }, seed++);
  expect_adjoint(ComplexTensor({2, 3, 7, 3}), [](Var x) { return irfft(x, 2, 5); }, seed++);
  expect_adjoint(ComplexTensor({1, 2, 4, 5, 3}), [](Var x) { return irfft(x, 3, 4); }, seed++);
  expect_adjoint(Tensor({2, 3, 8, 8}),
                 [](Var x) { return resample(x, {6, 12}, {Boundary::Periodic, Boundary::Periodic}); }, seed++);
  expect_adjoint(Tensor({2, 3, 9, 7}),
                 [](Var x) { return resample(x, {5, 13}, {Boundary::Clamped, Boundary::Clamped}); }, seed++);
  expect_adjoint(Tensor({2, 5, 4, 4}), [](Var x) { return slice(x, 1, 1, 3); }, seed++);
  expect_adjoint(ComplexTensor({2, 3, 8, 5}),
                 [](Var x) { return mode_truncate(x, 2, {3, 2}, 8); }, seed++);
  expect_adjoint(ComplexTensor({2, 3, 6, 2}), [](Var x) {
    return mode_embed(x, 2, {3, 2}, Shape{2, 3, 10, 6}, 10, 1.7);
  }, seed++);
  expect_adjoint(Tensor({2, 4, 3, 3}), [](Var x) {
    std::mt19937_64 rng(99);
    return channel_linear(x, x.tape->constant(random_tensor({5, 4}, rng)));
  }, seed++);
  expect_adjoint(Tensor({3, 4}), [](Var x) { return scale(x, -2.5); }, seed++);
  expect_adjoint(Tensor({3, 4}), [](Var x) { return sum(x); }, seed++);
  expect_adjoint(Tensor({3, 4}), [](Var x) { return mean(x); }, seed++);
  expect_adjoint(Tensor({2, 3, 4}), [](Var x) { return concat({x, scale(x, 2.0)}, 1); }, seed++);
  expect_adjoint(ComplexTensor({2, 3, 4, 2}), [](Var x) {
    std::mt19937_64 rng(5);
    return mode_mix(x, x.tape->constant(random_complex({4, 3, 4, 2}, rng)));
  }, seed++);
}

TEST(GradCheck, GeluSum) {
  std::mt19937_64 rng(3);
  std::vector<Value> params{random_tensor({10}, rng, -2.0, 2.0)};
  auto report = grad_check([](Tape&, const std::vector<Var>& p) { return sum(gelu(p[0])); }, params,
                           {.step = 1e-6, .tolerance = 1e-6, .samples_per_param = 0});
  EXPECT_EQ(report.checked, 10u);
  EXPECT_TRUE(report.passed()) << "worst rel error " << report.worst.rel_error;
}

TEST(GradCheck, ConstantObjectiveHasZeroGradients) {
  std::vector<Value> params{Tensor({4}, 1.0)};
  auto report = grad_check([](Tape& t, const std::vector<Var>&) {
    return sum(t.constant(Tensor({2}, 3.0)));
  }, params, {.samples_per_param = 0});
  EXPECT_TRUE(report.passed());
  EXPECT_EQ(report.worst.analytic, 0.0);
  EXPECT_EQ(report.worst.numeric, 0.0);
}

TEST(GradCheck, ReportsWrongGradientWithoutThrowing) {
  // Deliberately wrong adjoint: forward is 2x, adjoint passes g through.
  std::vector<Value> params{Tensor({3}, {0.3, -0.2, 0.9})};
  auto report = grad_check([](Tape& t, const std::vector<Var>& p) {
    Tensor out = p[0].value();
    for (auto& v : out.vec()) v *= 2;
    Var y = t.push(Kind::Scale, {p[0].id}, std::move(out), [id = p[0].id](Tape& tp, std::size_t self) {
      tp.accumulate(id, tp.real_grad(self));
    });
    return sum(y);
  }, params, {.samples_per_param = 0});
  EXPECT_FALSE(report.passed());
  EXPECT_EQ(report.failures, 3u);
  EXPECT_NEAR(report.worst.rel_error, 1.0, 1e-6);
}

// Every primitive under a random linear functional.
TEST(GradCheck, EveryPrimitive) {
  std::mt19937_64 rng(42);
  const GradCheckOptions opt{.step = 1e-6, .tolerance = 1e-4, .samples_per_param = 10, .seed = 7};
  auto check = [&](const char* name, std::vector<Value> params, const Objective& f) {
    auto r = grad_check(f, params, opt);
    EXPECT_TRUE(r.passed()) << name << ": worst rel error " << r.worst.rel_error << " at param "
                            << r.worst.param << " coord " << r.worst.index;
    EXPECT_GE(r.checked, std::min<std::size_t>(10, 1));
  };
  auto weighted = [](Var y, std::uint64_t seed) {
    std::mt19937_64 r(seed);
    Tape& t = *y.tape;
    if (y.is_complex()) {
      // Weight, then map back to reals along the last axis.
      ComplexTensor w = random_complex(y.shape(), r);
      return sum(mul(irfft(cmul(y, t.constant(w)), 1, 2 * (y.shape().back() - 1)),
                     t.constant(random_tensor(half_to_real(y.shape()), r))));
    }
    return sum(mul(y, t.constant(random_tensor(y.shape(), r))));
  };

  check("add", {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
        [&](Tape&, const std::vector<Var>& p) { return weighted(add(p[0], p[1]), 1); });
  check("sub", {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
        [&](Tape&, const std::vector<Var>& p) { return weighted(sub(p[0], p[1]), 2); });
  check("scale", {random_tensor({3, 4}, rng)},
        [&](Tape&, const std::vector<Var>& p) { return weighted(scale(p[0], 0.7), 3); });
  check("mul", {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
        [&](Tape&, const std::vector<Var>& p) { return weighted(mul(p[0], p[1]), 4); });
  check("channel-linear", {random_tensor({2, 3, 4, 4}, rng), random_tensor({5, 3}, rng), random_tensor({5}, rng)},
        [&](Tape&, const std::vector<Var>& p) { return weighted(channel_linear(p[0], p[1], p[2]), 5); });
  check("complex-mul", {random_complex({3, 5}, rng), random_complex({3, 5}, rng)},
        [&](Tape&, const std::vector<Var>& p) { return weighted(cmul(p[0], p[1]), 6); });
  check("mode-mix", {random_complex({2, 3, 4, 3}, rng), random_complex({2, 3, 4, 3}, rng)},
        [&](Tape&, const std::vector<Var>& p) { return weighted(mode_mix(p[0], p[1]), 7); });
  check("gelu", {random_tensor({4, 5}, rng, -2, 2)},
        [&](Tape&, const std::vector<Var>& p) { return weighted(gelu(p[0]), 8); });
  check("concat", {random_tensor({2, 3, 4}, rng), random_tensor({2, 2, 4}, rng)},
        [&](Tape&, const std::vector<Var>& p) { return weighted(concat({p[0], p[1]}), 9); });
  check("slice", {random_tensor({2, 5, 4}, rng)},
        [&](Tape&, const std::vector<Var>& p) { return weighted(slice(p[0], 1, 2, 2), 10); });
  check("rfft", {random_tensor({2, 2, 6, 6}, rng)},
        [&](Tape&, const std::vector<Var>& p) { return weighted(rfft(p[0], 2), 11); });
  check("irfft", {random_complex({2, 2, 6, 4}, rng)},
        [&](Tape&, const std::vector<Var>& p) { return weighted(irfft(p[0], 2, 6), 12); });
  check("mode-truncate", {random_complex({1, 2, 8, 5}, rng)},
        [&](Tape&, const std::vector<Var>& p) { return weighted(mode_truncate(p[0], 2, {2, 3}, 8), 13); });
  check("pad-zeros", {random_complex({1, 2, 4, 3}, rng)}, [&](Tape&, const std::vector<Var>& p) {
    return weighted(mode_embed(p[0], 2, {2, 3}, Shape{1, 2, 8, 5}, 8, 0.5), 14);
  });
  check("resample", {random_tensor({1, 2, 8, 8}, rng)}, [&](Tape&, const std::vector<Var>& p) {
    return weighted(resample(p[0], {6, 11}, {Boundary::Periodic, Boundary::Clamped}), 15);
  });
  check("mean", {random_tensor({3, 3}, rng)},
        [&](Tape&, const std::vector<Var>& p) { return scale(mean(p[0]), 3.0); });
  check("relative-l2", {random_tensor({3, 2, 4}, rng)}, [&](Tape&, const std::vector<Var>& p) {
    std::mt19937_64 r(16);
    return relative_l2(p[0], random_tensor({3, 2, 4}, r));
  });
}

TEST(Determinism, IdenticalInputsGiveBitIdenticalForward) {
  auto run = [] {
    std::mt19937_64 rng(123);
    Tape t;
    Var x = t.param(random_tensor({2, 3, 12, 10}, rng));
    Var w = t.param(random_complex({4, 3, 6, 3}, rng));
    Var spec = mode_truncate(rfft(x, 2), 2, {3, 3}, 10);
    Var y = irfft(mode_embed(mode_mix(spec, w), 2, {3, 3}, Shape{2, 4, 12, 6}, 10), 2, 10);
    return gelu(y).value();
  };
  EXPECT_EQ(run(), run());
}
