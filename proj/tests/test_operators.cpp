#include <gtest/gtest.h>

#include <numbers>

#include "helpers.hpp"
#include "uno/operators.hpp"

using namespace uno;
using namespace uno::test;

namespace {

const std::vector<Boundary> kPeriodic2{Boundary::Periodic, Boundary::Periodic};

GridFunction field(Tape& t, Tensor v) {
  const std::size_t d = v.rank() - 2;
  return make_grid_function(t, std::move(v), Box::unit(d), kPeriodic2);
}

PointwiseMap single_stage(Tensor w, Tensor b) {
  PointwiseMap m;
  m.weights.push_back(std::move(w));
  m.biases.push_back(std::move(b));
  m.validate();
  return m;
}

Tensor eye(std::size_t n) {
  Tensor t(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

IntegralLayer residual_only(std::size_t c, std::vector<std::size_t> modes, std::vector<double> factors) {
  IntegralLayer L;
  L.modes = {std::move(modes)};
  L.R = ComplexTensor(spectral::weight_shape(c, c, L.modes));
  L.W = eye(c);
  L.bias = Tensor(Shape{c});
  L.factors = std::move(factors);
  L.activation = false;
  L.validate();
  return L;
}

// Keeps every `stride`-th point of both grid axes.
Tensor subsample(const Tensor& x, std::size_t stride) {
  const auto& s = x.shape();
  Tensor out(Shape{s[0], s[1], s[2] / stride, s[3] / stride});
  for (std::size_t b = 0; b < s[0]; ++b)
    for (std::size_t c = 0; c < s[1]; ++c)
      for (std::size_t i = 0; i < s[2] / stride; ++i)
        for (std::size_t j = 0; j < s[3] / stride; ++j) out.at(b, c, i, j) = x.at(b, c, i * stride, j * stride);
  return out;
}

}  // namespace

TEST(Lift, ZeroWeightsMapEveryPointToBias) {
  std::mt19937_64 rng(1);
  Tape t;
  Binder bind(t);
  auto P = single_stage(Tensor(Shape{4, 3}), Tensor(Shape{4}, std::vector<double>{1, -2, 3, 0.5}));
  auto v = lift(bind, field(t, random_tensor({2, 3, 6, 5}, rng)), P);
  const Tensor& y = v.tensor();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(y.at(b, c, i, j), P.biases[0][c]);
}

TEST(Lift, ThreeChannelsToWidth32) {
  std::mt19937_64 rng(2);
  Rng init = stream(9);
  Tape t;
  Binder bind(t);
  auto P = make_two_stage(3, 32, init);
  EXPECT_EQ(P.weights[0].shape(), (Shape{128, 3}));
  auto v = lift(bind, field(t, random_tensor({1, 3, 8, 8}, rng)), P);
  EXPECT_EQ(v.channels(), 32u);
  EXPECT_EQ(v.extents(), (std::vector<std::size_t>{8, 8}));
}

TEST(Lift, SinglePointMatchesHandProduct) {
  Tape t;
  Binder bind(t);
  Tensor a(Shape{1, 2, 4, 4});
  a.at(0, 0, 1, 2) = 2.0;
  a.at(0, 1, 1, 2) = -1.0;
  auto P = single_stage(Tensor(Shape{3, 2}, std::vector<double>{1, 2, 3, 4, 5, 6}),
                        Tensor(Shape{3}, std::vector<double>{0.5, 0, -1}));
  auto v = lift(bind, field(t, a), P);
  // [1 2; 3 4; 5 6] [2; -1] + [0.5; 0; -1] = [0.5; 2; 3]
  EXPECT_DOUBLE_EQ(v.tensor().at(0, 0, 1, 2), 0.5);
  EXPECT_DOUBLE_EQ(v.tensor().at(0, 1, 1, 2), 2.0);
  EXPECT_DOUBLE_EQ(v.tensor().at(0, 2, 1, 2), 3.0);
}

TEST(Lift, ChannelMismatchThrows) {
  Tape t;
  Binder bind(t);
  auto P = single_stage(Tensor(Shape{4, 3}), Tensor(Shape{4}));
  EXPECT_THROW(lift(bind, field(t, Tensor(Shape{1, 2, 4, 4})), P), ShapeError);
}

TEST(Lift, CommutesWithSubsampling) {
  std::mt19937_64 rng(3);
  Rng init = stream(4);
  auto P = make_two_stage(3, 8, init);
  const Tensor a = random_tensor({2, 3, 16, 16}, rng);
  Tape t;
  Binder bind(t);
  const Tensor fine = lift(bind, field(t, a), P).tensor();
  const Tensor coarse = lift(bind, field(t, subsample(a, 2)), P).tensor();
  EXPECT_EQ(coarse, subsample(fine, 2));
}

TEST(Project, IdentityLeavesFieldUnchanged) {
  std::mt19937_64 rng(5);
  Tape t;
  Binder bind(t);
  const Tensor v = random_tensor({1, 3, 5, 6}, rng);
  auto Q = single_stage(eye(3), Tensor(Shape{3}));
  EXPECT_EQ(project(bind, field(t, v), Q).tensor(), v);
}

TEST(Project, Width32ToScalar) {
  std::mt19937_64 rng(6);
  Rng init = stream(6);
  Tape t;
  Binder bind(t);
  auto Q = make_two_stage(32, 1, init);
  EXPECT_EQ(project(bind, field(t, random_tensor({1, 32, 8, 8}, rng)), Q).channels(), 1u);
}

TEST(Project, TwoChannelConstantField) {
  Tape t;
  Binder bind(t);
  Tensor v(Shape{1, 2, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) {
    v[i] = 3.0;
    v[16 + i] = -2.0;
  }
  auto Q = single_stage(Tensor(Shape{1, 2}, std::vector<double>{0.5, 2.0}), Tensor(Shape{1}, 1.0));
  const Tensor y = project(bind, field(t, v), Q).tensor();
  for (double x : y.data()) EXPECT_DOUBLE_EQ(x, 0.5 * 3.0 + 2.0 * -2.0 + 1.0);
}

TEST(IntegralLayer, ResidualIdentityIsIdentity) {
  std::mt19937_64 rng(7);
  Tape t;
  Binder bind(t);
  const Tensor v = random_tensor({2, 3, 8, 8}, rng);
  auto y = integral_layer_apply(bind, field(t, v), residual_only(3, {2, 2}, {1.0, 1.0}));
  EXPECT_EQ(y.tensor(), v);
}

TEST(IntegralLayer, ThreeQuarterContraction) {
  std::mt19937_64 rng(8);
  Rng init = stream(8);
  Tape t;
  Binder bind(t);
  auto L = make_integral_layer(4, 6, {{8, 8}}, {0.75, 0.75}, true, init);
  auto y = integral_layer_apply(bind, field(t, random_tensor({1, 4, 64, 64}, rng)), L);
  EXPECT_EQ(y.extents(), (std::vector<std::size_t>{48, 48}));
  EXPECT_EQ(y.channels(), 6u);
  EXPECT_DOUBLE_EQ(y.domain.hi[0], 0.75);
}

TEST(IntegralLayer, ConstantSurvivesHalving) {
  Tape t;
  Binder bind(t);
  Tensor v(Shape{1, 2, 16, 16}, 2.5);
  auto y = integral_layer_apply(bind, field(t, v), residual_only(2, {2, 2}, {0.5, 0.5}));
  EXPECT_EQ(y.extents(), (std::vector<std::size_t>{8, 8}));
  for (double x : y.tensor().data()) EXPECT_NEAR(x, 2.5, 1e-15);
}

TEST(IntegralLayer, RecordedExtentsOverrideFactors) {
  std::mt19937_64 rng(9);
  Rng init = stream(9);
  Tape t;
  Binder bind(t);
  auto L = make_integral_layer(2, 2, {{2, 2}}, {1.5, 1.5}, true, init);
  auto y = integral_layer_apply(bind, field(t, random_tensor({1, 2, 17, 17}, rng)), L,
                                std::vector<std::size_t>{25, 26});
  EXPECT_EQ(y.extents(), (std::vector<std::size_t>{25, 26}));
}

TEST(IntegralLayer, ModesBeyondSmallerGridThrow) {
  Rng init = stream(10);
  Tape t;
  Binder bind(t);
  auto L = make_integral_layer(2, 2, {{6, 6}}, {0.5, 0.5}, true, init);
  EXPECT_THROW(integral_layer_apply(bind, field(t, Tensor(Shape{1, 2, 16, 16})), L), ShapeError);
}

TEST(IntegralLayer, MismatchedWeightsRejected) {
  Rng init = stream(11);
  auto L = make_integral_layer(2, 3, {{2, 2}}, {1, 1}, true, init);
  L.W = Tensor(Shape{3, 4});
  L.bias = Tensor(Shape{3});
  EXPECT_THROW(L.validate(), ShapeError);
}

TEST(IntegralLayer, LinearWithoutActivation) {
  std::mt19937_64 rng(12);
  Rng init = stream(12);
  auto L = make_integral_layer(3, 2, {{3, 3}}, {0.75, 0.75}, false, init);
  L.bias = Tensor(Shape{2});
  const Tensor a = random_tensor({1, 3, 16, 16}, rng), b = random_tensor({1, 3, 16, 16}, rng);
  Tensor combo(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) combo[i] = 1.7 * a[i] - 0.3 * b[i];
  Tape t;
  Binder bind(t);
  const Tensor ya = integral_layer_apply(bind, field(t, a), L).tensor();
  const Tensor yb = integral_layer_apply(bind, field(t, b), L).tensor();
  const Tensor yc = integral_layer_apply(bind, field(t, combo), L).tensor();
  std::vector<double> expect(yc.numel());
  for (std::size_t i = 0; i < expect.size(); ++i) expect[i] = 1.7 * ya[i] - 0.3 * yb[i];
  EXPECT_LT(rel_l2(yc.data(), expect), 1e-10);
}

TEST(IntegralLayer, InitKeepsOutputVarianceOrderOne) {
  std::mt19937_64 rng(13);
  Rng init = stream(13);
  auto L = make_integral_layer(32, 32, {{8, 8}}, {1, 1}, false, init);
  std::normal_distribution<double> n;
  Tensor v(Shape{1, 32, 32, 32});
  for (double& x : v.data()) x = n(rng);
  Tape t;
  Binder bind(t);
  const Tensor y = integral_layer_apply(bind, field(t, v), L).tensor();
  double m2 = 0;
  for (double x : y.data()) m2 += x * x;
  m2 /= double(y.numel());
  EXPECT_GT(m2, 0.05);
  EXPECT_LT(m2, 5.0);
}

TEST(ConcatSkip, ChannelsAddEncoderFirst) {
  std::mt19937_64 rng(14);
  Tape t;
  auto enc = field(t, random_tensor({1, 48, 32, 32}, rng));
  auto dec = field(t, random_tensor({1, 48, 32, 32}, rng));
  auto v = concat_skip(enc, dec);
  EXPECT_EQ(v.channels(), 96u);
  EXPECT_EQ(ad::slice(v.values, 1, 0, 48).value(), enc.tensor());
  EXPECT_EQ(ad::slice(v.values, 1, 48, 48).value(), dec.tensor());
}

TEST(ConcatSkip, SelfConcatHalvesAgree) {
  std::mt19937_64 rng(15);
  Tape t;
  auto v = field(t, random_tensor({2, 3, 8, 8}, rng));
  auto c = concat_skip(v, v);
  EXPECT_EQ(ad::slice(c.values, 1, 0, 3).value(), ad::slice(c.values, 1, 3, 3).value());
}

TEST(ConcatSkip, MismatchedGridOrDomainThrows) {
  Tape t;
  auto a = field(t, Tensor(Shape{1, 2, 16, 16}));
  auto b = field(t, Tensor(Shape{1, 2, 32, 32}));
  EXPECT_THROW(concat_skip(a, b), ShapeError);
  auto c = field(t, Tensor(Shape{1, 2, 16, 16}));
  c.domain = c.domain.scaled({0.5, 0.5});
  EXPECT_THROW(concat_skip(a, c), ShapeError);
}

TEST(Embedding, TorusKnownPoints) {
  const Tensor e = positional_embedding({4, 4}, EmbeddingKind::Torus2d);
  ASSERT_EQ(e.shape(), (Shape{1, 4, 4, 4}));
  const double at00[] = {0, 0.5, 0, 0.5};
  const double at10[] = {0.5, 0, 0, 0.5};  // x = (1/4, 0)
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_NEAR(e.at(0, c, 0, 0), at00[c], 1e-16);
    EXPECT_NEAR(e.at(0, c, 1, 0), at10[c], 1e-16);
  }
}

TEST(Embedding, TorusNormSquaredIsHalf) {
  const Tensor e = positional_embedding({7, 9}, EmbeddingKind::Torus2d, 2);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t j = 0; j < 9; ++j) {
        double s = 0;
        for (std::size_t c = 0; c < 4; ++c) s += e.at(b, c, i, j) * e.at(b, c, i, j);
        EXPECT_NEAR(s, 0.5, 1e-15);
      }
}

TEST(Embedding, BoxCoordinatesAndTimeChannel) {
  const Tensor e = positional_embedding({5, 3, 4}, EmbeddingKind::Box, 1, true);
  ASSERT_EQ(e.shape(), (Shape{1, 3, 5, 3, 4}));
  EXPECT_DOUBLE_EQ(e.at(0, 0, 4, 0, 0), 1.0);
  EXPECT_DOUBLE_EQ(e.at(0, 0, 1, 2, 3), 0.25);
  EXPECT_DOUBLE_EQ(e.at(0, 1, 1, 2, 3), 1.0);
  EXPECT_DOUBLE_EQ(e.at(0, 2, 0, 0, 0), 0.25);
  EXPECT_DOUBLE_EQ(e.at(0, 2, 0, 0, 3), 1.0);
}

TEST(LayerGradients, PassFiniteDifferenceChecks) {
  std::mt19937_64 rng(20);
  Rng init = stream(20);
  const ad::GradCheckOptions opt{.step = 1e-6, .tolerance = 1e-4, .samples_per_param = 10, .seed = 3};
  auto expect_pass = [](const char* name, const ad::GradCheckReport& r) {
    EXPECT_TRUE(r.passed()) << name << ": worst " << r.worst.rel_error << " param " << r.worst.param;
    EXPECT_GE(r.checked, 10u);
  };

  const PointwiseMap P = make_two_stage(3, 4, init);
  expect_pass("lift", ad::grad_check([&](Tape& t, const std::vector<Var>& p) {
    PointwiseMap m = P;
    Binder bind(t);
    for (std::size_t s = 0; s < 2; ++s) {
      bind.assign(&m.weights[s], p[1 + 2 * s]);
      bind.assign(&m.biases[s], p[2 + 2 * s]);
    }
    return weighted_sum(lift(bind, {p[0], Box::unit(2), kPeriodic2}, m).values, 1);
  }, {random_tensor({2, 3, 6, 6}, rng), P.weights[0], P.biases[0], P.weights[1], P.biases[1]}, opt));

  const PointwiseMap Q = make_two_stage(4, 1, init);
  expect_pass("project", ad::grad_check([&](Tape& t, const std::vector<Var>& p) {
    PointwiseMap m = Q;
    Binder bind(t);
    bind.assign(&m.weights[0], p[1]);
    bind.assign(&m.weights[1], p[2]);
    return weighted_sum(project(bind, {p[0], Box::unit(2), kPeriodic2}, m).values, 2);
  }, {random_tensor({1, 4, 6, 6}, rng), Q.weights[0], Q.weights[1]}, opt));

  for (double factor : {0.5, 0.75}) {
    const IntegralLayer L = make_integral_layer(3, 2, {{2, 2}}, {factor, factor}, true, init);
    expect_pass(factor == 0.5 ? "integral-1/2" : "integral-3/4", ad::grad_check(
        [&](Tape& t, const std::vector<Var>& p) {
          IntegralLayer l = L;
          Binder bind(t);
          bind.assign(&l.R, p[1]);
          bind.assign(&l.W, p[2]);
          bind.assign(&l.bias, p[3]);
          return weighted_sum(integral_layer_apply(bind, {p[0], Box::unit(2), kPeriodic2}, l).values, 3);
        },
        {random_tensor({1, 3, 8, 8}, rng), L.R, L.W, L.bias}, opt));
  }

  const IntegralLayer down = make_integral_layer(2, 3, {{2, 2}}, {0.5, 0.5}, true, init);
  const IntegralLayer up = make_integral_layer(5, 2, {{2, 2}}, {2, 2}, false, init);
  expect_pass("skip-path", ad::grad_check([&](Tape& t, const std::vector<Var>& p) {
    Binder bind(t);
    GridFunction v{p[0], Box::unit(2), kPeriodic2};
    IntegralLayer d = down, u = up;
    bind.assign(&d.R, p[1]);
    bind.assign(&u.R, p[2]);
    auto e = integral_layer_apply(bind, v, d);
    auto mid = integral_layer_apply(bind, e, residual_only(3, {2, 2}, {1, 1}));
    auto out = integral_layer_apply(bind, concat_skip(e, {ad::slice(mid.values, 1, 0, 2), mid.domain, mid.boundary}), u,
                                    v.extents());
    return weighted_sum(out.values, 4);
  }, {random_tensor({1, 2, 8, 8}, rng), down.R, up.R}, opt));
}

// Two stacked spectral layers on an 8x8 grid, every coordinate checked.
TEST(LayerGradients, TwoLayerSpectralModelTight) {
  std::mt19937_64 rng(21);
  Rng init = stream(21);
  const IntegralLayer a = make_integral_layer(2, 3, {{3, 3}}, {1, 1}, true, init);
  const IntegralLayer b = make_integral_layer(3, 1, {{3, 3}}, {1, 1}, false, init);
  auto r = ad::grad_check([&](Tape& t, const std::vector<Var>& p) {
    Binder bind(t);
    IntegralLayer la = a, lb = b;
    bind.assign(&la.R, p[1]);
    bind.assign(&lb.R, p[2]);
    GridFunction v{p[0], Box::unit(2), kPeriodic2};
    return weighted_sum(integral_layer_apply(bind, integral_layer_apply(bind, v, la), lb).values, 5);
  }, {random_tensor({1, 2, 8, 8}, rng), a.R, b.R},
      {.step = 1e-6, .tolerance = 1e-5, .samples_per_param = 0, .seed = 1});
  EXPECT_TRUE(r.passed()) << "worst " << r.worst.rel_error;
}

TEST(ScaledExtents, ContractionStopsAtFourPoints) {
  EXPECT_EQ(scaled_extents({16, 16}, {0.5, 0.5}), (std::vector<std::size_t>{8, 8}));
  EXPECT_EQ(scaled_extents({6, 8}, {0.5, 0.25}), (std::vector<std::size_t>{4, 4}));
  EXPECT_EQ(scaled_extents({3, 4}, {0.5, 2.0}), (std::vector<std::size_t>{3, 8}));
  for (std::size_t n = 4; n <= 40; ++n)
    for (double f : {0.25, 0.5, 0.75, 1.0, 2.0}) EXPECT_GE(scaled_extents({n}, {f})[0], 4u);
}
