#include <gtest/gtest.h>

#include <numbers>

#include "helpers.hpp"
#include "uno/architecture.hpp"

using namespace uno;
using namespace uno::test;

namespace {

ModelConfig base2d(std::size_t s, Variant v = Variant::Uno, std::size_t width = 32) {
  ModelConfig c;
  c.variant = v;
  c.width = width;
  c.in_channels = 1;
  c.out_channels = 1;
  c.embedding = EmbeddingKind::Torus2d;
  c.extents = {s, s};
  c.seed = 11;
  return c;
}

GridFunction periodic_input(Tape& t, Tensor v) {
  const std::size_t d = v.rank() - 2;
  return make_grid_function(t, std::move(v), Box::unit(d), std::vector<Boundary>(d, Boundary::Periodic));
}

// Smooth periodic field with frequencies |k_j| <= 2 on an s x s grid.
Tensor band_limited(std::size_t s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Tensor t(Shape{1, 1, s, s});
  for (int k1 = -2; k1 <= 2; ++k1)
    for (int k2 = 0; k2 <= 2; ++k2) {
      const double a = n(rng), b = n(rng);
      for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j < s; ++j) {
          const double ph = 2 * std::numbers::pi * (k1 * double(i) + k2 * double(j)) / double(s);
          t.at(0, 0, i, j) += a * std::cos(ph) + b * std::sin(ph);
        }
    }
  return t;
}

std::vector<std::size_t> sq(std::size_t s) { return {s, s}; }

}  // namespace

TEST(Plan, StandardGridTrace) {
  Model m = build_model(base2d(64));
  auto plan = plan_extents(m.specs, {64, 64}, 2);
  std::vector<std::size_t> trace{64};
  for (const auto& e : plan.out) trace.push_back(e[0]);
  EXPECT_EQ(trace, (std::vector<std::size_t>{64, 48, 32, 16, 16, 32, 48, 64}));
}

TEST(Plan, StandardChannelTraceWithSkips) {
  auto specs = plan_layers(base2d(64));
  ASSERT_EQ(specs.size(), 7u);
  std::vector<std::size_t> in, out;
  for (const auto& s : specs) {
    in.push_back(s.c_in);
    out.push_back(s.c_out);
  }
  EXPECT_EQ(in, (std::vector<std::size_t>{32, 48, 96, 192, 384, 192, 96}));
  EXPECT_EQ(out, (std::vector<std::size_t>{48, 96, 192, 192, 96, 48, 32}));
  EXPECT_EQ(specs[4].skip_from, 2u);
  EXPECT_EQ(specs[5].skip_from, 1u);
  EXPECT_EQ(specs[6].skip_from, 0u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_TRUE(specs[i].activation);
  EXPECT_FALSE(specs[6].activation);
}

TEST(Plan, DaggerFactorsAndChannels) {
  auto specs = plan_layers(base2d(64, Variant::UnoDagger));
  std::vector<double> f;
  std::vector<std::size_t> out;
  for (const auto& s : specs) {
    f.push_back(s.factors[0]);
    out.push_back(s.c_out);
  }
  EXPECT_EQ(f, (std::vector<double>{0.5, 0.5, 0.5, 1, 2, 2, 2}));
  EXPECT_EQ(out, (std::vector<std::size_t>{64, 128, 256, 256, 128, 64, 32}));
}

TEST(Plan, FnoKeepsGridAndWidth) {
  for (Variant v : {Variant::Fno, Variant::FnoSkip}) {
    auto specs = plan_layers(base2d(32, v));
    for (const auto& s : specs) {
      EXPECT_EQ(s.factors, (std::vector<double>{1, 1}));
      EXPECT_EQ(s.c_out, 32u);
      EXPECT_EQ(s.c_in, s.skip_from ? 64u : 32u);
    }
  }
}

TEST(Plan, DefaultModesFitEveryLayer) {
  for (Variant v : {Variant::Uno, Variant::UnoDagger})
    for (std::size_t s : {16, 32, 64, 100}) {
      auto cfg = base2d(s, v, 8);
      auto specs = plan_layers(cfg);
      auto plan = plan_extents(specs, cfg.extents, 2);
      for (std::size_t i = 0; i < specs.size(); ++i) {
        spectral::ModeSpec ms{specs[i].modes};
        EXPECT_NO_THROW(ms.check_fits(plan.in[i]));
        EXPECT_NO_THROW(ms.check_fits(plan.out[i]));
      }
    }
}

TEST(Plan, TemporalExpansion) {
  ModelConfig b = base2d(16, Variant::Uno, 8);
  for (auto [tin, tend, expect] : {std::tuple{10.0, 50.0, 40u}, std::tuple{6.0, 15.0, 9u}, std::tuple{5.0, 10.0, 5u}}) {
    Model m = build_uno_3d(8, {}, 16, tin, tend, 1.0, b);
    const auto plan = plan_extents(m.specs, m.config.extents, 2);
    EXPECT_EQ(plan.out.back()[2], expect);
    double prod = 1;
    for (std::size_t i = 4; i < 7; ++i) prod *= m.specs[i].factors[2];
    EXPECT_DOUBLE_EQ(prod, double(expect) / tin);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(m.specs[i].factors[2], 1.0);
  }
  EXPECT_THROW(build_uno_3d(8, {}, 16, 10, 5, 1.0, b), std::invalid_argument);
}

TEST(Plan, InvalidWidthRejected) {
  EXPECT_THROW(build_uno_2d(3, {}, Variant::Uno, base2d(16)), std::invalid_argument);
}

TEST(Forward, RestoresGridAtEveryTestedResolution) {
  for (Variant v : {Variant::Uno, Variant::UnoDagger})
    for (std::size_t s : {16, 32, 64, 100}) {
      Model m = build_model(base2d(s, v, 4));
      auto prod = composed_factors(m.specs, 2);
      EXPECT_NEAR(prod[0], 1.0, 1e-15);
      EXPECT_NEAR(prod[1], 1.0, 1e-15);
      std::mt19937_64 rng(s);
      Tape t(false);
      Binder bind(t, false);
      ForwardTrace trace;
      auto u = forward(bind, m, periodic_input(t, random_tensor({1, 1, s, s}, rng)), &trace);
      EXPECT_EQ(u.extents(), sq(s)) << variant_name(v) << " s=" << s;
      ASSERT_EQ(trace.skips.size(), 3u);
      for (auto [enc, dec] : trace.skips) EXPECT_EQ(trace.extents.out[enc], trace.extents.in[dec]);
    }
}

TEST(Forward, SameWeightsOnFinerGrid) {
  Model m = build_model(base2d(64, Variant::UnoDagger, 8));
  std::mt19937_64 rng(3);
  Tape t(false);
  Binder bind(t, false);
  auto u64 = forward(bind, m, periodic_input(t, random_tensor({2, 1, 64, 64}, rng)));
  auto u128 = forward(bind, m, periodic_input(t, random_tensor({1, 1, 128, 128}, rng)));
  EXPECT_EQ(u64.tensor().shape(), (Shape{2, 1, 64, 64}));
  EXPECT_EQ(u128.tensor().shape(), (Shape{1, 1, 128, 128}));
}

TEST(Forward, ZeroWeightsGiveZeroOutput) {
  Model m = build_model(base2d(16, Variant::Uno, 8));
  for_each_parameter(m, [](auto& p) {
    for (auto& x : p.data()) x = {};
  });
  std::mt19937_64 rng(4);
  Tape t(false);
  Binder bind(t, false);
  auto u = forward(bind, m, periodic_input(t, random_tensor({1, 1, 16, 16}, rng)));
  for (double x : u.tensor().data()) EXPECT_EQ(x, 0.0);
}

TEST(Forward, SpaceTimeModelOutputsFrames) {
  ModelConfig b = base2d(16, Variant::Uno, 4);
  Model m = build_uno_3d(4, {}, 16, 10, 50, 1.0, b);
  std::mt19937_64 rng(5);
  Tape t(false);
  Binder bind(t, false);
  Box box{{0, 0, 0}, {1, 1, 10}};
  auto a = make_grid_function(t, random_tensor({1, 1, 16, 16, 10}, rng), box,
                              {Boundary::Periodic, Boundary::Periodic, Boundary::Clamped});
  auto u = forward(bind, m, a);
  EXPECT_EQ(u.tensor().shape(), (Shape{1, 1, 16, 16, 40}));
  // Doubling the frame rate doubles both windows.
  auto a2 = make_grid_function(t, random_tensor({1, 1, 16, 16, 20}, rng), box,
                               {Boundary::Periodic, Boundary::Periodic, Boundary::Clamped});
  EXPECT_EQ(forward(bind, m, a2).tensor().shape(), (Shape{1, 1, 16, 16, 80}));
}

TEST(Forward, ChannelMismatchThrows) {
  Model m = build_model(base2d(16, Variant::Fno, 4));
  Tape t(false);
  Binder bind(t, false);
  EXPECT_THROW(forward(bind, m, periodic_input(t, Tensor(Shape{1, 2, 16, 16}))), ShapeError);
}

// Evaluating at 2x and subsampling reproduces the coarse evaluation.
TEST(Forward, ResolutionTransferOnBandLimitedInput) {
  for (Variant v : {Variant::Uno, Variant::UnoDagger, Variant::Fno}) {
    Model m = build_model(base2d(32, v, 8));
    Tape t(false);
    Binder bind(t, false);
    const Tensor coarse = forward(bind, m, periodic_input(t, band_limited(32, 9))).tensor();
    const Tensor fine = forward(bind, m, periodic_input(t, band_limited(64, 9))).tensor();
    Tensor sub(coarse.shape());
    for (std::size_t i = 0; i < 32; ++i)
      for (std::size_t j = 0; j < 32; ++j) sub.at(0, 0, i, j) = fine.at(0, 0, 2 * i, 2 * j);
    const double err = rel_l2(sub.data(), coarse.data());
    EXPECT_LT(err, 0.05) << variant_name(v);
    RecordProperty(variant_name(v), std::to_string(err));
    std::printf("%s transfer error %.4g\n", variant_name(v), err);
  }
}

TEST(ParamCount, SingleLayerCountingFormula) {
  ModelConfig c = base2d(64, Variant::Fno, 32);
  c.depth = 1;
  c.modes = {8};
  Model m = build_model(c);
  auto r = param_count(m);
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_EQ(r.rows[1].total(), 263200u);
  EXPECT_EQ(r.rows[1].spectral, 2u * 32 * 32 * 16 * 8);
}

TEST(ParamCount, ZeroLayerModelIsLiftAndProjection) {
  ModelConfig c = base2d(16, Variant::Fno, 32);
  c.depth = 0;
  Model m = build_model(c);
  auto r = param_count(m);
  ASSERT_EQ(r.rows.size(), 2u);
  // P: (1 + 4) -> 128 -> 32; Q: 32 -> 128 -> 1.
  const std::size_t p = 5 * 128 + 128 + 128 * 32 + 32, q = 32 * 128 + 128 + 128 * 1 + 1;
  EXPECT_EQ(r.total, p + q);
}

TEST(ParamCount, DaggerExceedsFnoAtMatchedModes) {
  auto count = [](Variant v) {
    ModelConfig c = base2d(64, v, 32);
    c.modes = {4};
    return param_count(c).total;
  };
  ModelConfig c = base2d(32, Variant::UnoDagger, 8);
  c.modes = {3};
  EXPECT_EQ(param_count(c).total, param_count(build_model(c)).total);
  EXPECT_GT(count(Variant::UnoDagger), 5 * count(Variant::Fno));
}

TEST(Memory, FnoLayerActivation) {
  Model m = build_model(base2d(64, Variant::Fno, 32));
  auto r = activation_memory_report(m, {64, 64}, 8);
  ASSERT_EQ(r.rows.size(), 9u);
  for (std::size_t i = 1; i <= 7; ++i) EXPECT_EQ(r.rows[i].activation_bytes, 1048576u);
}

TEST(Memory, OrderingAndMarginalCost) {
  auto total = [](Variant v, std::size_t depth) {
    ModelConfig c = base2d(64, v, 32);
    c.depth = depth;
    return double(activation_memory_report(c, plan_layers(c), {64, 64}, 8).total);
  };
  EXPECT_LT(total(Variant::UnoDagger, 7), total(Variant::Uno, 7));
  EXPECT_LT(total(Variant::Uno, 7), total(Variant::Fno, 7));
  const double dagger = total(Variant::UnoDagger, 8) - total(Variant::UnoDagger, 7);
  const double fno = total(Variant::Fno, 8) - total(Variant::Fno, 7);
  EXPECT_GT(dagger, 0);
  EXPECT_LT(dagger / fno, 0.5);
}

TEST(Memory, ZeroLayerModelHasOnlyLiftAndProjection) {
  ModelConfig c = base2d(16, Variant::Fno, 8);
  c.depth = 0;
  auto r = activation_memory_report(build_model(c), {16, 16}, 8);
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_EQ(r.rows[0].name, "P");
  EXPECT_EQ(r.rows[1].name, "Q");
}
