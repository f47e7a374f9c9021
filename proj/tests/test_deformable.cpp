#include "oracles.hpp"
#include "rgbtcc/deformable.hpp"
#include "test_support.hpp"

#include <doctest.h>

using namespace rgbtcc;
using rgbtcc::testing::project;
using rgbtcc::testing::random_mat;

namespace {

struct Fixture {
  DeformConfig cfg;
  ParamSet params;
  DeformableEnhance enhance;
  std::array<GridShape, 4> shapes{GridShape{2, 2}, GridShape{4, 4}, GridShape{8, 8}, GridShape{16, 16}};
  std::array<Mat, 4> raw;

  explicit Fixture(Rng& rng, Eigen::Index c = 8)
      : cfg([c] {
          DeformConfig d;
          d.channels = c;
          d.heads = 2;
          d.points = 2;
          return d;
        }()),
        enhance(params, "d", cfg, {c, 3, 5, 4}) {
    enhance.init(rng);
    for (auto& p : params) p->value += random_mat(p->value.rows(), p->value.cols(), rng, 0.1);
    const Eigen::Index widths[4] = {c, 3, 5, 4};
    for (int l = 0; l < 4; ++l)
      raw[static_cast<std::size_t>(l)] = random_mat(shapes[static_cast<std::size_t>(l)].cells(), widths[l], rng);
  }

  std::array<Var, 4> leaves(Tape& t) const {
    return {t.constant(raw[0]), t.constant(raw[1]), t.constant(raw[2]), t.constant(raw[3])};
  }
};

}  // namespace

TEST_CASE("bilinear lookup examples") {
  Mat one(1, 1);
  one << 3.0;
  CHECK(bilinear_sample(one, 1, 1, 0.5, 0.5)(0) == doctest::Approx(3.0));
  Mat g(4, 1);
  g << 1, 2, 3, 4;
  CHECK(bilinear_sample(g, 2, 2, 0.5, 0.5)(0) == doctest::Approx(2.5));
  CHECK(bilinear_sample(g, 2, 2, 0.25, 0.25)(0) == doctest::Approx(1.0));
  CHECK(bilinear_sample(g, 2, 2, 0.75, 0.25)(0) == doctest::Approx(2.0));
  CHECK(bilinear_sample(g, 2, 2, 5.0, -3.0)(0) == 0.0);
  // Half a cell past the border: half the edge value, the rest is padding.
  CHECK(bilinear_sample(one, 1, 1, 1.0, 0.5)(0) == doctest::Approx(1.5));

  Rng rng(1);
  const Mat grid = random_mat(12, 3, rng);
  std::uniform_real_distribution<double> u(-0.3, 1.3);
  for (int i = 0; i < 200; ++i) {
    const double x = u(rng);
    const double y = u(rng);
    CHECK((bilinear_sample(grid, 3, 4, x, y) - oracle::bilinear(grid, 3, 4, x, y)).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("reference points and value layout") {
  const Mat r1 = reference_points_for(1, true);
  REQUIRE(r1.rows() == 2);
  CHECK(r1(0, 0) == 0.5);
  CHECK(r1(0, 1) == 0.5);
  CHECK(r1(1, 0) == 0.5);
  const Mat r2 = reference_points_for(2, false);
  REQUIRE(r2.rows() == 4);
  CHECK(r2(1, 0) == 0.75);
  CHECK(r2(1, 1) == 0.25);
  CHECK(r2(2, 0) == 0.25);
  CHECK(r2(2, 1) == 0.75);

  for (Eigen::Index n : {1, 2, 7}) {
    Rng rng(2);
    DeformConfig cfg;
    cfg.channels = 8;
    ParamSet params;
    DeformableEnhance enhance(params, "d", cfg, {8, 8, 8, 8});
    enhance.init(rng);
    const std::array<GridShape, 4> shapes{GridShape{n, n}, GridShape{2 * n, 2 * n}, GridShape{4 * n, 4 * n},
                                          GridShape{8 * n, 8 * n}};
    Tape tape;
    std::array<Var, 4> levels;
    for (int l = 0; l < 4; ++l) levels[static_cast<std::size_t>(l)] = tape.constant(random_mat(shapes[static_cast<std::size_t>(l)].cells(), 8, rng));
    const MultiScaleValueSet v = enhance.project_levels(tape, levels, shapes);
    CHECK(v.values.rows() == 85 * n * n);
    CHECK(v.starts == std::vector<Eigen::Index>{0, n * n, 5 * n * n, 21 * n * n});
    CHECK(params.scalar_count() == deformable_param_count(cfg, {8, 8, 8, 8}));
  }
}

TEST_CASE("constructed parameters reduce the layer to averaged bilinear samples") {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) CHECK(oracle::deformable_reduction_deviation(seed) < 1e-12);
  CHECK(oracle::deformable_reduction_deviation(9, 4, 1, 1) < 1e-12);
  CHECK(oracle::deformable_reduction_deviation(10, 12, 4, 4) < 1e-12);
}

TEST_CASE("single level, single point picks one bilinear sample") {
  Rng rng(3);
  const Eigen::Index c = 4;
  Mat grid = random_mat(9, c, rng);
  Tape tape;
  MultiScaleValueSet values{tape.constant(grid), {GridShape{3, 3}}, {0}};
  Mat loc(1, 2);
  loc << 0.4, 0.7;
  Mat w = Mat::Ones(1, 1);
  const Mat out = deform_sample(values, tape.constant(loc), tape.constant(w), 1, 1).value();
  CHECK((out - oracle::bilinear(grid, 3, 3, 0.4, 0.7)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("attention weights sum to one per head and query") {
  Rng rng(4);
  Fixture fx(rng);
  Tape tape;
  const auto levels = fx.leaves(tape);
  const MultiScaleValueSet values = fx.enhance.layer_values(tape, 0, levels, fx.shapes);
  DeformTrace trace;
  fx.enhance.layer_forward(tape, 0, QuerySet{tape.constant(random_mat(5, 8, rng)), reference_points_for(2, true)},
                           values, &trace);
  const Eigen::Index per_head = 4 * fx.cfg.points;
  REQUIRE(trace.attention.cols() == fx.cfg.heads * per_head);
  for (Eigen::Index q = 0; q < 5; ++q)
    for (Eigen::Index h = 0; h < fx.cfg.heads; ++h) {
      CHECK(trace.attention.row(q).segment(h * per_head, per_head).sum() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(trace.attention.row(q).segment(h * per_head, per_head).minCoeff() > 0.0);
    }
}

TEST_CASE("queries and values play different roles") {
  Rng rng(5);
  Fixture fx(rng);
  Tape tape;
  const auto levels = fx.leaves(tape);
  const Mat g_t = random_mat(4, 8, rng);
  FeaturePyramid color;
  color.levels = {levels[3], levels[2], levels[1], levels[0]};
  color.shapes = {fx.shapes[3], fx.shapes[2], fx.shapes[1], fx.shapes[0]};
  const Mat base = fx.enhance.forward(tape, tape.constant(g_t), nullptr, levels[0], color).o_t.value();
  // Changing the color memory changes the output even with the queries fixed,
  // and swapping query and memory at the top level gives a different result.
  FeaturePyramid other = color;
  other.levels[0] = tape.constant(fx.raw[3] * 2.0);
  CHECK((fx.enhance.forward(tape, tape.constant(g_t), nullptr, levels[0], other).o_t.value() - base).norm() > 1e-6);
  const Mat swapped = fx.enhance.forward(tape, levels[0], nullptr, tape.constant(g_t), color).o_t.value();
  CHECK((swapped - base).norm() > 1e-6);
  CHECK(base.rows() == 4);
}

TEST_CASE("composed value memory equals value_proj of the projected levels") {
  Rng rng(6);
  Fixture fx(rng);
  Tape tape;
  const auto levels = fx.leaves(tape);
  const MultiScaleValueSet composed = fx.enhance.layer_values(tape, 0, levels, fx.shapes);
  const MultiScaleValueSet plain = fx.enhance.project_levels(tape, levels, fx.shapes);
  const Mat expect = fx.enhance.attn_params(0).value_proj(tape, plain.values).value();
  CHECK((composed.values.value() - expect).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(composed.starts == plain.starts);
}

TEST_CASE("deformable gradients match finite differences") {
  Rng rng(7);
  Fixture fx(rng);
  const Mat queries = random_mat(5, 8, rng);
  const Mat probe = random_mat(5, 8, rng);
  const Mat refs = reference_points_for(2, true);
  auto run = [&](Tape& t, const Var& q, const std::array<Var, 4>& levels) {
    const MultiScaleValueSet v = fx.enhance.layer_values(t, 0, levels, fx.shapes);
    return project(t, fx.enhance.layer_forward(t, 0, QuerySet{q, refs}, v), probe);
  };
  std::string worst;
  const double dev = rgbtcc::testing::param_grad_deviation(
      fx.params, [&](Tape& t) { return run(t, t.constant(queries), fx.leaves(t)); }, 1e-5, 1e-6, &worst);
  INFO(worst);
  CHECK(dev < 1e-4);
  CHECK(rgbtcc::testing::input_grad_deviation([&](Tape& t, const Var& q) { return run(t, q, fx.leaves(t)); },
                                              queries, 1e-5) < 1e-4);
  CHECK(rgbtcc::testing::input_grad_deviation(
            [&](Tape& t, const Var& x) {
              auto levels = fx.leaves(t);
              levels[2] = x;
              return run(t, t.constant(queries), levels);
            },
            fx.raw[2], 1e-5) < 1e-4);

  // All four level projections receive gradient.
  fx.params.zero_grad();
  Tape tape;
  tape.backward(run(tape, tape.constant(queries), fx.leaves(tape)));
  for (int l = 0; l < 4; ++l) CHECK(fx.enhance.level_projection(l).weight->grad.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("invalid configurations") {
  DeformConfig cfg;
  cfg.channels = 10;
  cfg.heads = 4;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = DeformConfig{};
  cfg.points = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  Rng rng(8);
  Fixture fx(rng);
  Tape tape;
  auto levels = fx.leaves(tape);
  levels[1] = tape.constant(random_mat(15, 3, rng));
  CHECK_THROWS_AS(fx.enhance.layer_values(tape, 0, levels, fx.shapes), std::invalid_argument);
}
