#include "oracles.hpp"
#include "rgbtcc/metrics.hpp"
#include "test_support.hpp"

#include <doctest.h>

using namespace rgbtcc;

namespace {

DensityMap uniform_map(Eigen::Index n, double v, Eigen::Index size) {
  DensityMap d;
  d.grid = Mat::Constant(n, n, v);
  d.source_height = d.source_width = size;
  return d;
}

}  // namespace

TEST_CASE("regional counts examples") {
  const DensityMap eight = uniform_map(8, 1.0, 256);
  CHECK(regional_counts(eight, 0) == std::vector<double>{64.0});
  CHECK(regional_counts(eight, 1) == std::vector<double>{16.0, 16.0, 16.0, 16.0});
  CHECK_THROWS_AS(regional_counts(eight, 4), std::invalid_argument);
  CHECK_THROWS_AS(regional_counts(eight, -1), std::invalid_argument);

  // 7x7 into 8x8 regions: against the exact 56x56 refinement.
  Rng rng(1);
  Mat g = rgbtcc::testing::random_mat(7, 7, rng).cwiseAbs();
  DensityMap d;
  d.grid = g;
  d.source_height = d.source_width = 224;
  for (int l = 0; l <= 3; ++l) {
    const auto got = regional_counts(d, l);
    const auto expect = oracle::raster_regions(g, l);
    REQUIRE(got.size() == expect.size());
    double total = 0.0;
    for (std::size_t r = 0; r < got.size(); ++r) {
      CHECK(std::abs(got[r] - expect[r]) < 1e-12);
      total += got[r];
    }
    CHECK(total == doctest::Approx(g.sum()).epsilon(1e-12));
  }

  const PointList pts{{0, 0}, {223.9, 0}, {224, 224}, {111.9, 112.1}};
  CHECK(regional_counts(pts, 224, 224, 1) == std::vector<double>{1, 1, 1, 1});
  CHECK(regional_counts(pts, 224, 224, 0) == std::vector<double>{4});
}

TEST_CASE("GAME and RMSE examples") {
  const std::vector<std::vector<double>> pred{{1, 2, 0, 2}};
  const std::vector<std::vector<double>> gt{{0, 1, 1, 1}};
  CHECK(game_from_regions(pred, gt) == 4.0);

  DensityMap five = uniform_map(1, 5.0, 64);
  GroundTruth three{{{1, 1}, {2, 2}, {3, 3}}, 64, 64};
  CHECK(game(std::span(&five, 1), std::span(&three, 1), 0) == 2.0);

  const std::vector<double> p{3, 14}, g{0, 10};
  CHECK(rmse(p, g) == doctest::Approx(std::sqrt(12.5)));
  const std::vector<double> p1{9}, g1{5};
  CHECK(rmse(p1, g1) == 4.0);
  CHECK(rmse(g, g) == 0.0);

  const std::vector<DensityMap> none{};
  CHECK_THROWS_AS(game(none, std::span<const GroundTruth>{}, 0), std::invalid_argument);
}

TEST_CASE("perfect predictions score zero at every level") {
  PointList pts;
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) pts.push_back({32.0 * j + 5.0, 32.0 * i + 7.0});
  DensityMap d = uniform_map(8, 1.0, 256);
  GroundTruth gt{pts, 256, 256};
  const MetricReport r = evaluate_metrics(std::span(&d, 1), std::span(&gt, 1));
  for (double v : r.game) CHECK(v == doctest::Approx(0.0).scale(1.0));
  CHECK(r.rmse == 0.0);
  CHECK(r.n_images == 1);
}

TEST_CASE("randomized instances against direct evaluation") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const oracle::MetricInstance m = oracle::random_metric_instance(rng);
    const double h = static_cast<double>(m.gts[0].height);
    const double w = static_cast<double>(m.gts[0].width);
    const MetricReport r = evaluate_metrics(m.preds, m.gts);
    double mae = 0.0;
    for (std::size_t i = 0; i < m.preds.size(); ++i)
      mae += std::abs(m.grids[i].sum() - static_cast<double>(m.points[i].size()));
    mae /= static_cast<double>(m.preds.size());
    for (int l = 0; l <= 3; ++l) {
      CHECK(std::abs(r.game[static_cast<std::size_t>(l)] - oracle::direct_game(m.grids, m.points, h, w, l)) < 1e-9);
      if (l > 0) CHECK(r.game[static_cast<std::size_t>(l)] >= r.game[static_cast<std::size_t>(l - 1)] - 1e-12);
    }
    CHECK(std::abs(r.game[0] - mae) < 1e-9);
    CHECK(std::abs(r.rmse - oracle::direct_rmse(m.grids, m.points)) < 1e-9);

    // k extra persons of error on one image moves GAME(0) by k / N.
    std::vector<DensityMap> shifted = m.preds;
    const double k = 3.0;
    const double before = m.grids[0].sum() - static_cast<double>(m.points[0].size());
    shifted[0].grid(0, 0) += before >= 0.0 ? k : 0.0;
    if (before >= 0.0)
      CHECK(game(shifted, m.gts, 0) == doctest::Approx(r.game[0] + k / static_cast<double>(m.preds.size())));
  }
}

TEST_CASE("metric table formats") {
  MetricReport r;
  r.game = {10.904, 14.16, 19.19, 26.0};
  r.rmse = 18.789;
  r.n_images = 2;
  const std::vector<std::string> names{"full"};
  const std::string table = format_metric_table(names, std::span(&r, 1));
  CHECK(table.find("GAME(0)") != std::string::npos);
  CHECK(table.find("RMSE") != std::string::npos);
  CHECK(table.find("10.90") != std::string::npos);
  CHECK(table.find("18.79") != std::string::npos);
  const std::string kv = format_metric_keyvalues(r);
  CHECK(kv.find("game0 = 10.904") != std::string::npos);
  CHECK(kv.find("n_images = 2") != std::string::npos);
}
