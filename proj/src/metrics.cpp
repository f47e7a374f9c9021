#include "rgbtcc/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace rgbtcc {

std::vector<double> regional_counts(const DensityMap& d, int level) { return regional_counts(d.grid, level); }

std::vector<double> regional_counts(const PointList& points, Eigen::Index height, Eigen::Index width, int level) {
  if (level < 0 || level > kMaxGameLevel) throw std::invalid_argument("GAME level must be in [0, 3]");
  if (height <= 0 || width <= 0) throw std::invalid_argument("regional_counts: invalid image size");
  const Eigen::Index regions = Eigen::Index{1} << level;
  std::vector<double> out(static_cast<std::size_t>(regions * regions), 0.0);
  for (const Point& p : points) {
    auto rx = static_cast<Eigen::Index>(std::floor(p.x * static_cast<double>(regions) / static_cast<double>(width)));
    auto ry = static_cast<Eigen::Index>(std::floor(p.y * static_cast<double>(regions) / static_cast<double>(height)));
    rx = std::clamp<Eigen::Index>(rx, 0, regions - 1);
    ry = std::clamp<Eigen::Index>(ry, 0, regions - 1);
    out[static_cast<std::size_t>(ry * regions + rx)] += 1.0;
  }
  return out;
}

double game_from_regions(std::span<const std::vector<double>> pred, std::span<const std::vector<double>> gt) {
  if (pred.size() != gt.size() || pred.empty()) throw std::invalid_argument("GAME: need equal, non-empty image lists");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].size() != gt[i].size()) throw std::invalid_argument("GAME: region count mismatch");
    for (std::size_t j = 0; j < pred[i].size(); ++j) total += std::abs(pred[i][j] - gt[i][j]);
  }
  return total / static_cast<double>(pred.size());
}

double game(std::span<const DensityMap> preds, std::span<const GroundTruth> gts, int level) {
  if (preds.size() != gts.size() || preds.empty()) throw std::invalid_argument("GAME: need equal, non-empty image lists");
  std::vector<std::vector<double>> p;
  std::vector<std::vector<double>> g;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    p.push_back(regional_counts(preds[i], level));
    g.push_back(regional_counts(gts[i].points, gts[i].height, gts[i].width, level));
  }
  return game_from_regions(p, g);
}

double rmse(std::span<const double> pred_counts, std::span<const double> gt_counts) {
  if (pred_counts.size() != gt_counts.size() || pred_counts.empty())
    throw std::invalid_argument("RMSE: need equal, non-empty count lists");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred_counts.size(); ++i) {
    const double e = pred_counts[i] - gt_counts[i];
    acc += e * e;
  }
  return std::sqrt(acc / static_cast<double>(pred_counts.size()));
}

double rmse(std::span<const DensityMap> preds, std::span<const GroundTruth> gts) {
  if (preds.size() != gts.size()) throw std::invalid_argument("RMSE: need equal image lists");
  std::vector<double> p;
  std::vector<double> g;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    p.push_back(predicted_count(preds[i]));
    g.push_back(static_cast<double>(gts[i].points.size()));
  }
  return rmse(p, g);
}

MetricReport evaluate_metrics(std::span<const DensityMap> preds, std::span<const GroundTruth> gts) {
  MetricReport r;
  for (int l = 0; l <= kMaxGameLevel; ++l) r.game[l] = game(preds, gts, l);
  r.rmse = rmse(preds, gts);
  r.n_images = preds.size();
  return r;
}

std::string format_metric_table(std::span<const std::string> row_names, std::span<const MetricReport> reports) {
  std::size_t width = 7;
  for (const auto& n : row_names) width = std::max(width, n.size());
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s | %8s %8s %8s %8s %8s\n", static_cast<int>(width), "Variant", "GAME(0)",
                "GAME(1)", "GAME(2)", "GAME(3)", "RMSE");
  os << buf << std::string(width + 48, '-') << '\n';
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const MetricReport& r = reports[i];
    std::snprintf(buf, sizeof buf, "%-*s | %8.2f %8.2f %8.2f %8.2f %8.2f\n", static_cast<int>(width),
                  row_names[i].c_str(), r.game[0], r.game[1], r.game[2], r.game[3], r.rmse);
    os << buf;
  }
  return os.str();
}

std::string format_metric_keyvalues(const MetricReport& report) {
  std::ostringstream os;
  os.precision(17);
  for (int l = 0; l <= kMaxGameLevel; ++l) os << "game" << l << " = " << report.game[l] << '\n';
  os << "rmse = " << report.rmse << '\n';
  os << "n_images = " << report.n_images << '\n';
  return os.str();
}

}  // namespace rgbtcc
