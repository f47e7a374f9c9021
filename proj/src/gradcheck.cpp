#include "rgbtcc/gradcheck.hpp"

#include "rgbtcc/losses.hpp"
#include "rgbtcc/model.hpp"
#include "rgbtcc/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace rgbtcc {

RunConfig gradcheck_config() {
  RunConfig c;
  c.image_size = 64;
  c.backbone.stage_channels = {4, 4, 8, 8};
  c.fusion_heads = 2;
  c.deform_heads = 2;
  c.deform_points = 2;
  c.seed = 7;
  return c;
}

std::string param_group(const std::string& name) {
  const auto dot = name.rfind('.');
  return dot == std::string::npos ? name : name.substr(0, dot);
}

GradcheckReport run_gradcheck(const RunConfig& config, const GradcheckOptions& options) {
  auto model = assemble_model(config);
  Rng rng(config.seed + 1);
  std::normal_distribution<double> noise(0.0, options.param_noise);
  for (auto& p : model->params())
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] += noise(rng);

  SceneConfig scene;
  scene.height = scene.width = config.image_size;
  scene.min_people = 3;
  scene.max_people = 6;
  scene.tags = {SceneTag::thermal_clutter, SceneTag::scale_variation};
  const ScenePair pair = generate_scene(config.seed, scene);
  const Mat gt = bin_points_to_grid(pair.points, pair.rgb.height, pair.rgb.width, config.grid_n());

  auto loss_value = [&]() {
    Tape tape;
    ModelOutput out = model->forward(tape, pair.rgb, pair.thermal);
    return total_loss(out.density, gt, out.count_pred, config.loss).total.scalar();
  };

  model->params().zero_grad();
  GradcheckReport report;
  {
    Tape tape;
    ModelOutput out = model->forward(tape, pair.rgb, pair.thermal);
    LossResult loss = total_loss(out.density, gt, out.count_pred, config.loss);
    tape.backward(loss.total);
    report.loss = loss.total.scalar();
  }

  std::map<std::string, GradGroupResult> groups;
  std::vector<std::string> order;
  for (auto& p : model->params()) {
    const std::string g = param_group(p->name);
    if (!groups.count(g)) {
      order.push_back(g);
      groups[g].group = g;
    }
    GradGroupResult& r = groups[g];
    const Eigen::Index n = p->value.size();
    const Eigen::Index count = options.max_entries > 0 ? std::min(n, options.max_entries) : n;
    for (Eigen::Index k = 0; k < count; ++k) {
      const Eigen::Index i = count == n ? k : (k * n) / count;
      double& x = p->value.data()[i];
      const double saved = x;
      x = saved + options.step;
      const double up = loss_value();
      x = saved - options.step;
      const double down = loss_value();
      x = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double analytic = p->grad.data()[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), options.floor});
      r.max_rel_dev = std::max(r.max_rel_dev, std::abs(analytic - numeric) / denom);
      r.max_abs_grad = std::max(r.max_abs_grad, std::abs(analytic));
      ++r.entries;
    }
  }
  for (const auto& g : order) {
    GradGroupResult r = groups[g];
    r.pass = r.max_rel_dev <= options.rel_tol;
    report.pass = report.pass && r.pass;
    report.groups.push_back(r);
  }
  return report;
}

std::string format_gradcheck(const GradcheckReport& report, double rel_tol) {
  std::ostringstream os;
  std::size_t width = 5;
  for (const auto& g : report.groups) width = std::max(width, g.group.size());
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-*s %8s %12s %12s  %s\n", static_cast<int>(width), "group", "entries", "max_rel_dev",
                "max|grad|", "status");
  os << buf;
  for (const auto& g : report.groups) {
    std::snprintf(buf, sizeof buf, "%-*s %8ld %12.3e %12.3e  %s\n", static_cast<int>(width), g.group.c_str(),
                  static_cast<long>(g.entries), g.max_rel_dev, g.max_abs_grad, g.pass ? "ok" : "FAIL");
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "loss %.9g, tolerance %.1e: %s\n", report.loss, rel_tol,
                report.pass ? "PASS" : "FAIL");
  os << buf;
  return os.str();
}

}  // namespace rgbtcc
