#include "rgbtcc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace rgbtcc {

TrainingDiverged::TrainingDiverged(int step, const LossReport& r, const std::string& detail)
    : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + detail +
                         " (loss=" + std::to_string(r.total) + " count=" + std::to_string(r.count_term) +
                         " ot=" + std::to_string(r.ot_term) + " tv=" + std::to_string(r.tv_term) +
                         " ctoken=" + std::to_string(r.count_token_term) + ")"),
      step_(step) {}

namespace {

bool finite(const LossReport& r) {
  return std::isfinite(r.total) && std::isfinite(r.count_term) && std::isfinite(r.ot_term) &&
         std::isfinite(r.tv_term) && std::isfinite(r.count_token_term);
}

std::vector<Mat> snapshot(const ParamSet& params) {
  std::vector<Mat> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p->value);
  return out;
}

void restore(ParamSet& params, const std::vector<Mat>& values) {
  std::size_t i = 0;
  for (auto& p : params) p->value = values[i++];
}

double game0(const Model& model, std::span<const Sample> samples) {
  const Predictions p = predict_all(model, samples);
  return game(p.maps, p.truth, 0);
}

void write_log_line(std::ostream& os, int step, const LossReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d %.9g %.9g %.9g %.9g %.9g\n", step, r.total, r.count_term, r.ot_term, r.tv_term,
                r.count_token_term);
  os << buf;
}

}  // namespace

LossReport accumulate_batch(const Model& model, std::span<const Sample* const> batch) {
  LossReport mean;
  const double w = 1.0 / static_cast<double>(batch.size());
  for (const Sample* s : batch) {
    Tape tape;
    ModelOutput out = model.forward(tape, s->rgb, s->thermal);
    LossResult loss = total_loss(out.density, s->gt_mass, out.count_pred, model.config().loss);
    if (!finite(loss.report)) return loss.report;
    tape.backward(scale(loss.total, w));
    mean.total += w * loss.report.total;
    mean.count_term += w * loss.report.count_term;
    mean.ot_term += w * loss.report.ot_term;
    mean.tv_term += w * loss.report.tv_term;
    mean.count_token_term += w * loss.report.count_token_term;
  }
  return mean;
}

TrainResult train(Model& model, std::span<const Sample> train_set, std::span<const Sample> val,
                  const TrainOptions& options) {
  const RunConfig& cfg = model.config();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  AdamW optimizer(model.params(), cfg.optimizer);
  Rng rng(cfg.seed ^ 0x5851f42d4c957f2dULL);

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  const std::size_t batch_size = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), train_set.size());

  TrainResult result;
  result.best_val_game0 = std::numeric_limits<double>::infinity();
  std::vector<Mat> best;
  int stale = 0;
  std::vector<const Sample*> batch;

  for (int step = 1; step <= cfg.max_steps; ++step) {
    batch.clear();
    while (batch.size() < batch_size) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(&train_set[order[cursor++]]);
    }
    model.params().zero_grad();
    LossReport report = accumulate_batch(model, batch);
    if (!finite(report)) throw TrainingDiverged(step, report, "non-finite loss");
    optimizer.step();
    result.steps = step;
    result.last = report;
    if (options.log != nullptr) write_log_line(*options.log, step, report);

    if (step % cfg.eval_every != 0 && step != cfg.max_steps) continue;
    if (options.stop_below_train_game0 >= 0.0) {
      const double g = game0(model, train_set);
      if (options.progress != nullptr) *options.progress << "step " << step << " train GAME(0) " << g << '\n';
      if (g < options.stop_below_train_game0) break;
    }
    if (val.empty()) continue;
    const double g = game0(model, val);
    if (options.progress != nullptr) *options.progress << "step " << step << " val GAME(0) " << g << '\n';
    if (g < result.best_val_game0) {
      result.best_val_game0 = g;
      result.best_step = step;
      best = snapshot(model.params());
      stale = 0;
    } else if (++stale >= cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }
  if (!best.empty()) restore(model.params(), best);
  if (val.empty()) result.best_val_game0 = 0.0;
  if (options.checkpoint) save_checkpoint(*options.checkpoint, model, static_cast<std::uint64_t>(result.steps),
                                          &optimizer.state());
  return result;
}

Predictions predict_all(const Model& model, std::span<const Sample> samples) {
  Predictions p;
  for (const Sample& s : samples) {
    p.maps.push_back(model.predict(s.rgb, s.thermal));
    p.truth.push_back(GroundTruth{s.points, s.rgb.height, s.rgb.width});
  }
  return p;
}

MetricReport evaluate(const Model& model, std::span<const Sample> samples) {
  if (samples.empty()) throw std::invalid_argument("evaluate: empty sample set");
  const Predictions p = predict_all(model, samples);
  return evaluate_metrics(p.maps, p.truth);
}

std::vector<Variant> ablation_variants() {
  return {Variant::baseline, Variant::mst, Variant::msd, Variant::full, Variant::no_count, Variant::no_multiscale};
}

std::vector<AblationRow> ablate(const RunConfig& config, std::span<const Variant> variants,
                                std::span<const Sample> train_set, std::span<const Sample> val,
                                std::span<const Sample> test, std::ostream* progress) {
  std::vector<AblationRow> rows;
  for (Variant v : variants) {
    RunConfig c = config;
    c.apply_variant(v);
    auto model = assemble_model(c);
    if (progress != nullptr) *progress << "variant " << to_string(v) << '\n';
    AblationRow row;
    row.variant = v;
    row.param_count = model->params().scalar_count();
    TrainOptions opts;
    opts.progress = progress;
    row.training = train(*model, train_set, val, opts);
    row.test = evaluate(*model, test);
    rows.push_back(row);
  }
  return rows;
}

std::string format_ablation_table(std::span<const AblationRow> rows) {
  std::vector<std::string> names;
  std::vector<MetricReport> reports;
  for (const auto& r : rows) {
    const AblationFlags f = flags_for(r.variant);
    names.push_back(to_string(r.variant) + (f.use_mst ? " [mst" : " [   ") + (f.use_msd ? " msd" : "    ") +
                    (count_token_active(f) ? " cnt" : "    ") + (f.use_mst && f.use_multiscale ? " ms]" : "   ]"));
    reports.push_back(r.test);
  }
  std::ostringstream os;
  os << format_metric_table(names, reports);
  os << "\nparameters / steps\n";
  for (const auto& r : rows)
    os << "  " << to_string(r.variant) << ": " << r.param_count << " params, " << r.training.steps << " steps\n";
  return os.str();
}

}  // namespace rgbtcc
