#include "rgbtcc/deformable.hpp"

#include <algorithm>
#include <numbers>
#include <stdexcept>

namespace rgbtcc {

void DeformConfig::validate() const {
  if (channels < 1 || heads < 1 || channels % heads != 0)
    throw std::invalid_argument("deformable: channels must be divisible by heads");
  if (points < 1) throw std::invalid_argument("deformable: need at least one sampling point");
  if (levels != 4) throw std::invalid_argument("deformable: exactly four value levels are supported");
  if (layers < 1) throw std::invalid_argument("deformable: need at least one layer");
}

Mat reference_points_for(Eigen::Index n, bool with_count) {
  Mat refs(n * n + (with_count ? 1 : 0), 2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      refs(i * n + j, 0) = (static_cast<double>(j) + 0.5) / static_cast<double>(n);
      refs(i * n + j, 1) = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    }
  if (with_count) refs.row(n * n) << 0.5, 0.5;
  return refs;
}

Var deform_sample(const MultiScaleValueSet& values, const Var& locations, const Var& weights,
                  Eigen::Index heads, Eigen::Index points) {
  const Eigen::Index n_levels = static_cast<Eigen::Index>(values.shapes.size());
  const Eigen::Index lq = locations.rows();
  const Eigen::Index c = values.values.cols();
  const Eigen::Index dh = c / heads;
  const Eigen::Index n_samples = heads * n_levels * points;
  if (locations.cols() != 2 * n_samples || weights.cols() != n_samples || weights.rows() != lq)
    throw std::invalid_argument("deform_sample: location/weight layout mismatch");

  const Mat& v = values.values.value();
  const Mat& loc = locations.value();
  const Mat& att = weights.value();
  Mat out = Mat::Zero(lq, c);
  for (Eigen::Index q = 0; q < lq; ++q)
    for (Eigen::Index h = 0; h < heads; ++h)
      for (Eigen::Index l = 0; l < n_levels; ++l) {
        const GridShape& s = values.shapes[l];
        for (Eigen::Index k = 0; k < points; ++k) {
          const Eigen::Index idx = (h * n_levels + l) * points + k;
          const BilinearTaps<double> taps(s.height, s.width, loc(q, 2 * idx), loc(q, 2 * idx + 1));
          const double a = att(q, idx);
          for (int t = 0; t < 4; ++t)
            if (taps.inside[t])
              out.row(q).segment(h * dh, dh) +=
                  (a * taps.weight[t]) * v.row(values.starts[l] + taps.index[t]).segment(h * dh, dh);
        }
      }

  Node* nv = values.values.node();
  Node* nl = locations.node();
  Node* nw = weights.node();
  const std::vector<GridShape> shapes = values.shapes;
  const std::vector<Eigen::Index> starts = values.starts;
  return locations.tape()->record(
      std::move(out), [nv, nl, nw, shapes, starts, heads, points, n_levels, lq, dh](const Mat& g) {
        const Mat& v = nv->value();
        const Mat& loc = nl->value();
        const Mat& att = nw->value();
        Mat& gv = nv->grad_ref();
        Mat& gl = nl->grad_ref();
        Mat& gw = nw->grad_ref();
        for (Eigen::Index q = 0; q < lq; ++q)
          for (Eigen::Index h = 0; h < heads; ++h) {
            const auto gq = g.row(q).segment(h * dh, dh);
            for (Eigen::Index l = 0; l < n_levels; ++l) {
              const GridShape& s = shapes[l];
              for (Eigen::Index k = 0; k < points; ++k) {
                const Eigen::Index idx = (h * n_levels + l) * points + k;
                const BilinearTaps<double> taps(s.height, s.width, loc(q, 2 * idx), loc(q, 2 * idx + 1));
                const double a = att(q, idx);
                double g_sample = 0.0;
                double g_x = 0.0;
                double g_y = 0.0;
                for (int t = 0; t < 4; ++t) {
                  if (!taps.inside[t]) continue;
                  const Eigen::Index row = starts[l] + taps.index[t];
                  const double dot = gq.dot(v.row(row).segment(h * dh, dh));
                  g_sample += taps.weight[t] * dot;
                  g_x += taps.dwx[t] * dot;
                  g_y += taps.dwy[t] * dot;
                  gv.row(row).segment(h * dh, dh) += (a * taps.weight[t]) * gq;
                }
                gw(q, idx) += g_sample;
                gl(q, 2 * idx) += a * g_x;
                gl(q, 2 * idx + 1) += a * g_y;
              }
            }
          }
      });
}

Var deform_attn_projected(Tape& tape, const QuerySet& queries, const MultiScaleValueSet& values,
                          const DeformAttnParams& p, const DeformConfig& config, DeformTrace* trace) {
  const Eigen::Index lq = queries.tokens.rows();
  const Eigen::Index n_levels = static_cast<Eigen::Index>(values.shapes.size());
  const Eigen::Index per_head = n_levels * config.points;
  const Eigen::Index n_samples = config.heads * per_head;
  if (queries.reference_points.rows() != lq || queries.reference_points.cols() != 2)
    throw std::invalid_argument("deform_attn: reference points must be [Lq, 2]");

  // Offsets are expressed in units of the level's cells.
  Mat scale_row(1, 2 * n_samples);
  Mat ref_base(lq, 2 * n_samples);
  for (Eigen::Index h = 0; h < config.heads; ++h)
    for (Eigen::Index l = 0; l < n_levels; ++l)
      for (Eigen::Index k = 0; k < config.points; ++k) {
        const Eigen::Index idx = (h * n_levels + l) * config.points + k;
        scale_row(0, 2 * idx) = 1.0 / static_cast<double>(values.shapes[l].width);
        scale_row(0, 2 * idx + 1) = 1.0 / static_cast<double>(values.shapes[l].height);
        ref_base.col(2 * idx) = queries.reference_points.col(0);
        ref_base.col(2 * idx + 1) = queries.reference_points.col(1);
      }
  Mat scale_mat = scale_row.replicate(lq, 1);

  Var offsets = p.offsets(tape, queries.tokens);
  Var locations = add(cwise_mul(offsets, tape.constant(std::move(scale_mat))), tape.constant(std::move(ref_base)));
  Var logits = p.logits(tape, queries.tokens);
  Var weights = reshape(softmax_rows(reshape(logits, lq * config.heads, per_head)), lq, n_samples);
  if (trace != nullptr) {
    trace->attention = weights.value();
    trace->locations = locations.value();
  }
  return p.out_proj(tape, deform_sample(values, locations, weights, config.heads, config.points));
}

Var deform_attn_core(Tape& tape, const QuerySet& queries, const MultiScaleValueSet& values,
                     const DeformAttnParams& p, const DeformConfig& config, DeformTrace* trace) {
  MultiScaleValueSet projected = values;
  projected.values = p.value_proj(tape, values.values);
  return deform_attn_projected(tape, queries, projected, p, config, trace);
}

DeformableEnhance::DeformableEnhance(ParamSet& params, std::string prefix, const DeformConfig& config,
                                     const std::array<Eigen::Index, 4>& level_channels)
    : config_(config), prefix_(std::move(prefix)) {
  config_.validate();
  const Eigen::Index c = config_.channels;
  for (int l = 0; l < 4; ++l)
    level_proj_[l] = Linear(params, prefix_ + ".level_proj" + std::to_string(l), level_channels[l], c);
  const Eigen::Index n_samples = config_.heads * config_.levels * config_.points;
  for (Eigen::Index i = 0; i < config_.layers; ++i) {
    const std::string base = prefix_ + ".layer" + std::to_string(i);
    layers_.push_back(Layer{LayerNorm(params, base + ".ln1", c),
                            DeformAttnParams{Linear(params, base + ".attn.value_proj", c, c),
                                             Linear(params, base + ".attn.offsets", c, 2 * n_samples),
                                             Linear(params, base + ".attn.logits", c, n_samples),
                                             Linear(params, base + ".attn.out_proj", c, c)},
                            LayerNorm(params, base + ".ln2", c), Mlp(params, base + ".ffn", c, 2 * c, c)});
  }
}

void DeformableEnhance::init(Rng& rng) {
  for (const Linear& l : level_proj_) l.init(rng);
  for (Layer& layer : layers_) {
    layer.ln1.init();
    layer.ln2.init();
    layer.ffn.init(rng);
    layer.attn.value_proj.init(rng);
    layer.attn.out_proj.init(rng);
    // Zero offset weights with a radial bias pattern: head h looks along angle
    // 2*pi*h/H, point k at distance k+1 cells.
    init_constant(*layer.attn.offsets.weight, 0.0);
    Mat& bias = layer.attn.offsets.bias->value;
    for (Eigen::Index h = 0; h < config_.heads; ++h) {
      const double theta = 2.0 * std::numbers::pi * static_cast<double>(h) / static_cast<double>(config_.heads);
      double dx = std::cos(theta);
      double dy = std::sin(theta);
      const double m = std::max(std::abs(dx), std::abs(dy));
      dx /= m;
      dy /= m;
      for (Eigen::Index l = 0; l < config_.levels; ++l)
        for (Eigen::Index k = 0; k < config_.points; ++k) {
          const Eigen::Index idx = (h * config_.levels + l) * config_.points + k;
          bias(0, 2 * idx) = dx * static_cast<double>(k + 1);
          bias(0, 2 * idx + 1) = dy * static_cast<double>(k + 1);
        }
    }
    init_constant(*layer.attn.logits.weight, 0.0);
    init_constant(*layer.attn.logits.bias, 0.0);
  }
}

MultiScaleValueSet DeformableEnhance::project_levels(Tape& tape, const std::array<Var, 4>& levels,
                                                     const std::array<GridShape, 4>& shapes) const {
  MultiScaleValueSet out;
  std::vector<Var> parts;
  Eigen::Index start = 0;
  for (int l = 0; l < 4; ++l) {
    if (levels[l].rows() != shapes[l].cells())
      throw std::invalid_argument("project_levels: level " + std::to_string(l) + " token count mismatch");
    if (levels[l].cols() != level_proj_[l].in())
      throw std::invalid_argument("project_levels: level " + std::to_string(l) + " channel mismatch");
    parts.push_back(level_proj_[l](tape, levels[l]));
    out.shapes.push_back(shapes[l]);
    out.starts.push_back(start);
    start += shapes[l].cells();
  }
  out.values = concat_rows(parts);
  return out;
}

MultiScaleValueSet DeformableEnhance::layer_values(Tape& tape, int layer, const std::array<Var, 4>& levels,
                                                   const std::array<GridShape, 4>& shapes) const {
  const Linear& vp = layers_.at(layer).attn.value_proj;
  const Var vw = tape.param(*vp.weight);
  const Var vb = tape.param(*vp.bias);
  MultiScaleValueSet out;
  std::vector<Var> parts;
  Eigen::Index start = 0;
  for (int l = 0; l < 4; ++l) {
    if (levels[l].rows() != shapes[l].cells())
      throw std::invalid_argument("layer_values: level " + std::to_string(l) + " token count mismatch");
    if (levels[l].cols() != level_proj_[l].in())
      throw std::invalid_argument("layer_values: level " + std::to_string(l) + " channel mismatch");
    // value_proj(level_proj(F)) as one affine map on the raw level.
    const Var w = matmul(tape.param(*level_proj_[l].weight), vw);
    const Var b = add(matmul(tape.param(*level_proj_[l].bias), vw), vb);
    parts.push_back(linear(levels[l], w, b));
    out.shapes.push_back(shapes[l]);
    out.starts.push_back(start);
    start += shapes[l].cells();
  }
  out.values = concat_rows(parts);
  return out;
}

Var DeformableEnhance::layer_forward(Tape& tape, int layer, const QuerySet& queries, const MultiScaleValueSet& values,
                                     DeformTrace* trace) const {
  const Layer& ly = layers_.at(layer);
  QuerySet normed{ly.ln1(tape, queries.tokens), queries.reference_points};
  Var x = add(queries.tokens, deform_attn_projected(tape, normed, values, ly.attn, config_, trace));
  x = add(x, ly.ffn(tape, ly.ln2(tape, x)));
  if (!x.value().allFinite()) throw std::runtime_error("deformable: non-finite activations");
  return x;
}

EnhanceOutput DeformableEnhance::forward(Tape& tape, const Var& g_t, const Var* g_count, const Var& g_r,
                                         const FeaturePyramid& color) const {
  const Eigen::Index n2 = g_t.rows();
  const GridShape top = color.shapes[3];
  if (g_r.rows() != top.cells() || n2 != top.cells() || top.height != top.width)
    throw std::invalid_argument("deformable: fused tokens do not match the level-4 grid");
  const Eigen::Index n = top.height;

  std::vector<Var> qparts{g_t};
  if (g_count != nullptr) qparts.push_back(*g_count);
  QuerySet queries{concat_rows(qparts), reference_points_for(n, g_count != nullptr)};

  const std::array<Var, 4> levels{g_r, color.levels[2], color.levels[1], color.levels[0]};
  const std::array<GridShape, 4> shapes{top, color.shapes[2], color.shapes[1], color.shapes[0]};
  Var x = queries.tokens;
  for (Eigen::Index i = 0; i < config_.layers; ++i) {
    const int layer = static_cast<int>(i);
    x = layer_forward(tape, layer, QuerySet{x, queries.reference_points}, layer_values(tape, layer, levels, shapes));
  }

  EnhanceOutput out;
  out.o_t = slice_rows(x, 0, n2);
  if (g_count != nullptr) out.o_count = slice_rows(x, n2, 1);
  return out;
}

Eigen::Index deformable_param_count(const DeformConfig& config, const std::array<Eigen::Index, 4>& level_channels) {
  const Eigen::Index c = config.channels;
  const Eigen::Index s = config.heads * config.levels * config.points;
  Eigen::Index total = 0;
  for (Eigen::Index in : level_channels) total += Linear::param_count(in, c);
  const Eigen::Index per_layer = 4 * c + 2 * Linear::param_count(c, c) + Linear::param_count(c, 2 * s) +
                                 Linear::param_count(c, s) + Mlp::param_count(c, 2 * c, c);
  return total + config.layers * per_layer;
}

}  // namespace rgbtcc
