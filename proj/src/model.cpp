#include "rgbtcc/model.hpp"

namespace rgbtcc {

namespace {

std::array<Eigen::Index, 4> enhance_level_channels(const RunConfig& c) {
  const auto& ch = c.backbone.stage_channels;
  return {c.channels(), ch[2], ch[1], ch[0]};
}

Var concat_channels(const Var& a, const Var& b) {
  const std::vector<Var> parts{a, b};
  return concat_cols(parts);
}

}  // namespace

bool count_token_active(const AblationFlags& flags) {
  return flags.use_count_token && (flags.use_mst || flags.use_msd);
}

Model::Model(const RunConfig& config) : config_(config) {
  config_.validate();
  const Eigen::Index c = config_.channels();
  const AblationFlags& f = config_.flags;
  rgb_backbone_ = std::make_unique<Backbone>(params_, "backbone.rgb", config_.backbone);
  thermal_backbone_ = std::make_unique<Backbone>(params_, "backbone.thermal", config_.backbone);
  if (count_token_active(f)) count_token_ = &params_.add("count_token", 1, c);
  if (f.use_mst) {
    FusionConfig fc = config_.fusion();
    fc.enable_count_token = count_token_ != nullptr;
    fusion_ = std::make_unique<MstFusion>(params_, "fusion", fc);
  }
  if (f.use_msd)
    enhance_ = std::make_unique<DeformableEnhance>(params_, "deform", config_.deform(), enhance_level_channels(config_));
  const bool baseline = !f.use_mst && !f.use_msd;
  head_ = std::make_unique<RegressionHead>(params_, "head", baseline ? 2 * c : c);
  if (count_token_ != nullptr) readout_ = std::make_unique<CountReadout>(params_, "count_readout", c);
  init(config_.seed);
}

void Model::init(std::uint64_t seed) {
  Rng rng(seed);
  rgb_backbone_->init(rng);
  thermal_backbone_->init(rng);
  if (count_token_ != nullptr) init_uniform(*count_token_, 0.02, rng);
  if (fusion_) fusion_->init(rng);
  if (enhance_) enhance_->init(rng);
  head_->init(rng);
  if (readout_) readout_->init(rng);
}

ModelOutput Model::forward(Tape& tape, const Image& rgb, const Image& thermal, ForwardTrace* trace) const {
  if (rgb.height != thermal.height || rgb.width != thermal.width)
    throw std::invalid_argument("model: color and thermal frames differ in size");
  FeaturePyramid fr = rgb_backbone_->forward(tape, rgb);
  FeaturePyramid ft = thermal_backbone_->forward(tape, make_thermal_input(thermal));
  const GridShape top = fr.shapes[3];
  if (top.height != top.width) throw std::invalid_argument("model: input must be square");
  const Eigen::Index n = top.height;

  std::optional<Var> token;
  if (count_token_ != nullptr) token = tape.param(*count_token_);
  const Var* token_ptr = token ? &*token : nullptr;

  std::optional<FusedState> fused;
  std::optional<EnhanceOutput> enhanced;
  Var head_input;
  std::optional<Var> final_count;
  if (!fusion_ && !enhance_) {
    head_input = concat_channels(fr.levels[3], ft.levels[3]);
  } else {
    FusedState g = fusion_ ? fusion_->forward(tape, fr.levels[3], ft.levels[3], token_ptr)
                           : FusedState{fr.levels[3], ft.levels[3], token};
    fused = g;
    if (enhance_) {
      enhanced = enhance_->forward(tape, g.g_t, g.g_count ? &*g.g_count : nullptr, g.g_r, fr);
      head_input = enhanced->o_t;
      final_count = enhanced->o_count;
    } else {
      head_input = g.g_t;
      final_count = g.g_count;
    }
  }

  ModelOutput out;
  out.density = head_->forward(tape, head_input, n);
  if (readout_ && final_count) out.count_pred = readout_->forward(tape, *final_count);
  if (trace != nullptr) {
    trace->color = fr;
    trace->thermal = ft;
    trace->fused = fused;
    trace->enhanced = enhanced;
    trace->head_input = head_input;
  }
  return out;
}

DensityMap Model::predict(const Image& rgb, const Image& thermal) const {
  Tape tape;
  ModelOutput out = forward(tape, rgb, thermal);
  return to_density_map(out.density.value(), config_.grid_n(), rgb.height, rgb.width);
}

std::unique_ptr<Model> assemble_model(const RunConfig& config) { return std::make_unique<Model>(config); }

Eigen::Index model_param_count(const RunConfig& config) {
  const Eigen::Index c = config.channels();
  const AblationFlags& f = config.flags;
  const bool token = count_token_active(f);
  Eigen::Index total = 2 * backbone_param_count(config.backbone);
  if (token) total += c + Linear::param_count(c, 1);
  if (f.use_mst) {
    FusionConfig fc = config.fusion();
    fc.enable_count_token = token;
    total += fusion_param_count(fc);
  }
  if (f.use_msd) total += deformable_param_count(config.deform(), enhance_level_channels(config));
  total += RegressionHead::param_count(!f.use_mst && !f.use_msd ? 2 * c : c);
  return total;
}

}  // namespace rgbtcc
