#include "rgbtcc/backbone.hpp"

#include <stdexcept>

namespace rgbtcc {

void BackboneConfig::validate() const {
  if (in_channels < 1) throw std::invalid_argument("backbone: in_channels must be positive");
  for (int i = 0; i < 4; ++i) {
    if (stage_channels[i] < 1) throw std::invalid_argument("backbone: stage channels must be positive");
    if (stage_strides[i] < 1) throw std::invalid_argument("backbone: strides must be positive");
    if (i > 0) {
      if (stage_strides[i] <= stage_strides[i - 1])
        throw std::invalid_argument("backbone: strides must be strictly increasing");
      if (stage_strides[i] % stage_strides[i - 1] != 0)
        throw std::invalid_argument("backbone: each stride must be a multiple of the previous");
    }
  }
  if (blocks_per_stage < 0) throw std::invalid_argument("backbone: blocks_per_stage must be >= 0");
}

GridShape BackboneConfig::level_shape(int level, Eigen::Index height, Eigen::Index width) const {
  return {height / stage_strides[level], width / stage_strides[level]};
}

Backbone::Backbone(ParamSet& params, std::string prefix, const BackboneConfig& config)
    : config_(config), prefix_(std::move(prefix)) {
  config_.validate();
  Eigen::Index in_c = config_.in_channels;
  Eigen::Index prev_stride = 1;
  for (int i = 0; i < 4; ++i) {
    const Eigen::Index ratio = config_.stage_strides[i] / prev_stride;
    const Eigen::Index c = config_.stage_channels[i];
    const std::string base = prefix_ + ".stage" + std::to_string(i + 1);
    Stage& s = stages_[i];
    s.embed_w = &params.add(base + ".embed.weight", ratio * ratio * in_c, c);
    s.embed_b = &params.add(base + ".embed.bias", 1, c);
    s.norm_g = &params.add(base + ".embed.norm.gamma", 1, c);
    s.norm_b = &params.add(base + ".embed.norm.beta", 1, c);
    for (Eigen::Index b = 0; b < config_.blocks_per_stage; ++b) {
      const std::string bb = base + ".block" + std::to_string(b);
      s.blocks.push_back({&params.add(bb + ".weight", c, c), &params.add(bb + ".bias", 1, c),
                          &params.add(bb + ".norm.gamma", 1, c), &params.add(bb + ".norm.beta", 1, c)});
    }
    in_c = c;
    prev_stride = config_.stage_strides[i];
  }
}

void Backbone::init(Rng& rng) {
  for (Stage& s : stages_) {
    init_fan_in_uniform(*s.embed_w, s.embed_w->value.rows(), rng);
    init_constant(*s.embed_b, 0.0);
    init_constant(*s.norm_g, 1.0);
    init_constant(*s.norm_b, 0.0);
    for (auto& blk : s.blocks) {
      init_fan_in_uniform(*blk[0], blk[0]->value.rows(), rng);
      init_constant(*blk[1], 0.0);
      init_constant(*blk[2], 1.0);
      init_constant(*blk[3], 0.0);
    }
  }
}

FeaturePyramid Backbone::forward(Tape& tape, const Image& image) const {
  const Eigen::Index coarsest = config_.stage_strides[3];
  if (image.height % coarsest != 0 || image.width % coarsest != 0)
    throw std::invalid_argument("backbone: image size " + std::to_string(image.height) + "x" +
                                std::to_string(image.width) + " not divisible by " +
                                std::to_string(coarsest));
  if (image.channels() != config_.in_channels)
    throw std::invalid_argument("backbone: expected " + std::to_string(config_.in_channels) +
                                " input channels");
  if (!image.pixels.allFinite()) throw std::invalid_argument("backbone: non-finite input pixels");

  FeaturePyramid out;
  Var x = tape.constant(image.pixels);
  Eigen::Index h = image.height;
  Eigen::Index w = image.width;
  Eigen::Index prev_stride = 1;
  for (int i = 0; i < 4; ++i) {
    const Stage& s = stages_[i];
    const Eigen::Index ratio = config_.stage_strides[i] / prev_stride;
    x = space_to_depth(x, h, w, ratio);
    h /= ratio;
    w /= ratio;
    x = linear(x, tape.param(*s.embed_w), tape.param(*s.embed_b));
    x = gelu(norm_columns(x, tape.param(*s.norm_g), tape.param(*s.norm_b)));
    for (const auto& blk : s.blocks) {
      Var y = linear(x, tape.param(*blk[0]), tape.param(*blk[1]));
      y = gelu(norm_columns(y, tape.param(*blk[2]), tape.param(*blk[3])));
      x = add(x, y);
    }
    out.levels[i] = x;
    out.shapes[i] = {h, w};
    prev_stride = config_.stage_strides[i];
  }
  return out;
}

Image make_thermal_input(const Image& thermal) {
  if (thermal.channels() == 3) return thermal;
  if (thermal.channels() != 1)
    throw std::invalid_argument("thermal input must have 1 or 3 channels");
  if (thermal.pixels.rows() != thermal.height * thermal.width)
    throw std::invalid_argument("thermal input: pixel count does not match size");
  Image out(thermal.height, thermal.width, 3);
  for (int c = 0; c < 3; ++c) out.pixels.col(c) = thermal.pixels.col(0);
  return out;
}

Eigen::Index backbone_param_count(const BackboneConfig& config) {
  Eigen::Index n = 0;
  Eigen::Index in_c = config.in_channels;
  Eigen::Index prev = 1;
  for (int i = 0; i < 4; ++i) {
    const Eigen::Index r = config.stage_strides[i] / prev;
    const Eigen::Index c = config.stage_channels[i];
    n += r * r * in_c * c + 3 * c;
    n += config.blocks_per_stage * (c * c + 3 * c);
    in_c = c;
    prev = config.stage_strides[i];
  }
  return n;
}

}  // namespace rgbtcc
