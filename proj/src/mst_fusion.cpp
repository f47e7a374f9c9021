#include "rgbtcc/mst_fusion.hpp"

#include <stdexcept>

namespace rgbtcc {

void FusionConfig::validate() const {
  if (token_grid_n < 1) throw std::invalid_argument("fusion: token grid side must be >= 1");
  if (channels < 1 || heads < 1 || channels % heads != 0)
    throw std::invalid_argument("fusion: channels must be divisible by heads");
  if (mhsa_layers_per_branch < 1) throw std::invalid_argument("fusion: need at least one attention layer");
}

TokenSequence build_initial_sequence(const Var& f_r4, const Var& f_t4, const Var* count) {
  if (f_r4.rows() != f_t4.rows() || f_r4.cols() != f_t4.cols())
    throw std::invalid_argument("initial sequence: color/thermal shape mismatch");
  std::vector<Var> parts{f_r4, f_t4};
  if (count != nullptr) {
    if (count->rows() != 1 || count->cols() != f_r4.cols())
      throw std::invalid_argument("initial sequence: count token must be [1, C]");
    parts.push_back(*count);
  }
  return {concat_rows(parts), {f_r4.rows(), f_t4.rows(), count != nullptr ? 1 : 0}};
}

Var merge_tokens(Tape& tape, const Var& seq, Eigen::Index target, const Linear& map) {
  const Eigen::Index a = seq.rows();
  if (target < 1 || a % target != 0)
    throw std::invalid_argument("merge_tokens: " + std::to_string(a) + " tokens not divisible into " +
                                std::to_string(target) + " groups");
  const Eigen::Index group = a / target;
  if (map.in() != group * seq.cols()) throw std::invalid_argument("merge_tokens: map width mismatch");
  return map(tape, reshape(seq, target, group * seq.cols()));
}

namespace {

Var expand_segment(Tape& tape, const Var& seg, Eigen::Index target_rows, const Linear& map) {
  const Eigen::Index rows = seg.rows();
  const Eigen::Index c = seg.cols();
  if (rows == 0 || target_rows % rows != 0)
    throw std::invalid_argument("restore_length: segment of " + std::to_string(rows) +
                                " tokens cannot expand to " + std::to_string(target_rows));
  const Eigen::Index factor = target_rows / rows;
  if (map.out() != factor * c) throw std::invalid_argument("restore_length: map width mismatch");
  return reshape(map(tape, seg), target_rows, c);
}

}  // namespace

Var restore_length(Tape& tape, const TokenSequence& seq, const SequenceLayout& target, const RestoreMaps& maps) {
  const SequenceLayout& src = seq.layout;
  if (src.count != target.count) throw std::invalid_argument("restore_length: count slot mismatch");
  std::vector<Var> parts;
  parts.push_back(expand_segment(tape, slice_rows(seq.tokens, 0, src.color), target.color, maps.color));
  parts.push_back(
      expand_segment(tape, slice_rows(seq.tokens, src.thermal_start(), src.thermal), target.thermal, maps.thermal));
  if (src.count == 1) {
    if (!maps.count) throw std::invalid_argument("restore_length: missing count map");
    parts.push_back((*maps.count)(tape, slice_rows(seq.tokens, src.count_start(), 1)));
  }
  return concat_rows(parts);
}

Var residual_combine(Tape& tape, const Var& g, const Var& f1, const Mlp& mlp) {
  if (g.rows() != f1.rows() || g.cols() != f1.cols())
    throw std::invalid_argument("residual_combine: shape mismatch");
  const Var parts[] = {g, f1};
  return mlp(tape, concat_cols(parts));
}

FusedState split_fused(const Var& seq, const SequenceLayout& layout) {
  if (seq.rows() != layout.length()) throw std::invalid_argument("split: length does not match layout");
  FusedState out;
  out.g_r = slice_rows(seq, 0, layout.color);
  out.g_t = slice_rows(seq, layout.thermal_start(), layout.thermal);
  if (layout.count == 1) out.g_count = slice_rows(seq, layout.count_start(), 1);
  return out;
}

MstFusion::MstFusion(ParamSet& params, std::string prefix, const FusionConfig& config)
    : config_(config), prefix_(std::move(prefix)) {
  config_.validate();
  const Eigen::Index n = config_.token_grid_n;
  const Eigen::Index c = config_.channels;
  const int n_branches = config_.enable_multiscale ? 3 : 1;
  for (int b = 0; b < n_branches; ++b) {
    std::vector<EncoderLayer> layers;
    for (Eigen::Index l = 0; l < config_.mhsa_layers_per_branch; ++l)
      layers.emplace_back(params, prefix_ + ".branch" + std::to_string(b + 1) + ".layer" + std::to_string(l), c,
                          config_.heads);
    branches_.push_back(std::move(layers));
  }
  if (!config_.enable_multiscale) return;

  merge_mid_r_ = Linear(params, prefix_ + ".merge_mid.rgb", n * c, c);
  merge_mid_t_ = Linear(params, prefix_ + ".merge_mid.thermal", n * c, c);
  merge_large_r_ = Linear(params, prefix_ + ".merge_large.rgb", n * n * c, c);
  merge_large_t_ = Linear(params, prefix_ + ".merge_large.thermal", n * n * c, c);

  restore_mid_.color = Linear(params, prefix_ + ".restore_mid.rgb", c, n * c);
  restore_mid_.thermal = Linear(params, prefix_ + ".restore_mid.thermal", c, n * c);
  restore_large_.color = Linear(params, prefix_ + ".restore_large.rgb", c, n * n * c);
  restore_large_.thermal = Linear(params, prefix_ + ".restore_large.thermal", c, n * n * c);
  if (config_.enable_count_token) {
    restore_mid_.count = Linear(params, prefix_ + ".restore_mid.count", c, c);
    restore_large_.count = Linear(params, prefix_ + ".restore_large.count", c, c);
  }
  combine_mid_ = Mlp(params, prefix_ + ".combine_mid", 2 * c, 2 * c, c);
  combine_large_ = Mlp(params, prefix_ + ".combine_large", 2 * c, 2 * c, c);
  fuse_ = Mlp(params, prefix_ + ".fuse", 3 * c, 3 * c, c);
}

void MstFusion::init(Rng& rng) {
  for (auto& branch : branches_)
    for (auto& layer : branch) layer.init(rng);
  if (!config_.enable_multiscale) return;
  for (const Linear* l : {&merge_mid_r_, &merge_mid_t_, &merge_large_r_, &merge_large_t_}) l->init(rng);
  for (const RestoreMaps* r : {&restore_mid_, &restore_large_}) {
    r->color.init(rng);
    r->thermal.init(rng);
    if (r->count) r->count->init(rng);
  }
  combine_mid_.init(rng);
  combine_large_.init(rng);
  fuse_.init(rng);
}

TokenSequence MstFusion::build_middle_sequence(Tape& tape, const Var& f_r4, const Var& f_t4,
                                               const Var* count) const {
  const Eigen::Index n = config_.token_grid_n;
  std::vector<Var> parts{merge_tokens(tape, f_r4, n, merge_mid_r_), merge_tokens(tape, f_t4, n, merge_mid_t_)};
  if (count != nullptr) parts.push_back(*count);
  return {concat_rows(parts), {n, n, count != nullptr ? 1 : 0}};
}

TokenSequence MstFusion::build_large_sequence(Tape& tape, const Var& f_r4, const Var& f_t4,
                                              const Var* count) const {
  std::vector<Var> parts{merge_tokens(tape, f_r4, 1, merge_large_r_), merge_tokens(tape, f_t4, 1, merge_large_t_)};
  if (count != nullptr) parts.push_back(*count);
  return {concat_rows(parts), {1, 1, count != nullptr ? 1 : 0}};
}

TokenSequence MstFusion::mhsa_branch(Tape& tape, const TokenSequence& seq, int branch,
                                     std::vector<Mat>* last_weights) const {
  if (seq.tokens.rows() < 1) throw std::invalid_argument("mhsa_branch: empty sequence");
  Var x = seq.tokens;
  const auto& layers = branches_.at(branch);
  for (std::size_t l = 0; l < layers.size(); ++l)
    x = layers[l](tape, x, l + 1 == layers.size() ? last_weights : nullptr);
  if (!x.value().allFinite()) throw std::runtime_error("mhsa_branch: non-finite activations");
  return {x, seq.layout};
}

FusedState MstFusion::fuse_branches(Tape& tape, const TokenSequence& f1p, const Var& g2p, const Var& g3p) const {
  const Var parts[] = {f1p.tokens, g2p, g3p};
  return split_fused(fuse_(tape, concat_cols(parts)), f1p.layout);
}

FusedState MstFusion::forward(Tape& tape, const Var& f_r4, const Var& f_t4, const Var* count) const {
  const Eigen::Index n = config_.token_grid_n;
  if (f_r4.rows() != n * n || f_r4.cols() != config_.channels)
    throw std::invalid_argument("fusion: expected [" + std::to_string(n * n) + ", " +
                                std::to_string(config_.channels) + "] level-4 tokens");
  if ((count != nullptr) != config_.enable_count_token)
    throw std::invalid_argument("fusion: count token presence does not match config");

  TokenSequence f1 = build_initial_sequence(f_r4, f_t4, count);
  TokenSequence f1p = mhsa_branch(tape, f1, 0);
  if (!config_.enable_multiscale) return split_fused(f1p.tokens, f1p.layout);

  TokenSequence f2p = mhsa_branch(tape, build_middle_sequence(tape, f_r4, f_t4, count), 1);
  TokenSequence f3p = mhsa_branch(tape, build_large_sequence(tape, f_r4, f_t4, count), 2);
  Var g2 = restore_length(tape, f2p, f1.layout, restore_mid_);
  Var g3 = restore_length(tape, f3p, f1.layout, restore_large_);
  Var g2p = residual_combine(tape, g2, f1.tokens, combine_mid_);
  Var g3p = residual_combine(tape, g3, f1.tokens, combine_large_);
  return fuse_branches(tape, f1p, g2p, g3p);
}

Eigen::Index fusion_param_count(const FusionConfig& config) {
  const Eigen::Index n = config.token_grid_n;
  const Eigen::Index c = config.channels;
  const Eigen::Index per_branch = config.mhsa_layers_per_branch * EncoderLayer::param_count(c);
  if (!config.enable_multiscale) return per_branch;
  Eigen::Index total = 3 * per_branch;
  total += 2 * Linear::param_count(n * c, c) + 2 * Linear::param_count(n * n * c, c);
  total += 2 * Linear::param_count(c, n * c) + 2 * Linear::param_count(c, n * n * c);
  if (config.enable_count_token) total += 2 * Linear::param_count(c, c);
  total += 2 * Mlp::param_count(2 * c, 2 * c, c) + Mlp::param_count(3 * c, 3 * c, c);
  return total;
}

}  // namespace rgbtcc
