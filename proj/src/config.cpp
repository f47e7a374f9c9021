#include "rgbtcc/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace rgbtcc {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::mst: return "mst";
    case Variant::msd: return "msd";
    case Variant::full: return "full";
    case Variant::no_count: return "no-count";
    case Variant::no_multiscale: return "no-multiscale";
  }
  return "full";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::baseline, Variant::mst, Variant::msd, Variant::full, Variant::no_count,
                    Variant::no_multiscale})
    if (to_string(v) == name) return v;
  throw std::invalid_argument("unknown variant '" + name +
                              "' (expected baseline, mst, msd, full, no-count or no-multiscale)");
}

AblationFlags flags_for(Variant v) {
  switch (v) {
    case Variant::baseline: return {false, false, false, false};
    case Variant::mst: return {true, false, true, true};
    case Variant::msd: return {false, true, true, false};
    case Variant::full: return {true, true, true, true};
    case Variant::no_count: return {true, true, false, true};
    case Variant::no_multiscale: return {true, true, true, false};
  }
  return {};
}

void RunConfig::validate() const {
  backbone.validate();
  if (image_size <= 0 || image_size % backbone.stage_strides[3] != 0)
    throw std::invalid_argument("config: image_size must be a positive multiple of the coarsest stride");
  if (!(optimizer.lr > 0.0) || !(optimizer.weight_decay > 0.0))
    throw std::invalid_argument("config: lr and weight_decay must be positive");
  if (batch_size < 1 || max_steps < 0 || eval_every < 1 || patience < 1)
    throw std::invalid_argument("config: batch_size, eval_every and patience must be >= 1");
  if (flags.use_multiscale && !flags.use_mst) throw std::invalid_argument("config: use_multiscale requires use_mst");
  if (train_scenes < 1 || val_scenes < 0 || test_scenes < 0 || min_people < 0 || max_people < min_people)
    throw std::invalid_argument("config: invalid synthetic data sizes");
  loss.validate();
  fusion().validate();
  deform().validate();
  if (channels() < 4) throw std::invalid_argument("config: level-4 channels must be >= 4");
}

FusionConfig RunConfig::fusion() const {
  FusionConfig f;
  f.token_grid_n = grid_n();
  f.channels = channels();
  f.heads = fusion_heads;
  f.mhsa_layers_per_branch = fusion_layers;
  f.enable_count_token = flags.use_count_token;
  f.enable_multiscale = flags.use_multiscale;
  return f;
}

DeformConfig RunConfig::deform() const {
  DeformConfig d;
  d.channels = channels();
  d.heads = deform_heads;
  d.points = deform_points;
  d.layers = deform_layers;
  return d;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct KeyDef {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
T parse_number(const std::string& s) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw std::invalid_argument("invalid number '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("invalid boolean '" + s + "'");
}

std::string fmt_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename T>
KeyDef int_key(std::string name, T RunConfig::*field) {
  return {std::move(name), [field](RunConfig& c, const std::string& v) { c.*field = parse_number<T>(v); },
          [field](const RunConfig& c) { return std::to_string(c.*field); }};
}

template <typename Owner>
KeyDef double_key(std::string name, Owner RunConfig::*owner, double Owner::*field) {
  return {std::move(name), [owner, field](RunConfig& c, const std::string& v) { c.*owner.*field = parse_number<double>(v); },
          [owner, field](const RunConfig& c) { return fmt_double(c.*owner.*field); }};
}

KeyDef bool_key(std::string name, bool AblationFlags::*field) {
  return {std::move(name), [field](RunConfig& c, const std::string& v) { c.flags.*field = parse_bool(v); },
          [field](const RunConfig& c) { return std::string(c.flags.*field ? "true" : "false"); }};
}

const std::vector<KeyDef>& key_defs() {
  static const std::vector<KeyDef> defs = {
      int_key("seed", &RunConfig::seed),
      int_key("image_size", &RunConfig::image_size),
      {"backbone.stage_channels",
       [](RunConfig& c, const std::string& v) {
         std::istringstream in(v);
         std::string tok;
         int i = 0;
         while (std::getline(in, tok, ',')) {
           if (i >= 4) throw std::invalid_argument("expected 4 comma-separated channel counts");
           c.backbone.stage_channels[static_cast<std::size_t>(i++)] = parse_number<Eigen::Index>(trim(tok));
         }
         if (i != 4) throw std::invalid_argument("expected 4 comma-separated channel counts");
       },
       [](const RunConfig& c) {
         std::string s;
         for (int i = 0; i < 4; ++i) s += (i ? "," : "") + std::to_string(c.backbone.stage_channels[static_cast<std::size_t>(i)]);
         return s;
       }},
      {"backbone.blocks_per_stage",
       [](RunConfig& c, const std::string& v) { c.backbone.blocks_per_stage = parse_number<Eigen::Index>(v); },
       [](const RunConfig& c) { return std::to_string(c.backbone.blocks_per_stage); }},
      int_key("fusion.heads", &RunConfig::fusion_heads),
      int_key("fusion.layers_per_branch", &RunConfig::fusion_layers),
      int_key("deform.heads", &RunConfig::deform_heads),
      int_key("deform.points", &RunConfig::deform_points),
      int_key("deform.layers", &RunConfig::deform_layers),
      double_key("loss.ot_weight", &RunConfig::loss, &LossConfig::ot_weight),
      double_key("loss.tv_weight", &RunConfig::loss, &LossConfig::tv_weight),
      double_key("loss.sinkhorn_reg", &RunConfig::loss, &LossConfig::sinkhorn_reg),
      {"loss.sinkhorn_iters",
       [](RunConfig& c, const std::string& v) { c.loss.sinkhorn_iters = parse_number<int>(v); },
       [](const RunConfig& c) { return std::to_string(c.loss.sinkhorn_iters); }},
      double_key("loss.count_token_weight", &RunConfig::loss, &LossConfig::count_token_weight),
      double_key("optimizer.lr", &RunConfig::optimizer, &OptimizerConfig::lr),
      double_key("optimizer.weight_decay", &RunConfig::optimizer, &OptimizerConfig::weight_decay),
      double_key("optimizer.beta1", &RunConfig::optimizer, &OptimizerConfig::beta1),
      double_key("optimizer.beta2", &RunConfig::optimizer, &OptimizerConfig::beta2),
      int_key("batch_size", &RunConfig::batch_size),
      int_key("max_steps", &RunConfig::max_steps),
      int_key("eval_every", &RunConfig::eval_every),
      int_key("patience", &RunConfig::patience),
      bool_key("use_mst", &AblationFlags::use_mst),
      bool_key("use_msd", &AblationFlags::use_msd),
      bool_key("use_count_token", &AblationFlags::use_count_token),
      bool_key("use_multiscale", &AblationFlags::use_multiscale),
      int_key("data.train_scenes", &RunConfig::train_scenes),
      int_key("data.val_scenes", &RunConfig::val_scenes),
      int_key("data.test_scenes", &RunConfig::test_scenes),
      int_key("data.min_people", &RunConfig::min_people),
      int_key("data.max_people", &RunConfig::max_people),
  };
  return defs;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& d : key_defs()) k.push_back(d.name);
    return k;
  }();
  return keys;
}

RunConfig parse_config(const std::string& text, RunConfig base, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    auto fail = [&](const std::string& msg) {
      throw std::runtime_error(source + ":" + std::to_string(line_no) + ": " + msg);
    };
    if (eq == std::string::npos) fail("expected 'key = value'");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    const KeyDef* def = nullptr;
    for (const auto& d : key_defs())
      if (d.name == key) def = &d;
    if (def == nullptr) fail("unknown key '" + key + "'");
    try {
      def->set(base, value);
    } catch (const std::invalid_argument& e) {
      fail(key + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base), path.string());
}

std::string format_config(const RunConfig& config) {
  std::string out;
  for (const auto& d : key_defs()) out += d.name + " = " + d.get(config) + "\n";
  return out;
}

std::uint64_t config_hash(const RunConfig& config) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : format_config(config)) h = (h ^ ch) * 1099511628211ULL;
  return h;
}

}  // namespace rgbtcc
