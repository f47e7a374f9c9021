#include "rgbtcc/synthdata.hpp"

#include "rgbtcc/backbone.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace rgbtcc {

namespace fs = std::filesystem;

Mat bin_points_to_grid(const PointList& points, Eigen::Index height, Eigen::Index width, Eigen::Index n) {
  if (height <= 0 || width <= 0 || n <= 0) throw std::invalid_argument("bin_points_to_grid: invalid size");
  Mat grid = Mat::Zero(n, n);
  for (const Point& p : points) {
    auto cx = static_cast<Eigen::Index>(std::floor(p.x * static_cast<double>(n) / static_cast<double>(width)));
    auto cy = static_cast<Eigen::Index>(std::floor(p.y * static_cast<double>(n) / static_cast<double>(height)));
    grid(std::clamp<Eigen::Index>(cy, 0, n - 1), std::clamp<Eigen::Index>(cx, 0, n - 1)) += 1.0;
  }
  return grid;
}

std::string to_string(SceneTag tag) {
  switch (tag) {
    case SceneTag::low_light: return "low_light";
    case SceneTag::thermal_clutter: return "thermal_clutter";
    case SceneTag::scale_variation: return "scale_variation";
  }
  return "unknown";
}

namespace {

struct Blob {
  double x, y, sigma, amplitude;
};

template <typename Fn>
void splat(Eigen::Index h, Eigen::Index w, const Blob& b, Fn&& fn) {
  const double reach = 3.0 * b.sigma;
  const auto y0 = std::max<Eigen::Index>(0, static_cast<Eigen::Index>(std::floor(b.y - reach)));
  const auto y1 = std::min<Eigen::Index>(h - 1, static_cast<Eigen::Index>(std::ceil(b.y + reach)));
  const auto x0 = std::max<Eigen::Index>(0, static_cast<Eigen::Index>(std::floor(b.x - reach)));
  const auto x1 = std::min<Eigen::Index>(w - 1, static_cast<Eigen::Index>(std::ceil(b.x + reach)));
  const double inv = 1.0 / (2.0 * b.sigma * b.sigma);
  for (Eigen::Index y = y0; y <= y1; ++y)
    for (Eigen::Index x = x0; x <= x1; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - b.x;
      const double dy = static_cast<double>(y) + 0.5 - b.y;
      fn(y, x, b.amplitude * std::exp(-(dx * dx + dy * dy) * inv));
    }
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

ScenePair generate_scene(std::uint64_t seed, const SceneConfig& config) {
  const Eigen::Index h = config.height;
  const Eigen::Index w = config.width;
  if (h <= 0 || w <= 0 || h % 32 != 0 || w % 32 != 0)
    throw std::invalid_argument("generate_scene: size must be a positive multiple of 32");
  if (config.min_people < 0 || config.max_people < config.min_people)
    throw std::invalid_argument("generate_scene: invalid people range");

  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  const int n_people = std::uniform_int_distribution<int>(config.min_people, config.max_people)(rng);

  ScenePair scene;
  scene.tags = config.tags;
  scene.rgb = Image(h, w, 3);
  scene.thermal = Image(h, w, 1);

  // Background: per-channel base color, vertical gradient and two low-frequency waves.
  double base[3];
  for (double& b : base) b = uniform(0.35, 0.75);
  const double grad = uniform(-0.15, 0.15);
  const double fx = uniform(1.0, 4.0), fy = uniform(1.0, 4.0), phase = uniform(0.0, 2.0 * std::numbers::pi);
  const double t_base = uniform(0.1, 0.25);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) {
      const double u = static_cast<double>(x) / static_cast<double>(w);
      const double v = static_cast<double>(y) / static_cast<double>(h);
      const double wave = 0.06 * std::sin(2.0 * std::numbers::pi * (fx * u + fy * v) + phase);
      for (int c = 0; c < 3; ++c) scene.rgb.at(y, x, c) = base[c] + grad * (v - 0.5) + wave;
      scene.thermal.at(y, x, 0) = t_base + 0.3 * wave;
    }

  // People: dark head blobs in RGB, warm blobs in thermal.
  std::vector<Blob> people;
  std::vector<std::array<double, 3>> colors;
  for (int i = 0; i < n_people; ++i) {
    const double x = uniform(4.0, static_cast<double>(w) - 4.0);
    const double y = uniform(4.0, static_cast<double>(h) - 4.0);
    double sigma = uniform(2.5, 4.0);
    if (config.tags.contains(SceneTag::scale_variation)) sigma = 1.5 + 7.0 * y / static_cast<double>(h);
    people.push_back({x, y, sigma, 1.0});
    colors.push_back({uniform(0.0, 0.2), uniform(0.0, 0.2), uniform(0.0, 0.2)});
    scene.points.push_back({x, y});
  }
  for (std::size_t i = 0; i < people.size(); ++i) {
    splat(h, w, people[i], [&](Eigen::Index y, Eigen::Index x, double a) {
      for (int c = 0; c < 3; ++c) scene.rgb.at(y, x, c) = scene.rgb.at(y, x, c) * (1.0 - a) + colors[i][c] * a;
    });
    Blob warm = people[i];
    warm.amplitude = 0.6;
    splat(h, w, warm, [&](Eigen::Index y, Eigen::Index x, double a) { scene.thermal.at(y, x, 0) += a; });
  }

  // Regime parameters are always drawn so that tags never shift the people.
  const int n_clutter = std::uniform_int_distribution<int>(1, 3)(rng);
  std::vector<Blob> clutter;
  for (int i = 0; i < 3; ++i)
    clutter.push_back({uniform(0.0, static_cast<double>(w)), uniform(0.0, static_cast<double>(h)), uniform(8.0, 14.0),
                       uniform(0.4, 0.6)});
  const double dim = uniform(config.low_light_min, config.low_light_max);

  if (config.tags.contains(SceneTag::thermal_clutter))
    for (int i = 0; i < n_clutter; ++i)
      splat(h, w, clutter[static_cast<std::size_t>(i)],
            [&](Eigen::Index y, Eigen::Index x, double a) { scene.thermal.at(y, x, 0) += a; });

  scene.rgb.pixels = scene.rgb.pixels.cwiseMax(0.0).cwiseMin(1.0);
  if (config.tags.contains(SceneTag::low_light)) scene.rgb.pixels *= dim;
  scene.thermal.pixels = scene.thermal.pixels.cwiseMax(0.0).cwiseMin(1.0);
  return scene;
}

double rgb_contrast(const Image& rgb) {
  if (rgb.channels() != 3) throw std::invalid_argument("rgb_contrast: expected 3 channels");
  const Eigen::VectorXd lum = 0.299 * rgb.pixels.col(0) + 0.587 * rgb.pixels.col(1) + 0.114 * rgb.pixels.col(2);
  const double mean = lum.mean();
  return std::sqrt((lum.array() - mean).square().mean());
}

// ---------------------------------------------------------------------------
// Annotations

ParseError::ParseError(const std::string& source, int line, const std::string& message)
    : std::runtime_error(source + ":" + std::to_string(line) + ": " + message), line_(line) {}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& tok, double& out) {
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string format_annotation(const PointList& points) {
  std::string out = "count " + std::to_string(points.size()) + "\n";
  for (const Point& p : points) out += format_double(p.x) + " " + format_double(p.y) + "\n";
  return out;
}

PointList parse_annotation(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  long expected = -1;
  PointList points;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    std::istringstream ls(t);
    if (expected < 0) {
      std::string key, value, extra;
      ls >> key >> value;
      if (key != "count" || value.empty() || (ls >> extra))
        throw ParseError(source, line_no, "expected header 'count <n>'");
      auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), expected);
      if (ec != std::errc() || ptr != value.data() + value.size() || expected < 0)
        throw ParseError(source, line_no, "invalid count '" + value + "'");
      continue;
    }
    std::string xs, ys, extra;
    ls >> xs >> ys;
    Point p;
    if (ys.empty() || (ls >> extra) || !parse_double(xs, p.x) || !parse_double(ys, p.y))
      throw ParseError(source, line_no, "expected 'x y' with finite coordinates");
    if (static_cast<long>(points.size()) >= expected)
      throw ParseError(source, line_no, "more points than the declared count " + std::to_string(expected));
    points.push_back(p);
  }
  if (expected < 0) throw ParseError(source, line_no + 1, "missing 'count <n>' header");
  if (static_cast<long>(points.size()) != expected)
    throw ParseError(source, line_no + 1,
                     "declared " + std::to_string(expected) + " points, found " + std::to_string(points.size()));
  return points;
}

void write_annotation(const fs::path& path, const PointList& points) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << format_annotation(points);
}

PointList read_annotation(const fs::path& path) { return parse_annotation(read_text(path), path.string()); }

// ---------------------------------------------------------------------------
// Rasters

namespace {

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

Image quantize_8bit(const Image& image) {
  Image out = image;
  out.pixels = image.pixels.unaryExpr([](double v) { return static_cast<double>(to_byte(v)) / 255.0; });
  return out;
}

void write_pnm(const fs::path& path, const Image& image) {
  const Eigen::Index c = image.channels();
  if (c != 1 && c != 3) throw std::invalid_argument("write_pnm: need 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << (c == 3 ? "P6" : "P5") << '\n' << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> bytes(static_cast<std::size_t>(image.pixels.size()));
  for (Eigen::Index i = 0; i < image.pixels.size(); ++i) bytes[static_cast<std::size_t>(i)] = to_byte(image.pixels.data()[i]);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Image read_pnm(const fs::path& path) {
  const std::string data = read_text(path);
  std::size_t pos = 0;
  auto next_token = [&]() {
    while (pos < data.size()) {
      if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    return data.substr(start, pos - start);
  };
  const std::string magic = next_token();
  if (magic != "P5" && magic != "P6") throw std::runtime_error(path.string() + ": not a binary PGM/PPM file");
  const long w = std::stol(next_token());
  const long h = std::stol(next_token());
  const long maxval = std::stol(next_token());
  if (w <= 0 || h <= 0 || maxval != 255) throw std::runtime_error(path.string() + ": unsupported raster header");
  ++pos;  // single whitespace byte after maxval
  const Eigen::Index c = magic == "P6" ? 3 : 1;
  const std::size_t need = static_cast<std::size_t>(w * h * c);
  if (data.size() < pos + need) throw std::runtime_error(path.string() + ": truncated pixel data");
  Image img(h, w, c);
  for (std::size_t i = 0; i < need; ++i)
    img.pixels.data()[i] = static_cast<double>(static_cast<unsigned char>(data[pos + i])) / 255.0;
  return img;
}

// ---------------------------------------------------------------------------
// Manifests

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "# split " << manifest.split << "\n# seed " << manifest.seed << '\n';
  for (const auto& e : manifest.entries)
    out << e.rgb.generic_string() << '\t' << e.thermal.generic_string() << '\t' << e.annotation.generic_string()
        << '\n';
}

DatasetManifest read_manifest(const fs::path& path) {
  std::istringstream in(read_text(path));
  const fs::path root = path.parent_path();
  DatasetManifest m;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (line[0] == '#') {
      std::istringstream hs(line.substr(1));
      std::string key, value;
      hs >> key >> value;
      if (key == "split") m.split = value;
      if (key == "seed") m.seed = std::stoull(value);
      continue;
    }
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t tab; (tab = line.find('\t', start)) != std::string::npos; start = tab + 1)
      fields.push_back(line.substr(start, tab - start));
    fields.push_back(line.substr(start));
    if (fields.size() != 3) throw ParseError(path.string(), line_no, "expected three tab-separated paths");
    ManifestEntry e;
    fs::path* targets[] = {&e.rgb, &e.thermal, &e.annotation};
    for (int i = 0; i < 3; ++i) {
      fs::path p(fields[static_cast<std::size_t>(i)]);
      *targets[i] = p.is_absolute() ? p : root / p;
      if (!fs::exists(*targets[i])) throw ParseError(path.string(), line_no, "missing file " + targets[i]->string());
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

std::uint64_t derive_scene_seed(std::uint64_t master_seed, const std::string& split, int index) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : split) h = (h ^ ch) * 1099511628211ULL;
  return splitmix64(splitmix64(master_seed ^ h) + static_cast<std::uint64_t>(index));
}

void generate_dataset(const fs::path& out_dir, std::uint64_t master_seed, const SplitSizes& sizes,
                      const SceneConfig& base) {
  fs::create_directories(out_dir / "scenes");
  const std::pair<std::string, int> splits[] = {{"train", sizes.train}, {"val", sizes.val}, {"test", sizes.test}};
  for (const auto& [split, count] : splits) {
    DatasetManifest m;
    m.split = split;
    m.seed = master_seed;
    for (int i = 0; i < count; ++i) {
      const std::uint64_t seed = derive_scene_seed(master_seed, split, i);
      Rng tag_rng(splitmix64(seed ^ 0x5eedULL));
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      SceneConfig cfg = base;
      cfg.tags.clear();
      for (SceneTag t : {SceneTag::low_light, SceneTag::thermal_clutter, SceneTag::scale_variation})
        if (unit(tag_rng) < 1.0 / 3.0) cfg.tags.insert(t);
      const ScenePair scene = generate_scene(seed, cfg);
      const std::string stem = split + "_" + std::to_string(i);
      const fs::path rgb = fs::path("scenes") / (stem + "_rgb.ppm");
      const fs::path thermal = fs::path("scenes") / (stem + "_thermal.pgm");
      const fs::path ann = fs::path("scenes") / (stem + ".txt");
      write_pnm(out_dir / rgb, scene.rgb);
      write_pnm(out_dir / thermal, scene.thermal);
      write_annotation(out_dir / ann, scene.points);
      m.entries.push_back({rgb, thermal, ann});
    }
    write_manifest(out_dir / (split + ".tsv"), m);
  }
}

std::vector<Sample> load_samples(const DatasetManifest& manifest, Eigen::Index grid_n) {
  std::vector<Sample> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    Sample s;
    s.rgb = read_pnm(e.rgb);
    if (s.rgb.channels() != 3) throw std::runtime_error(e.rgb.string() + ": expected an RGB (P6) image");
    Image thermal = read_pnm(e.thermal);
    if (thermal.height != s.rgb.height || thermal.width != s.rgb.width)
      throw std::runtime_error(e.thermal.string() + ": size differs from the RGB image");
    s.thermal = make_thermal_input(thermal);
    s.points = read_annotation(e.annotation);
    s.gt_mass = bin_points_to_grid(s.points, s.rgb.height, s.rgb.width, grid_n);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace rgbtcc
