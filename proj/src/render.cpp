#include "rgbtcc/render.hpp"

#include "rgbtcc/metrics.hpp"
#include "rgbtcc/synthdata.hpp"

#include <fstream>
#include <sstream>

namespace rgbtcc {

std::string density_summary(const DensityMap& d) {
  std::ostringstream os;
  os.precision(10);
  os << "count " << predicted_count(d) << '\n';
  os << "grid " << d.grid.rows() << ' ' << d.grid.cols() << '\n';
  os << "source " << d.source_height << ' ' << d.source_width << '\n';
  for (int l = 0; l <= kMaxGameLevel; ++l) {
    os << "regions" << l;
    for (double v : regional_counts(d, l)) os << ' ' << v;
    os << '\n';
  }
  return os.str();
}

void render_density(const DensityMap& d, const std::filesystem::path& path) {
  const Eigen::Index rows = d.grid.rows();
  const Eigen::Index cols = d.grid.cols();
  if (rows == 0 || cols == 0) throw std::invalid_argument("render: empty density map");
  const Eigen::Index h = d.source_height > 0 ? d.source_height : rows;
  const Eigen::Index w = d.source_width > 0 ? d.source_width : cols;
  const double peak = d.grid.maxCoeff();
  Image img(h, w, 1);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) {
      const double v = d.grid(y * rows / h, x * cols / w);
      img.at(y, x, 0) = peak > 0.0 ? v / peak : 0.0;
    }
  write_pnm(path, img);
  std::filesystem::path side = path;
  side += ".txt";
  std::ofstream out(side);
  if (!out) throw std::runtime_error("cannot write " + side.string());
  out << density_summary(d);
}

}  // namespace rgbtcc
