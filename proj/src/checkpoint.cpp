#include "rgbtcc/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace rgbtcc {

namespace {

constexpr char kMagic[8] = {'R', 'G', 'B', 'T', 'C', 'K', 'P', '1'};

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot write checkpoint " + path.string());
  }
  void u64(std::uint64_t v) { out_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void mat(const Mat& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    out_.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  void raw(const char* p, std::size_t n) { out_.write(p, static_cast<std::streamsize>(n)); }
  void finish() {
    out_.flush();
    if (!out_) throw std::runtime_error("checkpoint write failed");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path.string()) {
    if (!in_) throw std::runtime_error("cannot open checkpoint " + path_);
  }
  void raw(char* p, std::size_t n) {
    in_.read(p, static_cast<std::streamsize>(n));
    if (!in_) throw std::runtime_error("truncated checkpoint " + path_);
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    raw(reinterpret_cast<char*>(&v), sizeof v);
    return v;
  }
  std::string str() {
    const std::uint64_t n = u64();
    if (n > (1u << 24)) throw std::runtime_error("corrupt checkpoint " + path_);
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  Mat mat() {
    const auto r = static_cast<Eigen::Index>(u64());
    const auto c = static_cast<Eigen::Index>(u64());
    if (r < 0 || c < 0 || r * c > (Eigen::Index{1} << 32)) throw std::runtime_error("corrupt checkpoint " + path_);
    Mat m(r, c);
    raw(reinterpret_cast<char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
    return m;
  }

 private:
  std::ifstream in_;
  std::string path_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model, std::uint64_t step,
                     const AdamState* optimizer) {
  Writer w(path);
  w.raw(kMagic, sizeof kMagic);
  w.str(format_config(model.config()));
  w.u64(config_hash(model.config()));
  w.u64(step);
  w.u64(model.params().size());
  for (const auto& p : model.params()) {
    w.str(p->name);
    w.mat(p->value);
  }
  w.u64(optimizer != nullptr ? 1 : 0);
  if (optimizer != nullptr) {
    w.u64(optimizer->step);
    w.u64(optimizer->m.size());
    for (std::size_t i = 0; i < optimizer->m.size(); ++i) {
      w.mat(optimizer->m[i]);
      w.mat(optimizer->v[i]);
    }
  }
  w.finish();
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw std::runtime_error("not a checkpoint: " + path.string());
  Checkpoint ck;
  ck.config = parse_config(r.str(), RunConfig{}, path.string() + " (embedded config)");
  ck.config_hash = r.u64();
  if (ck.config_hash != config_hash(ck.config)) throw std::runtime_error("checkpoint config hash mismatch");
  ck.step = r.u64();
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    Param p;
    p.name = r.str();
    p.value = r.mat();
    ck.params.push_back(std::move(p));
  }
  if (r.u64() != 0) {
    AdamState s;
    s.step = r.u64();
    const std::uint64_t k = r.u64();
    for (std::uint64_t i = 0; i < k; ++i) {
      s.m.push_back(r.mat());
      s.v.push_back(r.mat());
    }
    ck.optimizer = std::move(s);
  }
  return ck;
}

void copy_params(const std::vector<Param>& source, ParamSet& target) {
  if (source.size() != target.size())
    throw std::runtime_error("checkpoint has " + std::to_string(source.size()) + " parameters, model has " +
                             std::to_string(target.size()));
  for (const Param& p : source) {
    Param* dst = target.find(p.name);
    if (dst == nullptr) throw std::runtime_error("checkpoint parameter not in model: " + p.name);
    if (dst->value.rows() != p.value.rows() || dst->value.cols() != p.value.cols())
      throw std::runtime_error("checkpoint parameter shape mismatch: " + p.name);
    dst->value = p.value;
  }
}

std::unique_ptr<Model> load_model(const Checkpoint& checkpoint) {
  if (config_hash(checkpoint.config) != checkpoint.config_hash)
    throw std::runtime_error("checkpoint: config does not match its stored hash");
  auto model = assemble_model(checkpoint.config);
  copy_params(checkpoint.params, model->params());
  return model;
}

}  // namespace rgbtcc
