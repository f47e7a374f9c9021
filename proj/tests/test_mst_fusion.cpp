#include "rgbtcc/mst_fusion.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>

using namespace rgbtcc;
using rgbtcc::testing::project;
using rgbtcc::testing::random_mat;

namespace {

FusionConfig tiny_config() {
  FusionConfig c;
  c.token_grid_n = 2;
  c.channels = 8;
  c.heads = 2;
  return c;
}

Mat stack(const FusedState& s) {
  const Eigen::Index rows = s.g_r.rows() + s.g_t.rows() + (s.g_count ? 1 : 0);
  Mat out(rows, s.g_r.cols());
  out << s.g_r.value(), s.g_t.value();
  if (s.g_count) out.bottomRows(1) = s.g_count->value();
  return out;
}

void set_linear(const Linear& l, const Mat& w, double bias = 0.0) {
  REQUIRE(l.weight->value.rows() == w.rows());
  REQUIRE(l.weight->value.cols() == w.cols());
  l.weight->value = w;
  l.bias->value.setConstant(bias);
}

/// Weights [group*c, c] that average `group` tokens channel by channel.
Mat group_mean(Eigen::Index group, Eigen::Index c) {
  Mat w = Mat::Zero(group * c, c);
  for (Eigen::Index g = 0; g < group; ++g) w.block(g * c, 0, c, c) = Mat::Identity(c, c) / static_cast<double>(group);
  return w;
}

/// Weights [c, factor*c] that copy a token into `factor` tokens.
Mat broadcast(Eigen::Index factor, Eigen::Index c) {
  Mat w = Mat::Zero(c, factor * c);
  for (Eigen::Index f = 0; f < factor; ++f) w.block(0, f * c, c, c) = Mat::Identity(c, c);
  return w;
}

/// Two-layer GELU perceptron computing the mean of its k input blocks of
/// width c exactly, via gelu(x) - gelu(-x) = x.
void set_block_mean(const Mlp& mlp, Eigen::Index k, Eigen::Index c, std::vector<double> coeffs = {}) {
  if (coeffs.empty()) coeffs.assign(static_cast<std::size_t>(k), 1.0 / static_cast<double>(k));
  REQUIRE(mlp.fc1.in() == k * c);
  REQUIRE(mlp.fc1.out() >= 2 * c);
  Mat w1 = Mat::Zero(k * c, mlp.fc1.out());
  for (Eigen::Index b = 0; b < k; ++b) {
    w1.block(b * c, 0, c, c) = coeffs[static_cast<std::size_t>(b)] * Mat::Identity(c, c);
    w1.block(b * c, c, c, c) = -coeffs[static_cast<std::size_t>(b)] * Mat::Identity(c, c);
  }
  Mat w2 = Mat::Zero(mlp.fc1.out(), c);
  w2.topRows(c) = Mat::Identity(c, c);
  w2.middleRows(c, c) = -Mat::Identity(c, c);
  set_linear(mlp.fc1, w1);
  set_linear(mlp.fc2, w2);
}

}  // namespace

TEST_CASE("sequence lengths and layouts") {
  FusionConfig cfg;  // N=7, C=128
  ParamSet params;
  MstFusion fusion(params, "fusion", cfg);
  Rng rng(1);
  fusion.init(rng);
  Tape tape;
  Var fr = tape.constant(random_mat(49, 128, rng));
  Var ft = tape.constant(random_mat(49, 128, rng));
  Var count = tape.constant(random_mat(1, 128, rng));

  const TokenSequence f1 = build_initial_sequence(fr, ft, &count);
  CHECK(f1.tokens.rows() == 99);
  CHECK(f1.layout == SequenceLayout{49, 49, 1});
  CHECK(f1.tokens.value().topRows(49) == fr.value());
  CHECK(f1.tokens.value().bottomRows(1) == count.value());

  const TokenSequence f2 = fusion.build_middle_sequence(tape, fr, ft, &count);
  CHECK(f2.tokens.rows() == 15);
  CHECK(f2.tokens.value().bottomRows(1) == count.value());
  const TokenSequence f3 = fusion.build_large_sequence(tape, fr, ft, &count);
  CHECK(f3.tokens.rows() == 3);
  CHECK(f3.layout == SequenceLayout{1, 1, 1});

  CHECK(restore_length(tape, fusion.mhsa_branch(tape, f2, 1), f1.layout, fusion.restore_middle()).rows() == 99);
  CHECK(restore_length(tape, fusion.mhsa_branch(tape, f3, 2), f1.layout, fusion.restore_large()).rows() == 99);

  const FusedState g = fusion.forward(tape, fr, ft, &count);
  CHECK(g.g_r.rows() == 49);
  CHECK(g.g_r.cols() == 128);
  CHECK(g.g_t.rows() == 49);
  REQUIRE(g.g_count);
  CHECK(g.g_count->rows() == 1);
  CHECK(params.scalar_count() == fusion_param_count(cfg));
}

TEST_CASE("single-token grid and no count token") {
  Rng rng(2);
  Tape tape;
  Var fr = tape.constant(random_mat(1, 8, rng));
  Var ft = tape.constant(random_mat(1, 8, rng));
  Var count = tape.constant(random_mat(1, 8, rng));
  CHECK(build_initial_sequence(fr, ft, &count).tokens.rows() == 3);

  FusionConfig cfg;
  cfg.enable_count_token = false;
  cfg.channels = 16;
  ParamSet params;
  MstFusion fusion(params, "fusion", cfg);
  fusion.init(rng);
  Var r7 = tape.constant(random_mat(49, 16, rng));
  Var t7 = tape.constant(random_mat(49, 16, rng));
  CHECK(build_initial_sequence(r7, t7, nullptr).tokens.rows() == 98);
  CHECK(fusion.build_middle_sequence(tape, r7, t7, nullptr).tokens.rows() == 14);
  CHECK(fusion.build_large_sequence(tape, r7, t7, nullptr).tokens.rows() == 2);
  const FusedState g = fusion.forward(tape, r7, t7, nullptr);
  CHECK_FALSE(g.g_count);
  CHECK(g.g_t.rows() == 49);
  CHECK(params.scalar_count() == fusion_param_count(cfg));
  CHECK_THROWS_AS(fusion.forward(tape, r7, t7, &count), std::invalid_argument);
}

TEST_CASE("merge_tokens shapes, group-mean oracle and divisibility") {
  Rng rng(3);
  ParamSet params;
  const Linear to7(params, "m7", 7 * 128, 128);
  const Linear to1(params, "m1", 49 * 128, 128);
  Tape tape;
  Var seq = tape.constant(random_mat(49, 128, rng));
  CHECK(merge_tokens(tape, seq, 7, to7).rows() == 7);
  CHECK(merge_tokens(tape, seq, 1, to1).cols() == 128);

  set_linear(to7, group_mean(7, 128));
  Mat constant_rows = Mat::Constant(49, 128, 0.0);
  constant_rows.rowwise() = random_mat(1, 128, rng).row(0);
  const Mat out = merge_tokens(tape, tape.constant(constant_rows), 7, to7).value();
  for (Eigen::Index r = 0; r < 7; ++r) CHECK((out.row(r) - constant_rows.row(0)).cwiseAbs().maxCoeff() < 1e-14);

  // Row-major grouping: middle token r is the mean of grid row r.
  const Mat grid = random_mat(49, 128, rng);
  const Mat rows = merge_tokens(tape, tape.constant(grid), 7, to7).value();
  for (Eigen::Index r = 0; r < 7; ++r)
    CHECK((rows.row(r) - grid.middleRows(r * 7, 7).colwise().mean()).cwiseAbs().maxCoeff() < 1e-13);

  CHECK_THROWS_AS(merge_tokens(tape, tape.constant(random_mat(48, 128, rng)), 7, to7), std::invalid_argument);
}

TEST_CASE("restore_length keeps segments apart and the count slot last") {
  const Eigen::Index n = 3;
  const Eigen::Index c = 4;
  ParamSet params;
  RestoreMaps maps{Linear(params, "r.rgb", c, n * c), Linear(params, "r.t", c, n * c), Linear(params, "r.c", c, c)};
  set_linear(maps.color, broadcast(n, c));
  set_linear(maps.thermal, broadcast(n, c), 0.0);
  set_linear(*maps.count, Mat::Identity(c, c));
  Rng rng(4);
  Tape tape;
  const Mat src = random_mat(2 * n + 1, c, rng);
  const TokenSequence mid{tape.constant(src), {n, n, 1}};
  const Mat out = restore_length(tape, mid, {n * n, n * n, 1}, maps).value();
  REQUIRE(out.rows() == 2 * n * n + 1);
  for (Eigen::Index i = 0; i < n * n; ++i) {
    CHECK(out.row(i) == src.row(i / n));
    CHECK(out.row(n * n + i) == src.row(n + i / n));
  }
  CHECK(out.row(2 * n * n) == src.row(2 * n));
}

TEST_CASE("residual_combine identity construction returns f1") {
  const Eigen::Index c = 6;
  ParamSet params;
  const Mlp mlp(params, "combine", 2 * c, 2 * c, c);
  set_block_mean(mlp, 2, c, {0.0, 1.0});
  Rng rng(5);
  Tape tape;
  const Mat f1 = random_mat(11, c, rng);
  const Mat out = residual_combine(tape, tape.constant(Mat::Zero(11, c)), tape.constant(f1), mlp).value();
  CHECK((out - f1).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(out.rows() == 11);
}

TEST_CASE("constant tokens are a fixed point of the mean/broadcast harness") {
  FusionConfig cfg = tiny_config();
  cfg.token_grid_n = 3;
  const Eigen::Index n = cfg.token_grid_n;
  const Eigen::Index c = cfg.channels;
  ParamSet params;
  MstFusion fusion(params, "fusion", cfg);
  Rng rng(6);
  fusion.init(rng);
  // Attention bypass: zero the residual branches of every encoder layer.
  for (auto& p : params)
    if (p->name.find(".attn.o.") != std::string::npos || p->name.find(".ffn.fc2.") != std::string::npos)
      p->value.setZero();
  for (bool t : {false, true}) {
    set_linear(fusion.merge_middle(t), group_mean(n, c));
    set_linear(fusion.merge_large(t), group_mean(n * n, c));
  }
  for (const RestoreMaps* r : {&fusion.restore_middle(), &fusion.restore_large()}) {
    const Eigen::Index factor = r == &fusion.restore_middle() ? n : n * n;
    set_linear(r->color, broadcast(factor, c));
    set_linear(r->thermal, broadcast(factor, c));
    set_linear(*r->count, Mat::Identity(c, c));
  }
  set_block_mean(fusion.combine_middle(), 2, c);
  set_block_mean(fusion.combine_large(), 2, c);
  set_block_mean(fusion.fuse(), 3, c);

  Mat v = random_mat(1, c, rng);
  Tape tape;
  Var fr = tape.constant(v.replicate(n * n, 1));
  Var ft = tape.constant(v.replicate(n * n, 1));
  Var count = tape.constant(v);
  const Mat out = stack(fusion.forward(tape, fr, ft, &count));
  CHECK((out - v.replicate(out.rows(), 1)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("self-attention: single token weights and permutation equivariance") {
  FusionConfig cfg = tiny_config();
  ParamSet params;
  MstFusion fusion(params, "fusion", cfg);
  Rng rng(7);
  fusion.init(rng);
  Tape tape;
  std::vector<Mat> weights;
  const TokenSequence one{tape.constant(random_mat(1, 8, rng)), {1, 0, 0}};
  CHECK(fusion.mhsa_branch(tape, one, 2, &weights).tokens.rows() == 1);
  REQUIRE(weights.size() == 2);
  for (const Mat& w : weights) CHECK(w == Mat::Constant(1, 1, 1.0));

  const Mat x = random_mat(9, 8, rng);
  std::vector<Eigen::Index> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Mat px(9, 8);
  for (Eigen::Index i = 0; i < 9; ++i) px.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
  const Mat y = fusion.mhsa_branch(tape, {tape.constant(x), {4, 4, 1}}, 0).tokens.value();
  const Mat py = fusion.mhsa_branch(tape, {tape.constant(px), {4, 4, 1}}, 0).tokens.value();
  for (Eigen::Index i = 0; i < 9; ++i) CHECK((py.row(i) - y.row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(y.rows() == 9);
}

TEST_CASE("multiscale ablation returns the split initial branch") {
  FusionConfig cfg = tiny_config();
  cfg.enable_multiscale = false;
  ParamSet params;
  MstFusion fusion(params, "fusion", cfg);
  Rng rng(8);
  fusion.init(rng);
  Tape tape;
  Var fr = tape.constant(random_mat(4, 8, rng));
  Var ft = tape.constant(random_mat(4, 8, rng));
  Var count = tape.constant(random_mat(1, 8, rng));
  const Mat expect = fusion.mhsa_branch(tape, build_initial_sequence(fr, ft, &count), 0).tokens.value();
  CHECK(stack(fusion.forward(tape, fr, ft, &count)) == expect);

  FusionConfig ms = tiny_config();
  CHECK(fusion_param_count(ms) > fusion_param_count(cfg));
  CHECK(params.scalar_count() == fusion_param_count(cfg));
}

TEST_CASE("fusion gradients match finite differences on a tiny config") {
  const FusionConfig cfg = tiny_config();
  ParamSet params;
  MstFusion fusion(params, "fusion", cfg);
  Rng rng(9);
  fusion.init(rng);
  for (auto& p : params) p->value += random_mat(p->value.rows(), p->value.cols(), rng, 0.1);
  Param& token = params.add("count_token", 1, 8);
  token.value = random_mat(1, 8, rng, 0.5);
  const Mat fr0 = random_mat(4, 8, rng);
  const Mat ft0 = random_mat(4, 8, rng);
  const Mat probe = random_mat(9, 8, rng);

  auto run = [&](Tape& t, const Var& fr, const Var& ft) {
    Var count = t.param(token);
    const FusedState s = fusion.forward(t, fr, ft, &count);
    const Var parts[] = {s.g_r, s.g_t, *s.g_count};
    return project(t, concat_rows(parts), probe);
  };
  std::string worst;
  const double dev = rgbtcc::testing::param_grad_deviation(
      params, [&](Tape& t) { return run(t, t.constant(fr0), t.constant(ft0)); }, 1e-5, 1e-6, &worst);
  INFO(worst);
  CHECK(dev < 1e-4);
  CHECK(rgbtcc::testing::input_grad_deviation([&](Tape& t, const Var& x) { return run(t, x, t.constant(ft0)); },
                                              fr0) < 1e-4);
  CHECK(rgbtcc::testing::input_grad_deviation([&](Tape& t, const Var& x) { return run(t, t.constant(fr0), x); },
                                              ft0) < 1e-4);

  // A function of g_count alone still reaches the count token.
  params.zero_grad();
  Tape tape;
  Var count = tape.param(token);
  const FusedState s = fusion.forward(tape, tape.constant(fr0), tape.constant(ft0), &count);
  tape.backward(project(tape, *s.g_count, probe.topRows(1)));
  CHECK(token.grad.cwiseAbs().maxCoeff() > 1e-6);
}
