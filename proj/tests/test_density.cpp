#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <random>

#include <ncpd/ncpd.hpp>

using namespace ncpd;

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j);
    i = j + 1;
  }
  return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ra = ranks(a), rb = ranks(b);
  double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / ra.size();
  double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / rb.size();
  double c = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    c += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  return c / std::sqrt(va * vb);
}

double coefficient_of_variation(const std::vector<double>& w) {
  double mean = std::accumulate(w.begin(), w.end(), 0.0) / w.size();
  double sq = 0;
  for (double v : w) sq += (v - mean) * (v - mean);
  return std::sqrt(sq / w.size()) / mean;
}

}  // namespace

TEST(PipeMenon, CartesianGridIsUniform) {
  MatrixSize d{32, 32, 32};
  NufftPlan<double> plan(d);
  auto w = pipe_menon_weights(plan, gen_cartesian(d), 10);
  EXPECT_LE(coefficient_of_variation(w.w), 0.02);
  EXPECT_NO_THROW(w.validate());
}

TEST(PipeMenon, SingleSampleFixedPointAfterOneIteration) {
  NufftPlan<double> plan({16, 16, 16});
  for (auto nu : {std::array<double, 3>{0, 0, 0}, std::array<double, 3>{0.137, -0.211, 0.0423}}) {
    KTrajectory t(1, 1, TrajectoryKind::Imported);
    t.set(0, nu[0], nu[1], nu[2]);
    std::vector<double> w{1.0};
    w[0] /= std::abs(plan.kernel_roundtrip(w, t)[0]);
    EXPECT_NEAR(std::abs(plan.kernel_roundtrip(w, t)[0]), 1.0, 1e-6);
  }
  KTrajectory origin(1, 1, TrajectoryKind::Imported);
  EXPECT_NEAR(plan.kernel_roundtrip({1.0}, origin)[0], 1.0, 1e-6);
}

TEST(PipeMenon, RadialWeightsGrowWithRadius) {
  MatrixSize d{32, 32, 32};
  NufftPlan<double> plan(d);
  auto t = gen_radial_gm(256, 32);
  auto w = pipe_menon_weights(plan, t, 10);
  std::vector<double> ws, rs;
  for (std::size_t i = 0; i < t.size(); ++i) {
    auto k = t.at(i);
    double r = std::sqrt(static_cast<double>(k[0]) * k[0] + static_cast<double>(k[1]) * k[1] +
                         static_cast<double>(k[2]) * k[2]);
    if (r > 0.1 && r < 0.4) {
      ws.push_back(w.w[i]);
      rs.push_back(r);
    }
  }
  EXPECT_GE(spearman(ws, rs), 0.9);
}

TEST(PipeMenon, ResidualNonIncreasingFirstFiveIterations) {
  MatrixSize d{32, 32, 32};
  NufftPlan<double> plan(d);
  for (const auto& t : {gen_radial_gm(256, 32), gen_cones(256, 32, 8, 1.0)}) {
    std::vector<double> hist;
    PipeMenonOptions opt;
    opt.n_iter = 5;
    opt.residual_history = &hist;
    pipe_menon_weights(plan, t, opt);
    ASSERT_EQ(hist.size(), 6u);
    for (std::size_t k = 1; k < hist.size(); ++k) EXPECT_LE(hist[k], hist[k - 1]) << kind_name(t.kind) << " iter " << k;
  }
}

TEST(PipeMenon, ScaleInvariant) {
  MatrixSize d{16, 16, 16};
  NufftPlan<double> plan(d);
  auto t = gen_tpi(64, 16, 0.4);
  PipeMenonOptions a, b;
  b.initial = 37.5;
  auto wa = pipe_menon_weights(plan, t, a), wb = pipe_menon_weights(plan, t, b);
  for (std::size_t i = 0; i < wa.w.size(); ++i) EXPECT_NEAR(wa.w[i], wb.w[i], 1e-10);
  double peak = *std::max_element(wa.w.begin(), wa.w.end());
  EXPECT_DOUBLE_EQ(peak, 1.0);
}

TEST(PipeMenon, Guards) {
  NufftPlan<double> plan({8, 8, 8});
  auto t = gen_radial_gm(4, 8);
  EXPECT_THROW(pipe_menon_weights(plan, t, 0), ArgumentError);
  PipeMenonOptions opt;
  opt.initial = -1;
  EXPECT_THROW(pipe_menon_weights(plan, t, opt), ArgumentError);
}

TEST(DensityIo, Roundtrip) {
  NufftPlan<float> plan({8, 8, 8});
  auto w = pipe_menon_weights(plan, gen_radial_gm(10, 8), 3);
  auto p = (std::filesystem::temp_directory_path() / "ncpd_w.dcw").string();
  save_density(p, w);
  auto r = load_density(p);
  ASSERT_EQ(r.w.size(), w.w.size());
  for (std::size_t i = 0; i < w.w.size(); ++i) EXPECT_EQ(r.w[i], static_cast<double>(static_cast<float>(w.w[i])));
  std::filesystem::resize_file(p, 10);
  EXPECT_THROW(load_density(p), FormatError);
}
