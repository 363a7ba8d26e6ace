#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include <ncpd/ncpd.hpp>

using namespace ncpd;

namespace {

KTrajectory random_traj(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  KTrajectory t(1, n, TrajectoryKind::Imported);
  for (int i = 0; i < n; ++i) t.set(static_cast<std::size_t>(i), u(rng), u(rng), u(rng));
  for (auto& c : t.coords) c = std::min(c, std::nextafter(0.5f, 0.f));
  return t;
}

template <typename T>
ComplexVolume<T> random_volume(MatrixSize d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  ComplexVolume<T> x(d);
  for (auto& z : x.data) z = cplx<T>(static_cast<T>(g(rng)), static_cast<T>(g(rng)));
  return x;
}

template <typename T>
SampleVector<T> random_samples(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  SampleVector<T> y(n);
  for (auto& z : y) z = cplx<T>(static_cast<T>(g(rng)), static_cast<T>(g(rng)));
  return y;
}

double rel_l2(const std::vector<std::complex<double>>& a, const std::vector<std::complex<double>>& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += std::norm(a[i] - b[i]);
    den += std::norm(b[i]);
  }
  return std::sqrt(num / den);
}

template <typename T>
double dot_test(const NufftPlan<T>& plan, const KTrajectory& t, std::uint64_t seed) {
  auto x = random_volume<T>(plan.dims(), seed);
  auto y = random_samples<T>(t.size(), seed + 1);
  auto fx = plan.forward(x, t);
  auto fhy = plan.adjoint(y, t);
  auto lhs = dot(fx, y);
  auto rhs = dot(x.data, fhy.data);
  return std::abs(lhs - rhs) / (norm2(fx) * norm2(y));
}

}  // namespace

TEST(Plan, DefaultsValidAndDeapodizationPositive) {
  auto plan = make_plan<double>({16, 16, 16});
  EXPECT_EQ(plan.kernel_width(), 6);
  EXPECT_DOUBLE_EQ(plan.oversampling(), 2.0);
  double lo = 1e300;
  for (double v : plan.deapodization().data) lo = std::min(lo, v);
  EXPECT_GT(lo, 0.0);
  const double ratio = 6.0 / 2.0 * 1.5;
  EXPECT_NEAR(plan.beta(), std::numbers::pi * std::sqrt(ratio * ratio - 0.8), 1e-12);
}

TEST(Plan, ParameterGuards) {
  EXPECT_THROW(make_plan<double>({16, 16, 16}, 1.0), ArgumentError);
  EXPECT_THROW(make_plan<double>({16, 16, 16}, 2.0, 5), ArgumentError);
  EXPECT_THROW(make_plan<double>({16, 16, 16}, 2.0, 12), ArgumentError);
  EXPECT_NO_THROW(make_plan<double>({16, 16, 16}, 1.25, 2));
}

TEST(Plan, DeterministicDeapodization) {
  auto a = make_plan<double>({12, 10, 8});
  auto b = make_plan<double>({12, 10, 8});
  EXPECT_EQ(a.deapodization().data, b.deapodization().data);
}

TEST(Forward, CenteredDeltaGivesConstant) {
  MatrixSize d{16, 16, 16};
  auto plan = make_plan<double>(d);
  ComplexVolume<double> x(d);
  x(8, 8, 8) = 1.0;
  auto t = random_traj(200, 4);
  auto y = nufft_forward(plan, x, t);
  const double expect = 1.0 / std::sqrt(static_cast<double>(d.voxels()));
  for (const auto& v : y) EXPECT_LE(std::abs(v - expect), 1e-5 * expect);
}

TEST(Forward, ZeroVolumeGivesZeroSamples) {
  MatrixSize d{8, 8, 8};
  auto plan = make_plan<double>(d);
  auto y = nufft_forward(plan, ComplexVolume<double>(d), random_traj(50, 1));
  for (const auto& v : y) EXPECT_EQ(v, std::complex<double>(0.0, 0.0));
}

TEST(Forward, MatchesOracleSmall) {
  MatrixSize d{8, 8, 8};
  auto plan = make_plan<double>(d);
  auto x = random_volume<double>(d, 11);
  auto t = random_traj(50, 12);
  EXPECT_LE(rel_l2(nufft_forward(plan, x, t), ndft_forward(x, t)), 1e-4);
}

TEST(Forward, DimensionMismatch) {
  auto plan = make_plan<double>({8, 8, 8});
  EXPECT_THROW(nufft_forward(plan, ComplexVolume<double>({8, 8, 6}), random_traj(5, 1)), ArgumentError);
}

TEST(Adjoint, ZeroSamplesAndLengthMismatch) {
  MatrixSize d{8, 8, 8};
  auto plan = make_plan<double>(d);
  auto t = random_traj(30, 2);
  auto x = nufft_adjoint(plan, SampleVector<double>(30), t);
  for (const auto& v : x.data) EXPECT_EQ(v, std::complex<double>(0.0, 0.0));
  EXPECT_THROW(nufft_adjoint(plan, SampleVector<double>(29), t), ArgumentError);
}

TEST(Adjoint, DotTestSingleCase) {
  auto plan = make_plan<double>({12, 12, 12});
  EXPECT_LE(dot_test(plan, random_traj(300, 21), 22), 1e-6);
}

TEST(Adjoint, SingleCenterSampleGivesConstantVolume) {
  MatrixSize d{8, 8, 8};
  auto plan = make_plan<double>(d);
  KTrajectory t(1, 1, TrajectoryKind::Imported);
  SampleVector<double> y{{1.0, 0.0}};
  auto x = nufft_adjoint(plan, y, t);
  std::vector<std::complex<double>> expect(x.size(), 1.0 / std::sqrt(512.0));
  EXPECT_LE(rel_l2(x.data, expect), 1e-4);
}

TEST(Adjoint, DotTestFiftyCases64Bit) {
  auto plan = make_plan<double>({12, 12, 12});
  for (int c = 0; c < 50; ++c) EXPECT_LE(dot_test(plan, random_traj(300, 100 + c), 200 + c), 1e-6) << "case " << c;
}

TEST(Adjoint, DotTest32Bit) {
  auto plan = make_plan<float>({12, 12, 12});
  for (int c = 0; c < 10; ++c) EXPECT_LE(dot_test(plan, random_traj(300, 300 + c), 400 + c), 1e-3);
}

TEST(Accuracy, TwentyCasesAgainstOracle) {
  MatrixSize d{16, 16, 16};
  auto plan = make_plan<double>(d);
  for (int c = 0; c < 20; ++c) {
    auto x = random_volume<double>(d, 500 + c);
    auto t = random_traj(400, 600 + c);
    EXPECT_LE(rel_l2(nufft_forward(plan, x, t), ndft_forward(x, t)), 1e-4) << "forward case " << c;
    auto y = random_samples<double>(t.size(), 700 + c);
    auto a = nufft_adjoint(plan, y, t);
    auto o = ndft_adjoint(y, t, d);
    EXPECT_LE(rel_l2(a.data, o.data), 1e-4) << "adjoint case " << c;
  }
}

TEST(Linearity, CombinationOfInputs) {
  MatrixSize d{10, 10, 10};
  auto plan = make_plan<double>(d);
  auto t = random_traj(120, 3);
  auto x = random_volume<double>(d, 1), z = random_volume<double>(d, 2);
  const std::complex<double> a(0.7, -1.3), b(-2.1, 0.4);
  ComplexVolume<double> c(d);
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = a * x[i] + b * z[i];
  auto fx = plan.forward(x, t), fz = plan.forward(z, t), fc = plan.forward(c, t);
  std::vector<std::complex<double>> lin(fc.size());
  for (std::size_t i = 0; i < lin.size(); ++i) lin[i] = a * fx[i] + b * fz[i];
  EXPECT_LE(rel_l2(fc, lin), 1e-12);
}

TEST(Determinism, RepeatedAndAcrossThreadCounts) {
  MatrixSize d{12, 12, 12};
  auto plan = make_plan<double>(d);
  auto t = random_traj(20000, 8);
  auto x = random_volume<double>(d, 9);
  auto y = random_samples<double>(t.size(), 10);
  const int saved = num_threads();
  set_num_threads(1);
  auto f1 = plan.forward(x, t);
  auto a1 = plan.adjoint(y, t);
  EXPECT_EQ(f1, plan.forward(x, t));
  EXPECT_EQ(a1.data, plan.adjoint(y, t).data);
  set_num_threads(4);
  auto f4 = plan.forward(x, t);
  auto a4 = plan.adjoint(y, t);
  EXPECT_EQ(f4, plan.forward(x, t));
  EXPECT_EQ(a4.data, plan.adjoint(y, t).data);
  EXPECT_EQ(f1, f4);
  EXPECT_LE(rel_l2(a1.data, a4.data), 1e-13);
  set_num_threads(saved);
}

TEST(Oracle, DeltaIsExactlyConstant) {
  MatrixSize d{6, 6, 6};
  ComplexVolume<double> x(d);
  x(3, 3, 3) = 1.0;
  auto y = ndft_forward(x, random_traj(40, 1));
  for (const auto& v : y) EXPECT_NEAR(std::abs(v - 1.0 / std::sqrt(216.0)), 0.0, 1e-15);
}

TEST(Oracle, FullCartesianRoundTripIsIdentity) {
  // k/8 is exact in the float32 coordinate storage
  MatrixSize d{8, 8, 8};
  auto t = gen_cartesian(d);
  auto x = random_volume<double>(d, 3);
  auto back = ndft_adjoint(ndft_forward(x, t), t, d);
  EXPECT_LE(rel_l2(back.data, x.data), 1e-12);
}

TEST(Oracle, GuardsAndMismatch) {
  EXPECT_THROW(ndft_adjoint(SampleVector<double>(3), random_traj(4, 1), {6, 6, 6}), ArgumentError);
  KTrajectory big(1, 1 << 12, TrajectoryKind::Imported);
  EXPECT_THROW(ndft_forward(ComplexVolume<double>({32, 32, 32}), big), RefusalError);
  NdftOracle o;
  EXPECT_THROW(o.apply(NdftDirection::Forward, ComplexVolume<double>({32, 32, 32}), big), RefusalError);
}

TEST(Cvol, RoundtripBothPrecisions) {
  MatrixSize d{5, 4, 3};
  auto x = random_volume<double>(d, 4);
  auto p = (std::filesystem::temp_directory_path() / "ncpd_rt.cvol").string();
  save_cvol(p, x, Precision::F64);
  EXPECT_EQ(load_cvol<double>(p).data, x.data);
  save_cvol(p, x, Precision::F32);
  auto y = load_cvol<double>(p);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LE(std::abs(y[i] - x[i]), 1e-6 * (1 + std::abs(x[i])));
  std::filesystem::resize_file(p, 30);
  EXPECT_THROW(load_cvol<double>(p), FormatError);
}
