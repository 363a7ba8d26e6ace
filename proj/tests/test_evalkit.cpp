#include <gtest/gtest.h>

#include <random>

#include <ncpd/ncpd.hpp>

using namespace ncpd;

namespace {

RealVolume<double> noisy(const RealVolume<double>& x, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, sigma);
  auto y = x;
  for (auto& v : y.data) v += g(rng);
  return y;
}

long double psnr_brute(const RealVolume<double>& x, const RealVolume<double>& ref) {
  long double peak = ref[0], se = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) peak = std::max<long double>(peak, ref[i]);
  for (std::size_t i = 0; i < x.size(); ++i) {
    long double d = static_cast<long double>(x[i]) - ref[i];
    se += d * d;
  }
  return 10.0L * std::log10(peak * peak / (se / x.size()));
}

// Direct 3D window at every voxel, truncated at the border and renormalized.
double ssim_direct(const RealVolume<double>& x, const RealVolume<double>& ref) {
  const auto& d = ref.dims;
  const int half = 5;
  const double sigma = 1.5;
  double range = ref[0];
  for (double v : ref.data) range = std::max(range, v);
  const double c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2);
  double total = 0;
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int xi = 0; xi < d.nx; ++xi) {
        double sw = 0, mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
        for (int dz = -half; dz <= half; ++dz)
          for (int dy = -half; dy <= half; ++dy)
            for (int dx = -half; dx <= half; ++dx) {
              int a = xi + dx, b = y + dy, c = z + dz;
              if (a < 0 || b < 0 || c < 0 || a >= d.nx || b >= d.ny || c >= d.nz) continue;
              double w = std::exp(-(dx * dx + dy * dy + dz * dz) / (2 * sigma * sigma));
              double p = x(a, b, c), q = ref(a, b, c);
              sw += w;
              mx += w * p;
              my += w * q;
              mxx += w * p * p;
              myy += w * q * q;
              mxy += w * p * q;
            }
        mx /= sw;
        my /= sw;
        double vx = mxx / sw - mx * mx, vy = myy / sw - my * my, cv = mxy / sw - mx * my;
        total += (2 * mx * my + c1) * (2 * cv + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
  return total / static_cast<double>(ref.size());
}

}  // namespace

TEST(Phantom, CanonicalRangeAndDeterminism) {
  MatrixSize d{32, 32, 32};
  auto p = make_phantom<double>(d, 0, false);
  double lo = 1, hi = 0;
  for (double v : p.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  EXPECT_EQ(lo, 0.0);
  EXPECT_EQ(hi, 1.0);
  EXPECT_EQ(p.data, make_phantom<double>(d, 99, false).data);
  EXPECT_EQ(p(0, 0, 0), 0.0);
  EXPECT_GT(p(16, 16, 16), 0.0);
}

TEST(Phantom, RandomizedVariesWithSeedAndStaysInside) {
  MatrixSize d{24, 24, 24};
  auto a = make_phantom<double>(d, 1, true), b = make_phantom<double>(d, 2, true);
  EXPECT_NE(a.data, b.data);
  EXPECT_EQ(a.data, make_phantom<double>(d, 1, true).data);
  for (int s = 0; s < 20; ++s) {
    auto p = make_phantom<double>(d, static_cast<std::uint64_t>(s), true);
    for (int z = 0; z < d.nz; ++z)
      for (int y = 0; y < d.ny; ++y) {
        EXPECT_EQ(p(0, y, z), 0.0);
        EXPECT_EQ(p(y, 0, z), 0.0);
        EXPECT_EQ(p(y, z, 0), 0.0);
      }
  }
}

TEST(Acquire, NoiseMatchesRequestedSnr) {
  MatrixSize d{16, 16, 16};
  NufftPlan<double> plan(d);
  auto t = gen_radial_gm(256, 16);
  auto maps = simulate_sensitivities<double>(4, d, 1);
  auto ph = make_phantom<double>(d, 3, true);
  auto clean = acquire_retrospective(ph, maps, plan, t);
  for (double snr : {0.0, 10.0, 25.0}) {
    auto dirty = acquire_retrospective(ph, maps, plan, t, snr, 17);
    double sig = 0, noise = 0;
    for (std::size_t l = 0; l < clean.kdata.coils.size(); ++l)
      for (std::size_t m = 0; m < t.size(); ++m) {
        sig += std::norm(clean.kdata.coils[l][m]);
        noise += std::norm(dirty.kdata.coils[l][m] - clean.kdata.coils[l][m]);
      }
    EXPECT_NEAR(10 * std::log10(sig / noise), snr, 0.5) << "snr " << snr;
  }
  EXPECT_EQ(acquire_retrospective(ph, maps, plan, t, 10.0, 5).kdata.coils[0],
            acquire_retrospective(ph, maps, plan, t, 10.0, 5).kdata.coils[0]);
}

TEST(Acquire, TargetIsSosOfCoilImages) {
  MatrixSize d{8, 8, 8};
  NufftPlan<double> plan(d);
  auto ph = make_phantom<double>(d, 0, false);
  auto acq = acquire_retrospective(ph, simulate_sensitivities<double>(3, d, 2), plan, gen_radial_gm(8, 8));
  for (std::size_t v = 0; v < ph.size(); ++v) EXPECT_NEAR(acq.target[v], ph[v], 1e-12);
}

TEST(Psnr, MatchesBruteForce) {
  MatrixSize d{13, 12, 11};
  auto ref = make_phantom<double>(d, 4, true);
  for (double s : {0.01, 0.1, 0.5}) {
    auto x = noisy(ref, s, 3);
    EXPECT_NEAR(psnr(x, ref), static_cast<double>(psnr_brute(x, ref)), 1e-9);
  }
}

TEST(Psnr, UniformErrorClosedForm) {
  MatrixSize d{16, 16, 16};
  auto ref = make_phantom<double>(d, 0, false);
  auto x = ref;
  for (auto& v : x.data) v += 0.1;
  EXPECT_NEAR(psnr(x, ref), 20.0, 1e-9);
  EXPECT_TRUE(std::isinf(psnr(ref, ref)));
  EXPECT_THROW(psnr(ref, RealVolume<double>(d)), ArgumentError);
}

TEST(Ssim, MatchesDirectOracle) {
  MatrixSize d{13, 12, 11};
  auto ref = make_phantom<double>(d, 5, true);
  for (double s : {0.02, 0.2}) {
    auto x = noisy(ref, s, 7);
    EXPECT_NEAR(ssim(x, ref), ssim_direct(x, ref), 1e-6);
  }
}

TEST(Ssim, ConstantVolumesClosedForm) {
  MatrixSize d{12, 12, 12};
  RealVolume<double> a(d), b(d);
  for (auto& v : a.data) v = 0.3;
  for (auto& v : b.data) v = 0.8;
  const double c1 = std::pow(0.01 * 0.8, 2);
  EXPECT_NEAR(ssim(a, b), (2 * 0.3 * 0.8 + c1) / (0.3 * 0.3 + 0.8 * 0.8 + c1), 1e-9);
  EXPECT_NEAR(ssim(b, b), 1.0, 1e-12);
}

TEST(Ssim, Guards) {
  RealVolume<double> s({8, 8, 8});
  EXPECT_THROW(ssim(s, s), ArgumentError);
  RealVolume<double> a({12, 12, 12}), b({12, 12, 11});
  EXPECT_THROW(ssim(a, b), ArgumentError);
  SsimOptions even;
  even.window = 10;
  EXPECT_THROW(ssim(a, a, even), ArgumentError);
}

TEST(Metrics, DecreaseWithNoise) {
  MatrixSize d{16, 16, 16};
  auto ref = make_phantom<double>(d, 0, false);
  double prev_p = 1e9, prev_s = 2;
  for (double s : {0.01, 0.05, 0.2}) {
    auto r = evaluate(noisy(ref, s, 11), ref);
    EXPECT_LT(r.psnr_db, prev_p);
    EXPECT_LT(r.ssim, prev_s);
    prev_p = r.psnr_db;
    prev_s = r.ssim;
  }
}
