#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include "coils.hpp"

namespace ncpd {

struct Ellipsoid {
  double intensity;
  double a, b, c;       // semi-axes, normalized units
  double x0, y0, z0;    // center
  double phi_deg;       // rotation about z
};

struct PhantomSpec {
  MatrixSize dims;
  std::vector<Ellipsoid> ellipsoids;
  std::uint64_t seed = 0;
};

/// Modified 3D Shepp-Logan set (Kak & Slaney geometry, high-contrast intensities).
inline std::vector<Ellipsoid> shepp_logan_ellipsoids() {
  return {
      {1.0, 0.6900, 0.920, 0.810, 0.00, 0.0000, 0.00, 0},
      {-0.8, 0.6624, 0.874, 0.780, 0.00, -0.0184, 0.00, 0},
      {-0.2, 0.1100, 0.310, 0.220, 0.22, 0.0000, 0.00, -18},
      {-0.2, 0.1600, 0.410, 0.280, -0.22, 0.0000, 0.00, 18},
      {0.1, 0.2100, 0.250, 0.410, 0.00, 0.3500, -0.15, 0},
      {0.1, 0.0460, 0.046, 0.050, 0.00, 0.1000, 0.25, 0},
      {0.1, 0.0460, 0.046, 0.050, 0.00, -0.1000, 0.25, 0},
      {0.1, 0.0460, 0.023, 0.050, -0.08, -0.6050, 0.00, 0},
      {0.1, 0.0230, 0.023, 0.020, 0.00, -0.6060, 0.00, 0},
      {0.1, 0.0230, 0.046, 0.020, 0.06, -0.6050, 0.00, 0},
  };
}

inline bool ellipsoid_contains(const Ellipsoid& e, double x, double y, double z) {
  const double ph = e.phi_deg * std::numbers::pi / 180.0;
  const double dx = x - e.x0, dy = y - e.y0, dz = z - e.z0;
  const double xr = std::cos(ph) * dx + std::sin(ph) * dy;
  const double yr = -std::sin(ph) * dx + std::cos(ph) * dy;
  return (xr * xr) / (e.a * e.a) + (yr * yr) / (e.b * e.b) + (dz * dz) / (e.c * e.c) <= 1.0;
}

/// Canonical set, or a seed-perturbed copy: intensities, semi-axes and
/// centers of the inner ellipsoids jitter by up to 10%; the two outer shells
/// may only shrink, so the head stays inside the unit sphere.
inline PhantomSpec phantom_spec(const MatrixSize& dims, std::uint64_t seed, bool randomize) {
  PhantomSpec spec{dims, shepp_logan_ellipsoids(), seed};
  if (!randomize) return spec;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  const double shrink = 1.0 - std::abs(u(rng));
  for (std::size_t i = 0; i < spec.ellipsoids.size(); ++i) {
    auto& e = spec.ellipsoids[i];
    e.intensity *= 1.0 + u(rng);
    if (i < 2) {
      e.a *= shrink;
      e.b *= shrink;
      e.c *= shrink;
      e.y0 *= shrink;
      continue;
    }
    double ja = u(rng), jb = u(rng), jc = u(rng);
    e.x0 += u(rng) * e.a;
    e.y0 += u(rng) * e.b;
    e.z0 += u(rng) * e.c;
    e.a *= 1.0 + ja;
    e.b *= 1.0 + jb;
    e.c *= 1.0 + jc;
  }
  return spec;
}

/// Voxel (ix, iy, iz) sits at normalized position n / (N / 2) per axis.
template <typename T>
RealVolume<T> render_phantom(const PhantomSpec& spec) {
  const auto& d = spec.dims;
  RealVolume<T> out(d);
  for (int iz = 0; iz < d.nz; ++iz) {
    double z = static_cast<double>(centered_index(iz, d.nz)) / (d.nz / 2.0);
    for (int iy = 0; iy < d.ny; ++iy) {
      double y = static_cast<double>(centered_index(iy, d.ny)) / (d.ny / 2.0);
      for (int ix = 0; ix < d.nx; ++ix) {
        double x = static_cast<double>(centered_index(ix, d.nx)) / (d.nx / 2.0);
        double v = 0;
        for (const auto& e : spec.ellipsoids) {
          if (ellipsoid_contains(e, x, y, z)) v += e.intensity;
        }
        out(ix, iy, iz) = static_cast<T>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

template <typename T>
RealVolume<T> make_phantom(const MatrixSize& dims, std::uint64_t seed, bool randomize) {
  return render_phantom<T>(phantom_spec(dims, seed, randomize));
}

template <typename T>
struct Acquisition {
  KSpaceData<T> kdata;
  RealVolume<T> target;
};

/// Projects coil images S_l * phantom onto the trajectory; optional circular
/// complex Gaussian noise at a sample-domain SNR (mean |y|^2 / noise variance).
template <typename T>
Acquisition<T> acquire_retrospective(const RealVolume<T>& phantom, const SensitivityMaps<T>& maps,
                                     const NufftPlan<T>& plan, const KTrajectory& traj,
                                     std::optional<double> noise_snr_db = std::nullopt,
                                     std::uint64_t seed = 0) {
  require_same_dims(phantom.dims, plan.dims(), "acquire_retrospective");
  require_same_dims(maps.dims(), plan.dims(), "acquire_retrospective");
  auto x = to_complex(phantom);
  Acquisition<T> acq;
  acq.kdata = op_forward(plan, traj, maps, x);

  std::vector<ComplexVolume<T>> coil_images;
  for (const auto& s : maps.maps) {
    ComplexVolume<T> c(phantom.dims);
    for (std::size_t v = 0; v < c.size(); ++v) c[v] = s[v] * x[v];
    coil_images.push_back(std::move(c));
  }
  acq.target = sos_combine(coil_images);

  if (noise_snr_db) {
    double power = 0;
    std::size_t count = 0;
    for (const auto& c : acq.kdata.coils) {
      for (const auto& v : c) power += std::norm(v);
      count += c.size();
    }
    power /= static_cast<double>(count);
    const double sigma = std::sqrt(power / std::pow(10.0, *noise_snr_db / 10.0) / 2.0);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, sigma);
    for (auto& c : acq.kdata.coils) {
      for (auto& v : c) v += cplx<T>(static_cast<T>(g(rng)), static_cast<T>(g(rng)));
    }
  }
  return acq;
}

// ---------------------------------------------------------------------------
// Metrics. Data range is max(ref) for both PSNR and SSIM.

struct MetricReport {
  double psnr_db = 0;
  double ssim = 0;
};

template <typename T>
double psnr(const RealVolume<T>& x, const RealVolume<T>& ref) {
  require_same_dims(x.dims, ref.dims, "psnr");
  double peak = -std::numeric_limits<double>::infinity();
  bool nonzero = false;
  for (auto v : ref.data) {
    peak = std::max(peak, static_cast<double>(v));
    nonzero = nonzero || v != T(0);
  }
  if (!nonzero) throw ArgumentError("psnr: reference volume is all zero");
  double mse = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double d = static_cast<double>(x[i]) - static_cast<double>(ref[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(x.size());
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

struct SsimOptions {
  double sigma = 1.5;
  int window = 11;
  double k1 = 0.01;
  double k2 = 0.03;
};

namespace ssim_detail {

/// Gaussian smoothing along one axis, renormalized where the window is cut
/// by the volume border.
inline void smooth_axis(std::vector<double>& v, const MatrixSize& d, int axis,
                        const std::vector<double>& taps) {
  const int half = static_cast<int>(taps.size() / 2);
  const int n[3] = {d.nx, d.ny, d.nz};
  const std::size_t stride[3] = {1, static_cast<std::size_t>(d.nx),
                                 static_cast<std::size_t>(d.nx) * static_cast<std::size_t>(d.ny)};
  const int len = n[axis];
  std::vector<double> line(static_cast<std::size_t>(len));
  std::vector<double> out(static_cast<std::size_t>(len));
  const int o1 = axis == 0 ? 1 : 0;
  const int o2 = axis == 2 ? 1 : 2;
  for (int j = 0; j < n[o2]; ++j) {
    for (int i = 0; i < n[o1]; ++i) {
      std::size_t base = static_cast<std::size_t>(i) * stride[o1] + static_cast<std::size_t>(j) * stride[o2];
      for (int p = 0; p < len; ++p) line[static_cast<std::size_t>(p)] = v[base + static_cast<std::size_t>(p) * stride[axis]];
      for (int p = 0; p < len; ++p) {
        double acc = 0, wsum = 0;
        for (int k = -half; k <= half; ++k) {
          int q = p + k;
          if (q < 0 || q >= len) continue;
          double w = taps[static_cast<std::size_t>(k + half)];
          acc += w * line[static_cast<std::size_t>(q)];
          wsum += w;
        }
        out[static_cast<std::size_t>(p)] = acc / wsum;
      }
      for (int p = 0; p < len; ++p) v[base + static_cast<std::size_t>(p) * stride[axis]] = out[static_cast<std::size_t>(p)];
    }
  }
}

inline std::vector<double> gaussian_taps(const SsimOptions& opt) {
  std::vector<double> taps(static_cast<std::size_t>(opt.window));
  const int half = opt.window / 2;
  for (int k = -half; k <= half; ++k) {
    taps[static_cast<std::size_t>(k + half)] = std::exp(-(k * k) / (2.0 * opt.sigma * opt.sigma));
  }
  return taps;
}

}  // namespace ssim_detail

/// Mean local SSIM over a 3D Gaussian window.
template <typename T>
double ssim(const RealVolume<T>& x, const RealVolume<T>& ref, const SsimOptions& opt = {}) {
  require_same_dims(x.dims, ref.dims, "ssim");
  const auto& d = ref.dims;
  if (opt.window < 1 || opt.window % 2 == 0) throw ArgumentError("ssim: window must be odd");
  if (d.nx < opt.window || d.ny < opt.window || d.nz < opt.window) {
    throw ArgumentError("ssim: volume " + d.to_string() + " smaller than the " +
                        std::to_string(opt.window) + "^3 window");
  }
  double range = -std::numeric_limits<double>::infinity();
  for (auto v : ref.data) range = std::max(range, static_cast<double>(v));
  const double c1 = (opt.k1 * range) * (opt.k1 * range);
  const double c2 = (opt.k2 * range) * (opt.k2 * range);

  const std::size_t n = x.size();
  std::vector<double> mx(n), my(n), mxx(n), myy(n), mxy(n);
  for (std::size_t i = 0; i < n; ++i) {
    double a = x[i], b = ref[i];
    mx[i] = a;
    my[i] = b;
    mxx[i] = a * a;
    myy[i] = b * b;
    mxy[i] = a * b;
  }
  auto taps = ssim_detail::gaussian_taps(opt);
  for (auto* v : {&mx, &my, &mxx, &myy, &mxy}) {
    for (int axis = 0; axis < 3; ++axis) ssim_detail::smooth_axis(*v, d, axis, taps);
  }
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double vx = mxx[i] - mx[i] * mx[i];
    double vy = myy[i] - my[i] * my[i];
    double cov = mxy[i] - mx[i] * my[i];
    total += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(n);
}

template <typename T>
MetricReport evaluate(const RealVolume<T>& x, const RealVolume<T>& ref) {
  return {psnr(x, ref), ssim(x, ref)};
}

}  // namespace ncpd
