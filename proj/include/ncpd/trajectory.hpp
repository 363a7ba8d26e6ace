#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "common.hpp"

namespace ncpd {

enum class TrajectoryKind : std::uint8_t {
  RadialGM = 0,
  Cones = 1,
  TPI = 2,
  GolfHybrid = 3,
  Imported = 4,
};

inline const char* kind_name(TrajectoryKind k) {
  switch (k) {
    case TrajectoryKind::RadialGM: return "radial";
    case TrajectoryKind::Cones: return "cones";
    case TrajectoryKind::TPI: return "tpi";
    case TrajectoryKind::GolfHybrid: return "golf";
    case TrajectoryKind::Imported: return "imported";
  }
  return "imported";
}

inline bool is_center_out(TrajectoryKind k) {
  return k == TrajectoryKind::RadialGM || k == TrajectoryKind::Cones || k == TrajectoryKind::TPI;
}

/// Set of shots in normalized k-space (cycles/voxel), stored shot-major as
/// float triplets. Immutable once generated or loaded.
struct KTrajectory {
  int n_shots = 0;
  int n_samples = 0;
  std::vector<float> coords;
  TrajectoryKind kind = TrajectoryKind::Imported;
  /// Optional; empty when unknown, otherwise one entry per sample.
  std::vector<std::uint8_t> cartesian_mask;

  KTrajectory() = default;
  KTrajectory(int shots, int samples, TrajectoryKind k)
      : n_shots(shots),
        n_samples(samples),
        coords(static_cast<std::size_t>(shots) * static_cast<std::size_t>(samples) * 3, 0.f),
        kind(k) {}

  std::size_t size() const {
    return static_cast<std::size_t>(n_shots) * static_cast<std::size_t>(n_samples);
  }
  std::array<float, 3> at(std::size_t m) const {
    return {coords[3 * m], coords[3 * m + 1], coords[3 * m + 2]};
  }
  std::array<float, 3> at(int shot, int sample) const {
    return at(static_cast<std::size_t>(shot) * static_cast<std::size_t>(n_samples) +
              static_cast<std::size_t>(sample));
  }
  void set(std::size_t m, double kx, double ky, double kz) {
    coords[3 * m] = static_cast<float>(kx);
    coords[3 * m + 1] = static_cast<float>(ky);
    coords[3 * m + 2] = static_cast<float>(kz);
  }

  double cartesian_fraction() const {
    if (cartesian_mask.empty() || size() == 0) return 0.0;
    std::size_t n = 0;
    for (auto b : cartesian_mask) n += b ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(size());
  }

  /// Throws ArgumentError describing the first violated invariant.
  void validate() const {
    if (n_shots < 1 || n_samples < 1) throw ArgumentError("trajectory must have >= 1 shot and sample");
    if (coords.size() != size() * 3) throw ArgumentError("trajectory coordinate array has wrong shape");
    if (!cartesian_mask.empty() && cartesian_mask.size() != size()) {
      throw ArgumentError("cartesian mask length does not match sample count");
    }
    for (std::size_t i = 0; i < coords.size(); ++i) {
      float c = coords[i];
      if (!std::isfinite(c) || c < -0.5f || c >= 0.5f) {
        throw ArgumentError("trajectory coordinate " + std::to_string(i) + " out of [-0.5, 0.5)");
      }
    }
    if (is_center_out(kind)) {
      auto k0 = at(0);
      if (k0[0] != 0.f || k0[1] != 0.f || k0[2] != 0.f) {
        throw ArgumentError("center-out trajectory must start at the k-space origin");
      }
    }
  }
};

namespace traj_detail {

// Plastic-number based pair for 3D golden means ordering.
inline constexpr double kGoldenMean1 = 0.46557123187676802665;
inline constexpr double kGoldenMean2 = 0.68232780382801932737;
inline constexpr double kGoldenAngle = 2.39996322972865332223;  // pi * (3 - sqrt(5))

inline double frac(double v) { return v - std::floor(v); }

using Vec3 = std::array<double, 3>;

inline Vec3 golden_means_direction(long m) {
  double z = 2.0 * frac(static_cast<double>(m) * kGoldenMean1) - 1.0;
  double az = 2.0 * std::numbers::pi * frac(static_cast<double>(m) * kGoldenMean2);
  double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {rho * std::cos(az), rho * std::sin(az), z};
}

/// Unit vector orthogonal to d, rotated by `angle` within the orthogonal plane.
inline Vec3 orthogonal_direction(const Vec3& d, double angle) {
  Vec3 ref = std::abs(d[2]) < 0.9 ? Vec3{0, 0, 1} : Vec3{1, 0, 0};
  Vec3 e1 = {d[1] * ref[2] - d[2] * ref[1], d[2] * ref[0] - d[0] * ref[2],
             d[0] * ref[1] - d[1] * ref[0]};
  double n = std::sqrt(e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]);
  for (auto& c : e1) c /= n;
  Vec3 e2 = {d[1] * e1[2] - d[2] * e1[1], d[2] * e1[0] - d[0] * e1[2],
             d[0] * e1[1] - d[1] * e1[0]};
  double ca = std::cos(angle), sa = std::sin(angle);
  return {ca * e1[0] + sa * e2[0], ca * e1[1] + sa * e2[1], ca * e1[2] + sa * e2[2]};
}

inline double kmax_for(int n_samples) { return 0.5 * (1.0 - 1.0 / n_samples); }

/// One constant-speed shot: radial from r_start to r_twist, then a great-circle
/// twist towards `tangent` while |k|^exponent grows affinely in arc length.
/// exponent 3 keeps the sampling density uniform; smaller exponents taper it.
/// The n samples are equispaced in arc length; with skip_first the start point
/// itself is not emitted.
inline void twisted_shot(KTrajectory& t, int shot, const Vec3& dir, const Vec3& tangent,
                         double r_start, double r_twist, double exponent, double kmax,
                         bool skip_first = false) {
  const int n = t.n_samples;
  const double g = exponent;
  const double len_radial = r_twist - r_start;
  const double rate = g * std::pow(r_twist, g - 1.0);  // d(r^g)/ds at the twist start
  const double len_twist = r_twist < kmax ? (std::pow(kmax, g) - std::pow(r_twist, g)) / rate : 0.0;
  const int steps = skip_first ? n : n - 1;
  const double total = len_radial + len_twist;
  const double step = steps > 0 ? total / steps : 0.0;

  auto radius_at = [&](double s) {
    if (s <= len_radial) return r_start + s;
    double v = std::pow(r_twist, g) + rate * (s - len_radial);
    return std::min(kmax, std::pow(v, 1.0 / g));
  };
  auto omega_at = [&](double s) {
    if (s <= len_radial) return 0.0;
    double r = radius_at(s);
    double dr = std::pow(r_twist / r, g - 1.0);
    return std::sqrt(std::max(0.0, 1.0 - dr * dr)) / r;
  };

  double psi = 0.0;
  double s_prev = 0.0;
  const std::size_t base = static_cast<std::size_t>(shot) * static_cast<std::size_t>(n);
  for (int j = 0; j < n; ++j) {
    int idx = skip_first ? j + 1 : j;
    double s = idx == steps ? total : idx * step;
    if (s > len_radial && s > s_prev) {
      // Simpson on sub-intervals for the accumulated twist angle.
      constexpr int kSub = 8;
      double a = std::max(s_prev, len_radial);
      double h = (s - a) / kSub;
      double acc = omega_at(a) + omega_at(s);
      for (int q = 1; q < kSub; ++q) acc += (q % 2 ? 4.0 : 2.0) * omega_at(a + q * h);
      psi += acc * h / 3.0;
    }
    s_prev = s;
    double r = radius_at(s);
    double c = std::cos(psi), sn = std::sin(psi);
    t.set(base + static_cast<std::size_t>(j), r * (c * dir[0] + sn * tangent[0]),
          r * (c * dir[1] + sn * tangent[1]), r * (c * dir[2] + sn * tangent[2]));
  }
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ArgumentError(what);
}

}  // namespace traj_detail

/// 3D radial spokes ordered by the golden means sequence, center-out.
inline KTrajectory gen_radial_gm(int n_shots, int n_samples) {
  using namespace traj_detail;
  require(n_shots >= 1, "gen_radial_gm: n_shots must be >= 1");
  require(n_samples >= 2, "gen_radial_gm: n_samples must be >= 2");
  KTrajectory t(n_shots, n_samples, TrajectoryKind::RadialGM);
  const double kmax = kmax_for(n_samples);
  for (int m = 0; m < n_shots; ++m) {
    Vec3 d = golden_means_direction(m);
    twisted_shot(t, m, d, d, 0.0, kmax, 3.0, kmax);
  }
  return t;
}

/// Center-out shots winding around cones of fixed polar angle. Polar angles
/// split the sphere into equal-area bands; shots cycle through the angles and
/// each new pass is rotated by the golden angle.
inline KTrajectory gen_cones(int n_shots, int n_samples, int n_cone_angles, double twist) {
  using namespace traj_detail;
  require(n_shots >= 1, "gen_cones: n_shots must be >= 1");
  require(n_samples >= 2, "gen_cones: n_samples must be >= 2");
  require(n_cone_angles >= 1, "gen_cones: n_cone_angles must be >= 1");
  require(twist >= 0.0 && std::isfinite(twist), "gen_cones: twist must be >= 0");
  KTrajectory t(n_shots, n_samples, TrajectoryKind::Cones);
  const double kmax = kmax_for(n_samples);
  for (int m = 0; m < n_shots; ++m) {
    int cone = m % n_cone_angles;
    int pass = m / n_cone_angles;
    double cos_polar = 1.0 - (2.0 * cone + 1.0) / n_cone_angles;
    double sin_polar = std::sqrt(std::max(0.0, 1.0 - cos_polar * cos_polar));
    double base = pass * kGoldenAngle + cone * kGoldenMean2 * 2.0 * std::numbers::pi;
    for (int j = 0; j < n_samples; ++j) {
      double r = 0.5 * j / n_samples;
      double az = base + 2.0 * std::numbers::pi * twist * (r / kmax);
      t.set(static_cast<std::size_t>(m) * n_samples + j, r * sin_polar * std::cos(az),
            r * sin_polar * std::sin(az), r * cos_polar);
    }
  }
  return t;
}

/// Twisted projection imaging: radial out to p * kmax, then a constant-speed
/// twist with |k|^3 affine in arc length.
inline KTrajectory gen_tpi(int n_shots, int n_samples, double p) {
  using namespace traj_detail;
  require(n_shots >= 1, "gen_tpi: n_shots must be >= 1");
  require(n_samples >= 2, "gen_tpi: n_samples must be >= 2");
  require(p > 0.0 && p <= 1.0, "gen_tpi: p must lie in (0, 1]");
  KTrajectory t(n_shots, n_samples, TrajectoryKind::TPI);
  const double kmax = kmax_for(n_samples);
  const double r_twist = p >= 1.0 ? kmax : p * kmax;
  for (int m = 0; m < n_shots; ++m) {
    Vec3 d = golden_means_direction(m);
    Vec3 tan = orthogonal_direction(d, m * kGoldenAngle);
    twisted_shot(t, m, d, tan, 0.0, r_twist, 3.0, kmax);
  }
  return t;
}

/// Default TPI twist start, as a fraction of kmax.
inline constexpr double kDefaultTpiP = 0.4;

struct GolfHybridReport {
  int cartesian_shots = 0;
  int outer_shots = 0;
  std::size_t cartesian_samples = 0;
};

/// Hybrid pattern: every grid point of `matrix` inside the centered ball of
/// radius center_radius is sampled on the Cartesian grid (line by line along
/// kx, chunked into shots), and the remaining shot budget goes to tapered
/// twisted shots leaving the ball along golden-means directions.
inline KTrajectory gen_golf_hybrid(const MatrixSize& matrix, double af_target, double center_radius,
                                   int n_samples, std::uint64_t seed,
                                   GolfHybridReport* report = nullptr) {
  using namespace traj_detail;
  matrix.validate();
  require(af_target > 1.0, "gen_golf_hybrid: af_target must be > 1");
  require(center_radius >= 0.0 && center_radius < 0.5,
          "gen_golf_hybrid: center_radius must lie in [0, 0.5)");
  require(n_samples >= 2, "gen_golf_hybrid: n_samples must be >= 2");

  const long budget = static_cast<long>(std::floor(
      static_cast<double>(matrix.ny) * static_cast<double>(matrix.nz) / af_target));
  if (budget < 1) throw ConfigError("gen_golf_hybrid: shot budget is empty at this af_target");

  struct GridPoint {
    int kx, ky, kz;
    double r2;
  };
  std::vector<GridPoint> inside, outside;
  const double R2 = center_radius * center_radius;
  if (center_radius > 0.0) {
    for (int iz = 0; iz < matrix.nz; ++iz) {
      for (int iy = 0; iy < matrix.ny; ++iy) {
        for (int ix = 0; ix < matrix.nx; ++ix) {
          int kx = centered_index(ix, matrix.nx), ky = centered_index(iy, matrix.ny),
              kz = centered_index(iz, matrix.nz);
          double fx = static_cast<double>(kx) / matrix.nx, fy = static_cast<double>(ky) / matrix.ny,
                 fz = static_cast<double>(kz) / matrix.nz;
          double r2 = fx * fx + fy * fy + fz * fz;
          (r2 <= R2 ? inside : outside).push_back({kx, ky, kz, r2});
        }
      }
    }
  }
  const long cart_shots = static_cast<long>((inside.size() + n_samples - 1) / n_samples);
  if (cart_shots > budget) {
    throw ConfigError("gen_golf_hybrid: Cartesian center needs " + std::to_string(cart_shots) +
                      " shots but the budget at af_target is " + std::to_string(budget));
  }
  std::size_t pad = static_cast<std::size_t>(cart_shots) * n_samples - inside.size();
  if (pad > 0) {
    std::stable_sort(outside.begin(), outside.end(),
                     [](const GridPoint& a, const GridPoint& b) { return a.r2 < b.r2; });
    inside.insert(inside.end(), outside.begin(), outside.begin() + static_cast<long>(pad));
  }

  const long outer = budget - cart_shots;
  KTrajectory t(static_cast<int>(budget), n_samples, TrajectoryKind::GolfHybrid);
  t.cartesian_mask.assign(t.size(), 0);
  for (std::size_t i = 0; i < inside.size(); ++i) {
    const auto& g = inside[i];
    t.set(i, static_cast<double>(g.kx) / matrix.nx, static_cast<double>(g.ky) / matrix.ny,
          static_cast<double>(g.kz) / matrix.nz);
    t.cartesian_mask[i] = 1;
  }

  // The seed picks the offset into the golden-means sequence and the twist
  // orientation, so different seeds give rotated but equivalent patterns.
  std::mt19937_64 rng(seed);
  const long offset = static_cast<long>(rng() % 100000);
  const double spin = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
  const double kmax = kmax_for(n_samples);
  const double r_twist = std::max(center_radius, kDefaultTpiP * kmax);
  for (long m = 0; m < outer; ++m) {
    Vec3 d = golden_means_direction(m + offset);
    Vec3 tan = orthogonal_direction(d, spin + m * kGoldenAngle);
    twisted_shot(t, static_cast<int>(cart_shots + m), d, tan, center_radius, r_twist, 2.0, kmax,
                 center_radius > 0.0);
  }
  if (report) {
    report->cartesian_shots = static_cast<int>(cart_shots);
    report->outer_shots = static_cast<int>(outer);
    report->cartesian_samples = static_cast<std::size_t>(cart_shots) * n_samples;
  }
  return t;
}

/// Fully sampled Cartesian grid of `matrix` as a trajectory: one kx line per
/// (ky, kz) pair.
inline KTrajectory gen_cartesian(const MatrixSize& matrix) {
  KTrajectory t(matrix.ny * matrix.nz, matrix.nx, TrajectoryKind::Imported);
  t.cartesian_mask.assign(t.size(), 1);
  std::size_t m = 0;
  for (int iz = 0; iz < matrix.nz; ++iz) {
    for (int iy = 0; iy < matrix.ny; ++iy) {
      for (int ix = 0; ix < matrix.nx; ++ix) {
        t.set(m++, static_cast<double>(centered_index(ix, matrix.nx)) / matrix.nx,
              static_cast<double>(centered_index(iy, matrix.ny)) / matrix.ny,
              static_cast<double>(centered_index(iz, matrix.nz)) / matrix.nz);
      }
    }
  }
  return t;
}

/// Shot-count acceleration: fully sampled phase encodes (ny * nz) per shot.
inline double acceleration_factor(const KTrajectory& t, const MatrixSize& matrix) {
  if (t.n_shots < 1) throw ArgumentError("acceleration_factor: empty trajectory");
  return static_cast<double>(matrix.ny) * static_cast<double>(matrix.nz) / t.n_shots;
}

/// Marks samples whose coordinates land on the Cartesian grid of `matrix`.
inline std::vector<std::uint8_t> detect_cartesian(const KTrajectory& t, const MatrixSize& matrix,
                                                  double tol = 1e-4) {
  std::vector<std::uint8_t> mask(t.size(), 0);
  const int n[3] = {matrix.nx, matrix.ny, matrix.nz};
  for (std::size_t m = 0; m < t.size(); ++m) {
    bool on = true;
    for (int a = 0; a < 3 && on; ++a) {
      double g = static_cast<double>(t.coords[3 * m + a]) * n[a];
      on = std::abs(g - std::round(g)) <= tol;
    }
    mask[m] = on ? 1 : 0;
  }
  return mask;
}

// ---------------------------------------------------------------------------
// KTRJ: "KTRJ", u32 version=1, u32 n_shots, u32 n_samples, u8 kind, then
// float32 (kx, ky, kz) triplets, shot-major, little-endian.

inline void save_trajectory(const std::string& path, const KTrajectory& t) {
  t.validate();
  BinaryWriter w(path);
  w.magic("KTRJ");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(t.n_shots));
  w.u32(static_cast<std::uint32_t>(t.n_samples));
  w.u8(static_cast<std::uint8_t>(t.kind));
  for (float c : t.coords) w.f32(c);
  w.close();
}

inline KTrajectory read_trajectory(BinaryReader& r) {
  r.expect_magic("KTRJ");
  auto at = r.offset();
  if (r.u32() != 1) throw FormatError("unsupported KTRJ version", at);
  at = r.offset();
  auto shots = r.u32();
  auto samples = r.u32();
  if (shots == 0 || samples == 0 || shots > (1u << 30) || samples > (1u << 30)) {
    throw FormatError("invalid KTRJ shot/sample counts", at);
  }
  auto tag = r.u8();
  auto kind = tag <= 4 ? static_cast<TrajectoryKind>(tag) : TrajectoryKind::Imported;
  std::size_t count = static_cast<std::size_t>(shots) * samples * 3;
  r.need(count * 4, "KTRJ coordinates");
  KTrajectory t(static_cast<int>(shots), static_cast<int>(samples), kind);
  for (std::size_t i = 0; i < count; ++i) {
    auto off = r.offset();
    float c = r.f32();
    if (!std::isfinite(c) || c < -0.5f || c >= 0.5f) {
      throw FormatError("KTRJ coordinate outside [-0.5, 0.5)", off);
    }
    t.coords[i] = c;
  }
  if (!r.at_end()) throw FormatError("trailing bytes after KTRJ payload", r.offset());
  if (is_center_out(t.kind)) {
    auto k0 = t.at(0);
    if (k0[0] != 0.f || k0[1] != 0.f || k0[2] != 0.f) t.kind = TrajectoryKind::Imported;
  }
  return t;
}

inline KTrajectory load_trajectory(const std::string& path) {
  BinaryReader r(path);
  return read_trajectory(r);
}

}  // namespace ncpd
