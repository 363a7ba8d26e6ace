#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "density.hpp"
#include "nufft.hpp"

namespace ncpd {

/// Complex coil sensitivities S_l, SoS-normalized on `support`, zero elsewhere.
template <typename T>
struct SensitivityMaps {
  std::vector<ComplexVolume<T>> maps;
  MaskVolume support;

  int n_coils() const { return static_cast<int>(maps.size()); }
  const MatrixSize& dims() const { return support.dims; }

  void validate(double tol = 1e-6) const {
    if (maps.empty()) throw ArgumentError("sensitivity maps: no coils");
    for (const auto& m : maps) require_same_dims(m.dims, support.dims, "sensitivity maps");
    for (std::size_t v = 0; v < support.size(); ++v) {
      double sos = 0;
      for (const auto& m : maps) sos += std::norm(m[v]);
      if (support[v]) {
        if (std::abs(std::sqrt(sos) - 1.0) > tol) {
          throw ArgumentError("sensitivity maps: SoS != 1 at voxel " + std::to_string(v));
        }
      } else if (sos != 0) {
        throw ArgumentError("sensitivity maps: nonzero outside support at voxel " + std::to_string(v));
      }
    }
  }
};

/// Multi-coil samples sharing one trajectory.
template <typename T>
struct KSpaceData {
  std::vector<SampleVector<T>> coils;

  int n_coils() const { return static_cast<int>(coils.size()); }
  std::size_t n_samples() const { return coils.empty() ? 0 : coils.front().size(); }

  void validate(const KTrajectory& traj) const {
    if (coils.empty()) throw ArgumentError("k-space data: no coils");
    for (const auto& c : coils) {
      if (c.size() != traj.size()) {
        throw ArgumentError("k-space data: coil length " + std::to_string(c.size()) +
                            " does not match trajectory of " + std::to_string(traj.size()));
      }
    }
  }
};

/// Orthonormal L x r coil-mixing matrix retained by SVD compression.
struct CompressionBasis {
  int original = 0;
  int retained = 0;
  Eigen::MatrixXcd basis;
  std::vector<double> explained_variance;  // per retained component, as a fraction
  double retained_energy = 0;              // cumulative fraction
};

namespace coil_detail {

template <typename T>
void phase_reference(std::vector<ComplexVolume<T>>& coils, std::size_t v) {
  const cplx<T> ref = coils.front()[v];
  const T mag = std::abs(ref);
  if (mag == T(0)) return;
  const cplx<T> rot = std::conj(ref) / mag;
  for (auto& c : coils) c[v] *= rot;
}

inline double normalized_coordinate(int i, int n) {
  return static_cast<double>(centered_index(i, n)) / (n / 2.0);
}

}  // namespace coil_detail

/// Synthetic receive array: Gaussian magnitude profiles centered on a ring
/// around the volume, with smooth linear phase, SoS-normalized everywhere and
/// phase-referenced to coil 0.
template <typename T>
SensitivityMaps<T> simulate_sensitivities(int n_coils, const MatrixSize& dims, std::uint64_t seed) {
  if (n_coils < 1) throw ArgumentError("simulate_sensitivities: need at least one coil");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  const double spin = std::numbers::pi * jitter(rng);

  struct Coil {
    double cx, cy, cz, width, px, py, pz, p0;
  };
  std::vector<Coil> coils;
  for (int l = 0; l < n_coils; ++l) {
    double a = spin + 2.0 * std::numbers::pi * l / n_coils;
    Coil c;
    c.cx = 1.3 * std::cos(a);
    c.cy = 1.3 * std::sin(a);
    c.cz = 0.3 * jitter(rng);
    c.width = 0.9 * (1.0 + 0.1 * jitter(rng));
    c.px = 0.5 * jitter(rng);
    c.py = 0.5 * jitter(rng);
    c.pz = 0.5 * jitter(rng);
    c.p0 = std::numbers::pi * jitter(rng);
    coils.push_back(c);
  }

  SensitivityMaps<T> s;
  s.support = MaskVolume(dims, 1);
  s.maps.assign(static_cast<std::size_t>(n_coils), ComplexVolume<T>(dims));
  for (int iz = 0; iz < dims.nz; ++iz) {
    for (int iy = 0; iy < dims.ny; ++iy) {
      for (int ix = 0; ix < dims.nx; ++ix) {
        double ux = coil_detail::normalized_coordinate(ix, dims.nx);
        double uy = coil_detail::normalized_coordinate(iy, dims.ny);
        double uz = coil_detail::normalized_coordinate(iz, dims.nz);
        std::size_t v = s.support.index(ix, iy, iz);
        double sos = 0;
        std::vector<std::complex<double>> vals(coils.size());
        for (std::size_t l = 0; l < coils.size(); ++l) {
          const auto& c = coils[l];
          double d2 = (ux - c.cx) * (ux - c.cx) + (uy - c.cy) * (uy - c.cy) + (uz - c.cz) * (uz - c.cz);
          double mag = std::exp(-d2 / (2.0 * c.width * c.width));
          double ph = c.p0 + c.px * ux + c.py * uy + c.pz * uz;
          vals[l] = std::polar(mag, ph);
          sos += mag * mag;
        }
        double inv = 1.0 / std::sqrt(sos);
        std::complex<double> rot = std::conj(vals[0]) / std::abs(vals[0]);
        for (std::size_t l = 0; l < coils.size(); ++l) {
          auto z = vals[l] * inv * rot;
          s.maps[l][v] = cplx<T>(static_cast<T>(z.real()), static_cast<T>(z.imag()));
        }
      }
    }
  }
  return s;
}

/// Voxelwise root sum of squares.
template <typename T>
RealVolume<T> sos_combine(const std::vector<ComplexVolume<T>>& coil_images) {
  if (coil_images.empty()) throw ArgumentError("sos_combine: no coil images");
  const auto& d = coil_images.front().dims;
  for (const auto& c : coil_images) require_same_dims(c.dims, d, "sos_combine");
  RealVolume<T> out(d);
  for (std::size_t v = 0; v < out.size(); ++v) {
    T acc = 0;
    for (const auto& c : coil_images) acc += std::norm(c[v]);
    out[v] = std::sqrt(acc);
  }
  return out;
}

namespace coil_detail {
template <typename T>
void check_maps(const NufftPlan<T>& plan, const SensitivityMaps<T>& maps, const char* what) {
  if (maps.maps.empty()) throw ArgumentError(std::string(what) + ": no sensitivity maps");
  for (const auto& m : maps.maps) require_same_dims(m.dims, plan.dims(), what);
}
}  // namespace coil_detail

/// y_l = F_Omega (S_l x) for every coil.
template <typename T>
KSpaceData<T> op_forward(const NufftPlan<T>& plan, const KTrajectory& traj,
                         const SensitivityMaps<T>& maps, const ComplexVolume<T>& x) {
  coil_detail::check_maps(plan, maps, "op_forward");
  require_same_dims(x.dims, plan.dims(), "op_forward");
  KSpaceData<T> y;
  y.coils.reserve(maps.maps.size());
  ComplexVolume<T> coil(x.dims);
  for (const auto& s : maps.maps) {
    for (std::size_t v = 0; v < x.size(); ++v) coil[v] = s[v] * x[v];
    y.coils.push_back(plan.forward(coil, traj));
  }
  return y;
}

/// x = sum_l conj(S_l) F_Omega^H (w y_l); weights default to identity.
template <typename T>
ComplexVolume<T> op_adjoint(const NufftPlan<T>& plan, const KTrajectory& traj,
                            const SensitivityMaps<T>& maps, const KSpaceData<T>& y,
                            const DensityWeights* weights = nullptr) {
  coil_detail::check_maps(plan, maps, "op_adjoint");
  y.validate(traj);
  if (y.n_coils() != maps.n_coils()) {
    throw ArgumentError("op_adjoint: " + std::to_string(y.n_coils()) + " coils of data but " +
                        std::to_string(maps.n_coils()) + " sensitivity maps");
  }
  if (weights && weights->size() != traj.size()) {
    throw ArgumentError("op_adjoint: density weights do not match trajectory");
  }
  ComplexVolume<T> x(plan.dims());
  SampleVector<T> buf;
  for (std::size_t l = 0; l < y.coils.size(); ++l) {
    const SampleVector<T>* src = &y.coils[l];
    if (weights) {
      buf = y.coils[l];
      for (std::size_t m = 0; m < buf.size(); ++m) buf[m] *= static_cast<T>(weights->w[m]);
      src = &buf;
    }
    auto img = plan.adjoint(*src, traj);
    const auto& s = maps.maps[l];
    for (std::size_t v = 0; v < x.size(); ++v) x[v] += std::conj(s[v]) * img[v];
  }
  return x;
}

struct SensitivityOptions {
  double radius = 0.1;
  double threshold = 0.05;
};

/// Low-resolution calibration: per coil, the adjoint of the density-compensated,
/// Hann-windowed samples with |nu| <= radius; normalized by voxelwise SoS and
/// masked where SoS < threshold * max(SoS).
template <typename T>
SensitivityMaps<T> estimate_sensitivities(const NufftPlan<T>& plan, const KSpaceData<T>& kdata,
                                          const KTrajectory& traj, const DensityWeights& weights,
                                          const SensitivityOptions& opt = {}) {
  if (!(opt.radius > 0 && opt.radius < 0.5)) {
    throw ArgumentError("estimate_sensitivities: radius must lie in (0, 0.5)");
  }
  if (!(opt.threshold > 0 && opt.threshold < 1)) {
    throw ArgumentError("estimate_sensitivities: threshold must lie in (0, 1)");
  }
  kdata.validate(traj);
  if (weights.size() != traj.size()) {
    throw ArgumentError("estimate_sensitivities: density weights do not match trajectory");
  }
  std::vector<double> window(traj.size(), 0.0);
  std::size_t inside = 0;
  for (std::size_t m = 0; m < traj.size(); ++m) {
    auto k = traj.at(m);
    double r = std::sqrt(static_cast<double>(k[0]) * k[0] + static_cast<double>(k[1]) * k[1] +
                         static_cast<double>(k[2]) * k[2]);
    if (r <= opt.radius) {
      window[m] = weights.w[m] * 0.5 * (1.0 + std::cos(std::numbers::pi * r / opt.radius));
      ++inside;
    }
  }
  if (inside == 0) {
    throw ConfigError("estimate_sensitivities: no samples within the calibration radius");
  }

  SensitivityMaps<T> s;
  SampleVector<T> buf(traj.size());
  for (const auto& coil : kdata.coils) {
    for (std::size_t m = 0; m < buf.size(); ++m) buf[m] = coil[m] * static_cast<T>(window[m]);
    s.maps.push_back(plan.adjoint(buf, traj));
  }
  const auto& d = plan.dims();
  RealVolume<T> sos = sos_combine(s.maps);
  T peak = 0;
  for (auto v : sos.data) peak = std::max(peak, v);
  s.support = MaskVolume(d, 0);
  for (std::size_t v = 0; v < sos.size(); ++v) {
    if (peak > T(0) && sos[v] >= static_cast<T>(opt.threshold) * peak) {
      s.support[v] = 1;
      coil_detail::phase_reference(s.maps, v);
      for (auto& c : s.maps) c[v] /= sos[v];
    } else {
      for (auto& c : s.maps) c[v] = cplx<T>{};
    }
  }
  return s;
}

/// SVD compression over the coil dimension of the (samples x coils) matrix.
template <typename T>
std::pair<KSpaceData<T>, CompressionBasis> coil_compress(const KSpaceData<T>& kdata,
                                                         double var_threshold) {
  if (!(var_threshold > 0 && var_threshold <= 1)) {
    throw ArgumentError("coil_compress: var_threshold must lie in (0, 1]");
  }
  if (kdata.coils.empty()) throw ArgumentError("coil_compress: no coils");
  const int L = kdata.n_coils();
  const std::size_t M = kdata.n_samples();
  for (const auto& c : kdata.coils) {
    if (c.size() != M) throw ArgumentError("coil_compress: coils differ in length");
  }

  // Right singular vectors of Y are the eigenvectors of Y^H Y.
  Eigen::MatrixXcd gram = Eigen::MatrixXcd::Zero(L, L);
  for (int a = 0; a < L; ++a) {
    for (int b = a; b < L; ++b) {
      std::complex<double> acc = 0;
      const auto& ya = kdata.coils[static_cast<std::size_t>(a)];
      const auto& yb = kdata.coils[static_cast<std::size_t>(b)];
      for (std::size_t m = 0; m < M; ++m) {
        acc += std::conj(std::complex<double>(ya[m])) * std::complex<double>(yb[m]);
      }
      gram(a, b) = acc;
      gram(b, a) = std::conj(acc);
    }
  }
  const double total = gram.trace().real();
  if (!(total > 0)) throw ArgumentError("coil_compress: degenerate input (all-zero data)");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(gram);
  if (eig.info() != Eigen::Success) throw NumericError("coil_compress: eigendecomposition failed");
  // Eigen returns ascending eigenvalues.
  std::vector<double> energy(static_cast<std::size_t>(L));
  for (int j = 0; j < L; ++j) energy[static_cast<std::size_t>(j)] = std::max(0.0, eig.eigenvalues()(L - 1 - j));
  double sum = 0;
  for (double e : energy) sum += e;

  CompressionBasis basis;
  basis.original = L;
  double cum = 0;
  int r = 0;
  while (r < L) {
    cum += energy[static_cast<std::size_t>(r)] / sum;
    basis.explained_variance.push_back(energy[static_cast<std::size_t>(r)] / sum);
    ++r;
    if (cum >= var_threshold - 1e-12) break;
  }
  basis.retained = r;
  basis.retained_energy = cum;
  basis.basis.resize(L, r);
  for (int j = 0; j < r; ++j) basis.basis.col(j) = eig.eigenvectors().col(L - 1 - j);

  KSpaceData<T> out;
  out.coils.assign(static_cast<std::size_t>(r), SampleVector<T>(M));
  for (std::size_t m = 0; m < M; ++m) {
    for (int j = 0; j < r; ++j) {
      std::complex<double> acc = 0;
      for (int l = 0; l < L; ++l) {
        acc += std::complex<double>(kdata.coils[static_cast<std::size_t>(l)][m]) * basis.basis(l, j);
      }
      out.coils[static_cast<std::size_t>(j)][m] = cplx<T>(static_cast<T>(acc.real()), static_cast<T>(acc.imag()));
    }
  }
  return {std::move(out), std::move(basis)};
}

/// Maps compressed data back to the original channel space (Y_r B^H).
template <typename T>
KSpaceData<T> coil_decompress(const KSpaceData<T>& compressed, const CompressionBasis& basis) {
  if (compressed.n_coils() != basis.retained) throw ArgumentError("coil_decompress: coil count mismatch");
  const std::size_t M = compressed.n_samples();
  KSpaceData<T> out;
  out.coils.assign(static_cast<std::size_t>(basis.original), SampleVector<T>(M));
  for (std::size_t m = 0; m < M; ++m) {
    for (int l = 0; l < basis.original; ++l) {
      std::complex<double> acc = 0;
      for (int j = 0; j < basis.retained; ++j) {
        acc += std::complex<double>(compressed.coils[static_cast<std::size_t>(j)][m]) *
               std::conj(basis.basis(l, j));
      }
      out.coils[static_cast<std::size_t>(l)][m] = cplx<T>(static_cast<T>(acc.real()), static_cast<T>(acc.imag()));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// SMAP: "SMAP", u32 L, u32 nx, ny, nz, support packed LSB-first, then L CVOL blocks.

template <typename T>
void save_sensitivities(const std::string& path, const SensitivityMaps<T>& s) {
  BinaryWriter w(path);
  w.magic("SMAP");
  w.u32(static_cast<std::uint32_t>(s.n_coils()));
  w.u32(static_cast<std::uint32_t>(s.dims().nx));
  w.u32(static_cast<std::uint32_t>(s.dims().ny));
  w.u32(static_cast<std::uint32_t>(s.dims().nz));
  std::vector<std::uint8_t> bits((s.support.size() + 7) / 8, 0);
  for (std::size_t v = 0; v < s.support.size(); ++v) {
    if (s.support[v]) bits[v / 8] |= static_cast<std::uint8_t>(1u << (v % 8));
  }
  w.raw(bits.data(), bits.size());
  for (const auto& m : s.maps) cvol::write_block(w, m, sizeof(T) == 8 ? Precision::F64 : Precision::F32);
  w.close();
}

template <typename T>
SensitivityMaps<T> load_sensitivities(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic("SMAP");
  auto at = r.offset();
  auto L = r.u32();
  if (L == 0 || L > 4096) throw FormatError("invalid SMAP coil count", at);
  MatrixSize d;
  at = r.offset();
  d.nx = static_cast<int>(r.u32());
  d.ny = static_cast<int>(r.u32());
  d.nz = static_cast<int>(r.u32());
  if (d.nx <= 0 || d.ny <= 0 || d.nz <= 0) throw FormatError("invalid SMAP dimensions", at);
  SensitivityMaps<T> s;
  s.support = MaskVolume(d, 0);
  std::size_t nbytes = (d.voxels() + 7) / 8;
  r.need(nbytes, "SMAP support");
  for (std::size_t b = 0; b < nbytes; ++b) {
    auto byte = r.u8();
    for (std::size_t k = 0; k < 8 && b * 8 + k < d.voxels(); ++k) {
      s.support[b * 8 + k] = (byte >> k) & 1u;
    }
  }
  for (std::uint32_t l = 0; l < L; ++l) {
    at = r.offset();
    auto m = cvol::read_block<T>(r);
    if (!(m.dims == d)) throw FormatError("SMAP coil block dimension mismatch", at);
    s.maps.push_back(std::move(m));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after SMAP payload", r.offset());
  return s;
}

// ---------------------------------------------------------------------------
// KSPC: "KSPC", u32 version = 1, u32 L, u32 n, u8 precision, then per coil n
// interleaved real/imag values.

template <typename T>
void save_kspace(const std::string& path, const KSpaceData<T>& k,
                 Precision p = sizeof(T) == 8 ? Precision::F64 : Precision::F32) {
  BinaryWriter w(path);
  w.magic("KSPC");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(k.n_coils()));
  w.u32(static_cast<std::uint32_t>(k.coils.empty() ? 0 : k.coils[0].size()));
  w.u8(static_cast<std::uint8_t>(p));
  for (const auto& c : k.coils) {
    for (const auto& v : c) {
      if (p == Precision::F32) {
        w.f32(static_cast<float>(v.real()));
        w.f32(static_cast<float>(v.imag()));
      } else {
        w.f64(static_cast<double>(v.real()));
        w.f64(static_cast<double>(v.imag()));
      }
    }
  }
  w.close();
}

template <typename T>
KSpaceData<T> load_kspace(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic("KSPC");
  auto at = r.offset();
  if (r.u32() != 1) throw FormatError("unsupported KSPC version", at);
  at = r.offset();
  auto L = r.u32();
  auto n = r.u32();
  if (L == 0 || L > 4096) throw FormatError("invalid KSPC coil count", at);
  at = r.offset();
  auto bytes = r.u8();
  if (bytes != 4 && bytes != 8) throw FormatError("invalid KSPC precision byte", at);
  r.need(static_cast<std::size_t>(L) * n * 2 * bytes, "KSPC payload");
  KSpaceData<T> k;
  k.coils.assign(L, SampleVector<T>(n));
  for (auto& c : k.coils) {
    for (auto& v : c) {
      if (bytes == 4) {
        float re = r.f32(), im = r.f32();
        v = cplx<T>(static_cast<T>(re), static_cast<T>(im));
      } else {
        double re = r.f64(), im = r.f64();
        v = cplx<T>(static_cast<T>(re), static_cast<T>(im));
      }
    }
  }
  if (!r.at_end()) throw FormatError("trailing bytes after KSPC payload", r.offset());
  return k;
}

}  // namespace ncpd
