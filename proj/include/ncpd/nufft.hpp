#pragma once

#include <fftw3.h>

#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include "trajectory.hpp"
#include "volume.hpp"

namespace ncpd {

/// Samples aligned with trajectory order (shot-major).
template <typename T>
using SampleVector = std::vector<cplx<T>>;

namespace fft_detail {

// FFTW planning is not thread-safe; execution with new-array calls is.
inline std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

template <typename T>
struct Fftw;

template <>
struct Fftw<double> {
  using plan_t = fftw_plan;
  using complex_t = fftw_complex;
  static complex_t* alloc(std::size_t n) { return fftw_alloc_complex(n); }
  static void free(void* p) { fftw_free(p); }
  static plan_t plan(int n0, int n1, int n2, complex_t* in, complex_t* out, int sign) {
    return fftw_plan_dft_3d(n0, n1, n2, in, out, sign, FFTW_ESTIMATE);
  }
  static void execute(plan_t p, complex_t* in, complex_t* out) { fftw_execute_dft(p, in, out); }
  static void destroy(plan_t p) { fftw_destroy_plan(p); }
};

template <>
struct Fftw<float> {
  using plan_t = fftwf_plan;
  using complex_t = fftwf_complex;
  static complex_t* alloc(std::size_t n) { return fftwf_alloc_complex(n); }
  static void free(void* p) { fftwf_free(p); }
  static plan_t plan(int n0, int n1, int n2, complex_t* in, complex_t* out, int sign) {
    return fftwf_plan_dft_3d(n0, n1, n2, in, out, sign, FFTW_ESTIMATE);
  }
  static void execute(plan_t p, complex_t* in, complex_t* out) { fftwf_execute_dft(p, in, out); }
  static void destroy(plan_t p) { fftwf_destroy_plan(p); }
};

/// Aligned complex buffer owned by FFTW's allocator.
template <typename T>
class AlignedBuffer {
 public:
  explicit AlignedBuffer(std::size_t n) : n_(n), p_(Fftw<T>::alloc(n)) {
    if (!p_) throw std::bad_alloc();
    std::fill(data(), data() + n_, cplx<T>{});
  }
  AlignedBuffer(const AlignedBuffer&) = delete;
  AlignedBuffer& operator=(const AlignedBuffer&) = delete;
  ~AlignedBuffer() { Fftw<T>::free(p_); }

  cplx<T>* data() { return reinterpret_cast<cplx<T>*>(p_); }
  typename Fftw<T>::complex_t* raw() { return p_; }
  std::size_t size() const { return n_; }

 private:
  std::size_t n_;
  typename Fftw<T>::complex_t* p_;
};

/// In-place 3D transform of a (n2 slowest, n0 fastest) grid.
template <typename T>
class Fft3 {
 public:
  Fft3(int nx, int ny, int nz) : n_(static_cast<std::size_t>(nx) * ny * nz) {
    AlignedBuffer<T> scratch(n_);
    std::lock_guard<std::mutex> lock(planner_mutex());
    fwd_ = Fftw<T>::plan(nz, ny, nx, scratch.raw(), scratch.raw(), FFTW_FORWARD);
    bwd_ = Fftw<T>::plan(nz, ny, nx, scratch.raw(), scratch.raw(), FFTW_BACKWARD);
  }
  Fft3(const Fft3&) = delete;
  Fft3& operator=(const Fft3&) = delete;
  ~Fft3() {
    std::lock_guard<std::mutex> lock(planner_mutex());
    Fftw<T>::destroy(fwd_);
    Fftw<T>::destroy(bwd_);
  }
  void forward(AlignedBuffer<T>& buf) const { Fftw<T>::execute(fwd_, buf.raw(), buf.raw()); }
  void backward(AlignedBuffer<T>& buf) const { Fftw<T>::execute(bwd_, buf.raw(), buf.raw()); }

 private:
  std::size_t n_;
  typename Fftw<T>::plan_t fwd_;
  typename Fftw<T>::plan_t bwd_;
};

}  // namespace fft_detail

/// Kaiser-Bessel gridding plan for one image matrix. Immutable after
/// construction and shareable across threads.
template <typename T>
class NufftPlan {
 public:
  static constexpr int kLutSize = 10000;

  NufftPlan(MatrixSize dims, double oversampling = 2.0, int kernel_width = 6)
      : dims_(dims), sigma_(oversampling), width_(kernel_width) {
    if (dims.nx < 1 || dims.ny < 1 || dims.nz < 1) throw ArgumentError("make_plan: empty matrix");
    if (!(oversampling >= 1.25) || !std::isfinite(oversampling)) {
      throw ArgumentError("make_plan: oversampling must be >= 1.25");
    }
    if (kernel_width < 2 || kernel_width > 10 || kernel_width % 2 != 0) {
      throw ArgumentError("make_plan: kernel_width must be even and in [2, 10]");
    }
    const double ratio = width_ / sigma_ * (sigma_ - 0.5);
    beta_ = std::numbers::pi * std::sqrt(ratio * ratio - 0.8);

    const int n[3] = {dims.nx, dims.ny, dims.nz};
    for (int a = 0; a < 3; ++a) {
      int g = static_cast<int>(std::ceil(sigma_ * n[a]));
      g += g % 2;
      grid_[a] = std::max(g, width_ + 2);
    }

    // Kernel lookup over |u| in [0, W/2], normalized to 1 at u = 0.
    lut_.resize(kLutSize + 2);
    const double i0b = std::cyl_bessel_i(0.0, beta_);
    for (int i = 0; i <= kLutSize + 1; ++i) {
      double u = std::min(1.0, static_cast<double>(i) / kLutSize);
      lut_[static_cast<std::size_t>(i)] =
          std::cyl_bessel_i(0.0, beta_ * std::sqrt(std::max(0.0, 1.0 - u * u))) / i0b;
    }

    // Image-domain response of the kernel per axis; deapodization is its inverse.
    std::vector<double> inv[3];
    for (int a = 0; a < 3; ++a) {
      inv[a].resize(static_cast<std::size_t>(n[a]));
      for (int i = 0; i < n[a]; ++i) {
        double t = static_cast<double>(centered_index(i, n[a])) / grid_[a];
        inv[a][static_cast<std::size_t>(i)] = 1.0 / (kernel_ft(t) / i0b);
      }
    }
    deapod_ = RealVolume<T>(dims);
    for (int iz = 0; iz < dims.nz; ++iz)
      for (int iy = 0; iy < dims.ny; ++iy)
        for (int ix = 0; ix < dims.nx; ++ix)
          deapod_(ix, iy, iz) = static_cast<T>(inv[0][static_cast<std::size_t>(ix)] *
                                               inv[1][static_cast<std::size_t>(iy)] *
                                               inv[2][static_cast<std::size_t>(iz)]);
    scale_ = 1.0 / std::sqrt(static_cast<double>(dims.voxels()));
    fft_ = std::make_shared<fft_detail::Fft3<T>>(grid_[0], grid_[1], grid_[2]);
  }

  const MatrixSize& dims() const { return dims_; }
  double oversampling() const { return sigma_; }
  int kernel_width() const { return width_; }
  double beta() const { return beta_; }
  const RealVolume<T>& deapodization() const { return deapod_; }
  std::array<int, 3> grid() const { return {grid_[0], grid_[1], grid_[2]}; }

  /// Type-2: y_m = N^{-1/2} sum_n x_n exp(-2 pi i nu_m . n).
  SampleVector<T> forward(const ComplexVolume<T>& image, const KTrajectory& traj) const {
    require_same_dims(image.dims, dims_, "nufft_forward");
    fft_detail::AlignedBuffer<T> g(grid_size());
    scatter_image(image, g);
    fft_->forward(g);
    SampleVector<T> y(traj.size());
    parallel_chunks(traj.size(), num_threads(), [&](int, std::size_t b, std::size_t e) {
      Stencil st;
      for (std::size_t m = b; m < e; ++m) {
        make_stencil(traj, m, st);
        y[m] = interpolate(g.data(), st);
      }
    });
    return y;
  }

  /// Type-1 adjoint: x_n = N^{-1/2} sum_m y_m exp(+2 pi i nu_m . n).
  ComplexVolume<T> adjoint(const SampleVector<T>& samples, const KTrajectory& traj) const {
    if (samples.size() != traj.size()) {
      throw ArgumentError("nufft_adjoint: " + std::to_string(samples.size()) +
                          " samples for a trajectory of " + std::to_string(traj.size()));
    }
    fft_detail::AlignedBuffer<T> g(grid_size());
    const int chunks = std::max(1, std::min(num_threads(), static_cast<int>(traj.size() / 4096)));
    if (chunks == 1) {
      Stencil st;
      for (std::size_t m = 0; m < traj.size(); ++m) {
        make_stencil(traj, m, st);
        spread(g.data(), st, samples[m]);
      }
    } else {
      // Per-chunk partial grids, summed in chunk order.
      std::vector<std::vector<cplx<T>>> partial(static_cast<std::size_t>(chunks));
      parallel_chunks(traj.size(), chunks, [&](int c, std::size_t b, std::size_t e) {
        auto& p = partial[static_cast<std::size_t>(c)];
        p.assign(grid_size(), cplx<T>{});
        Stencil st;
        for (std::size_t m = b; m < e; ++m) {
          make_stencil(traj, m, st);
          spread(p.data(), st, samples[m]);
        }
      });
      cplx<T>* out = g.data();
      for (const auto& p : partial)
        for (std::size_t i = 0; i < p.size(); ++i) out[i] += p[i];
    }
    fft_->backward(g);
    ComplexVolume<T> x(dims_);
    gather_image(g, x);
    return x;
  }

  /// Spread-then-interpolate with the gridding kernel alone (no FFT, no
  /// deapodization), scaled so a lone sample on a grid node maps to itself.
  std::vector<double> kernel_roundtrip(const std::vector<double>& values, const KTrajectory& traj) const {
    if (values.size() != traj.size()) throw ArgumentError("kernel_roundtrip: length mismatch");
    std::vector<cplx<T>> g(grid_size());
    Stencil st;
    for (std::size_t m = 0; m < traj.size(); ++m) {
      make_stencil(traj, m, st);
      spread(g.data(), st, cplx<T>(static_cast<T>(values[m]), T(0)));
    }
    double self = 0;
    for (int j = -width_ / 2; j <= width_ / 2; ++j) {
      double k = static_cast<double>(kernel(static_cast<double>(j)));
      self += k * k;
    }
    self = self * self * self;
    std::vector<double> out(traj.size());
    parallel_chunks(traj.size(), num_threads(), [&](int, std::size_t b, std::size_t e) {
      Stencil s2;
      for (std::size_t m = b; m < e; ++m) {
        make_stencil(traj, m, s2);
        out[m] = static_cast<double>(interpolate(g.data(), s2).real()) / self;
      }
    });
    return out;
  }

 private:
  struct Stencil {
    int idx[3][10];
    T w[3][10];
  };

  std::size_t grid_size() const {
    return static_cast<std::size_t>(grid_[0]) * grid_[1] * grid_[2];
  }

  double kernel_ft(double t) const {
    const double a = std::numbers::pi * width_ * t;
    const double d = beta_ * beta_ - a * a;
    if (d > 1e-12) {
      double s = std::sqrt(d);
      return width_ * std::sinh(s) / s;
    }
    if (d < -1e-12) {
      double s = std::sqrt(-d);
      return width_ * std::sin(s) / s;
    }
    return width_;
  }

  T kernel(double u) const {
    double x = std::abs(u) * (2.0 / width_) * kLutSize;
    if (x >= kLutSize) return x > kLutSize + 1e-9 ? T(0) : static_cast<T>(lut_[kLutSize]);
    auto i = static_cast<std::size_t>(x);
    double f = x - static_cast<double>(i);
    return static_cast<T>(lut_[i] + f * (lut_[i + 1] - lut_[i]));
  }

  void make_stencil(const KTrajectory& traj, std::size_t m, Stencil& st) const {
    for (int a = 0; a < 3; ++a) {
      double g = static_cast<double>(traj.coords[3 * m + static_cast<std::size_t>(a)]) * grid_[a];
      int first = static_cast<int>(std::floor(g)) - width_ / 2 + 1;
      for (int j = 0; j < width_; ++j) {
        int k = first + j;
        st.w[a][j] = kernel(g - k);
        int wrapped = k % grid_[a];
        st.idx[a][j] = wrapped < 0 ? wrapped + grid_[a] : wrapped;
      }
    }
  }

  cplx<T> interpolate(const cplx<T>* g, const Stencil& st) const {
    cplx<T> acc{};
    const std::size_t gx = static_cast<std::size_t>(grid_[0]);
    const std::size_t gy = static_cast<std::size_t>(grid_[1]);
    for (int c = 0; c < width_; ++c) {
      cplx<T> plane{};
      for (int b = 0; b < width_; ++b) {
        const cplx<T>* row =
            g + (static_cast<std::size_t>(st.idx[2][c]) * gy + static_cast<std::size_t>(st.idx[1][b])) * gx;
        cplx<T> line{};
        for (int a = 0; a < width_; ++a) line += st.w[0][a] * row[st.idx[0][a]];
        plane += st.w[1][b] * line;
      }
      acc += st.w[2][c] * plane;
    }
    return acc;
  }

  void spread(cplx<T>* g, const Stencil& st, cplx<T> v) const {
    const std::size_t gx = static_cast<std::size_t>(grid_[0]);
    const std::size_t gy = static_cast<std::size_t>(grid_[1]);
    for (int c = 0; c < width_; ++c) {
      cplx<T> vz = st.w[2][c] * v;
      for (int b = 0; b < width_; ++b) {
        cplx<T> vy = st.w[1][b] * vz;
        cplx<T>* row =
            g + (static_cast<std::size_t>(st.idx[2][c]) * gy + static_cast<std::size_t>(st.idx[1][b])) * gx;
        for (int a = 0; a < width_; ++a) row[st.idx[0][a]] += st.w[0][a] * vy;
      }
    }
  }

  std::size_t grid_offset(int ix, int iy, int iz) const {
    auto wrap = [](int n, int g) { return n < 0 ? n + g : n; };
    int gx = wrap(centered_index(ix, dims_.nx), grid_[0]);
    int gy = wrap(centered_index(iy, dims_.ny), grid_[1]);
    int gz = wrap(centered_index(iz, dims_.nz), grid_[2]);
    return (static_cast<std::size_t>(gz) * grid_[1] + static_cast<std::size_t>(gy)) * grid_[0] +
           static_cast<std::size_t>(gx);
  }

  void scatter_image(const ComplexVolume<T>& image, fft_detail::AlignedBuffer<T>& g) const {
    cplx<T>* out = g.data();
    const T s = static_cast<T>(scale_);
    for (int iz = 0; iz < dims_.nz; ++iz)
      for (int iy = 0; iy < dims_.ny; ++iy)
        for (int ix = 0; ix < dims_.nx; ++ix)
          out[grid_offset(ix, iy, iz)] = image(ix, iy, iz) * (deapod_(ix, iy, iz) * s);
  }

  void gather_image(fft_detail::AlignedBuffer<T>& g, ComplexVolume<T>& x) const {
    const cplx<T>* in = g.data();
    const T s = static_cast<T>(scale_);
    for (int iz = 0; iz < dims_.nz; ++iz)
      for (int iy = 0; iy < dims_.ny; ++iy)
        for (int ix = 0; ix < dims_.nx; ++ix)
          x(ix, iy, iz) = in[grid_offset(ix, iy, iz)] * (deapod_(ix, iy, iz) * s);
  }

  MatrixSize dims_;
  double sigma_;
  int width_;
  double beta_ = 0;
  double scale_ = 1;
  int grid_[3] = {0, 0, 0};
  std::vector<double> lut_;
  RealVolume<T> deapod_;
  std::shared_ptr<fft_detail::Fft3<T>> fft_;
};

template <typename T>
NufftPlan<T> make_plan(MatrixSize dims, double oversampling = 2.0, int kernel_width = 6) {
  return NufftPlan<T>(dims, oversampling, kernel_width);
}

template <typename T>
SampleVector<T> nufft_forward(const NufftPlan<T>& plan, const ComplexVolume<T>& image,
                              const KTrajectory& traj) {
  return plan.forward(image, traj);
}

template <typename T>
ComplexVolume<T> nufft_adjoint(const NufftPlan<T>& plan, const SampleVector<T>& samples,
                               const KTrajectory& traj) {
  return plan.adjoint(samples, traj);
}

// ---------------------------------------------------------------------------
// Exact non-uniform DFT in double precision. Test oracle only.

enum class NdftDirection { Forward, Adjoint };

namespace ndft_detail {

inline constexpr double kMaxWork = static_cast<double>(1u << 26);

inline void guard(const MatrixSize& dims, const KTrajectory& traj) {
  if (static_cast<double>(dims.voxels()) * static_cast<double>(traj.size()) > kMaxWork) {
    throw RefusalError("ndft_oracle: problem size exceeds 2^26 voxel-samples");
  }
}

/// exp(sign * 2 pi i nu n) for every centered index n along an axis.
inline void axis_phases(double nu, int n, double sign, std::vector<std::complex<double>>& out) {
  out.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double ph = sign * 2.0 * std::numbers::pi * nu * centered_index(i, n);
    out[static_cast<std::size_t>(i)] = {std::cos(ph), std::sin(ph)};
  }
}

}  // namespace ndft_detail

inline std::vector<std::complex<double>> ndft_forward(const ComplexVolume<double>& image,
                                                      const KTrajectory& traj) {
  ndft_detail::guard(image.dims, traj);
  const auto& d = image.dims;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d.voxels()));
  std::vector<std::complex<double>> y(traj.size());
  std::vector<std::complex<double>> px, py, pz;
  for (std::size_t m = 0; m < traj.size(); ++m) {
    ndft_detail::axis_phases(traj.coords[3 * m], d.nx, -1.0, px);
    ndft_detail::axis_phases(traj.coords[3 * m + 1], d.ny, -1.0, py);
    ndft_detail::axis_phases(traj.coords[3 * m + 2], d.nz, -1.0, pz);
    std::complex<double> acc = 0;
    for (int iz = 0; iz < d.nz; ++iz) {
      std::complex<double> plane = 0;
      for (int iy = 0; iy < d.ny; ++iy) {
        std::complex<double> line = 0;
        for (int ix = 0; ix < d.nx; ++ix) line += image(ix, iy, iz) * px[static_cast<std::size_t>(ix)];
        plane += line * py[static_cast<std::size_t>(iy)];
      }
      acc += plane * pz[static_cast<std::size_t>(iz)];
    }
    y[m] = acc * scale;
  }
  return y;
}

inline ComplexVolume<double> ndft_adjoint(const std::vector<std::complex<double>>& samples,
                                          const KTrajectory& traj, const MatrixSize& dims) {
  if (samples.size() != traj.size()) throw ArgumentError("ndft_oracle: sample count mismatch");
  ndft_detail::guard(dims, traj);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dims.voxels()));
  ComplexVolume<double> x(dims);
  std::vector<std::complex<double>> px, py, pz;
  for (std::size_t m = 0; m < traj.size(); ++m) {
    ndft_detail::axis_phases(traj.coords[3 * m], dims.nx, 1.0, px);
    ndft_detail::axis_phases(traj.coords[3 * m + 1], dims.ny, 1.0, py);
    ndft_detail::axis_phases(traj.coords[3 * m + 2], dims.nz, 1.0, pz);
    const std::complex<double> v = samples[m] * scale;
    for (int iz = 0; iz < dims.nz; ++iz) {
      std::complex<double> vz = v * pz[static_cast<std::size_t>(iz)];
      for (int iy = 0; iy < dims.ny; ++iy) {
        std::complex<double> vy = vz * py[static_cast<std::size_t>(iy)];
        for (int ix = 0; ix < dims.nx; ++ix) x(ix, iy, iz) += vy * px[static_cast<std::size_t>(ix)];
      }
    }
  }
  return x;
}

/// Direction-tagged entry point; `dims` is only consulted for the adjoint.
struct NdftOracle {
  static std::vector<std::complex<double>> apply(NdftDirection dir, const ComplexVolume<double>& image,
                                                 const KTrajectory& traj) {
    if (dir != NdftDirection::Forward) throw ArgumentError("ndft_oracle: expected forward direction");
    return ndft_forward(image, traj);
  }
  static ComplexVolume<double> apply(NdftDirection dir, const std::vector<std::complex<double>>& samples,
                                     const KTrajectory& traj, const MatrixSize& dims) {
    if (dir != NdftDirection::Adjoint) throw ArgumentError("ndft_oracle: expected adjoint direction");
    return ndft_adjoint(samples, traj, dims);
  }
};

}  // namespace ncpd
