#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "coils.hpp"
#include "conv3d.hpp"
#include "density.hpp"
#include "wavelet.hpp"

namespace ncpd {

/// A = (I_L (x) F_Omega) S together with the density weights d used by the
/// compensated adjoint A^H d.
template <typename T>
struct MultiCoilOperator {
  const NufftPlan<T>& plan;
  const KTrajectory& traj;
  const SensitivityMaps<T>& maps;
  const DensityWeights& density;

  const MatrixSize& dims() const { return plan.dims(); }
  KSpaceData<T> forward(const ComplexVolume<T>& x) const { return op_forward(plan, traj, maps, x); }
  ComplexVolume<T> adjoint(const KSpaceData<T>& y, bool weighted) const {
    return op_adjoint(plan, traj, maps, y, weighted ? &density : nullptr);
  }
};

template <typename T>
ComplexVolume<T> dc_adjoint_recon(const NufftPlan<T>& plan, const KTrajectory& traj,
                                  const SensitivityMaps<T>& maps, const DensityWeights& weights,
                                  const KSpaceData<T>& y) {
  return op_adjoint(plan, traj, maps, y, &weights);
}

// ---------------------------------------------------------------------------
// NC-PDNet model description and weights.

enum class Activation : std::uint8_t { ReLU = 0, Identity = 1 };

struct ModelConfig {
  int n_iterations = 6;  // unrolled blocks
  int buffer_size = 2;   // image slots carried between blocks
  int n_filters = 16;
  int kernel = 3;
  Precision precision = Precision::F32;
  Activation activation = Activation::ReLU;

  int in_channels() const { return 2 * (buffer_size + 1); }
  int out_channels() const { return 2 * buffer_size; }

  void validate() const {
    if (n_iterations < 1 || buffer_size < 1 || n_filters < 1 || kernel < 1) {
      throw ArgumentError("model config: all sizes must be >= 1");
    }
    if (kernel % 2 == 0) throw ArgumentError("model config: kernel must be odd");
  }
  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    data.assign(n, T(0));
  }
  std::size_t size() const { return data.size(); }
  bool operator==(const Tensor&) const = default;
};

/// Trainable parameters of one unrolled block: three convolutions and the
/// data-consistency step scale.
template <typename T>
struct BlockWeights {
  Tensor<T> conv1_w, conv1_b, conv2_w, conv2_b, conv3_w, conv3_b;
  Tensor<T> dc_scale;  // shape {1}
  bool operator==(const BlockWeights&) const = default;
};

template <typename T>
struct ModelWeights {
  ModelConfig config;
  std::vector<BlockWeights<T>> blocks;

  /// Zero convolutions and unit DC scales with shapes for `cfg`.
  static ModelWeights zeros(const ModelConfig& cfg) {
    cfg.validate();
    ModelWeights m;
    m.config = cfg;
    const int k = cfg.kernel, f = cfg.n_filters;
    for (int i = 0; i < cfg.n_iterations; ++i) {
      BlockWeights<T> b;
      b.conv1_w = Tensor<T>({f, cfg.in_channels(), k, k, k});
      b.conv1_b = Tensor<T>({f});
      b.conv2_w = Tensor<T>({f, f, k, k, k});
      b.conv2_b = Tensor<T>({f});
      b.conv3_w = Tensor<T>({cfg.out_channels(), f, k, k, k});
      b.conv3_b = Tensor<T>({cfg.out_channels()});
      b.dc_scale = Tensor<T>({1});
      b.dc_scale.data[0] = T(1);
      m.blocks.push_back(std::move(b));
    }
    return m;
  }

  /// Tensors in fixed iteration-major order (conv1 w/b, conv2 w/b, conv3 w/b, dc).
  std::vector<Tensor<T>*> tensors() {
    std::vector<Tensor<T>*> out;
    for (auto& b : blocks) {
      for (auto* t : {&b.conv1_w, &b.conv1_b, &b.conv2_w, &b.conv2_b, &b.conv3_w, &b.conv3_b, &b.dc_scale}) {
        out.push_back(t);
      }
    }
    return out;
  }
  std::vector<const Tensor<T>*> tensors() const {
    std::vector<const Tensor<T>*> out;
    for (auto* t : const_cast<ModelWeights*>(this)->tensors()) out.push_back(t);
    return out;
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto* t : tensors()) n += t->size();
    return n;
  }

  void check_shapes(const ModelConfig& cfg) const {
    auto expect = zeros(cfg);
    if (blocks.size() != expect.blocks.size()) throw ArgumentError("model weights: block count mismatch");
    auto a = tensors();
    auto b = expect.tensors();
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i]->shape != b[i]->shape || a[i]->data.size() != b[i]->data.size()) {
        throw ArgumentError("model weights: tensor " + std::to_string(i) + " has wrong shape");
      }
      for (T v : a[i]->data) {
        if (!std::isfinite(v)) throw ArgumentError("model weights: non-finite parameter");
      }
    }
  }

  bool operator==(const ModelWeights&) const = default;
};

/// Gradients share the weights' layout.
template <typename T>
using GradientSet = ModelWeights<T>;

template <typename To, typename From>
ModelWeights<To> cast_weights(const ModelWeights<From>& m) {
  auto out = ModelWeights<To>::zeros(m.config);
  auto src = m.tensors();
  auto dst = out.tensors();
  for (std::size_t i = 0; i < src.size(); ++i) {
    for (std::size_t j = 0; j < src[i]->size(); ++j) dst[i]->data[j] = static_cast<To>(src[i]->data[j]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Unrolled forward pass.

/// Activations kept per block for reverse-mode differentiation.
template <typename T>
struct BlockTape {
  std::vector<T> input;  // 2(N_P + 1) channels
  std::vector<T> h1;     // post-activation
  std::vector<T> h2;
  ComplexVolume<T> dc_unscaled;  // A^H d (A x_b[0] - y)
};

template <typename T>
struct ForwardTape {
  std::vector<BlockTape<T>> blocks;
};

namespace net_detail {

template <typename T>
void activate(std::vector<T>& v, Activation a) {
  if (a == Activation::ReLU) {
    for (auto& x : v) x = x > T(0) ? x : T(0);
  }
}

template <typename T>
void check_finite(const std::vector<T>& v, int block, const char* what) {
  for (T x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string("ncpdnet: non-finite ") + what + " in block " + std::to_string(block));
    }
  }
}

template <typename T>
void check_inputs(const MultiCoilOperator<T>& op, const KSpaceData<T>& y, const ModelWeights<T>& model,
                  const ModelConfig& cfg) {
  cfg.validate();
  if (!(model.config == cfg)) {
    if (model.config.n_iterations != cfg.n_iterations || model.config.buffer_size != cfg.buffer_size ||
        model.config.n_filters != cfg.n_filters || model.config.kernel != cfg.kernel) {
      throw ArgumentError("ncpdnet: model weights were built for a different configuration");
    }
  }
  model.check_shapes(cfg);
  y.validate(op.traj);
  if (y.n_coils() != op.maps.n_coils()) throw ArgumentError("ncpdnet: coil count mismatch between data and maps");
  if (op.density.size() != op.traj.size()) throw ArgumentError("ncpdnet: density weights do not match trajectory");
}

}  // namespace net_detail

/// Runs the unrolled network; when `tape` is given, records what the
/// backward pass needs.
template <typename T>
ComplexVolume<T> ncpdnet_forward(const MultiCoilOperator<T>& op, const KSpaceData<T>& y,
                                 const ModelWeights<T>& model, const ModelConfig& cfg,
                                 ForwardTape<T>* tape = nullptr) {
  net_detail::check_inputs(op, y, model, cfg);
  const MatrixSize& d = op.dims();
  const std::size_t P = d.voxels();
  const int np = cfg.buffer_size;

  Conv3d<T> conv1(d, cfg.in_channels(), cfg.n_filters, cfg.kernel);
  Conv3d<T> conv2(d, cfg.n_filters, cfg.n_filters, cfg.kernel);
  Conv3d<T> conv3(d, cfg.n_filters, cfg.out_channels(), cfg.kernel);

  auto init = op.adjoint(y, true);
  std::vector<ComplexVolume<T>> buffer(static_cast<std::size_t>(np), init);
  if (tape) tape->blocks.clear();

  std::vector<T> input, h1, h2, out, col;
  for (int i = 0; i < cfg.n_iterations; ++i) {
    const auto& w = model.blocks[static_cast<std::size_t>(i)];
    auto r = op.forward(buffer[0]);
    for (std::size_t l = 0; l < r.coils.size(); ++l) {
      for (std::size_t m = 0; m < r.coils[l].size(); ++m) r.coils[l][m] -= y.coils[l][m];
    }
    auto u = op.adjoint(r, true);
    const T eps = w.dc_scale.data[0];

    input.assign(static_cast<std::size_t>(cfg.in_channels()) * P, T(0));
    for (int j = 0; j < np; ++j) {
      const auto& b = buffer[static_cast<std::size_t>(j)];
      T* re = input.data() + static_cast<std::size_t>(2 * j) * P;
      T* im = re + P;
      for (std::size_t v = 0; v < P; ++v) {
        re[v] = b[v].real();
        im[v] = b[v].imag();
      }
    }
    {
      T* re = input.data() + static_cast<std::size_t>(2 * np) * P;
      T* im = re + P;
      for (std::size_t v = 0; v < P; ++v) {
        re[v] = eps * u[v].real();
        im[v] = eps * u[v].imag();
      }
    }

    conv1.forward(input, w.conv1_w.data, w.conv1_b.data, h1, col);
    net_detail::activate(h1, cfg.activation);
    conv2.forward(h1, w.conv2_w.data, w.conv2_b.data, h2, col);
    net_detail::activate(h2, cfg.activation);
    conv3.forward(h2, w.conv3_w.data, w.conv3_b.data, out, col);
    net_detail::check_finite(out, i, "refinement output");

    for (int j = 0; j < np; ++j) {
      auto& b = buffer[static_cast<std::size_t>(j)];
      const T* re = out.data() + static_cast<std::size_t>(2 * j) * P;
      const T* im = re + P;
      for (std::size_t v = 0; v < P; ++v) b[v] += cplx<T>(re[v], im[v]);
    }

    if (tape) {
      BlockTape<T> bt;
      bt.input = std::move(input);
      bt.h1 = std::move(h1);
      bt.h2 = std::move(h2);
      bt.dc_unscaled = std::move(u);
      tape->blocks.push_back(std::move(bt));
      input = {};
      h1 = {};
      h2 = {};
    }
  }
  return std::move(buffer[0]);
}

template <typename T>
ComplexVolume<T> ncpdnet_forward(const NufftPlan<T>& plan, const KTrajectory& traj,
                                 const SensitivityMaps<T>& maps, const DensityWeights& weights,
                                 const KSpaceData<T>& y, const ModelWeights<T>& model,
                                 const ModelConfig& cfg) {
  MultiCoilOperator<T> op{plan, traj, maps, weights};
  return ncpdnet_forward(op, y, model, cfg);
}

// ---------------------------------------------------------------------------
// Wavelet-sparsity baseline.

struct FistaOptions {
  double lambda = 0.0;
  int n_iter = 50;
  int power_iterations = 10;
  /// Multiplies the power-iteration Lipschitz estimate, which is a lower bound.
  double lipschitz_margin = 1.05;
  std::uint64_t seed = 0;
  /// When set, receives the objective at the start and after every iteration.
  std::vector<double>* objective_history = nullptr;
};

/// (1/2L) sum_l ||y_l - F S_l x||^2 + lambda ||W x||_1 with 3-level Haar W.
template <typename T>
double fista_objective(const MultiCoilOperator<T>& op, const KSpaceData<T>& y, const ComplexVolume<T>& x,
                       double lambda, const Haar3& haar) {
  auto r = op.forward(x);
  double data = 0;
  for (std::size_t l = 0; l < r.coils.size(); ++l) {
    for (std::size_t m = 0; m < r.coils[l].size(); ++m) {
      data += std::norm(std::complex<double>(r.coils[l][m] - y.coils[l][m]));
    }
  }
  data /= 2.0 * static_cast<double>(y.n_coils());
  auto w = x;
  haar.forward(w);
  double l1 = 0;
  for (const auto& v : w.data) l1 += std::abs(std::complex<double>(v));
  return data + lambda * l1;
}

/// Largest eigenvalue of A^H A by power iteration.
template <typename T>
double normal_operator_norm(const MultiCoilOperator<T>& op, int iterations, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  ComplexVolume<T> v(op.dims());
  for (auto& z : v.data) z = cplx<T>(static_cast<T>(g(rng)), static_cast<T>(g(rng)));
  double est = 0;
  for (int it = 0; it < iterations; ++it) {
    double n = norm2(v.data);
    if (!(n > 0) || !std::isfinite(n)) throw NumericError("power iteration produced a degenerate vector");
    for (auto& z : v.data) z /= static_cast<T>(n);
    auto next = op.adjoint(op.forward(v), false);
    est = norm2(next.data);
    if (!std::isfinite(est)) throw NumericError("power iteration diverged");
    v = std::move(next);
  }
  return est;
}

template <typename T>
ComplexVolume<T> fista_wavelet(const MultiCoilOperator<T>& op, const KSpaceData<T>& y,
                               const FistaOptions& opt) {
  if (!(opt.lambda >= 0)) throw ArgumentError("fista_wavelet: lambda must be >= 0");
  if (opt.n_iter < 1) throw ArgumentError("fista_wavelet: n_iter must be >= 1");
  y.validate(op.traj);
  const double coils = static_cast<double>(y.n_coils());
  const double lip = opt.lipschitz_margin * normal_operator_norm(op, opt.power_iterations, opt.seed) / coils;
  if (!(lip > 0) || !std::isfinite(lip)) throw NumericError("fista_wavelet: invalid Lipschitz estimate");
  const T step = static_cast<T>(1.0 / lip);
  const T thresh = static_cast<T>(opt.lambda / lip);
  const Haar3 haar(op.dims());

  ComplexVolume<T> x(op.dims());
  ComplexVolume<T> z = x;
  double t = 1.0;
  if (opt.objective_history) opt.objective_history->push_back(fista_objective(op, y, x, opt.lambda, haar));
  for (int it = 0; it < opt.n_iter; ++it) {
    auto r = op.forward(z);
    for (std::size_t l = 0; l < r.coils.size(); ++l) {
      for (std::size_t m = 0; m < r.coils[l].size(); ++m) r.coils[l][m] -= y.coils[l][m];
    }
    auto grad = op.adjoint(r, false);
    ComplexVolume<T> v(op.dims());
    const T gscale = static_cast<T>(1.0 / coils) * step;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = z[i] - gscale * grad[i];
    haar.forward(v);
    for (auto& c : v.data) c = soft_threshold(c, thresh);
    haar.inverse(v);
    for (const auto& c : v.data) {
      if (!std::isfinite(c.real()) || !std::isfinite(c.imag())) {
        throw NumericError("fista_wavelet: non-finite iterate at iteration " + std::to_string(it));
      }
    }
    double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    T mom = static_cast<T>((t - 1.0) / t_next);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = v[i] + mom * (v[i] - x[i]);
    x = std::move(v);
    t = t_next;
    if (opt.objective_history) opt.objective_history->push_back(fista_objective(op, y, x, opt.lambda, haar));
  }
  return x;
}

// ---------------------------------------------------------------------------
// NCPW: "NCPW", u32 version=1, u32 n_iterations, buffer_size, n_filters, kernel,
// u8 precision, u8 activation, then per tensor u32 rank, u32 dims[rank],
// float32 data; tensors iteration-major.

template <typename T>
void save_weights(const std::string& path, const ModelWeights<T>& m) {
  BinaryWriter w(path);
  w.magic("NCPW");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(m.config.n_iterations));
  w.u32(static_cast<std::uint32_t>(m.config.buffer_size));
  w.u32(static_cast<std::uint32_t>(m.config.n_filters));
  w.u32(static_cast<std::uint32_t>(m.config.kernel));
  w.u8(static_cast<std::uint8_t>(m.config.precision));
  w.u8(static_cast<std::uint8_t>(m.config.activation));
  for (const auto* t : m.tensors()) {
    w.u32(static_cast<std::uint32_t>(t->shape.size()));
    for (int s : t->shape) w.u32(static_cast<std::uint32_t>(s));
    for (T v : t->data) w.f32(static_cast<float>(v));
  }
  w.close();
}

template <typename T>
ModelWeights<T> load_weights(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic("NCPW");
  auto at = r.offset();
  if (r.u32() != 1) throw FormatError("unsupported NCPW version", at);
  ModelConfig cfg;
  at = r.offset();
  cfg.n_iterations = static_cast<int>(r.u32());
  cfg.buffer_size = static_cast<int>(r.u32());
  cfg.n_filters = static_cast<int>(r.u32());
  cfg.kernel = static_cast<int>(r.u32());
  auto prec = r.u8();
  auto act = r.u8();
  if (cfg.n_iterations < 1 || cfg.n_iterations > 1000 || cfg.buffer_size < 1 || cfg.buffer_size > 64 ||
      cfg.n_filters < 1 || cfg.n_filters > 4096 || cfg.kernel < 1 || cfg.kernel % 2 == 0 || cfg.kernel > 15 ||
      (prec != 4 && prec != 8) || act > 1) {
    throw FormatError("invalid NCPW model configuration", at);
  }
  cfg.precision = static_cast<Precision>(prec);
  cfg.activation = static_cast<Activation>(act);
  auto m = ModelWeights<T>::zeros(cfg);
  for (auto* t : m.tensors()) {
    at = r.offset();
    auto rank = r.u32();
    if (rank != t->shape.size()) throw FormatError("NCPW tensor rank mismatch", at);
    for (int s : t->shape) {
      at = r.offset();
      if (r.u32() != static_cast<std::uint32_t>(s)) throw FormatError("NCPW tensor shape mismatch", at);
    }
    r.need(t->size() * 4, "NCPW tensor data");
    for (auto& v : t->data) {
      at = r.offset();
      float f = r.f32();
      if (!std::isfinite(f)) throw FormatError("non-finite NCPW parameter", at);
      v = static_cast<T>(f);
    }
  }
  if (!r.at_end()) throw FormatError("trailing bytes after NCPW payload", r.offset());
  return m;
}

}  // namespace ncpd
