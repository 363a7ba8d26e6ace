#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "nufft.hpp"

namespace ncpd {

/// Per-sample density compensation weights, aligned with trajectory order.
struct DensityWeights {
  std::vector<double> w;

  std::size_t size() const { return w.size(); }

  void validate() const {
    bool any = false;
    for (double v : w) {
      if (!std::isfinite(v) || v < 0) throw ArgumentError("density weights must be finite and >= 0");
      any = any || v > 0;
    }
    if (!any) throw ArgumentError("density weights are all zero");
  }
};

struct PipeMenonOptions {
  int n_iter = 10;
  /// Constant initial weight; the normalized result does not depend on it.
  double initial = 1.0;
  /// When set, receives std(|G G^H w_k| - 1) for the iterate entering step k.
  std::vector<double>* residual_history = nullptr;
};

/// Pipe-Menon fixed point w <- w / |G G^H w|, where G G^H spreads onto the
/// oversampled grid and interpolates back with the gridding kernel. The full
/// FFT round trip has a sinc-like response with negative lobes and does not
/// converge on undersampled trajectories. Output normalized to max w = 1.
template <typename T>
DensityWeights pipe_menon_weights(const NufftPlan<T>& plan, const KTrajectory& traj,
                                  const PipeMenonOptions& opt = {}) {
  if (opt.n_iter < 1) throw ArgumentError("pipe_menon_weights: n_iter must be >= 1");
  if (!(opt.initial > 0) || !std::isfinite(opt.initial)) {
    throw ArgumentError("pipe_menon_weights: initial weight must be positive");
  }
  const std::size_t m = traj.size();
  std::vector<double> w(m, opt.initial);

  auto round_trip = [&](const std::vector<double>& cur) { return plan.kernel_roundtrip(cur, traj); };
  auto residual_std = [&](const std::vector<double>& gg) {
    double mean = 0, sq = 0;
    for (double v : gg) mean += std::abs(v) - 1.0;
    mean /= static_cast<double>(m);
    for (double v : gg) {
      double d = std::abs(v) - 1.0 - mean;
      sq += d * d;
    }
    return std::sqrt(sq / static_cast<double>(m));
  };

  for (int it = 0; it < opt.n_iter; ++it) {
    auto gg = round_trip(w);
    if (opt.residual_history) opt.residual_history->push_back(residual_std(gg));
    for (std::size_t i = 0; i < m; ++i) {
      double d = std::abs(gg[i]);
      if (!(d > 0) || !std::isfinite(d)) {
        throw NumericError("pipe_menon_weights: |G G^H w| vanished at sample " + std::to_string(i) +
                           " in iteration " + std::to_string(it));
      }
      w[i] /= d;
    }
  }
  if (opt.residual_history) opt.residual_history->push_back(residual_std(round_trip(w)));

  double peak = 0;
  for (double v : w) peak = std::max(peak, v);
  for (double& v : w) v /= peak;
  return DensityWeights{std::move(w)};
}

template <typename T>
DensityWeights pipe_menon_weights(const NufftPlan<T>& plan, const KTrajectory& traj, int n_iter) {
  PipeMenonOptions opt;
  opt.n_iter = n_iter;
  return pipe_menon_weights(plan, traj, opt);
}

// DCW1 cache: "DCW1", u32 n, float32 weights.

inline void save_density(const std::string& path, const DensityWeights& d) {
  BinaryWriter w(path);
  w.magic("DCW1");
  w.u32(static_cast<std::uint32_t>(d.size()));
  for (double v : d.w) w.f32(static_cast<float>(v));
  w.close();
}

inline DensityWeights load_density(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic("DCW1");
  auto n = r.u32();
  r.need(static_cast<std::size_t>(n) * 4, "DCW1 weights");
  DensityWeights d;
  d.w.resize(n);
  for (auto& v : d.w) {
    auto at = r.offset();
    v = r.f32();
    if (!std::isfinite(v) || v < 0) throw FormatError("invalid density weight", at);
  }
  if (!r.at_end()) throw FormatError("trailing bytes after DCW1 payload", r.offset());
  return d;
}

}  // namespace ncpd
