#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "recon.hpp"

namespace ncpd {

struct TrainConfig {
  double lr = 1e-3;
  int epochs = 50;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double plateau_factor = 0.5;
  int plateau_patience = 5;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0) || !std::isfinite(lr)) throw ArgumentError("train config: lr must be > 0");
    if (epochs < 1) throw ArgumentError("train config: epochs must be >= 1");
    if (!(plateau_factor > 0 && plateau_factor < 1)) throw ArgumentError("train config: plateau factor must lie in (0, 1)");
    if (plateau_patience < 0) throw ArgumentError("train config: patience must be >= 0");
  }
  bool operator==(const TrainConfig&) const = default;
};

/// He-style uniform init: kernels ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)),
/// biases zero, DC scales one.
template <typename T>
ModelWeights<T> init_weights(const ModelConfig& cfg, std::uint64_t seed) {
  auto m = ModelWeights<T>::zeros(cfg);
  std::mt19937_64 rng(seed);
  for (auto& b : m.blocks) {
    for (auto* w : {&b.conv1_w, &b.conv2_w, &b.conv3_w}) {
      const double fan_in = static_cast<double>(w->shape[1]) * w->shape[2] * w->shape[3] * w->shape[4];
      const double bound = std::sqrt(6.0 / fan_in);
      std::uniform_real_distribution<double> u(-bound, bound);
      for (auto& v : w->data) v = static_cast<T>(u(rng));
    }
  }
  return m;
}

namespace train_detail {

// Extended precision: finite differences resolve loss changes near 1 ulp of a double.
template <typename T>
long double mae_ext(const RealVolume<T>& pred, const RealVolume<T>& target) {
  long double acc = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    acc += std::abs(static_cast<long double>(pred[i]) - static_cast<long double>(target[i]));
  }
  return acc / static_cast<long double>(pred.size());
}

}  // namespace train_detail

/// Mean absolute error and its subgradient sign(pred - target) / N, sign(0) = 0.
template <typename T>
std::pair<double, RealVolume<T>> loss_mae(const RealVolume<T>& pred, const RealVolume<T>& target) {
  require_same_dims(pred.dims, target.dims, "loss_mae");
  const double n = static_cast<double>(pred.size());
  RealVolume<T> grad(pred.dims);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    grad[i] = d > 0 ? static_cast<T>(1.0 / n) : d < 0 ? static_cast<T>(-1.0 / n) : T(0);
  }
  return {static_cast<double>(train_detail::mae_ext(pred, target)), std::move(grad)};
}

/// One training/validation example with its own acquisition operators, so a
/// dataset may mix trajectories and coil counts.
template <typename T>
struct TrainingSample {
  std::shared_ptr<const NufftPlan<T>> plan;
  std::shared_ptr<const KTrajectory> traj;
  std::shared_ptr<const DensityWeights> density;
  std::shared_ptr<const SensitivityMaps<T>> maps;
  KSpaceData<T> kdata;
  RealVolume<T> target;

  MultiCoilOperator<T> op() const { return {*plan, *traj, *maps, *density}; }
};

template <typename T>
double sample_loss(const TrainingSample<T>& s, const ModelWeights<T>& model, const ModelConfig& cfg) {
  auto x = ncpdnet_forward(s.op(), s.kdata, model, cfg);
  return loss_mae(magnitude(x), s.target).first;
}

template <typename T>
struct GradientResult {
  double loss = 0;
  GradientSet<T> grads;
};

/// Reverse-mode gradients of MAE(|x_out|, target) with respect to every
/// model tensor. Complex gradients use the (d/dRe + i d/dIm) convention, so
/// a complex-linear map M pulls back through M^H.
template <typename T>
GradientResult<T> compute_gradients(const TrainingSample<T>& s, const ModelWeights<T>& model,
                                    const ModelConfig& cfg) {
  const auto op = s.op();
  ForwardTape<T> tape;
  auto x = ncpdnet_forward(op, s.kdata, model, cfg, &tape);
  auto [loss, gmag] = loss_mae(magnitude(x), s.target);

  const MatrixSize& d = op.dims();
  const std::size_t P = d.voxels();
  const int np = cfg.buffer_size;

  std::vector<ComplexVolume<T>> gbuf(static_cast<std::size_t>(np), ComplexVolume<T>(d));
  for (std::size_t v = 0; v < P; ++v) {
    T mag = std::abs(x[v]);
    gbuf[0][v] = mag > T(0) ? x[v] * (gmag[v] / mag) : cplx<T>{};
  }

  GradientResult<T> out{loss, GradientSet<T>::zeros(cfg)};
  for (auto& b : out.grads.blocks) b.dc_scale.data[0] = T(0);

  Conv3d<T> conv1(d, cfg.in_channels(), cfg.n_filters, cfg.kernel);
  Conv3d<T> conv2(d, cfg.n_filters, cfg.n_filters, cfg.kernel);
  Conv3d<T> conv3(d, cfg.n_filters, cfg.out_channels(), cfg.kernel);
  std::vector<T> go, gh1, gh2, gin, col;

  for (int i = cfg.n_iterations - 1; i >= 0; --i) {
    const auto& w = model.blocks[static_cast<std::size_t>(i)];
    auto& gw = out.grads.blocks[static_cast<std::size_t>(i)];
    const auto& bt = tape.blocks[static_cast<std::size_t>(i)];

    go.assign(static_cast<std::size_t>(cfg.out_channels()) * P, T(0));
    for (int j = 0; j < np; ++j) {
      T* re = go.data() + static_cast<std::size_t>(2 * j) * P;
      T* im = re + P;
      const auto& g = gbuf[static_cast<std::size_t>(j)];
      for (std::size_t v = 0; v < P; ++v) {
        re[v] = g[v].real();
        im[v] = g[v].imag();
      }
    }

    conv3.backward(bt.h2, w.conv3_w.data, go, gw.conv3_w.data, gw.conv3_b.data, &gh2, col);
    if (cfg.activation == Activation::ReLU) {
      for (std::size_t k = 0; k < gh2.size(); ++k) if (!(bt.h2[k] > T(0))) gh2[k] = T(0);
    }
    conv2.backward(bt.h1, w.conv2_w.data, gh2, gw.conv2_w.data, gw.conv2_b.data, &gh1, col);
    if (cfg.activation == Activation::ReLU) {
      for (std::size_t k = 0; k < gh1.size(); ++k) if (!(bt.h1[k] > T(0))) gh1[k] = T(0);
    }
    conv1.backward(bt.input, w.conv1_w.data, gh1, gw.conv1_w.data, gw.conv1_b.data, &gin, col);

    for (int j = 0; j < np; ++j) {
      const T* re = gin.data() + static_cast<std::size_t>(2 * j) * P;
      const T* im = re + P;
      auto& g = gbuf[static_cast<std::size_t>(j)];
      for (std::size_t v = 0; v < P; ++v) g[v] += cplx<T>(re[v], im[v]);
    }
    ComplexVolume<T> gdc(d);
    {
      const T* re = gin.data() + static_cast<std::size_t>(2 * np) * P;
      const T* im = re + P;
      double deps = 0;
      for (std::size_t v = 0; v < P; ++v) {
        gdc[v] = cplx<T>(re[v], im[v]);
        deps += static_cast<double>(re[v]) * bt.dc_unscaled[v].real() +
                static_cast<double>(im[v]) * bt.dc_unscaled[v].imag();
      }
      gw.dc_scale.data[0] = static_cast<T>(deps);
    }
    // x_dc = eps * A^H d A x_b[0] + const  =>  pullback eps * A^H d A g.
    const T eps = w.dc_scale.data[0];
    auto back = op.adjoint(op.forward(gdc), true);
    for (std::size_t v = 0; v < P; ++v) gbuf[0][v] += eps * back[v];

    for (const auto& g : gbuf[0].data) {
      if (!std::isfinite(g.real()) || !std::isfinite(g.imag())) {
        throw NumericError("compute_gradients: non-finite gradient in block " + std::to_string(i));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
struct AdamState {
  GradientSet<T> m, v;
  int step = 0;

  static AdamState create(const ModelConfig& cfg) {
    AdamState s{GradientSet<T>::zeros(cfg), GradientSet<T>::zeros(cfg), 0};
    for (auto* st : {&s.m, &s.v}) {
      for (auto& b : st->blocks) b.dc_scale.data[0] = T(0);
    }
    return s;
  }
};

/// Adam with bias correction at step t (1-based), learning rate `lr`.
template <typename T>
void adam_update(ModelWeights<T>& model, const GradientSet<T>& grads, AdamState<T>& state, int t,
                 const TrainConfig& cfg, double lr) {
  auto params = model.tensors();
  auto g = grads.tensors();
  auto m = state.m.tensors();
  auto v = state.v.tensors();
  if (params.size() != g.size()) throw ArgumentError("adam_update: gradient layout mismatch");
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k]->size() != g[k]->size()) throw ArgumentError("adam_update: gradient shape mismatch");
    for (std::size_t i = 0; i < params[k]->size(); ++i) {
      double gi = g[k]->data[i];
      double mi = cfg.beta1 * m[k]->data[i] + (1.0 - cfg.beta1) * gi;
      double vi = cfg.beta2 * v[k]->data[i] + (1.0 - cfg.beta2) * gi * gi;
      m[k]->data[i] = static_cast<T>(mi);
      v[k]->data[i] = static_cast<T>(vi);
      double upd = lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.adam_eps);
      params[k]->data[i] = static_cast<T>(params[k]->data[i] - upd);
    }
  }
  state.step = t;
}

template <typename T>
void adam_update(ModelWeights<T>& model, const GradientSet<T>& grads, AdamState<T>& state, int t,
                 const TrainConfig& cfg) {
  adam_update(model, grads, state, t, cfg, cfg.lr);
}

/// Reduce-on-plateau: after more than `patience` epochs without a new best
/// validation loss, lr is multiplied by `factor`.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor, int patience) : lr_(lr), factor_(factor), patience_(patience) {}

  double lr() const { return lr_; }

  double step(double metric) {
    if (metric < best_) {
      best_ = metric;
      bad_ = 0;
    } else if (++bad_ > patience_) {
      lr_ *= factor_;
      bad_ = 0;
    }
    return lr_;
  }

 private:
  double lr_;
  double factor_;
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_ = 0;
};

// ---------------------------------------------------------------------------

template <typename T>
struct GradCheckOptions {
  int n_params = 200;
  std::uint64_t seed = 0;
  std::size_t max_params = 50000;
  /// Applied to the analytic gradients before comparison (fault injection).
  std::function<void(GradientSet<T>&)> tamper;
};

template <typename T>
struct GradCheckReport {
  double max_rel_error = 0;
  std::size_t checked = 0;
};

/// Central differences on a random subset of >= n_params entries plus every
/// DC scale; relative error |a - n| / (|a| + |n| + 1e-12).
template <typename T>
GradCheckReport<T> grad_check(const std::function<ModelWeights<T>()>& factory, const TrainingSample<T>& s,
                              const ModelConfig& cfg, double eps, const GradCheckOptions<T>& opt = {}) {
  if (!(eps > 0) || !std::isfinite(eps)) throw ArgumentError("grad_check: eps must be > 0");
  auto model = factory();
  if (model.parameter_count() > opt.max_params) {
    throw RefusalError("grad_check: model has " + std::to_string(model.parameter_count()) +
                       " parameters, limit is " + std::to_string(opt.max_params));
  }
  auto analytic = compute_gradients(s, model, cfg).grads;
  if (opt.tamper) opt.tamper(analytic);

  struct Entry {
    std::size_t tensor, index;
  };
  std::vector<Entry> entries;
  std::vector<Entry> all;
  auto tensors = model.tensors();
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    for (std::size_t i = 0; i < tensors[k]->size(); ++i) {
      if (k % 7 == 6) entries.push_back({k, i});  // DC scales
      else all.push_back({k, i});
    }
  }
  std::mt19937_64 rng(opt.seed);
  std::shuffle(all.begin(), all.end(), rng);
  const std::size_t take = std::min<std::size_t>(all.size(), static_cast<std::size_t>(std::max(opt.n_params, 0)));
  entries.insert(entries.end(), all.begin(), all.begin() + static_cast<long>(take));

  auto atensors = analytic.tensors();
  GradCheckReport<T> rep;
  for (const auto& e : entries) {
    T& p = tensors[e.tensor]->data[e.index];
    const T saved = p;
    const T hi = static_cast<T>(saved + eps), lo = static_cast<T>(saved - eps);
    auto loss_at = [&](T v) {
      p = v;
      return train_detail::mae_ext(magnitude(ncpdnet_forward(s.op(), s.kdata, model, cfg)), s.target);
    };
    const long double lp = loss_at(hi), lm = loss_at(lo);
    p = saved;
    double num = static_cast<double>((lp - lm) / (static_cast<long double>(hi) - static_cast<long double>(lo)));
    double ana = atensors[e.tensor]->data[e.index];
    double rel = std::abs(ana - num) / (std::abs(ana) + std::abs(num) + 1e-12);
    rep.max_rel_error = std::max(rep.max_rel_error, rel);
    ++rep.checked;
  }
  return rep;
}

// ---------------------------------------------------------------------------

struct EpochRecord {
  int epoch = 0;
  double train_mae = 0;
  double val_mae = 0;
  double lr = 0;
  bool operator==(const EpochRecord&) const = default;
};

template <typename T>
struct TrainResult {
  ModelWeights<T> best;
  int best_epoch = 0;
  std::vector<EpochRecord> history;
};

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

template <typename T>
double mean_loss(const std::vector<TrainingSample<T>>& data, const std::vector<std::size_t>& idx,
                 const ModelWeights<T>& model, const ModelConfig& cfg) {
  double acc = 0;
  for (auto i : idx) acc += sample_loss(data[i], model, cfg);
  return acc / static_cast<double>(idx.size());
}

/// Per-volume Adam steps, reduce-on-plateau on validation MAE, and the
/// checkpoint with the lowest validation MAE returned. Samples may carry
/// different coil counts; weight shapes depend only on the model config.
template <typename T>
TrainResult<T> train(const std::vector<TrainingSample<T>>& data, const DatasetSplit& split,
                     const TrainConfig& cfg, const ModelConfig& model_cfg,
                     const std::function<void(const EpochRecord&)>& on_epoch = {},
                     const ModelWeights<T>* initial = nullptr) {
  cfg.validate();
  model_cfg.validate();
  if (split.train.empty() || split.validation.empty()) {
    throw ArgumentError("train: need at least one training and one validation sample");
  }
  for (auto i : split.train) if (i >= data.size()) throw ArgumentError("train: split index out of range");
  for (auto i : split.validation) if (i >= data.size()) throw ArgumentError("train: split index out of range");

  auto model = initial ? *initial : init_weights<T>(model_cfg, cfg.seed);
  model.check_shapes(model_cfg);
  auto state = AdamState<T>::create(model_cfg);
  PlateauScheduler sched(cfg.lr, cfg.plateau_factor, cfg.plateau_patience);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);

  TrainResult<T> res;
  res.best = model;
  double best_val = std::numeric_limits<double>::infinity();
  auto order = split.train;
  int t = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = sched.lr();
    double train_acc = 0;
    for (auto i : order) {
      auto g = compute_gradients(data[i], model, model_cfg);
      train_acc += g.loss;
      adam_update(model, g.grads, state, ++t, cfg, lr);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_mae = train_acc / static_cast<double>(order.size());
    rec.val_mae = mean_loss(data, split.validation, model, model_cfg);
    rec.lr = lr;
    res.history.push_back(rec);
    if (rec.val_mae < best_val) {
      best_val = rec.val_mae;
      res.best = model;
      res.best_epoch = epoch;
    }
    sched.step(rec.val_mae);
    if (on_epoch) on_epoch(rec);
  }
  return res;
}

inline void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "epoch,train_mae,val_mae,lr\n";
  out.precision(10);
  for (const auto& r : history) out << r.epoch << ',' << r.train_mae << ',' << r.val_mae << ',' << r.lr << '\n';
  if (!out) throw IoError("write failed on '" + path + "'");
}

}  // namespace ncpd
