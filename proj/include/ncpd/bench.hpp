#pragma once

#include <sys/resource.h>

#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "evalkit.hpp"
#include "training.hpp"

namespace ncpd {

struct BenchConfig {
  MatrixSize dims{32, 32, 32};
  std::vector<std::string> trajectories{"radial", "cones", "tpi", "golf"};
  double af_target = 4.0;
  int n_samples = 32;
  int coils = 4;
  std::uint64_t coil_seed = 1;
  std::uint64_t trajectory_seed = 1;
  bool compress = false;
  double compress_threshold = 0.99;
  std::vector<std::string> methods{"adjoint", "dc-adjoint", "fista"};
  std::vector<std::uint64_t> seeds{1};
  std::optional<double> noise_snr_db;
  int density_iters = 10;
  bool estimate_maps = true;
  double smap_radius = 0.1;
  double smap_threshold = 0.05;
  int cone_angles = 8;
  double cone_twist = 1.0;
  double tpi_p = kDefaultTpiP;
  double golf_center_radius = 0.2;
  double fista_lambda_rel = 0.02;
  int fista_iters = 30;
  ModelConfig model{};
  TrainConfig train{};
  int train_phantoms = 8;
  int val_phantoms = 2;
  std::string weights;
  std::string output_dir = "bench_out";

  bool operator==(const BenchConfig&) const = default;

  void validate() const {
    dims.validate();
    if (trajectories.empty()) throw ConfigError("at least one trajectory is required", "trajectories");
    if (methods.empty()) throw ConfigError("at least one method is required", "methods");
    for (const auto& m : methods) {
      if (m != "adjoint" && m != "dc-adjoint" && m != "fista" && m != "ncpdnet") {
        throw ConfigError("unknown method '" + m + "'", "methods");
      }
    }
    if (seeds.empty()) throw ConfigError("at least one seed is required", "seeds");
    if (!(af_target > 1)) throw ConfigError("af_target must be > 1", "af_target");
    if (n_samples < 2) throw ConfigError("n_samples must be >= 2", "n_samples");
    if (coils < 1) throw ConfigError("coils must be >= 1", "coils");
    if (!(compress_threshold > 0 && compress_threshold <= 1)) {
      throw ConfigError("compress_threshold must lie in (0, 1]", "compress_threshold");
    }
    if (train_phantoms < 1 || val_phantoms < 1) {
      throw ConfigError("need at least one training and one validation phantom", "train_phantoms");
    }
    if (!weights.empty() && !std::filesystem::exists(weights)) {
      throw IoError("weights file '" + weights + "' does not exist");
    }
    for (const auto& t : trajectories) {
      if (t != "radial" && t != "cones" && t != "tpi" && t != "golf" && !std::filesystem::exists(t)) {
        throw IoError("trajectory file '" + t + "' does not exist");
      }
    }
    try {
      model.validate();
      train.validate();
    } catch (const ArgumentError& e) {
      throw ConfigError(e.what());
    }
  }
};

// ---------------------------------------------------------------------------
// Flat `key = value` configuration text.

namespace config_detail {

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename N>
N parse_number(const std::string& v, const std::string& key, int line) {
  N out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("type mismatch for '" + key + "': '" + v + "' is not a valid number", key, line);
  }
  return out;
}

inline bool parse_bool(const std::string& v, const std::string& key, int line) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("type mismatch for '" + key + "': '" + v + "' is not a boolean", key, line);
}

inline MatrixSize parse_dims(const std::string& v, const std::string& key, int line) {
  std::vector<std::string> parts;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, 'x')) parts.push_back(trim(item));
  if (parts.size() == 1) parts = {parts[0], parts[0], parts[0]};
  if (parts.size() != 3) throw ConfigError("type mismatch for '" + key + "': expected NXxNYxNZ", key, line);
  MatrixSize d{parse_number<int>(parts[0], key, line), parse_number<int>(parts[1], key, line),
               parse_number<int>(parts[2], key, line)};
  try {
    d.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid '") + key + "': " + e.what(), key, line);
  }
  return d;
}

struct Field {
  const char* key;
  const char* help;
  std::function<std::string(const BenchConfig&)> get;
  std::function<void(BenchConfig&, const std::string&, int)> set;
};

template <typename N>
Field number(const char* key, const char* help, N BenchConfig::*member) {
  return {key, help,
          [member](const BenchConfig& c) {
            if constexpr (std::is_floating_point_v<N>) return fmt_double(c.*member);
            else return std::to_string(c.*member);
          },
          [member, key](BenchConfig& c, const std::string& v, int line) {
            c.*member = parse_number<N>(v, key, line);
          }};
}

template <typename N, typename S>
Field nested(const char* key, const char* help, S BenchConfig::*outer, N S::*member) {
  return {key, help,
          [outer, member](const BenchConfig& c) {
            if constexpr (std::is_floating_point_v<N>) return fmt_double(c.*outer.*member);
            else return std::to_string(c.*outer.*member);
          },
          [outer, member, key](BenchConfig& c, const std::string& v, int line) {
            c.*outer.*member = parse_number<N>(v, key, line);
          }};
}

inline Field flag(const char* key, const char* help, bool BenchConfig::*member) {
  return {key, help, [member](const BenchConfig& c) { return std::string(c.*member ? "true" : "false"); },
          [member, key](BenchConfig& c, const std::string& v, int line) { c.*member = parse_bool(v, key, line); }};
}

inline Field list(const char* key, const char* help, std::vector<std::string> BenchConfig::*member) {
  return {key, help,
          [member](const BenchConfig& c) {
            std::string out;
            for (const auto& s : c.*member) out += (out.empty() ? "" : ",") + s;
            return out;
          },
          [member](BenchConfig& c, const std::string& v, int) { c.*member = split_list(v); }};
}

inline Field text(const char* key, const char* help, std::string BenchConfig::*member) {
  return {key, help, [member](const BenchConfig& c) { return c.*member; },
          [member](BenchConfig& c, const std::string& v, int) { c.*member = v; }};
}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      {"dims", "volume size NXxNYxNZ (or a single N)",
       [](const BenchConfig& c) {
         return std::to_string(c.dims.nx) + "x" + std::to_string(c.dims.ny) + "x" + std::to_string(c.dims.nz);
       },
       [](BenchConfig& c, const std::string& v, int line) { c.dims = parse_dims(v, "dims", line); }},
      list("trajectories", "comma list of radial|cones|tpi|golf or KTRJ file paths", &BenchConfig::trajectories),
      number("af_target", "shot-count acceleration factor (ny*nz/shots)", &BenchConfig::af_target),
      number("n_samples", "samples per shot", &BenchConfig::n_samples),
      number("coils", "simulated receive coils", &BenchConfig::coils),
      number("coil_seed", "seed of the simulated sensitivity maps", &BenchConfig::coil_seed),
      number("trajectory_seed", "seed of the golf-hybrid outer shots", &BenchConfig::trajectory_seed),
      flag("compress", "SVD coil compression before reconstruction", &BenchConfig::compress),
      number("compress_threshold", "cumulative explained variance kept", &BenchConfig::compress_threshold),
      list("methods", "comma list of adjoint|dc-adjoint|fista|ncpdnet", &BenchConfig::methods),
      {"seeds", "comma list of evaluation phantom seeds",
       [](const BenchConfig& c) {
         std::string out;
         for (auto s : c.seeds) out += (out.empty() ? "" : ",") + std::to_string(s);
         return out;
       },
       [](BenchConfig& c, const std::string& v, int line) {
         c.seeds.clear();
         for (const auto& s : split_list(v)) c.seeds.push_back(parse_number<std::uint64_t>(s, "seeds", line));
       }},
      {"noise_snr_db", "sample-domain SNR of added noise in dB, or off",
       [](const BenchConfig& c) { return c.noise_snr_db ? fmt_double(*c.noise_snr_db) : std::string("off"); },
       [](BenchConfig& c, const std::string& v, int line) {
         if (v == "off" || v == "none") c.noise_snr_db.reset();
         else c.noise_snr_db = parse_number<double>(v, "noise_snr_db", line);
       }},
      number("density_iters", "Pipe-Menon iterations", &BenchConfig::density_iters),
      flag("estimate_maps", "estimate maps from each acquisition instead of using the true ones",
           &BenchConfig::estimate_maps),
      number("smap_radius", "calibration radius for map estimation (cycles/voxel)", &BenchConfig::smap_radius),
      number("smap_threshold", "support threshold relative to max SoS", &BenchConfig::smap_threshold),
      number("cone_angles", "polar angle bands of the cones trajectory", &BenchConfig::cone_angles),
      number("cone_twist", "azimuthal winding of the cones trajectory", &BenchConfig::cone_twist),
      number("tpi_p", "TPI twist start as a fraction of kmax", &BenchConfig::tpi_p),
      number("golf_center_radius", "radius of the Cartesian center of golf-hybrid", &BenchConfig::golf_center_radius),
      number("fista_lambda_rel", "FISTA lambda relative to the all-zero threshold", &BenchConfig::fista_lambda_rel),
      number("fista_iters", "FISTA iterations", &BenchConfig::fista_iters),
      nested("model_iterations", "NC-PDNet unrolled blocks", &BenchConfig::model, &ModelConfig::n_iterations),
      nested("model_buffer", "NC-PDNet buffer slots", &BenchConfig::model, &ModelConfig::buffer_size),
      nested("model_filters", "NC-PDNet convolution filters", &BenchConfig::model, &ModelConfig::n_filters),
      nested("model_kernel", "NC-PDNet kernel size", &BenchConfig::model, &ModelConfig::kernel),
      nested("lr", "Adam learning rate", &BenchConfig::train, &TrainConfig::lr),
      nested("epochs", "training epochs", &BenchConfig::train, &TrainConfig::epochs),
      nested("plateau_factor", "lr factor on plateau", &BenchConfig::train, &TrainConfig::plateau_factor),
      nested("plateau_patience", "epochs without improvement before a reduction", &BenchConfig::train,
             &TrainConfig::plateau_patience),
      nested("train_seed", "weight init and shuffling seed", &BenchConfig::train, &TrainConfig::seed),
      number("train_phantoms", "training phantoms per trajectory", &BenchConfig::train_phantoms),
      number("val_phantoms", "validation phantoms per trajectory", &BenchConfig::val_phantoms),
      text("weights", "pretrained NCPW file used for every trajectory (empty: train)", &BenchConfig::weights),
      text("output_dir", "directory for CSV, volumes and snapshots", &BenchConfig::output_dir),
  };
  return f;
}

}  // namespace config_detail

inline BenchConfig parse_config_text(const std::string& text) {
  BenchConfig cfg;
  std::map<std::string, const config_detail::Field*> index;
  for (const auto& f : config_detail::fields()) index[f.key] = &f;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    auto hash = raw.find('#');
    if (hash != std::string::npos) raw.resize(hash);
    auto l = config_detail::trim(raw);
    if (l.empty()) continue;
    auto eq = l.find('=');
    if (eq == std::string::npos) throw ConfigError("expected 'key = value'", {}, line);
    auto key = config_detail::trim(l.substr(0, eq));
    auto value = config_detail::trim(l.substr(eq + 1));
    auto it = index.find(key);
    if (it == index.end()) throw ConfigError("unknown key '" + key + "'", key, line);
    if (value.empty() && key != "weights") throw ConfigError("missing value for '" + key + "'", key, line);
    it->second->set(cfg, value, line);
  }
  return cfg;
}

inline BenchConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

inline std::string emit_config(const BenchConfig& cfg, bool with_help = false) {
  std::string out;
  for (const auto& f : config_detail::fields()) {
    if (with_help) out += std::string("# ") + f.help + "\n";
    out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Small utilities for reports.

inline double peak_rss_mb() {
  rusage u{};
  getrusage(RUSAGE_SELF, &u);
  return static_cast<double>(u.ru_maxrss) / 1024.0;
}

/// Center axial slice as an 8-bit binary PGM, scaled to [0, scale].
template <typename T>
void write_pgm_slice(const std::string& path, const RealVolume<T>& v, double scale) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  const auto& d = v.dims;
  out << "P5\n" << d.nx << ' ' << d.ny << "\n255\n";
  const int z = d.nz / 2;
  for (int y = 0; y < d.ny; ++y) {
    for (int x = 0; x < d.nx; ++x) {
      double s = scale > 0 ? static_cast<double>(v(x, y, z)) / scale : 0.0;
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(s, 0.0, 1.0) * 255.0))));
    }
  }
  if (!out) throw IoError("write failed on '" + path + "'");
}

/// Relative L2 error of estimated maps against the truth over the estimated support.
template <typename T>
double maps_nrmse(const SensitivityMaps<T>& est, const SensitivityMaps<T>& truth) {
  if (est.n_coils() != truth.n_coils()) throw ArgumentError("maps_nrmse: coil count mismatch");
  require_same_dims(est.dims(), truth.dims(), "maps_nrmse");
  double num = 0, den = 0;
  for (std::size_t l = 0; l < est.maps.size(); ++l) {
    for (std::size_t v = 0; v < est.maps[l].size(); ++v) {
      if (!est.support[v]) continue;
      num += std::norm(std::complex<double>(est.maps[l][v]) - std::complex<double>(truth.maps[l][v]));
      den += std::norm(std::complex<double>(truth.maps[l][v]));
    }
  }
  if (!(den > 0)) throw NumericError("maps_nrmse: empty support");
  return std::sqrt(num / den);
}

// ---------------------------------------------------------------------------
// Scenario: one trajectory with its plan, density and coil setup.

struct Scenario {
  std::string name;
  std::shared_ptr<const NufftPlan<float>> plan;
  std::shared_ptr<const KTrajectory> traj;
  std::shared_ptr<const DensityWeights> density;
  std::shared_ptr<const SensitivityMaps<float>> true_maps;
};

inline KTrajectory make_trajectory(const BenchConfig& cfg, const std::string& spec) {
  const long shots = static_cast<long>(
      std::floor(static_cast<double>(cfg.dims.ny) * static_cast<double>(cfg.dims.nz) / cfg.af_target));
  if (shots < 1) throw ConfigError("af_target leaves no shots", "af_target");
  const int n = static_cast<int>(shots);
  if (spec == "radial") return gen_radial_gm(n, cfg.n_samples);
  if (spec == "cones") return gen_cones(n, cfg.n_samples, cfg.cone_angles, cfg.cone_twist);
  if (spec == "tpi") return gen_tpi(n, cfg.n_samples, cfg.tpi_p);
  if (spec == "golf") {
    return gen_golf_hybrid(cfg.dims, cfg.af_target, cfg.golf_center_radius, cfg.n_samples, cfg.trajectory_seed);
  }
  if (!std::filesystem::exists(spec)) throw IoError("trajectory file '" + spec + "' does not exist");
  return load_trajectory(spec);
}

inline std::string scenario_label(const std::string& spec) {
  if (spec == "radial" || spec == "cones" || spec == "tpi" || spec == "golf") return spec;
  return std::filesystem::path(spec).stem().string();
}

inline Scenario make_scenario(const BenchConfig& cfg, const std::string& spec) {
  Scenario s;
  s.name = scenario_label(spec);
  s.plan = std::make_shared<const NufftPlan<float>>(cfg.dims);
  s.traj = std::make_shared<const KTrajectory>(make_trajectory(cfg, spec));
  s.density = std::make_shared<const DensityWeights>(pipe_menon_weights(*s.plan, *s.traj, cfg.density_iters));
  s.true_maps = std::make_shared<const SensitivityMaps<float>>(
      simulate_sensitivities<float>(cfg.coils, cfg.dims, cfg.coil_seed));
  return s;
}

struct SimulatedCase {
  TrainingSample<float> sample;
  std::optional<double> maps_nrmse;
  int channels = 0;
};

/// Phantom, acquisition, optional compression and map estimation for one seed.
inline SimulatedCase simulate_case(const BenchConfig& cfg, const Scenario& sc, std::uint64_t phantom_seed) {
  auto phantom = make_phantom<float>(cfg.dims, phantom_seed, true);
  auto acq = acquire_retrospective(phantom, *sc.true_maps, *sc.plan, *sc.traj, cfg.noise_snr_db,
                                   phantom_seed ^ 0x5bd1e995ull);
  SimulatedCase out;
  auto kdata = std::move(acq.kdata);
  if (cfg.compress) kdata = coil_compress(kdata, cfg.compress_threshold).first;
  std::shared_ptr<const SensitivityMaps<float>> maps = sc.true_maps;
  if (cfg.estimate_maps || cfg.compress) {
    auto est = estimate_sensitivities(*sc.plan, kdata, *sc.traj, *sc.density,
                                      SensitivityOptions{cfg.smap_radius, cfg.smap_threshold});
    if (!cfg.compress) out.maps_nrmse = maps_nrmse(est, *sc.true_maps);
    maps = std::make_shared<const SensitivityMaps<float>>(std::move(est));
  }
  out.channels = kdata.n_coils();
  out.sample = TrainingSample<float>{sc.plan, sc.traj, sc.density, maps, std::move(kdata), std::move(acq.target)};
  return out;
}

/// Training phantoms use seeds disjoint from evaluation seeds.
inline constexpr std::uint64_t kTrainSeedBase = 1u << 20;

inline TrainResult<float> train_scenario(const BenchConfig& cfg, const Scenario& sc,
                                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  std::vector<TrainingSample<float>> data;
  const int total = cfg.train_phantoms + cfg.val_phantoms;
  for (int i = 0; i < total; ++i) {
    data.push_back(simulate_case(cfg, sc, kTrainSeedBase + static_cast<std::uint64_t>(i)).sample);
  }
  DatasetSplit split;
  for (int i = 0; i < total; ++i) (i < cfg.train_phantoms ? split.train : split.validation).push_back(static_cast<std::size_t>(i));
  return train(data, split, cfg.train, cfg.model, on_epoch);
}

inline ComplexVolume<float> reconstruct(const std::string& method, const BenchConfig& cfg,
                                        const TrainingSample<float>& s, const ModelWeights<float>* model) {
  auto op = s.op();
  if (method == "adjoint") return op.adjoint(s.kdata, false);
  if (method == "dc-adjoint") return op.adjoint(s.kdata, true);
  if (method == "fista") {
    // Relative lambda: the smallest lambda that zeroes the first FISTA step scales with the data.
    auto aty = op.adjoint(s.kdata, false);
    Haar3 haar(cfg.dims);
    haar.forward(aty);
    double peak = 0;
    for (const auto& v : aty.data) peak = std::max(peak, static_cast<double>(std::abs(v)));
    FistaOptions opt;
    opt.lambda = cfg.fista_lambda_rel * peak / static_cast<double>(s.kdata.n_coils());
    opt.n_iter = cfg.fista_iters;
    return fista_wavelet(op, s.kdata, opt);
  }
  if (method == "ncpdnet") {
    if (!model) throw ConfigError("ncpdnet requires trained or loaded weights", "methods");
    return ncpdnet_forward(op, s.kdata, *model, cfg.model);
  }
  throw ConfigError("unknown method '" + method + "'", "methods");
}

// ---------------------------------------------------------------------------

struct BenchRow {
  std::string method;
  std::string trajectory;
  int coils = 0;
  bool compressed = false;
  double psnr_db = 0;
  double ssim = 0;
  double wall_ms = 0;
  double peak_rss_mb = 0;
  std::uint64_t seed = 0;
  std::optional<double> maps_nrmse;
  std::string recon_path;
  std::string target_path;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  std::string csv_path;
};

inline constexpr const char* kBenchCsvHeader = "method,trajectory,coils,compressed,psnr_db,ssim,wall_ms,peak_rss_mb";

inline void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << kBenchCsvHeader << '\n';
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%d,%d,%.17g,%.17g,%.3f,%.1f\n", r.method.c_str(), r.trajectory.c_str(),
                  r.coils, r.compressed ? 1 : 0, r.psnr_db, r.ssim, r.wall_ms, r.peak_rss_mb);
    out << buf;
  }
  if (!out) throw IoError("write failed on '" + path + "'");
}

/// Runs `fn(i)` for i in [0, n) on up to `jobs` threads.
inline void run_jobs(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int t = 0; t < std::min<int>(jobs, static_cast<int>(n)); ++t) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

struct BenchOptions {
  int jobs = 1;
  std::function<void(const std::string&)> log;
};

/// Every (trajectory x method x seed) case: simulate, reconstruct, score, and
/// save the magnitude and target volumes so metrics can be recomputed.
inline BenchReport run_bench(const BenchConfig& cfg, const BenchOptions& opt = {}) {
  cfg.validate();
  namespace fs = std::filesystem;
  auto say = [&](const std::string& m) {
    if (opt.log) opt.log(m);
  };
  fs::create_directories(cfg.output_dir);
  const bool need_model = std::find(cfg.methods.begin(), cfg.methods.end(), "ncpdnet") != cfg.methods.end();

  std::vector<Scenario> scenarios(cfg.trajectories.size());
  std::vector<std::optional<ModelWeights<float>>> models(cfg.trajectories.size());
  std::optional<ModelWeights<float>> loaded;
  if (need_model && !cfg.weights.empty()) {
    loaded = load_weights<float>(cfg.weights);
    if (!(loaded->config.n_iterations == cfg.model.n_iterations && loaded->config.buffer_size == cfg.model.buffer_size &&
          loaded->config.n_filters == cfg.model.n_filters && loaded->config.kernel == cfg.model.kernel)) {
      throw ConfigError("weights file does not match the model_* settings", "weights");
    }
  }
  run_jobs(scenarios.size(), opt.jobs, [&](std::size_t i) {
    scenarios[i] = make_scenario(cfg, cfg.trajectories[i]);
    say("trajectory " + scenarios[i].name + ": " + std::to_string(scenarios[i].traj->n_shots) + " shots, AF " +
        config_detail::fmt_double(acceleration_factor(*scenarios[i].traj, cfg.dims)));
    if (!need_model) return;
    if (loaded) {
      models[i] = *loaded;
      return;
    }
    auto res = train_scenario(cfg, scenarios[i], [&](const EpochRecord& r) {
      say(scenarios[i].name + " epoch " + std::to_string(r.epoch) + " train " + config_detail::fmt_double(r.train_mae) +
          " val " + config_detail::fmt_double(r.val_mae));
    });
    save_weights(cfg.output_dir + "/" + scenarios[i].name + "_model.ncpw", res.best);
    write_history_csv(cfg.output_dir + "/" + scenarios[i].name + "_history.csv", res.history);
    models[i] = std::move(res.best);
  });

  struct CaseKey {
    std::size_t scenario;
    std::uint64_t seed;
  };
  std::vector<CaseKey> keys;
  for (std::size_t i = 0; i < scenarios.size(); ++i)
    for (auto seed : cfg.seeds) keys.push_back({i, seed});

  std::vector<std::vector<BenchRow>> per_case(keys.size());
  run_jobs(keys.size(), opt.jobs, [&](std::size_t k) {
    const auto& sc = scenarios[keys[k].scenario];
    const auto seed = keys[k].seed;
    const fs::path dir = fs::path(cfg.output_dir) / "cases" / sc.name;
    fs::create_directories(dir);
    auto sim = simulate_case(cfg, sc, seed);
    RealVolume<double> target(cfg.dims);
    for (std::size_t v = 0; v < target.size(); ++v) target[v] = sim.sample.target[v];
    const std::string stem = "s" + std::to_string(seed);
    const std::string target_path = (dir / ("target_" + stem + ".cvol")).string();
    save_cvol(target_path, target, Precision::F64);
    double tmax = 0;
    for (double v : target.data) tmax = std::max(tmax, v);
    write_pgm_slice((dir / ("target_" + stem + ".pgm")).string(), target, tmax);
    for (const auto& method : cfg.methods) {
      const ModelWeights<float>* model = models[keys[k].scenario] ? &*models[keys[k].scenario] : nullptr;
      auto t0 = std::chrono::steady_clock::now();
      auto x = reconstruct(method, cfg, sim.sample, model);
      double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      auto mag = magnitude(cast_volume<double>(x));
      BenchRow row;
      row.method = method;
      row.trajectory = sc.name;
      row.coils = sim.channels;
      row.compressed = cfg.compress;
      row.wall_ms = ms;
      row.peak_rss_mb = peak_rss_mb();
      row.seed = seed;
      row.maps_nrmse = sim.maps_nrmse;
      row.recon_path = (dir / (method + "_" + stem + ".cvol")).string();
      row.target_path = target_path;
      save_cvol(row.recon_path, mag, Precision::F64);
      write_pgm_slice((dir / (method + "_" + stem + ".pgm")).string(), mag, tmax);
      row.psnr_db = psnr(mag, target);
      row.ssim = ssim(mag, target);
      say(sc.name + " " + method + " seed " + std::to_string(seed) + ": PSNR " + config_detail::fmt_double(row.psnr_db));
      per_case[k].push_back(std::move(row));
    }
  });

  BenchReport rep;
  for (auto& rows : per_case)
    for (auto& r : rows) rep.rows.push_back(std::move(r));
  rep.csv_path = cfg.output_dir + "/results.csv";
  write_bench_csv(rep.csv_path, rep.rows);

  std::ofstream cases(cfg.output_dir + "/cases.csv");
  if (!cases) throw IoError("cannot write cases.csv in '" + cfg.output_dir + "'");
  cases << "method,trajectory,seed,maps_nrmse,recon,target\n";
  cases.precision(17);
  for (const auto& r : rep.rows) {
    cases << r.method << ',' << r.trajectory << ',' << r.seed << ',';
    if (r.maps_nrmse) cases << *r.maps_nrmse;
    cases << ',' << r.recon_path << ',' << r.target_path << '\n';
  }
  return rep;
}

}  // namespace ncpd
