#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include <ncpd/ncpd.hpp>

namespace fs = std::filesystem;
using namespace ncpd;

namespace {

MatrixSize matrix_arg(const std::string& v) { return config_detail::parse_dims(v, "matrix", 0); }

std::string fmt(double v) { return config_detail::fmt_double(v); }

void traj_gen(const std::string& kind, int shots, int samples, int cone_angles, double twist, double p,
              const std::string& matrix, double af, double center_radius, std::uint64_t seed,
              const std::string& out) {
  KTrajectory t;
  if (kind == "radial") t = gen_radial_gm(shots, samples);
  else if (kind == "cones") t = gen_cones(shots, samples, cone_angles, twist);
  else if (kind == "tpi") t = gen_tpi(shots, samples, p);
  else if (kind == "golf") {
    GolfHybridReport rep;
    auto m = matrix_arg(matrix);
    t = gen_golf_hybrid(m, af, center_radius, samples, seed, &rep);
    std::printf("cartesian_shots %d\nouter_shots %d\ncartesian_fraction %.6f\nrealized_af %.6f\n",
                rep.cartesian_shots, rep.outer_shots, t.cartesian_fraction(), acceleration_factor(t, m));
  } else {
    throw ConfigError("unknown trajectory kind '" + kind + "'", "kind");
  }
  save_trajectory(out, t);
  std::printf("wrote %s (%d shots x %d samples)\n", out.c_str(), t.n_shots, t.n_samples);
}

void traj_info(const std::string& path, const std::string& matrix) {
  auto t = load_trajectory(path);
  auto m = matrix_arg(matrix);
  auto mask = detect_cartesian(t, m);
  std::size_t cart = 0;
  for (auto b : mask) cart += b;
  float lo = 0, hi = 0, kmax = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    auto k = t.at(i);
    for (float c : k) {
      lo = std::min(lo, c);
      hi = std::max(hi, c);
    }
    kmax = std::max(kmax, std::sqrt(k[0] * k[0] + k[1] * k[1] + k[2] * k[2]));
  }
  std::printf("kind %s\nshots %d\nsamples_per_shot %d\nacceleration_factor %.6f\ncartesian_fraction %.6f\n"
              "coord_min %.6f\ncoord_max %.6f\nmax_radius %.6f\n",
              kind_name(t.kind), t.n_shots, t.n_samples, acceleration_factor(t, m),
              static_cast<double>(cart) / static_cast<double>(t.size()), lo, hi, kmax);
}

void sim_acquire(const std::string& traj_path, const std::string& matrix, int coils, std::uint64_t seed,
                 std::uint64_t coil_seed, double snr, int density_iters, const std::string& out_dir) {
  auto m = matrix_arg(matrix);
  auto t = load_trajectory(traj_path);
  NufftPlan<float> plan(m);
  auto maps = simulate_sensitivities<float>(coils, m, coil_seed);
  auto phantom = make_phantom<float>(m, seed, true);
  std::optional<double> noise;
  if (snr > 0) noise = snr;
  auto acq = acquire_retrospective(phantom, maps, plan, t, noise, seed ^ 0x5bd1e995ull);
  auto dcw = pipe_menon_weights(plan, t, density_iters);
  fs::create_directories(out_dir);
  save_kspace(out_dir + "/kspace.kspc", acq.kdata);
  save_sensitivities(out_dir + "/maps.smap", maps);
  save_density(out_dir + "/density.dcw", dcw);
  save_cvol(out_dir + "/phantom.cvol", phantom, Precision::F64);
  save_cvol(out_dir + "/target.cvol", acq.target, Precision::F64);
  std::printf("wrote kspace.kspc maps.smap density.dcw phantom.cvol target.cvol to %s\n", out_dir.c_str());
}

struct ReconArgs {
  std::string method, traj, kspace, density, maps, weights, out, matrix = "32";
  double lambda_rel = 0.02;
  int iters = 30;
  int density_iters = 10;
  double smap_radius = 0.1;
};

void recon(const ReconArgs& a) {
  auto m = matrix_arg(a.matrix);
  auto plan = std::make_shared<const NufftPlan<float>>(m);
  auto t = std::make_shared<const KTrajectory>(load_trajectory(a.traj));
  auto k = load_kspace<float>(a.kspace);
  k.validate(*t);
  auto dcw = std::make_shared<const DensityWeights>(a.density.empty() ? pipe_menon_weights(*plan, *t, a.density_iters)
                                                                      : load_density(a.density));
  std::shared_ptr<const SensitivityMaps<float>> maps;
  if (a.maps.empty()) {
    maps = std::make_shared<const SensitivityMaps<float>>(
        estimate_sensitivities(*plan, k, *t, *dcw, SensitivityOptions{a.smap_radius, 0.05}));
  } else {
    maps = std::make_shared<const SensitivityMaps<float>>(load_sensitivities<float>(a.maps));
  }
  if (maps->n_coils() != k.n_coils()) throw ConfigError("maps and k-space disagree on the coil count", "maps");
  BenchConfig cfg;
  cfg.dims = m;
  cfg.fista_lambda_rel = a.lambda_rel;
  cfg.fista_iters = a.iters;
  std::optional<ModelWeights<float>> model;
  if (a.method == "ncpdnet") {
    if (a.weights.empty()) throw ConfigError("ncpdnet needs --weights", "weights");
    model = load_weights<float>(a.weights);
    cfg.model = model->config;
  }
  TrainingSample<float> s{plan, t, dcw, maps, std::move(k), RealVolume<float>(m)};
  auto t0 = std::chrono::steady_clock::now();
  auto x = reconstruct(a.method, cfg, s, model ? &*model : nullptr);
  double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  save_cvol(a.out, x);
  std::printf("method %s\nwall_ms %.3f\npeak_rss_mb %.1f\nwrote %s\n", a.method.c_str(), ms, peak_rss_mb(),
              a.out.c_str());
}

void train_cmd(const std::string& config, const std::string& trajectory, const std::string& out,
               const std::string& history) {
  auto cfg = config.empty() ? BenchConfig{} : parse_config(config);
  cfg.validate();
  const std::string spec = trajectory.empty() ? cfg.trajectories.front() : trajectory;
  auto sc = make_scenario(cfg, spec);
  auto res = train_scenario(cfg, sc, [](const EpochRecord& r) {
    std::printf("epoch %d train_mae %.6g val_mae %.6g lr %.3g\n", r.epoch, r.train_mae, r.val_mae, r.lr);
    std::fflush(stdout);
  });
  save_weights(out, res.best);
  if (!history.empty()) write_history_csv(history, res.history);
  std::printf("best_epoch %d\nwrote %s\n", res.best_epoch, out.c_str());
}

void gradcheck_cmd(double eps, bool linear, int params, std::uint64_t seed) {
  MatrixSize d{8, 8, 8};
  auto plan = std::make_shared<const NufftPlan<double>>(d);
  auto traj = std::make_shared<const KTrajectory>(gen_radial_gm(16, 8));
  auto dcw = std::make_shared<const DensityWeights>(pipe_menon_weights(*plan, *traj, 10));
  auto maps = std::make_shared<const SensitivityMaps<double>>(simulate_sensitivities<double>(2, d, seed));
  auto acq = acquire_retrospective(make_phantom<double>(d, seed, true), *maps, *plan, *traj);
  TrainingSample<double> s{plan, traj, dcw, maps, acq.kdata, acq.target};
  ModelConfig cfg;
  cfg.n_iterations = 2;
  cfg.buffer_size = 2;
  cfg.n_filters = 4;
  cfg.precision = Precision::F64;
  cfg.activation = linear ? Activation::Identity : Activation::ReLU;
  GradCheckOptions<double> opt;
  opt.n_params = params;
  opt.seed = seed;
  auto rep = grad_check<double>([&] { return init_weights<double>(cfg, seed); }, s, cfg, eps, opt);
  std::printf("checked %zu\nmax_rel_error %.6e\n", rep.checked, rep.max_rel_error);
}

void metrics_cmd(const std::string& x_path, const std::string& ref_path) {
  auto x = magnitude(load_cvol<double>(x_path));
  auto ref = magnitude(load_cvol<double>(ref_path));
  std::printf("psnr_db %.17g\nssim %.17g\n", psnr(x, ref), ssim(x, ref));
}

void bench_cmd(const std::string& config, bool dry_run, int jobs, const std::string& out_dir) {
  auto cfg = config.empty() ? BenchConfig{} : parse_config(config);
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  if (dry_run) {
    cfg.validate();
    std::cout << emit_config(cfg);
    return;
  }
  BenchOptions opt;
  opt.jobs = jobs;
  opt.log = [](const std::string& m) { std::fprintf(stderr, "%s\n", m.c_str()); };
  auto rep = run_bench(cfg, opt);
  std::printf("wrote %s (%zu rows)\n", rep.csv_path.c_str(), rep.rows.size());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"3D multi-coil non-Cartesian MRI reconstruction toolkit"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (default: NCPD_THREADS or hardware)");

  auto* traj = app.add_subcommand("traj", "generate or inspect KTRJ trajectories");
  traj->require_subcommand(1);
  auto* gen = traj->add_subcommand("gen", "generate a trajectory");
  std::string kind = "radial", out, matrix = "32";
  int shots = 256, samples = 32, cone_angles = 8;
  double twist = 1.0, p = kDefaultTpiP, af = 4.0, center_radius = 0.2;
  std::uint64_t seed = 1;
  gen->add_option("--kind", kind, "radial|cones|tpi|golf")->capture_default_str();
  gen->add_option("--shots", shots, "number of shots (ignored for golf)")->capture_default_str();
  gen->add_option("--samples", samples, "samples per shot")->capture_default_str();
  gen->add_option("--cone-angles", cone_angles, "cones: polar angle bands")->capture_default_str();
  gen->add_option("--twist", twist, "cones: azimuthal winding")->capture_default_str();
  gen->add_option("--p", p, "tpi: twist start as a fraction of kmax")->capture_default_str();
  gen->add_option("--matrix", matrix, "golf: matrix NXxNYxNZ")->capture_default_str();
  gen->add_option("--af", af, "golf: target acceleration factor")->capture_default_str();
  gen->add_option("--center-radius", center_radius, "golf: Cartesian center radius")->capture_default_str();
  gen->add_option("--seed", seed, "golf: seed")->capture_default_str();
  gen->add_option("--out", out, "output KTRJ file")->required();

  auto* info = traj->add_subcommand("info", "print AF, Cartesian fraction and coordinate range");
  std::string info_path;
  info->add_option("file", info_path, "KTRJ file")->required();
  info->add_option("--matrix", matrix, "matrix NXxNYxNZ for AF and grid detection")->capture_default_str();

  auto* sim = app.add_subcommand("sim", "simulate acquisitions");
  sim->require_subcommand(1);
  auto* acquire = sim->add_subcommand("acquire", "phantom -> multi-coil k-space");
  std::string traj_path, out_dir = "sim_out";
  int coils = 4, density_iters = 10;
  std::uint64_t coil_seed = 1;
  double snr = 0;
  acquire->add_option("--traj", traj_path, "KTRJ file")->required();
  acquire->add_option("--matrix", matrix, "matrix NXxNYxNZ")->capture_default_str();
  acquire->add_option("--coils", coils, "receive coils")->capture_default_str();
  acquire->add_option("--seed", seed, "phantom and noise seed")->capture_default_str();
  acquire->add_option("--coil-seed", coil_seed, "sensitivity seed")->capture_default_str();
  acquire->add_option("--snr", snr, "sample-domain SNR in dB (0: noiseless)")->capture_default_str();
  acquire->add_option("--density-iters", density_iters, "Pipe-Menon iterations")->capture_default_str();
  acquire->add_option("--out-dir", out_dir, "output directory")->capture_default_str();

  auto* rec = app.add_subcommand("recon", "reconstruct with adjoint|dc-adjoint|fista|ncpdnet");
  ReconArgs ra;
  rec->add_option("method", ra.method, "reconstruction method")
      ->required()
      ->check(CLI::IsMember({"adjoint", "dc-adjoint", "fista", "ncpdnet"}));
  rec->add_option("--traj", ra.traj, "KTRJ file")->required();
  rec->add_option("--kspace", ra.kspace, "KSPC file")->required();
  rec->add_option("--density", ra.density, "DCW1 file (default: compute)");
  rec->add_option("--maps", ra.maps, "SMAP file (default: estimate from the data)");
  rec->add_option("--weights", ra.weights, "NCPW file for ncpdnet");
  rec->add_option("--matrix", ra.matrix, "matrix NXxNYxNZ")->capture_default_str();
  rec->add_option("--lambda-rel", ra.lambda_rel, "fista: lambda relative to the all-zero threshold")->capture_default_str();
  rec->add_option("--iters", ra.iters, "fista: iterations")->capture_default_str();
  rec->add_option("--smap-radius", ra.smap_radius, "map estimation radius")->capture_default_str();
  rec->add_option("--out", ra.out, "output CVOL file")->required();

  auto* tr = app.add_subcommand("train", "train NC-PDNet on simulated phantoms");
  std::string config, trajectory, history;
  tr->add_option("--config", config, "bench-style config file (keys: see `bench --help-config`)");
  tr->add_option("--trajectory", trajectory, "trajectory kind or KTRJ file (default: first in config)");
  tr->add_option("--out", out, "output NCPW file")->required();
  tr->add_option("--history", history, "per-epoch CSV");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the training gradients");
  double eps = 1e-6;
  bool linear = false;
  int params = 200;
  gc->add_option("--eps", eps, "central-difference step")->capture_default_str();
  gc->add_flag("--linear", linear, "replace ReLU by identity");
  gc->add_option("--params", params, "sampled conv parameters")->capture_default_str();
  gc->add_option("--seed", seed, "seed")->capture_default_str();

  auto* bench = app.add_subcommand("bench", "trajectory x method benchmark");
  bool dry_run = false, help_config = false;
  int jobs = 1;
  std::string bench_out;
  bench->add_option("--config", config, "config file (flat key = value)");
  bench->add_flag("--dry-run", dry_run, "print the resolved config and exit");
  bench->add_flag("--help-config", help_config, "list config keys with defaults");
  bench->add_option("--jobs", jobs, "parallel cases")->capture_default_str();
  bench->add_option("--output-dir", bench_out, "override output_dir");

  auto* met = app.add_subcommand("metrics", "PSNR/SSIM of magnitude volumes");
  std::string x_path, ref_path;
  met->add_option("--x", x_path, "reconstruction CVOL")->required();
  met->add_option("--ref", ref_path, "reference CVOL")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (threads > 0) set_num_threads(threads);
    if (gen->parsed()) traj_gen(kind, shots, samples, cone_angles, twist, p, matrix, af, center_radius, seed, out);
    else if (info->parsed()) traj_info(info_path, matrix);
    else if (acquire->parsed()) sim_acquire(traj_path, matrix, coils, seed, coil_seed, snr, density_iters, out_dir);
    else if (rec->parsed()) recon(ra);
    else if (tr->parsed()) train_cmd(config, trajectory, out, history);
    else if (gc->parsed()) gradcheck_cmd(eps, linear, params, seed);
    else if (bench->parsed()) {
      if (help_config) std::cout << emit_config(BenchConfig{}, true);
      else bench_cmd(config, dry_run, jobs, bench_out);
    } else if (met->parsed()) metrics_cmd(x_path, ref_path);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const ArgumentError& e) {
    std::fprintf(stderr, "invalid argument: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 3;
  } catch (const RefusalError& e) {
    std::fprintf(stderr, "refused: %s\n", e.what());
    return 3;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return 4;
  } catch (const IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return 4;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
