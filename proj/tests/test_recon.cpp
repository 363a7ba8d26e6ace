#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include <ncpd/ncpd.hpp>

using namespace ncpd;

namespace {

double rel_diff(const ComplexVolume<double>& a, const ComplexVolume<double>& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += std::norm(a[i] - b[i]);
    den += std::norm(b[i]);
  }
  return std::sqrt(num / den);
}

// PSNR after the least-squares scale that best matches the magnitude to the target.
double scaled_psnr(const ComplexVolume<double>& x, const RealVolume<double>& target) {
  auto m = magnitude(x);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    num += m[i] * target[i];
    den += m[i] * m[i];
  }
  for (auto& v : m.data) v *= num / den;
  return psnr(m, target);
}

KTrajectory trajectory_of(TrajectoryKind k, MatrixSize d) {
  switch (k) {
    case TrajectoryKind::RadialGM: return gen_radial_gm(64, 16);
    case TrajectoryKind::Cones: return gen_cones(64, 16, 8, 1.0);
    case TrajectoryKind::TPI: return gen_tpi(64, 16, 0.4);
    default: return gen_golf_hybrid(d, 4.0, 0.2, 16, 1);
  }
}

struct Scene {
  MatrixSize d{12, 12, 12};
  NufftPlan<double> plan{d};
  KTrajectory traj;
  SensitivityMaps<double> maps;
  DensityWeights dcw;
  Acquisition<double> acq;

  Scene(TrajectoryKind k, int L) : traj(trajectory_of(k, d)) {
    maps = simulate_sensitivities<double>(L, d, 3);
    dcw = pipe_menon_weights(plan, traj, 5);
    acq = acquire_retrospective(make_phantom<double>(d, 1, true), maps, plan, traj);
  }
  MultiCoilOperator<double> op() const { return {plan, traj, maps, dcw}; }
};

ModelConfig tiny_model() {
  ModelConfig c;
  c.n_iterations = 2;
  c.buffer_size = 2;
  c.n_filters = 4;
  c.precision = Precision::F64;
  return c;
}

}  // namespace

TEST(NcpdNet, ZeroWeightsEqualDcAdjointAllKinds) {
  for (auto k : {TrajectoryKind::RadialGM, TrajectoryKind::Cones, TrajectoryKind::TPI, TrajectoryKind::GolfHybrid}) {
    for (int L : {1, 2, 4}) {
      Scene s(k, L);
      auto cfg = tiny_model();
      auto model = ModelWeights<double>::zeros(cfg);
      auto net = ncpdnet_forward(s.plan, s.traj, s.maps, s.dcw, s.acq.kdata, model, cfg);
      auto dc = dc_adjoint_recon(s.plan, s.traj, s.maps, s.dcw, s.acq.kdata);
      EXPECT_LE(rel_diff(net, dc), 1e-6) << kind_name(k) << " L=" << L;
    }
  }
}

TEST(NcpdNet, ChannelAgnosticWeights) {
  auto cfg = tiny_model();
  auto model = init_weights<double>(cfg, 4);
  const auto shapes = model.parameter_count();
  for (int L : {1, 3, 6}) {
    Scene s(TrajectoryKind::RadialGM, L);
    auto x = ncpdnet_forward(s.plan, s.traj, s.maps, s.dcw, s.acq.kdata, model, cfg);
    EXPECT_EQ(x.dims, s.d);
    for (const auto& z : x.data) ASSERT_TRUE(std::isfinite(z.real()) && std::isfinite(z.imag()));
  }
  EXPECT_EQ(model.parameter_count(), shapes);
}

TEST(NcpdNet, RejectsMismatchedInputs) {
  Scene s(TrajectoryKind::RadialGM, 2);
  auto cfg = tiny_model();
  auto model = ModelWeights<double>::zeros(cfg);
  auto other = cfg;
  other.n_filters = 5;
  EXPECT_THROW(ncpdnet_forward(s.plan, s.traj, s.maps, s.dcw, s.acq.kdata, model, other), ArgumentError);
  auto three = simulate_sensitivities<double>(3, s.d, 1);
  EXPECT_THROW(ncpdnet_forward(s.plan, s.traj, three, s.dcw, s.acq.kdata, model, cfg), ArgumentError);
  DensityWeights short_w;
  short_w.w.assign(3, 1.0);
  EXPECT_THROW(ncpdnet_forward(s.plan, s.traj, s.maps, short_w, s.acq.kdata, model, cfg), ArgumentError);
}

TEST(DcAdjoint, FullCartesianRecoversImage) {
  MatrixSize d{10, 10, 10};
  NufftPlan<double> plan(d);
  auto t = gen_cartesian(d);
  auto maps = simulate_sensitivities<double>(4, d, 2);
  DensityWeights w;
  w.w.assign(t.size(), 1.0);
  auto ph = make_phantom<double>(d, 0, false);
  auto y = op_forward(plan, t, maps, to_complex(ph));
  EXPECT_LE(rel_diff(dc_adjoint_recon(plan, t, maps, w, y), to_complex(ph)), 1e-4);
}

TEST(DcAdjoint, CompensationImprovesOverPlainAdjoint) {
  MatrixSize d{24, 24, 24};
  NufftPlan<double> plan(d);
  auto t = gen_radial_gm(400, 24);
  auto maps = simulate_sensitivities<double>(2, d, 1);
  auto dcw = pipe_menon_weights(plan, t, 10);
  auto acq = acquire_retrospective(make_phantom<double>(d, 0, false), maps, plan, t);
  double with = scaled_psnr(dc_adjoint_recon(plan, t, maps, dcw, acq.kdata), acq.target);
  double without = scaled_psnr(op_adjoint(plan, t, maps, acq.kdata), acq.target);
  EXPECT_GT(with, without);
}

TEST(Fista, FullySampledConvergesToImage) {
  MatrixSize d{8, 8, 8};
  NufftPlan<double> plan(d);
  auto t = gen_cartesian(d);
  auto maps = simulate_sensitivities<double>(2, d, 5);
  DensityWeights w;
  w.w.assign(t.size(), 1.0);
  auto ph = make_phantom<double>(d, 0, false);
  auto y = op_forward(plan, t, maps, to_complex(ph));
  MultiCoilOperator<double> op{plan, t, maps, w};
  FistaOptions opt;
  opt.n_iter = 60;
  EXPECT_LE(rel_diff(fista_wavelet(op, y, opt), to_complex(ph)), 1e-3);
}

TEST(Fista, ObjectiveDecreasesAndLargeLambdaGivesZero) {
  Scene s(TrajectoryKind::RadialGM, 2);
  auto op = s.op();
  std::vector<double> hist;
  FistaOptions opt;
  opt.lambda = 1e-4;
  opt.n_iter = 20;
  opt.objective_history = &hist;
  fista_wavelet(op, s.acq.kdata, opt);
  ASSERT_EQ(hist.size(), 21u);
  EXPECT_LT(hist.back(), hist.front());
  EXPECT_LT(hist.back(), hist[1]);

  FistaOptions big;
  big.lambda = 1e6;
  big.n_iter = 3;
  for (const auto& z : fista_wavelet(op, s.acq.kdata, big).data) EXPECT_EQ(z, std::complex<double>(0.0, 0.0));
}

TEST(Fista, BeatsDcAdjointOnUndersampledData) {
  MatrixSize d{16, 16, 16};
  NufftPlan<double> plan(d);
  auto t = gen_radial_gm(128, 16);
  auto maps = simulate_sensitivities<double>(4, d, 2);
  auto dcw = pipe_menon_weights(plan, t, 10);
  auto acq = acquire_retrospective(make_phantom<double>(d, 0, false), maps, plan, t);
  MultiCoilOperator<double> op{plan, t, maps, dcw};
  FistaOptions opt;
  opt.lambda = 1e-5;
  opt.n_iter = 30;
  double fista = psnr(magnitude(fista_wavelet(op, acq.kdata, opt)), acq.target);
  double dc = scaled_psnr(dc_adjoint_recon(plan, t, maps, dcw, acq.kdata), acq.target);
  EXPECT_GT(fista, dc);
}

TEST(Fista, Guards) {
  Scene s(TrajectoryKind::RadialGM, 1);
  auto op = s.op();
  FistaOptions neg;
  neg.lambda = -1;
  EXPECT_THROW(fista_wavelet(op, s.acq.kdata, neg), ArgumentError);
  FistaOptions none;
  none.n_iter = 0;
  EXPECT_THROW(fista_wavelet(op, s.acq.kdata, none), ArgumentError);
}

TEST(WeightsIo, RoundtripAndCorruption) {
  auto cfg = tiny_model();
  auto m = init_weights<double>(cfg, 8);
  auto p = (std::filesystem::temp_directory_path() / "ncpd_model.ncpw").string();
  save_weights(p, m);
  auto r = load_weights<double>(p);
  EXPECT_EQ(r.config, m.config);
  auto a = r.tensors();
  auto b = m.tensors();
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i]->data.size(); ++j)
      EXPECT_EQ(a[i]->data[j], static_cast<double>(static_cast<float>(b[i]->data[j])));
  auto f = load_weights<float>(p);
  EXPECT_EQ(f.parameter_count(), m.parameter_count());

  std::filesystem::resize_file(p, std::filesystem::file_size(p) - 1);
  EXPECT_THROW(load_weights<double>(p), FormatError);
  {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << "NCPX";
  }
  try {
    load_weights<double>(p);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
}
