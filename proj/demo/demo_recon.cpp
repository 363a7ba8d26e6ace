// Simulates a radial acquisition of a small phantom and compares the
// density-compensated adjoint with wavelet FISTA.
#include <cstdio>

#include <ncpd/ncpd.hpp>

int main() {
  using namespace ncpd;
  const MatrixSize dims{32, 32, 32};
  NufftPlan<float> plan(dims);
  auto traj = gen_radial_gm(256, 32);
  auto density = pipe_menon_weights(plan, traj, 10);
  auto maps = simulate_sensitivities<float>(4, dims, 1);
  auto phantom = make_phantom<float>(dims, 7, true);
  auto acq = acquire_retrospective(phantom, maps, plan, traj);

  std::printf("AF %.2f, %zu samples, 4 coils\n", acceleration_factor(traj, dims), traj.size());

  auto dc = dc_adjoint_recon(plan, traj, maps, density, acq.kdata);
  auto r = evaluate(magnitude(dc), acq.target);
  std::printf("dc-adjoint  PSNR %6.2f dB  SSIM %.4f\n", r.psnr_db, r.ssim);

  MultiCoilOperator<float> op{plan, traj, maps, density};
  FistaOptions opt;
  opt.lambda = 1e-4;
  opt.n_iter = 30;
  auto fista = fista_wavelet(op, acq.kdata, opt);
  r = evaluate(magnitude(fista), acq.target);
  std::printf("fista       PSNR %6.2f dB  SSIM %.4f\n", r.psnr_db, r.ssim);
}
