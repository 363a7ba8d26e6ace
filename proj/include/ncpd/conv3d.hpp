#pragma once

#include <Eigen/Core>

#include <vector>

#include "common.hpp"

namespace ncpd {

/// Same-padded (zero) 3D convolution over channel-major feature maps,
/// lowered to a matrix product through an im2col buffer.
///
/// Feature maps are [channels][nz][ny][nx]; weights are [out][in][k][k][k].
template <typename T>
class Conv3d {
 public:
  using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapMat = Eigen::Map<RowMat>;
  using ConstMapMat = Eigen::Map<const RowMat>;

  Conv3d(MatrixSize dims, int in_channels, int out_channels, int kernel)
      : dims_(dims), cin_(in_channels), cout_(out_channels), k_(kernel) {
    if (kernel < 1 || kernel % 2 == 0) throw ArgumentError("conv3d: kernel must be odd");
  }

  std::size_t voxels() const { return dims_.voxels(); }
  std::size_t patch() const { return static_cast<std::size_t>(cin_) * k_ * k_ * k_; }

  /// out = W * im2col(in) + b
  void forward(const std::vector<T>& in, const std::vector<T>& weight, const std::vector<T>& bias,
               std::vector<T>& out, std::vector<T>& col) const {
    im2col(in, col);
    out.resize(static_cast<std::size_t>(cout_) * voxels());
    ConstMapMat w(weight.data(), cout_, static_cast<Eigen::Index>(patch()));
    ConstMapMat c(col.data(), static_cast<Eigen::Index>(patch()), static_cast<Eigen::Index>(voxels()));
    MapMat o(out.data(), cout_, static_cast<Eigen::Index>(voxels()));
    o.noalias() = w * c;
    for (int co = 0; co < cout_; ++co) o.row(co).array() += bias[static_cast<std::size_t>(co)];
  }

  /// Accumulates weight/bias gradients and writes the input gradient.
  void backward(const std::vector<T>& in, const std::vector<T>& weight, const std::vector<T>& grad_out,
                std::vector<T>& grad_weight, std::vector<T>& grad_bias, std::vector<T>* grad_in,
                std::vector<T>& col) const {
    im2col(in, col);
    const auto P = static_cast<Eigen::Index>(voxels());
    const auto K = static_cast<Eigen::Index>(patch());
    ConstMapMat g(grad_out.data(), cout_, P);
    ConstMapMat c(col.data(), K, P);
    MapMat gw(grad_weight.data(), cout_, K);
    gw.noalias() += g * c.transpose();
    // Plain loop: Eigen's vectorized sum peels by address, so its rounding
    // would depend on where the buffer happens to be allocated.
    for (int co = 0; co < cout_; ++co) {
      const T* row = grad_out.data() + static_cast<std::size_t>(co) * static_cast<std::size_t>(P);
      T acc = 0;
      for (Eigen::Index i = 0; i < P; ++i) acc += row[i];
      grad_bias[static_cast<std::size_t>(co)] += acc;
    }
    if (grad_in) {
      ConstMapMat w(weight.data(), cout_, K);
      MapMat gc(col.data(), K, P);
      gc.noalias() = w.transpose() * g;
      col2im(col, *grad_in);
    }
  }

 private:
  // Row (ci, dz, dy, dx) of the column buffer holds in[ci] shifted by the tap offset.
  void im2col(const std::vector<T>& in, std::vector<T>& col) const {
    const int nx = dims_.nx, ny = dims_.ny, nz = dims_.nz;
    const int h = k_ / 2;
    const std::size_t P = voxels();
    col.assign(patch() * P, T(0));
    std::size_t row = 0;
    for (int ci = 0; ci < cin_; ++ci) {
      const T* src = in.data() + static_cast<std::size_t>(ci) * P;
      for (int dz = -h; dz <= h; ++dz)
        for (int dy = -h; dy <= h; ++dy)
          for (int dx = -h; dx <= h; ++dx, ++row) {
            T* dst = col.data() + row * P;
            const int x0 = std::max(0, -dx), x1 = std::min(nx, nx - dx);
            for (int z = 0; z < nz; ++z) {
              int sz = z + dz;
              if (sz < 0 || sz >= nz) continue;
              for (int y = 0; y < ny; ++y) {
                int sy = y + dy;
                if (sy < 0 || sy >= ny) continue;
                const T* s = src + (static_cast<std::size_t>(sz) * ny + static_cast<std::size_t>(sy)) * nx;
                T* d = dst + (static_cast<std::size_t>(z) * ny + static_cast<std::size_t>(y)) * nx;
                for (int x = x0; x < x1; ++x) d[x] = s[x + dx];
              }
            }
          }
    }
  }

  void col2im(const std::vector<T>& col, std::vector<T>& out) const {
    const int nx = dims_.nx, ny = dims_.ny, nz = dims_.nz;
    const int h = k_ / 2;
    const std::size_t P = voxels();
    out.assign(static_cast<std::size_t>(cin_) * P, T(0));
    std::size_t row = 0;
    for (int ci = 0; ci < cin_; ++ci) {
      T* dst = out.data() + static_cast<std::size_t>(ci) * P;
      for (int dz = -h; dz <= h; ++dz)
        for (int dy = -h; dy <= h; ++dy)
          for (int dx = -h; dx <= h; ++dx, ++row) {
            const T* src = col.data() + row * P;
            const int x0 = std::max(0, -dx), x1 = std::min(nx, nx - dx);
            for (int z = 0; z < nz; ++z) {
              int sz = z + dz;
              if (sz < 0 || sz >= nz) continue;
              for (int y = 0; y < ny; ++y) {
                int sy = y + dy;
                if (sy < 0 || sy >= ny) continue;
                T* d = dst + (static_cast<std::size_t>(sz) * ny + static_cast<std::size_t>(sy)) * nx;
                const T* s = src + (static_cast<std::size_t>(z) * ny + static_cast<std::size_t>(y)) * nx;
                for (int x = x0; x < x1; ++x) d[x + dx] += s[x];
              }
            }
          }
    }
  }

  MatrixSize dims_;
  int cin_, cout_, k_;
};

}  // namespace ncpd
