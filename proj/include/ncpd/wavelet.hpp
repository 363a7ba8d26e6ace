#pragma once

#include <cmath>
#include <vector>

#include "volume.hpp"

namespace ncpd {

/// Orthonormal multi-level 3D Haar transform, in place on the coarse
/// sub-band. Levels stop early once any axis of the coarse band turns odd.
class Haar3 {
 public:
  explicit Haar3(MatrixSize dims, int levels = 3) : dims_(dims) {
    int nx = dims.nx, ny = dims.ny, nz = dims.nz;
    for (int l = 0; l < levels; ++l) {
      if (nx % 2 || ny % 2 || nz % 2 || nx < 2 || ny < 2 || nz < 2) break;
      extents_.push_back({nx, ny, nz});
      nx /= 2;
      ny /= 2;
      nz /= 2;
    }
  }

  int levels() const { return static_cast<int>(extents_.size()); }

  template <typename T>
  void forward(ComplexVolume<T>& x) const {
    require_same_dims(x.dims, dims_, "haar forward");
    std::vector<cplx<T>> line;
    for (const auto& e : extents_) {
      for (int axis = 0; axis < 3; ++axis) pass(x, e, axis, line, false);
    }
  }

  template <typename T>
  void inverse(ComplexVolume<T>& x) const {
    require_same_dims(x.dims, dims_, "haar inverse");
    std::vector<cplx<T>> line;
    for (auto it = extents_.rbegin(); it != extents_.rend(); ++it) {
      for (int axis = 2; axis >= 0; --axis) pass(x, *it, axis, line, true);
    }
  }

 private:
  struct Extent {
    int n[3];
  };

  template <typename T>
  void pass(ComplexVolume<T>& x, const Extent& e, int axis, std::vector<cplx<T>>& line,
            bool inverse) const {
    const T r = static_cast<T>(1.0 / std::sqrt(2.0));
    const int len = e.n[axis];
    const int half = len / 2;
    const int o1 = axis == 0 ? 1 : 0;
    const int o2 = axis == 2 ? 1 : 2;
    line.resize(static_cast<std::size_t>(len));
    int idx[3];
    for (int j = 0; j < e.n[o2]; ++j) {
      for (int i = 0; i < e.n[o1]; ++i) {
        idx[o1] = i;
        idx[o2] = j;
        auto at = [&](int p) -> cplx<T>& {
          idx[axis] = p;
          return x(idx[0], idx[1], idx[2]);
        };
        for (int p = 0; p < len; ++p) line[static_cast<std::size_t>(p)] = at(p);
        for (int p = 0; p < half; ++p) {
          if (!inverse) {
            cplx<T> u = line[static_cast<std::size_t>(2 * p)], v = line[static_cast<std::size_t>(2 * p + 1)];
            at(p) = (u + v) * r;
            at(half + p) = (u - v) * r;
          } else {
            cplx<T> a = line[static_cast<std::size_t>(p)], d = line[static_cast<std::size_t>(half + p)];
            at(2 * p) = (a + d) * r;
            at(2 * p + 1) = (a - d) * r;
          }
        }
      }
    }
  }

  MatrixSize dims_;
  std::vector<Extent> extents_;
};

/// prox of lambda * |.|_1 on complex values: z / |z| * max(|z| - lambda, 0).
template <typename T>
cplx<T> soft_threshold(cplx<T> z, T lambda) {
  T mag = std::abs(z);
  if (mag <= lambda) return cplx<T>{};
  return z * ((mag - lambda) / mag);
}

template <typename T>
T soft_threshold(T v, T lambda) {
  T mag = std::abs(v);
  if (mag <= lambda) return T(0);
  return v > 0 ? mag - lambda : lambda - mag;
}

}  // namespace ncpd
