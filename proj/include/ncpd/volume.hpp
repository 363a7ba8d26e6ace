#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "common.hpp"

namespace ncpd {

/// Dense 3D volume, x fastest. Storage position (ix, iy, iz) holds voxel
/// n = (ix - nx/2, iy - ny/2, iz - nz/2).
template <typename V>
struct Grid3 {
  MatrixSize dims;
  std::vector<V> data;

  Grid3() = default;
  explicit Grid3(MatrixSize d, V fill = V{}) : dims(d), data(d.voxels(), fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t index(int ix, int iy, int iz) const {
    return (static_cast<std::size_t>(iz) * static_cast<std::size_t>(dims.ny) +
            static_cast<std::size_t>(iy)) *
               static_cast<std::size_t>(dims.nx) +
           static_cast<std::size_t>(ix);
  }
  V& operator()(int ix, int iy, int iz) { return data[index(ix, iy, iz)]; }
  const V& operator()(int ix, int iy, int iz) const { return data[index(ix, iy, iz)]; }
  V& operator[](std::size_t i) { return data[i]; }
  const V& operator[](std::size_t i) const { return data[i]; }

  bool operator==(const Grid3&) const = default;
};

template <typename T>
using ComplexVolume = Grid3<cplx<T>>;
template <typename T>
using RealVolume = Grid3<T>;
using MaskVolume = Grid3<std::uint8_t>;

template <typename T>
RealVolume<T> magnitude(const ComplexVolume<T>& x) {
  RealVolume<T> out(x.dims);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::abs(x[i]);
  return out;
}

template <typename T>
ComplexVolume<T> to_complex(const RealVolume<T>& x) {
  ComplexVolume<T> out(x.dims);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = cplx<T>(x[i], T(0));
  return out;
}

template <typename To, typename From>
ComplexVolume<To> cast_volume(const ComplexVolume<From>& x) {
  ComplexVolume<To> out(x.dims);
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = cplx<To>(static_cast<To>(x[i].real()), static_cast<To>(x[i].imag()));
  }
  return out;
}

inline void require_same_dims(const MatrixSize& a, const MatrixSize& b, const char* what) {
  if (!(a == b)) {
    throw ArgumentError(std::string(what) + ": dimension mismatch " + a.to_string() + " vs " +
                        b.to_string());
  }
}

template <typename T>
double norm2(const std::vector<cplx<T>>& v) {
  double s = 0;
  for (const auto& z : v) s += std::norm(std::complex<double>(z.real(), z.imag()));
  return std::sqrt(s);
}

template <typename T>
std::complex<double> dot(const std::vector<cplx<T>>& a, const std::vector<cplx<T>>& b) {
  std::complex<double> s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += std::conj(std::complex<double>(a[i])) * std::complex<double>(b[i]);
  }
  return s;
}

// ---------------------------------------------------------------------------
// CVOL: "CVOL", u32 version=1, u32 nx, ny, nz, u8 bytes-per-scalar (4|8), then
// interleaved real/imag little-endian, x fastest.

namespace cvol {

inline constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_block(BinaryWriter& w, const ComplexVolume<T>& x, Precision p) {
  w.magic("CVOL");
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(x.dims.nx));
  w.u32(static_cast<std::uint32_t>(x.dims.ny));
  w.u32(static_cast<std::uint32_t>(x.dims.nz));
  w.u8(static_cast<std::uint8_t>(p));
  for (const auto& z : x.data) {
    if (p == Precision::F32) {
      w.f32(static_cast<float>(z.real()));
      w.f32(static_cast<float>(z.imag()));
    } else {
      w.f64(static_cast<double>(z.real()));
      w.f64(static_cast<double>(z.imag()));
    }
  }
}

template <typename T>
ComplexVolume<T> read_block(BinaryReader& r) {
  r.expect_magic("CVOL");
  auto version_at = r.offset();
  if (r.u32() != kVersion) throw FormatError("unsupported CVOL version", version_at);
  MatrixSize d;
  auto dims_at = r.offset();
  d.nx = static_cast<int>(r.u32());
  d.ny = static_cast<int>(r.u32());
  d.nz = static_cast<int>(r.u32());
  if (d.nx <= 0 || d.ny <= 0 || d.nz <= 0) throw FormatError("invalid CVOL dimensions", dims_at);
  auto prec_at = r.offset();
  auto bytes = r.u8();
  if (bytes != 4 && bytes != 8) throw FormatError("invalid CVOL precision byte", prec_at);
  r.need(d.voxels() * 2 * bytes, "CVOL payload");
  ComplexVolume<T> x(d);
  for (auto& z : x.data) {
    if (bytes == 4) {
      float re = r.f32();
      float im = r.f32();
      z = cplx<T>(static_cast<T>(re), static_cast<T>(im));
    } else {
      double re = r.f64();
      double im = r.f64();
      z = cplx<T>(static_cast<T>(re), static_cast<T>(im));
    }
  }
  return x;
}

}  // namespace cvol

template <typename T>
void save_cvol(const std::string& path, const ComplexVolume<T>& x,
               Precision p = sizeof(T) == 8 ? Precision::F64 : Precision::F32) {
  BinaryWriter w(path);
  cvol::write_block(w, x, p);
  w.close();
}

template <typename T>
void save_cvol(const std::string& path, const RealVolume<T>& x,
               Precision p = sizeof(T) == 8 ? Precision::F64 : Precision::F32) {
  save_cvol(path, to_complex(x), p);
}

template <typename T>
ComplexVolume<T> load_cvol(const std::string& path) {
  BinaryReader r(path);
  auto x = cvol::read_block<T>(r);
  if (!r.at_end()) throw FormatError("trailing bytes after CVOL payload", r.offset());
  return x;
}

}  // namespace ncpd
