#pragma once

#include <algorithm>
#include <atomic>
#include <complex>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ncpd {

template <typename T>
using cplx = std::complex<T>;

// ---------------------------------------------------------------------------
// Errors. Each category maps onto one CLI exit code.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

/// Refusal raised by size guards on brute-force oracles and finite differencing.
class RefusalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, std::string key = {}, int line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        key_(std::move(key)),
        line_(line) {}
  const std::string& key() const noexcept { return key_; }
  int line() const noexcept { return line_; }

 private:
  std::string key_;
  int line_;
};

// ---------------------------------------------------------------------------

struct MatrixSize {
  int nx = 0;
  int ny = 0;
  int nz = 0;

  std::size_t voxels() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
           static_cast<std::size_t>(nz);
  }
  bool operator==(const MatrixSize&) const = default;

  void validate() const {
    if (nx < 4 || ny < 4 || nz < 4) {
      throw ArgumentError("matrix size must be at least 4 along every axis, got " +
                          to_string());
    }
  }
  std::string to_string() const {
    return std::to_string(nx) + "x" + std::to_string(ny) + "x" + std::to_string(nz);
  }
};

/// Centered frequency/voxel index for storage position i on an axis of length n.
inline int centered_index(int i, int n) { return i - n / 2; }

enum class Precision : std::uint8_t { F32 = 4, F64 = 8 };

// ---------------------------------------------------------------------------
// Threading. Work is split into contiguous chunks by thread index so that any
// reduction done per chunk and merged in chunk order is reproducible for a
// fixed thread count.

namespace detail {
inline std::atomic<int>& thread_setting() {
  static std::atomic<int> n{[] {
    if (const char* env = std::getenv("NCPD_THREADS")) {
      int v = std::atoi(env);
      if (v > 0) return v;
    }
    return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
  }()};
  return n;
}
}  // namespace detail

inline int num_threads() { return detail::thread_setting().load(); }
inline void set_num_threads(int n) { detail::thread_setting().store(std::max(1, n)); }

/// Calls fn(chunk, begin, end) for `chunks` contiguous ranges covering [0, n).
inline void parallel_chunks(std::size_t n, int chunks,
                            const std::function<void(int, std::size_t, std::size_t)>& fn) {
  chunks = std::max(1, std::min<int>(chunks, static_cast<int>(std::max<std::size_t>(n, 1))));
  if (chunks == 1) {
    fn(0, 0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(chunks - 1));
  auto range = [&](int c) {
    std::size_t b = n * static_cast<std::size_t>(c) / static_cast<std::size_t>(chunks);
    std::size_t e = n * static_cast<std::size_t>(c + 1) / static_cast<std::size_t>(chunks);
    return std::pair{b, e};
  };
  for (int c = 1; c < chunks; ++c) {
    auto [b, e] = range(c);
    pool.emplace_back([&fn, c, b = b, e = e] { fn(c, b, e); });
  }
  auto [b0, e0] = range(0);
  fn(0, b0, e0);
  for (auto& t : pool) t.join();
}

inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  parallel_chunks(n, num_threads(), [&](int, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) fn(i);
  });
}

// ---------------------------------------------------------------------------
// Little-endian binary helpers shared by the KTRJ/CVOL/DCW1/SMAP/NCPW formats.

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open '" + path + "' for writing");
  }
  void magic(const char (&m)[5]) { raw(m, 4); }
  void u8(std::uint8_t v) { raw(&v, 1); }
  void u32(std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    raw(b, 4);
  }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u32(static_cast<std::uint32_t>(bits));
    u32(static_cast<std::uint32_t>(bits >> 32));
  }
  void raw(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw IoError("write failed on '" + path_ + "'");
  }
  void close() {
    out_.close();
    if (!out_) throw IoError("close failed on '" + path_ + "'");
  }

 private:
  std::string path_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  explicit BinaryReader(std::vector<char> bytes) : buf_(std::move(bytes)) {}

  std::uint64_t offset() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }
  bool at_end() const { return pos_ == buf_.size(); }

  void expect_magic(const char (&m)[5]) {
    need(4, "magic");
    if (std::memcmp(buf_.data() + pos_, m, 4) != 0) {
      throw FormatError(std::string("bad magic, expected '") + m + "'", pos_);
    }
    pos_ += 4;
  }
  std::uint8_t u8() {
    need(1, "u8");
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) {
      v = (v << 8) | static_cast<unsigned char>(buf_[pos_ + static_cast<std::size_t>(i)]);
    }
    pos_ += 4;
    return v;
  }
  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    std::uint64_t lo = u32();
    std::uint64_t hi = u32();
    std::uint64_t bits = lo | (hi << 32);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw FormatError(std::string("truncated file while reading ") + what, pos_);
    }
  }

 private:
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace ncpd
