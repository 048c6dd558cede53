#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

namespace vgdial {

// Little-endian binary writer/reader for checkpoint and index files.
// All multi-byte values are written in little-endian order regardless of
// host, so files are portable.

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::string& path)
      : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot open for writing: " + path);
  }

  void magic(const char m[4]) { out_.write(m, 4); }
  void u32(uint32_t v) { write_le(v); }
  void u64(uint64_t v) { write_le(v); }
  void f32(float v);
  void f64(double v);

  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

  void matrix(const Eigen::MatrixXd& m) {
    u64(static_cast<uint64_t>(m.rows()));
    u64(static_cast<uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) f64(m(r, c));
  }

  bool good() const { return out_.good(); }

 private:
  template <typename T>
  void write_le(T v) {
    unsigned char buf[sizeof(T)];
    uint64_t bits = 0;
    static_assert(sizeof(T) <= 8);
    std::memcpy(&bits, &v, sizeof(T));
    for (size_t i = 0; i < sizeof(T); ++i)
      buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    out_.write(reinterpret_cast<const char*>(buf), sizeof(T));
  }

  std::ofstream out_;
};

class BinaryReader {
 public:
  // `subject` names the file kind in truncation errors ("index",
  // "checkpoint", ...).
  explicit BinaryReader(const std::string& path,
                        const std::string& subject = "file")
      : in_(path, std::ios::binary), subject_(subject) {
    if (!in_) throw std::runtime_error("cannot open for reading: " + path);
  }

  // Reads 4 bytes and compares against the expected magic.
  void expect_magic(const char m[4], const std::string& what) {
    char buf[4] = {0, 0, 0, 0};
    in_.read(buf, 4);
    if (!in_ || std::memcmp(buf, m, 4) != 0)
      throw std::runtime_error("bad magic: not a " + what + " file");
  }

  uint32_t u32() { return read_le<uint32_t>(); }
  uint64_t u64() { return read_le<uint64_t>(); }
  float f32();
  double f64();

  std::string str() {
    uint32_t n = u32();
    std::string s(n, '\0');
    in_.read(s.data(), n);
    check("string");
    return s;
  }

  Eigen::MatrixXd matrix() {
    uint64_t rows = u64();
    uint64_t cols = u64();
    if (rows > (1ull << 32) || cols > (1ull << 32))
      throw std::runtime_error("truncated " + subject_ +
                               ": implausible matrix header");
    Eigen::MatrixXd m(rows, cols);
    for (uint64_t r = 0; r < rows; ++r)
      for (uint64_t c = 0; c < cols; ++c)
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = f64();
    return m;
  }

  void check(const std::string& what) {
    if (!in_)
      throw std::runtime_error("truncated " + subject_ + ": while reading " +
                               what);
  }

 private:
  template <typename T>
  T read_le() {
    unsigned char buf[sizeof(T)];
    in_.read(reinterpret_cast<char*>(buf), sizeof(T));
    check("scalar");
    uint64_t bits = 0;
    for (size_t i = 0; i < sizeof(T); ++i)
      bits |= static_cast<uint64_t>(buf[i]) << (8 * i);
    T v;
    std::memcpy(&v, &bits, sizeof(T));
    return v;
  }

  std::ifstream in_;
  std::string subject_;
};

inline void BinaryWriter::f32(float v) { write_le(v); }
inline void BinaryWriter::f64(double v) { write_le(v); }
inline float BinaryReader::f32() { return read_le<float>(); }
inline double BinaryReader::f64() { return read_le<double>(); }

// FNV-1a over a byte string; used to fingerprint vocabularies so that
// checkpoints refuse to load against the wrong tokenizer.
inline uint64_t fnv1a(const std::string& data) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace vgdial
