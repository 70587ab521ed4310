// File formats: SPF1 scalar fields, PGM (P2) masks, atomic file writes.
//
// SPF1 layout: one ASCII header line "SPF1 <nx> <ny> <h>\n" followed by
// nx*ny IEEE-754 little-endian float64 values in row-major order (index
// j*nx + i); off-mask nodes are stored as 0.
#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "segpart/grid.hpp"

namespace segpart::io {

/// Writes to "<path>.tmp" and renames over path, so readers never observe a
/// partially written file.
inline void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Shortest round-trip decimal representation of a double.
inline std::string format_double(double v) {
  char buf[32];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

namespace detail {
inline void put_le64(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
}
inline double get_le64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return std::bit_cast<double>(bits);
}
}  // namespace detail

inline std::string encode_spf1(const ScalarField& f) {
  const auto& d = *f.domain();
  std::string out = "SPF1 " + std::to_string(d.nx()) + " " + std::to_string(d.ny()) + " " + format_double(d.h()) + "\n";
  out.reserve(out.size() + 8 * d.size());
  for (double v : f.values()) detail::put_le64(out, v);
  return out;
}

struct RawField {
  int nx = 0;
  int ny = 0;
  double h = 0.0;
  std::vector<double> values;
};

inline RawField decode_spf1(const std::string& bytes) {
  const auto eol = bytes.find('\n');
  if (eol == std::string::npos) throw Error("SPF1: missing header line");
  std::istringstream header(bytes.substr(0, eol));
  std::string magic;
  RawField raw;
  header >> magic >> raw.nx >> raw.ny >> raw.h;
  if (magic != "SPF1" || !header || raw.nx < 1 || raw.ny < 1 || !(raw.h > 0.0)) throw Error("SPF1: malformed header");
  const std::size_t n = static_cast<std::size_t>(raw.nx) * raw.ny;
  if (bytes.size() - eol - 1 != 8 * n) throw Error("SPF1: payload size mismatch");
  raw.values.resize(n);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + eol + 1);
  for (std::size_t k = 0; k < n; ++k) raw.values[k] = detail::get_le64(p + 8 * k);
  return raw;
}

/// Rebuilds a field on a known domain; fails when the lattice does not match.
inline ScalarField spf1_to_field(const RawField& raw, const DomainPtr& domain) {
  if (raw.nx != domain->nx() || raw.ny != domain->ny() || raw.h != domain->h())
    throw Error("SPF1: lattice does not match the domain");
  return ScalarField(domain, raw.values);
}

inline void write_spf1(const std::filesystem::path& path, const ScalarField& f) { atomic_write(path, encode_spf1(f)); }
inline RawField read_spf1(const std::filesystem::path& path) { return decode_spf1(read_file(path)); }

/// ASCII PGM: 0 = off, 255 = on; image rows follow lattice rows j = 0..ny-1.
inline std::string encode_pgm(const Mask& m) {
  const auto& d = *m.domain();
  std::string out = "P2\n" + std::to_string(d.nx()) + " " + std::to_string(d.ny()) + "\n255\n";
  for (int j = 0; j < d.ny(); ++j) {
    for (int i = 0; i < d.nx(); ++i) {
      if (i) out.push_back(' ');
      out += m[d.index(i, j)] ? "255" : "0";
    }
    out.push_back('\n');
  }
  return out;
}

inline std::vector<std::uint8_t> decode_pgm(const std::string& text, int& nx, int& ny) {
  std::istringstream in(text);
  std::string magic;
  int maxval = 0;
  in >> magic >> nx >> ny >> maxval;
  if (magic != "P2" || !in || nx < 1 || ny < 1 || maxval <= 0) throw Error("PGM: malformed header");
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(nx) * ny);
  for (auto& b : bits) {
    int v = 0;
    if (!(in >> v)) throw Error("PGM: truncated pixel data");
    b = v > 0 ? 1 : 0;
  }
  return bits;
}

inline void write_pgm(const std::filesystem::path& path, const Mask& m) { atomic_write(path, encode_pgm(m)); }

}  // namespace segpart::io
