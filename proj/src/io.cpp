#include "koopman/io.hpp"

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace koopman {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string format_complex(const Complex& z) {
  std::string s = format_double(z.real());
  const std::string im = format_double(z.imag());
  if (!im.empty() && im[0] == '-') {
    s += im;
  } else {
    s += "+" + im;
  }
  return s + "j";
}

Complex parse_complex(const std::string& s) {
  if (s.empty()) throw IoError("empty complex literal");
  if (s.back() != 'j') {
    // Plain real.
    return Complex(std::stod(s), 0.0);
  }
  const std::string body = s.substr(0, s.size() - 1);
  // Split at the sign that separates real and imaginary parts; skip a leading
  // sign and signs inside exponents (preceded by e or E).
  std::size_t split = std::string::npos;
  for (std::size_t i = 1; i < body.size(); ++i) {
    const char c = body[i];
    if ((c == '+' || c == '-') && body[i - 1] != 'e' && body[i - 1] != 'E') split = i;
  }
  if (split == std::string::npos) {
    // Pure imaginary like 0.5j.
    return Complex(0.0, std::stod(body));
  }
  return Complex(std::stod(body.substr(0, split)), std::stod(body.substr(split)));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << content;
  if (!out) throw IoError("write failed: " + path);
}

namespace {

// Compact SHA-1, sufficient for content fingerprints in manifests.
struct Sha1 {
  std::array<std::uint32_t, 5> h{0x67452301u, 0xEFCDAB89u, 0x98BADCFEu, 0x10325476u, 0xC3D2E1F0u};
  std::uint64_t total = 0;
  std::array<std::uint8_t, 64> block{};
  std::size_t fill = 0;

  static std::uint32_t rol(std::uint32_t v, int s) { return (v << s) | (v >> (32 - s)); }

  void process(const std::uint8_t* p) {
    std::uint32_t w[80];
    for (int i = 0; i < 16; ++i) {
      w[i] = (std::uint32_t(p[4 * i]) << 24) | (std::uint32_t(p[4 * i + 1]) << 16) |
             (std::uint32_t(p[4 * i + 2]) << 8) | std::uint32_t(p[4 * i + 3]);
    }
    for (int i = 16; i < 80; ++i) w[i] = rol(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);
    std::uint32_t a = h[0], b = h[1], c = h[2], d = h[3], e = h[4];
    for (int i = 0; i < 80; ++i) {
      std::uint32_t f, k;
      if (i < 20) {
        f = (b & c) | (~b & d);
        k = 0x5A827999u;
      } else if (i < 40) {
        f = b ^ c ^ d;
        k = 0x6ED9EBA1u;
      } else if (i < 60) {
        f = (b & c) | (b & d) | (c & d);
        k = 0x8F1BBCDCu;
      } else {
        f = b ^ c ^ d;
        k = 0xCA62C1D6u;
      }
      const std::uint32_t t = rol(a, 5) + f + e + k + w[i];
      e = d;
      d = c;
      c = rol(b, 30);
      b = a;
      a = t;
    }
    h[0] += a;
    h[1] += b;
    h[2] += c;
    h[3] += d;
    h[4] += e;
  }

  void update(const void* data, std::size_t len) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    total += len;
    while (len > 0) {
      const std::size_t take = std::min(len, block.size() - fill);
      std::memcpy(block.data() + fill, p, take);
      fill += take;
      p += take;
      len -= take;
      if (fill == block.size()) {
        process(block.data());
        fill = 0;
      }
    }
  }

  std::string hex_digest() {
    const std::uint64_t bits = total * 8;
    const std::uint8_t pad = 0x80;
    update(&pad, 1);
    const std::uint8_t zero = 0;
    while (fill != 56) update(&zero, 1);
    std::uint8_t len_be[8];
    for (int i = 0; i < 8; ++i) len_be[i] = static_cast<std::uint8_t>(bits >> (56 - 8 * i));
    update(len_be, 8);
    char out[41];
    for (int i = 0; i < 5; ++i) std::snprintf(out + 8 * i, 9, "%08x", h[static_cast<std::size_t>(i)]);
    return std::string(out, 40);
  }
};

}  // namespace

std::string git_blob_sha1(const std::string& bytes) {
  Sha1 sha;
  const std::string header = "blob " + std::to_string(bytes.size());
  sha.update(header.data(), header.size() + 1);  // include the trailing NUL
  sha.update(bytes.data(), bytes.size());
  return sha.hex_digest();
}

void write_complex_csv(const CMat& M, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
      if (j > 0) out << ',';
      out << format_complex(M(i, j));
    }
    out << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

CMat read_complex_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::vector<std::vector<Complex>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<Complex> row;
    for (const auto& cell : split_csv_line(line)) row.push_back(parse_complex(cell));
    if (!rows.empty() && rows.front().size() != row.size()) throw IoError("ragged complex csv");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) return CMat();
  CMat M(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    for (Eigen::Index j = 0; j < M.cols(); ++j)
      M(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return M;
}

}  // namespace koopman
