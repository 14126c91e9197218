#include "entk/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <atomic>
#include <iostream>

#include "entk/errors.hpp"

namespace entk::io {

namespace fs = std::filesystem;

namespace {
std::atomic<bool> g_warnings{true};
}

void warn(const std::string& message) {
  if (g_warnings.load()) std::cerr << "warning: " << message << "\n";
}

void set_warnings_enabled(bool enabled) { g_warnings.store(enabled); }

void write_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[value & 0xf];
    value >>= 4;
  }
  return out;
}

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw Error("format_double failed");
  return std::string(buf, end);
}

std::string matrix_to_csv(const Eigen::MatrixXd& m, const std::vector<std::string>& header) {
  std::string out;
  if (!header.empty()) {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (j) out += ',';
      out += header[j];
    }
    out += '\n';
  }
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      out += format_double(m(i, j));
    }
    out += '\n';
  }
  return out;
}

Eigen::MatrixXd matrix_from_csv(const std::string& text, bool has_header) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  bool skip = has_header;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (skip) {
      skip = false;
      continue;
    }
    std::vector<double> row;
    std::size_t start = 0;
    while (start <= line.size()) {
      std::size_t stop = line.find(',', start);
      if (stop == std::string::npos) stop = line.size();
      double v = 0.0;
      const char* first = line.data() + start;
      const char* last = line.data() + stop;
      auto [ptr, ec] = std::from_chars(first, last, v);
      if (ec != std::errc() || ptr != last) throw Error("malformed CSV field: '" + line.substr(start, stop - start) + "'");
      row.push_back(v);
      start = stop + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size()) throw Error("ragged CSV row");
    rows.push_back(std::move(row));
  }
  const Eigen::Index r = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index c = rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size());
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

void write_csv(const fs::path& path, const Eigen::MatrixXd& m, const std::vector<std::string>& header) {
  write_atomic(path, matrix_to_csv(m, header));
}

Eigen::MatrixXd read_csv(const fs::path& path, bool has_header) {
  return matrix_from_csv(read_file(path), has_header);
}

std::string matrix_to_pgm(const Eigen::MatrixXd& m) {
  std::ostringstream out;
  out << "P5\n" << m.cols() << " " << m.rows() << "\n255\n";
  std::string header = out.str();
  const double peak = m.size() ? m.cwiseAbs().maxCoeff() : 0.0;
  std::string pixels(static_cast<std::size_t>(m.size()), '\0');
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      double v = peak > 0.0 ? std::clamp(m(i, j) / peak, 0.0, 1.0) : 0.0;
      pixels[static_cast<std::size_t>(i * m.cols() + j)] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
  }
  return header + pixels;
}

void write_pgm(const fs::path& path, const Eigen::MatrixXd& m) { write_atomic(path, matrix_to_pgm(m)); }

std::string encode_f64_row_major(const Eigen::MatrixXd& m) {
  static_assert(sizeof(double) == 8);
  std::string out(static_cast<std::size_t>(m.size()) * 8, '\0');
  std::size_t pos = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      std::uint64_t bits = std::bit_cast<std::uint64_t>(m(i, j));
      for (int b = 0; b < 8; ++b) out[pos++] = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
  }
  return out;
}

Eigen::MatrixXd decode_f64_row_major(std::string_view bytes, Eigen::Index rows, Eigen::Index cols) {
  if (bytes.size() != static_cast<std::size_t>(rows * cols) * 8) throw Error("float64 block has wrong size");
  Eigen::MatrixXd m(rows, cols);
  std::size_t pos = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos++])) << (8 * b);
      m(i, j) = std::bit_cast<double>(bits);
    }
  }
  return m;
}

}  // namespace entk::io
