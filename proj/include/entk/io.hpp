#pragma once

// File helpers shared by every module: atomic writes, CSV, PGM, raw float64
// blocks and a stable 64-bit content hash.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace entk::io {

/// Write `bytes` to `path` through a temporary file and a rename.
void write_atomic(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

/// FNV-1a, 64 bit.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

/// Shortest round-trip text form of a double.
std::string format_double(double value);

/// Warnings go to stderr unless silenced (tests silence them).
void warn(const std::string& message);
void set_warnings_enabled(bool enabled);

std::string matrix_to_csv(const Eigen::MatrixXd& m, const std::vector<std::string>& header = {});
Eigen::MatrixXd matrix_from_csv(const std::string& text, bool has_header = false);

void write_csv(const std::filesystem::path& path, const Eigen::MatrixXd& m,
               const std::vector<std::string>& header = {});
Eigen::MatrixXd read_csv(const std::filesystem::path& path, bool has_header = false);

/// 8-bit binary PGM (P5), values scaled by the matrix maximum.
std::string matrix_to_pgm(const Eigen::MatrixXd& m);
void write_pgm(const std::filesystem::path& path, const Eigen::MatrixXd& m);

/// Little-endian float64 payload, row-major.
std::string encode_f64_row_major(const Eigen::MatrixXd& m);
Eigen::MatrixXd decode_f64_row_major(std::string_view bytes, Eigen::Index rows, Eigen::Index cols);

}  // namespace entk::io
