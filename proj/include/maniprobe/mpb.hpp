#pragma once

#include "maniprobe/common.hpp"

#include <filesystem>
#include <string>

namespace maniprobe::mpb {

// MPB1 matrix file: magic "MPB1", u64 rows, u64 cols, rows*cols float64,
// all little-endian, row-major.
void write_matrix(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix(const std::filesystem::path& path);

std::string encode(const Matrix& m);
Matrix decode(const std::string& bytes);

// Writes to a sibling temporary and renames over the destination.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace maniprobe::mpb
