#pragma once

#include <string>
#include <vector>

#include "types.hpp"

namespace pcbf {

/// Shortest decimal string that round-trips the double (17 significant
/// digits). Checkpoints store numbers as strings so files are byte-stable
/// and lossless.
std::string dec_string(double v);

/// Parse a decimal string produced by dec_string (plain doubles also accepted).
double parse_double(const std::string& s);

/// Write `content` to `path` atomically (temp file in the same directory,
/// then rename). Creates parent directories as needed.
void atomic_write(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);
bool file_exists(const std::string& path);
void ensure_dir(const std::string& path);

/// Minimal CSV support: rows of comma-separated fields, no quoting (none of
/// our fields contain commas).
std::vector<std::vector<std::string>> read_csv(const std::string& path);

}  // namespace pcbf
