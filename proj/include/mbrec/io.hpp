#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mbrec/common.hpp"

namespace mbrec {

std::string read_text_file(const std::filesystem::path& path);

// Writes via a temp file in the same directory followed by an atomic rename,
// so a crash never leaves a truncated artifact behind.
void atomic_write_file(const std::filesystem::path& path, const std::string& content);
void atomic_write_file(const std::filesystem::path& path, const void* data, std::size_t len);

// FNV-1a hex digest of a file's bytes.
std::string file_hash_hex(const std::filesystem::path& path);

// Splits on the given delimiter; does not merge adjacent delimiters.
std::vector<std::string> split(const std::string& line, char delim);

std::string join(const std::vector<std::string>& parts, const std::string& sep);

// Fixed-format floating point for canonical text artifacts: shortest round-trip form.
std::string format_double(double v);

}  // namespace mbrec
