#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tfuse/tensor.hpp"

// Portable tensor file: "TFT1", u32 LE rank, u32 LE extents, f32 LE values.

namespace tfuse {

std::vector<unsigned char> encode_tft(const Tensor& t);
Tensor decode_tft(const std::vector<unsigned char>& bytes);

/// Writes through a temporary file in the same directory, then renames.
void write_tft(const std::filesystem::path& path, const Tensor& t);
Tensor read_tft(const std::filesystem::path& path);

/// Atomic (temp + rename) text write.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace tfuse
