#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace tss::io {

// Writes to a sibling temporary file and renames it over `path`, so readers
// never observe a partially written artifact.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

// Little-endian primitive encoding shared by the binary formats.
void put_u32(std::string& out, std::uint32_t v);
void put_u64(std::string& out, std::uint64_t v);
void put_f32(std::string& out, float v);
std::uint32_t get_u32(std::string_view in, std::size_t offset);
std::uint64_t get_u64(std::string_view in, std::size_t offset);
float get_f32(std::string_view in, std::size_t offset);

std::string trim(std::string_view text);

}  // namespace tss::io
