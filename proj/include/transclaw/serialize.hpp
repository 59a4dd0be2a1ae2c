#pragma once

// Little-endian binary primitives and the "TCT1" tensor form:
//   "TCT1" | u32 rank | rank x u32 extents | row-major f32 payload.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>

#include "transclaw/tensor.hpp"

namespace transclaw {

inline constexpr std::string_view kTensorMagic = "TCT1";

namespace binary {

void write_u16(std::ostream& out, std::uint16_t v);
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f32(std::ostream& out, float v);
void write_f64(std::ostream& out, double v);
void write_bytes(std::ostream& out, std::string_view bytes);

// Readers throw FormatError naming `what` on a short read.
std::uint16_t read_u16(std::istream& in, const char* what);
std::uint32_t read_u32(std::istream& in, const char* what);
std::uint64_t read_u64(std::istream& in, const char* what);
float read_f32(std::istream& in, const char* what);
double read_f64(std::istream& in, const char* what);
std::string read_bytes(std::istream& in, std::size_t n, const char* what);
void expect_magic(std::istream& in, std::string_view magic, const char* what);

}  // namespace binary

// Values are stored as f32; a double tensor is rounded on write.
template <typename T>
void write_tensor(std::ostream& out, const Tensor<T>& t);
template <typename T>
Tensor<T> read_tensor(std::istream& in);

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t);
template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path);

// Opens for binary I/O or throws IoError naming the path.
std::ofstream open_output(const std::filesystem::path& path);
std::ifstream open_input(const std::filesystem::path& path);

}  // namespace transclaw
