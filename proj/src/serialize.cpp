#include "transclaw/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "transclaw/errors.hpp"

namespace transclaw {

namespace binary {

namespace {

template <typename U>
void put(std::ostream& out, U v) {
  std::array<char, sizeof(U)> buf;
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf.data(), buf.size());
}

template <typename U>
U get(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(U)> buf;
  in.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw FormatError(std::string("truncated input while reading ") + what);
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void write_u16(std::ostream& out, std::uint16_t v) { put(out, v); }
void write_u32(std::ostream& out, std::uint32_t v) { put(out, v); }
void write_u64(std::ostream& out, std::uint64_t v) { put(out, v); }
void write_f32(std::ostream& out, float v) { put(out, std::bit_cast<std::uint32_t>(v)); }
void write_f64(std::ostream& out, double v) { put(out, std::bit_cast<std::uint64_t>(v)); }
void write_bytes(std::ostream& out, std::string_view bytes) {
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::uint16_t read_u16(std::istream& in, const char* what) { return get<std::uint16_t>(in, what); }
std::uint32_t read_u32(std::istream& in, const char* what) { return get<std::uint32_t>(in, what); }
std::uint64_t read_u64(std::istream& in, const char* what) { return get<std::uint64_t>(in, what); }
float read_f32(std::istream& in, const char* what) {
  return std::bit_cast<float>(get<std::uint32_t>(in, what));
}
double read_f64(std::istream& in, const char* what) {
  return std::bit_cast<double>(get<std::uint64_t>(in, what));
}

std::string read_bytes(std::istream& in, std::size_t n, const char* what) {
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (in.gcount() != static_cast<std::streamsize>(n)) {
    throw FormatError(std::string("truncated input while reading ") + what);
  }
  return s;
}

void expect_magic(std::istream& in, std::string_view magic, const char* what) {
  std::string got(magic.size(), '\0');
  in.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (in.gcount() != static_cast<std::streamsize>(got.size())) {
    throw FormatError(std::string("truncated input while reading ") + what + " magic");
  }
  if (got != magic) {
    throw FormatError(std::string("bad ") + what + " magic: expected \"" + std::string(magic) +
                      "\"");
  }
}

}  // namespace binary

template <typename T>
void write_tensor(std::ostream& out, const Tensor<T>& t) {
  binary::write_bytes(out, kTensorMagic);
  binary::write_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) {
    if (e > std::numeric_limits<std::uint32_t>::max()) {
      throw InvalidArgument("write_tensor: extent does not fit in u32");
    }
    binary::write_u32(out, static_cast<std::uint32_t>(e));
  }
  for (T v : t.values()) binary::write_f32(out, static_cast<float>(v));
}

template <typename T>
Tensor<T> read_tensor(std::istream& in) {
  binary::expect_magic(in, kTensorMagic, "tensor");
  const std::uint32_t rank = binary::read_u32(in, "tensor rank");
  if (rank > 8) throw FormatError("tensor rank " + std::to_string(rank) + " is implausible");
  Shape shape(rank);
  std::size_t n = 1;
  for (auto& e : shape) {
    e = binary::read_u32(in, "tensor extent");
    if (e == 0) throw FormatError("tensor has a zero extent");
    if (n > (std::size_t{1} << 40) / e) throw FormatError("tensor payload is implausibly large");
    n *= e;
  }
  std::vector<T> values(n);
  const std::string raw = binary::read_bytes(in, n * 4, "tensor payload");
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (std::size_t b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[i * 4 + b])) << (8 * b);
    }
    values[i] = static_cast<T>(std::bit_cast<float>(bits));
  }
  return Tensor<T>(std::move(shape), std::move(values));
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return in;
}

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  auto out = open_output(path);
  write_tensor(out, t);
  if (!out.flush()) throw IoError("write failed: " + path.string());
}

template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_tensor<T>(in);
}

template void write_tensor(std::ostream&, const Tensor<float>&);
template void write_tensor(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor(std::istream&);
template Tensor<double> read_tensor(std::istream&);
template void save_tensor(const std::filesystem::path&, const Tensor<float>&);
template void save_tensor(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> load_tensor(const std::filesystem::path&);
template Tensor<double> load_tensor(const std::filesystem::path&);

}  // namespace transclaw
