#include "tfuse/tft_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tfuse {

namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::vector<unsigned char>& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw std::runtime_error("TFT1: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[pos + i]) << (8 * i);
  pos += 4;
  return v;
}

void write_bytes_atomic(const std::filesystem::path& path, const char* data, std::size_t size) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    os.write(data, static_cast<std::streamsize>(size));
    if (!os) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

std::vector<unsigned char> encode_tft(const Tensor& t) {
  std::vector<unsigned char> out{'T', 'F', 'T', '1'};
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put_u32(out, static_cast<std::uint32_t>(e));
  out.reserve(out.size() + 4 * t.numel());
  for (double v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

Tensor decode_tft(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "TFT1", 4) != 0) throw std::runtime_error("TFT1: bad magic");
  std::size_t pos = 4;
  const auto rank = get_u32(bytes, pos);
  Shape shape(rank);
  for (auto& e : shape) e = get_u32(bytes, pos);
  const auto n = shape_numel(shape);
  if (bytes.size() - pos != 4 * n) throw std::runtime_error("TFT1: payload size does not match extents");
  std::vector<double> values(n);
  for (auto& v : values) v = static_cast<double>(std::bit_cast<float>(get_u32(bytes, pos)));
  return Tensor::from(std::move(shape), std::move(values));
}

void write_tft(const std::filesystem::path& path, const Tensor& t) {
  const auto bytes = encode_tft(t);
  write_bytes_atomic(path, reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

Tensor read_tft(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_tft(bytes);
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_bytes_atomic(path, text.data(), text.size());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace tfuse
