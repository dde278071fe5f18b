#include "mjplab/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "json.hpp"

namespace mjplab {


namespace {

void put_le(std::ostream& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) {
    bytes[i] = static_cast<char>(bits & 0xFF);
    bits >>= 8;
  }
  out.write(bytes, 8);
}

double get_le(const unsigned char* bytes) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | bytes[i];
  return std::bit_cast<double>(bits);
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  nlohmann::json header;
  header["shape"] = t.shape();
  out << header.dump() << '\n';
  for (double v : t.data()) put_le(out, v);
  if (!out) throw IoError("failed writing tensor");
}

Tensor read_tensor(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("missing tensor header");
  Shape shape;
  try {
    const auto header = nlohmann::json::parse(line);
    shape = header.at("shape").get<Shape>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed tensor header: ") + e.what());
  }
  const std::size_t n = shape_size(shape);
  std::vector<unsigned char> raw(n * 8);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw IoError("tensor payload truncated: expected " + std::to_string(n) + " values for shape " + shape_str(shape));
  }
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = get_le(raw.data() + 8 * i);
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_tensor(in);
}

}  // namespace mjplab
