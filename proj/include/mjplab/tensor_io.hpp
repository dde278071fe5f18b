#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>

#include "mjplab/tensor.hpp"

namespace mjplab {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// On-disk tensor format: one JSON header line `{"shape":[...]}` followed by
// the row-major values as little-endian IEEE-754 float64.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace mjplab
