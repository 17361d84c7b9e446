#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "vaeseg/data.hpp"
#include "vaeseg/tensor.hpp"

namespace vaeseg {

/// RVOL volume files:
///
///   RVOL1\n
///   {"dims":[C,D,H,W],"dtype":"f32le","kind":"image"}\n      (or [D,H,W], "u8", "labels")
///   <row-major payload, last axis fastest>
struct RvolHeader {
  Shape dims;
  std::string dtype;
  std::string kind;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_image_rvol(std::ostream& out, const Tensor& image);
void write_label_rvol(std::ostream& out, const LabelVolume& labels);
RvolHeader read_rvol_header(std::istream& in);
Tensor read_image_rvol(std::istream& in);
LabelVolume read_label_rvol(std::istream& in);

void write_image_rvol(const std::filesystem::path& path, const Tensor& image);
void write_label_rvol(const std::filesystem::path& path, const LabelVolume& labels);
Tensor read_image_rvol(const std::filesystem::path& path);
LabelVolume read_label_rvol(const std::filesystem::path& path);

// Little-endian float32 payload helpers shared with the checkpoint format.
void write_f32le(std::ostream& out, const float* data, std::size_t count);
void read_f32le(std::istream& in, float* data, std::size_t count);

}  // namespace vaeseg
