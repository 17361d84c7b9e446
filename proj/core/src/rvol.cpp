#include "vaeseg/rvol.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

namespace vaeseg {

namespace {

constexpr const char* kMagic = "RVOL1";

void write_header(std::ostream& out, const RvolHeader& h) {
  nlohmann::json j;
  j["dims"] = h.dims;
  j["dtype"] = h.dtype;
  j["kind"] = h.kind;
  out << kMagic << '\n' << j.dump() << '\n';
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

}  // namespace

void write_f32le(std::ostream& out, const float* data, std::size_t count) {
  std::vector<unsigned char> buf(count * 4);
  for (std::size_t i = 0; i < count; ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(data[i]);
    buf[4 * i + 0] = static_cast<unsigned char>(bits & 0xFF);
    buf[4 * i + 1] = static_cast<unsigned char>((bits >> 8) & 0xFF);
    buf[4 * i + 2] = static_cast<unsigned char>((bits >> 16) & 0xFF);
    buf[4 * i + 3] = static_cast<unsigned char>((bits >> 24) & 0xFF);
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("write failed");
}

void read_f32le(std::istream& in, float* data, std::size_t count) {
  std::vector<unsigned char> buf(count * 4);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw FormatError("truncated float payload");
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t bits = std::uint32_t{buf[4 * i]} | (std::uint32_t{buf[4 * i + 1]} << 8) |
                               (std::uint32_t{buf[4 * i + 2]} << 16) | (std::uint32_t{buf[4 * i + 3]} << 24);
    data[i] = std::bit_cast<float>(bits);
  }
}

void write_image_rvol(std::ostream& out, const Tensor& image) {
  if (image.rank() != 4 && image.rank() != 3) throw ShapeError("RVOL images must be rank 3 or 4");
  write_header(out, {image.shape(), "f32le", "image"});
  write_f32le(out, image.raw(), image.data().size());
}

void write_label_rvol(std::ostream& out, const LabelVolume& labels) {
  labels.validate();
  write_header(out, {Shape{labels.shape[0], labels.shape[1], labels.shape[2]}, "u8", "labels"});
  out.write(reinterpret_cast<const char*>(labels.codes.data()), static_cast<std::streamsize>(labels.codes.size()));
  if (!out) throw std::runtime_error("write failed");
}

RvolHeader read_rvol_header(std::istream& in) {
  std::string magic, line;
  if (!std::getline(in, magic) || magic != kMagic) throw FormatError("not an RVOL1 file");
  if (!std::getline(in, line)) throw FormatError("missing RVOL header");
  RvolHeader h;
  try {
    const auto j = nlohmann::json::parse(line);
    h.dims = j.at("dims").get<Shape>();
    h.dtype = j.at("dtype").get<std::string>();
    h.kind = j.at("kind").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad RVOL header: ") + e.what());
  }
  if (h.dims.size() < 3 || h.dims.size() > 4) throw FormatError("RVOL dims must have 3 or 4 entries");
  for (auto d : h.dims)
    if (d < 1) throw FormatError("RVOL dims must be positive");
  return h;
}

Tensor read_image_rvol(std::istream& in) {
  const RvolHeader h = read_rvol_header(in);
  if (h.dtype != "f32le" || h.kind != "image") throw FormatError("expected an f32le image RVOL, got " + h.kind);
  Tensor t(h.dims);
  read_f32le(in, t.raw(), t.data().size());
  return t;
}

LabelVolume read_label_rvol(std::istream& in) {
  const RvolHeader h = read_rvol_header(in);
  if (h.dtype != "u8" || h.kind != "labels" || h.dims.size() != 3) {
    throw FormatError("expected a u8 [D,H,W] label RVOL");
  }
  LabelVolume labels;
  labels.shape = {h.dims[0], h.dims[1], h.dims[2]};
  labels.codes.resize(static_cast<std::size_t>(labels.voxels()));
  in.read(reinterpret_cast<char*>(labels.codes.data()), static_cast<std::streamsize>(labels.codes.size()));
  if (in.gcount() != static_cast<std::streamsize>(labels.codes.size())) throw FormatError("truncated label payload");
  try {
    labels.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
  return labels;
}

void write_image_rvol(const std::filesystem::path& path, const Tensor& image) {
  auto out = open_out(path);
  write_image_rvol(out, image);
}

void write_label_rvol(const std::filesystem::path& path, const LabelVolume& labels) {
  auto out = open_out(path);
  write_label_rvol(out, labels);
}

Tensor read_image_rvol(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_image_rvol(in);
}

LabelVolume read_label_rvol(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_label_rvol(in);
}

}  // namespace vaeseg
