#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>

#include "vaeseg/config.hpp"
#include "vaeseg/model.hpp"
#include "vaeseg/optimizer.hpp"

namespace vaeseg {

inline constexpr int kCheckpointVersion = 1;

/// File layout: "VSCKPT1\n", one line of JSON manifest, then the raw
/// little-endian f32 payload. Manifest offsets are bytes from the payload start.
struct Checkpoint {
  RunConfig config;
  ParameterSet params;
  std::optional<AdamState> adam;
  std::int64_t epochs_completed = 0;

  Model model() const { return {config.model, params}; }
};

struct SaveOptions {
  bool include_optimizer = true;
  /// Drop the VAE branch (inference-only checkpoint).
  bool include_vae = true;
};

void save_checkpoint(std::ostream& out, const Checkpoint& ckpt, const SaveOptions& options = {});
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt, const SaveOptions& options = {});
Checkpoint load_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace vaeseg
