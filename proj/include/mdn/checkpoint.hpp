#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "mdn/network.hpp"

namespace mdn {

// Directory layout:
//   manifest.txt  key=value config echo and training state
//   tensors.mdtc  "MDTC" | version u8 | count u32 | { name_len u32 | name | role u8 | MDTN }*
struct CheckpointManifest {
  std::string model = "encoder_decoder";  // or "identity"
  NetworkConfig config;
  int64_t step = 0;
  std::string bn_mode = "training";
  uint64_t rng_key = 0;
  uint64_t rng_counter = 0;
  // Anything else the writer wants echoed (optimiser settings, seed, ...).
  std::map<std::string, std::string> extra;
};

struct Checkpoint {
  CheckpointManifest manifest;
  ParamStore params;
};

void save_checkpoint(const std::filesystem::path& dir, const ParamStore& params,
                     const CheckpointManifest& manifest);

// When `expected` is given the manifest's architecture must match it exactly.
Checkpoint load_checkpoint(const std::filesystem::path& dir,
                           const NetworkConfig* expected = nullptr);

// A checkpoint whose model returns its input unchanged; used to exercise the
// inference path end to end without a trained network.
void save_identity_checkpoint(const std::filesystem::path& dir, int64_t input_size);

}  // namespace mdn
