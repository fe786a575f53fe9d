#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "maskcond/mcdm.hpp"
#include "maskcond/mcvae.hpp"

namespace maskcond {

/// Layout: "MCKP", u32 version, u64 header length, JSON header, payload.
/// Integers and the f64 payload are little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// `extra` is stored verbatim under "extra" (e.g. split seed and fraction).
void save_checkpoint(const McVae& model, const std::string& path, const nlohmann::json& extra = nlohmann::json::object());
void save_checkpoint(const McDiffusion& model, const std::string& path,
                     const nlohmann::json& extra = nlohmann::json::object());

/// Throws CorruptCheckpoint on bad magic, truncation or an inconsistent
/// manifest, and IncompatibleVersion on a version or model-kind mismatch.
McVae load_vae_checkpoint(const std::string& path);
McDiffusion load_diffusion_checkpoint(const std::string& path);

nlohmann::json read_checkpoint_header(const std::string& path);

}  // namespace maskcond
