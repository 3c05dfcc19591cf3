#pragma once

#include "netsym/network.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace netsym {

struct CheckpointEntry {
  std::string file;  // relative to the dataset directory
  std::uint64_t seed = 0;
  double final_loss = 0.0;
  bool accepted = true;
  std::optional<std::string> error;
};

/// A directory of NNCK files described by manifest.json.
struct CheckpointDataset {
  std::string dir;
  ArchitectureSpec spec;
  std::string spec_hash;
  nlohmann::json task = nlohmann::json::object();
  nlohmann::json train_config = nlohmann::json::object();
  double loss_threshold = 0.0;
  std::vector<CheckpointEntry> entries;

  std::size_t accepted_count() const;
  std::string path(const CheckpointEntry& e) const;
};

inline constexpr const char* kManifestName = "manifest.json";

void write_manifest(const CheckpointDataset& ds);
/// Reads dir/manifest.json; a directory without one is scanned for *.nnck
/// files (sorted by name, all accepted). Missing listed files are an error.
CheckpointDataset open_dataset(const std::string& dir);

/// Loads accepted (or all) checkpoints in manifest order, checking each spec
/// against the manifest hash.
std::vector<Network> load_networks(const CheckpointDataset& ds, bool accepted_only = true,
                                   int threads = 1);

}  // namespace netsym
