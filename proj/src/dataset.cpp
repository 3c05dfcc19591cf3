#include "netsym/dataset.hpp"

#include "netsym/checkpoint.hpp"
#include "netsym/parallel.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

namespace netsym {

namespace fs = std::filesystem;

std::size_t CheckpointDataset::accepted_count() const {
  return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(),
                                                [](const CheckpointEntry& e) { return e.accepted; }));
}

std::string CheckpointDataset::path(const CheckpointEntry& e) const {
  return (fs::path(dir) / e.file).string();
}

void write_manifest(const CheckpointDataset& ds) {
  nlohmann::json j;
  j["format"] = "netsym-checkpoint-dataset";
  j["spec"] = ds.spec;
  j["spec_hash"] = ds.spec_hash.empty() ? spec_hash(ds.spec) : ds.spec_hash;
  j["task"] = ds.task;
  j["train_config"] = ds.train_config;
  j["loss_threshold"] = ds.loss_threshold;
  nlohmann::json list = nlohmann::json::array();
  for (const CheckpointEntry& e : ds.entries) {
    nlohmann::json item{{"file", e.file}, {"seed", e.seed}, {"final_loss", e.final_loss},
                        {"accepted", e.accepted}};
    if (e.error) item["error"] = *e.error;
    list.push_back(item);
  }
  j["checkpoints"] = list;
  std::ofstream out(fs::path(ds.dir) / kManifestName);
  if (!out) throw Error(ErrorCode::Io, "cannot write manifest in " + ds.dir);
  out << j.dump(2) << '\n';
}

CheckpointDataset open_dataset(const std::string& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::Io, dir + " is not a directory");
  CheckpointDataset ds;
  ds.dir = dir;
  const fs::path manifest = fs::path(dir) / kManifestName;
  if (!fs::exists(manifest)) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().extension() == ".nnck") files.push_back(e.path().filename().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw Error(ErrorCode::Io, dir + " holds no manifest and no .nnck files");
    for (const auto& f : files) ds.entries.push_back(CheckpointEntry{f, 0, 0.0, true, std::nullopt});
    ds.spec = load_checkpoint(ds.path(ds.entries.front())).spec;
    ds.spec_hash = spec_hash(ds.spec);
    return ds;
  }
  nlohmann::json j;
  try {
    std::ifstream in(manifest);
    in >> j;
    ds.spec = j.at("spec").get<ArchitectureSpec>();
    ds.spec_hash = j.at("spec_hash").get<std::string>();
    ds.task = j.value("task", nlohmann::json::object());
    ds.train_config = j.value("train_config", nlohmann::json::object());
    ds.loss_threshold = j.value("loss_threshold", 0.0);
    for (const auto& item : j.at("checkpoints")) {
      CheckpointEntry e;
      e.file = item.at("file").get<std::string>();
      e.seed = item.value("seed", std::uint64_t{0});
      e.final_loss = item.value("final_loss", 0.0);
      e.accepted = item.value("accepted", true);
      if (item.contains("error")) e.error = item["error"].get<std::string>();
      ds.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, manifest.string() + ": " + e.what());
  }
  if (ds.spec_hash != spec_hash(ds.spec))
    throw Error(ErrorCode::Format, manifest.string() + ": spec hash does not match spec");
  for (const CheckpointEntry& e : ds.entries)
    if (!e.error && !fs::exists(ds.path(e)))
      throw Error(ErrorCode::Io, "manifest lists missing file " + ds.path(e));
  return ds;
}

std::vector<Network> load_networks(const CheckpointDataset& ds, bool accepted_only, int threads) {
  std::vector<const CheckpointEntry*> picked;
  for (const CheckpointEntry& e : ds.entries)
    if (!e.error && (!accepted_only || e.accepted)) picked.push_back(&e);
  std::vector<Network> nets(picked.size());
  parallel_for(picked.size(), threads, [&](std::size_t i) {
    nets[i] = load_checkpoint(ds.path(*picked[i]));
    if (spec_hash(nets[i].spec) != ds.spec_hash)
      throw Error(ErrorCode::Format, ds.path(*picked[i]) + ": spec does not match manifest");
  });
  return nets;
}

}  // namespace netsym
