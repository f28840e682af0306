#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace tss::cli {

// `git hash-object` of a byte string: sha1("blob <size>\0" + bytes).
std::string git_blob_hash(std::string_view bytes);
std::string git_blob_hash_file(const std::filesystem::path& path);

struct ArtifactHash {
  std::string path;
  std::string hash;
};

// Hashes a file (plus the id sidecar of a .tssfeat file), or every regular
// file below a directory in path order.
std::vector<ArtifactHash> hash_artifacts(const std::filesystem::path& path);

struct RunManifest {
  std::string command;
  std::string config_text;  // resolved options in config-file syntax
  std::uint64_t seed = 0;
  std::vector<std::filesystem::path> inputs;
  std::vector<std::filesystem::path> outputs;
};

// Hashes inputs and outputs and writes the manifest atomically. Nothing
// time- or host-dependent is recorded, so identical runs give identical
// manifests.
void write_manifest(const RunManifest& manifest, const std::filesystem::path& path);

}  // namespace tss::cli
