#include "manifest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <nlohmann/json.hpp>

#include "tss/error.hpp"
#include "tss/io.hpp"

namespace tss::cli {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string git_blob_hash(std::string_view bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const bool ok = ctx != nullptr && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest.data(), &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error(ErrorKind::data, "sha1 digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    const unsigned char b = digest[i];
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xF]);
  }
  return out;
}

std::string git_blob_hash_file(const fs::path& path) { return git_blob_hash(io::read_file(path)); }

std::vector<ArtifactHash> hash_artifacts(const fs::path& path) {
  std::vector<ArtifactHash> out;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(path)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const fs::path& f : files) out.push_back({f.generic_string(), git_blob_hash_file(f)});
  } else if (fs::is_regular_file(path)) {
    out.push_back({path.generic_string(), git_blob_hash_file(path)});
    if (path.extension() == ".tssfeat") {
      fs::path ids = path;
      ids.replace_extension(".ids.jsonl");
      if (fs::is_regular_file(ids)) out.push_back({ids.generic_string(), git_blob_hash_file(ids)});
    }
  } else {
    throw DataError("artifact not found: " + path.string());
  }
  return out;
}

void write_manifest(const RunManifest& manifest, const fs::path& path) {
  json j;
  j["command"] = manifest.command;
  j["config_hash"] = git_blob_hash(manifest.config_text);
  j["config"] = manifest.config_text;
  j["seed"] = manifest.seed;
  auto hashes = [](const std::vector<fs::path>& paths) {
    json arr = json::array();
    for (const fs::path& p : paths) {
      for (const ArtifactHash& h : hash_artifacts(p)) {
        // Manifests live next to their outputs; never hash ourselves.
        arr.push_back({{"path", h.path}, {"hash", h.hash}});
      }
    }
    return arr;
  };
  j["inputs"] = hashes(manifest.inputs);
  json outs = hashes(manifest.outputs);
  json filtered = json::array();
  for (const auto& o : outs) {
    if (fs::path(o["path"].get<std::string>()) != path) filtered.push_back(o);
  }
  j["outputs"] = filtered;
  io::write_file_atomic(path, j.dump(2) + "\n");
}

}  // namespace tss::cli
