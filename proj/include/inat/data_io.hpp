#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "inat/common.hpp"
#include "inat/rng.hpp"

namespace inat {

// Byte-level tokenizer: ids 0-255 are the bytes themselves, 256 separates
// documents. tokenize never emits the separator; the corpus loader splices it
// in between documents.
inline constexpr int32_t kSepId = 256;
inline constexpr int32_t kVocabSize = 257;

inline std::vector<int32_t> tokenize(std::string_view bytes) {
  std::vector<int32_t> ids;
  ids.reserve(bytes.size());
  for (unsigned char c : bytes) ids.push_back(static_cast<int32_t>(c));
  return ids;
}

inline std::string detokenize(const std::vector<int32_t>& ids) {
  std::string out;
  out.reserve(ids.size());
  for (int32_t id : ids) {
    if (id < 0 || id >= kVocabSize)
      throw Error("detokenize: id " + std::to_string(id) + " out of range [0, " +
                  std::to_string(kVocabSize) + ")");
    if (id != kSepId) out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed on " + path.string());
  return data;
}

inline void write_file(const std::filesystem::path& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed on " + path.string());
}

// A file is one document; a directory is its regular files in sorted name
// order, joined by the separator id.
inline std::vector<int32_t> load_corpus(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) throw IoError("corpus path does not exist: " + path.string());
  if (fs::is_regular_file(path)) return tokenize(read_file(path));
  if (!fs::is_directory(path)) throw IoError("corpus path is neither file nor directory: " + path.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("corpus directory is empty: " + path.string());
  std::vector<int32_t> ids;
  for (size_t i = 0; i < files.size(); ++i) {
    if (i > 0) ids.push_back(kSepId);
    auto doc = tokenize(read_file(files[i]));
    ids.insert(ids.end(), doc.begin(), doc.end());
  }
  return ids;
}

// Contiguous non-overlapping CL-token chunks, remainder dropped, chunk order
// shuffled by seed (Fisher-Yates over the deterministic engine).
inline std::vector<std::vector<int32_t>> batchify(const std::vector<int32_t>& ids, int64_t context_length,
                                                  uint64_t seed) {
  if (context_length < 2)
    throw ConfigError("batchify: context length must be >= 2, got " + std::to_string(context_length));
  const int64_t n_chunks = static_cast<int64_t>(ids.size()) / context_length;
  std::vector<std::vector<int32_t>> chunks;
  chunks.reserve(static_cast<size_t>(n_chunks));
  for (int64_t c = 0; c < n_chunks; ++c)
    chunks.emplace_back(ids.begin() + c * context_length, ids.begin() + (c + 1) * context_length);
  Rng rng(seed);
  for (int64_t i = n_chunks - 1; i > 0; --i)
    std::swap(chunks[static_cast<size_t>(i)], chunks[rng.uniform_int(static_cast<uint64_t>(i + 1))]);
  return chunks;
}

}  // namespace inat
