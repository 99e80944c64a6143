// Copyright 2026 The mfsr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mfsr {

enum class Split { kTrain, kTest };

std::string to_string(Split s);
Split parse_split(const std::string& s);

struct SampleRecord {
  std::string id;
  std::string visible;  // paths relative to the manifest root
  std::string thermal;
  Split split = Split::kTrain;
  std::string scene_id;
  std::uint64_t seed = 0;
  std::string salient_mask;  // optional
};

/// JSON manifest (manifest.json) listing aligned visible/thermal pairs.
struct DatasetManifest {
  std::filesystem::path root;
  std::vector<SampleRecord> samples;
  std::uint64_t seed = 0;
  std::string content_hash;  // FNV-1a 64 over the referenced files, hex

  /// Throws std::runtime_error on missing files, duplicate ids or a file used
  /// by both splits.
  void validate() const;
  std::vector<SampleRecord> split(Split s) const;
  std::filesystem::path resolve(const std::string& relative) const { return root / relative; }

  /// Recomputes content_hash from the files on disk.
  std::string compute_hash() const;

  void save(const std::filesystem::path& path) const;
  /// Loads and validates; root becomes the manifest's directory.
  static DatasetManifest load(const std::filesystem::path& path);
};

}  // namespace mfsr
