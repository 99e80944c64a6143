// Copyright 2026 The mfsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "mfsr/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <set>
#include <stdexcept>

namespace mfsr {

std::string to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  throw std::runtime_error("unknown split tag: " + s);
}

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  std::set<std::string> train_files, test_files;
  for (const auto& r : samples) {
    if (!ids.insert(r.id).second) throw std::runtime_error("duplicate sample id in manifest: " + r.id);
    for (const auto* f : {&r.visible, &r.thermal}) {
      if (!std::filesystem::exists(resolve(*f))) {
        throw std::runtime_error("manifest references a missing file: " + resolve(*f).string());
      }
      (r.split == Split::kTrain ? train_files : test_files).insert(*f);
    }
  }
  for (const auto& f : train_files) {
    if (test_files.count(f)) throw std::runtime_error("file appears in both train and test splits: " + f);
  }
}

std::vector<SampleRecord> DatasetManifest::split(Split s) const {
  std::vector<SampleRecord> out;
  for (const auto& r : samples)
    if (r.split == s) out.push_back(r);
  return out;
}

std::string DatasetManifest::compute_hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  const auto mix = [&](unsigned char c) {
    h ^= c;
    h *= 1099511628211ULL;
  };
  for (const auto& r : samples) {
    for (const auto* f : {&r.visible, &r.thermal, &r.salient_mask}) {
      if (f->empty()) continue;
      for (const char c : *f) mix(static_cast<unsigned char>(c));
      std::ifstream in(resolve(*f), std::ios::binary);
      if (!in) throw std::runtime_error("cannot read dataset file: " + resolve(*f).string());
      for (auto it = std::istreambuf_iterator<char>(in); it != std::istreambuf_iterator<char>(); ++it) {
        mix(static_cast<unsigned char>(*it));
      }
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void DatasetManifest::save(const std::filesystem::path& path) const {
  nlohmann::ordered_json j;
  j["format"] = "mfsr-dataset-1";
  j["seed"] = seed;
  j["content_hash"] = content_hash;
  j["samples"] = nlohmann::ordered_json::array();
  for (const auto& r : samples) {
    nlohmann::ordered_json s;
    s["id"] = r.id;
    s["visible"] = r.visible;
    s["thermal"] = r.thermal;
    s["split"] = to_string(r.split);
    s["scene_id"] = r.scene_id;
    s["seed"] = r.seed;
    if (!r.salient_mask.empty()) s["salient_mask"] = r.salient_mask;
    j["samples"].push_back(std::move(s));
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path.string());
  out << j.dump(2) << '\n';
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path.string());
  DatasetManifest m;
  m.root = path.parent_path();
  try {
    const auto j = nlohmann::json::parse(in);
    m.seed = j.value("seed", std::uint64_t{0});
    m.content_hash = j.value("content_hash", std::string{});
    for (const auto& s : j.at("samples")) {
      SampleRecord r;
      r.id = s.at("id").get<std::string>();
      r.visible = s.at("visible").get<std::string>();
      r.thermal = s.at("thermal").get<std::string>();
      r.split = parse_split(s.at("split").get<std::string>());
      r.scene_id = s.value("scene_id", std::string{});
      r.seed = s.value("seed", std::uint64_t{0});
      r.salient_mask = s.value("salient_mask", std::string{});
      m.samples.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed manifest " + path.string() + ": " + e.what());
  }
  m.validate();
  return m;
}

}  // namespace mfsr
