// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "faceguard/common.hpp"
#include "faceguard/core/io.hpp"
#include "faceguard/dataio/image.hpp"
#include "faceguard/dataio/image_io.hpp"

namespace faceguard {

// Immutable after construction; safe to share between readers.
struct Dataset {
  std::vector<FaceImage> images;                             // sorted by image_id
  std::map<std::string, std::vector<std::size_t>> subjects;  // subject_id -> image indices
  std::size_t image_hw = 0;

  std::size_t index_of(const std::string& image_id) const {
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (images[i].image_id == image_id) return i;
    }
    throw ValidationError("unknown image_id: " + image_id);
  }
};

struct ManifestEntry {
  std::string relative_path;
  std::string subject_id;
  std::string attack_name;  // optional third column, used for external attacks
};

// One record per line: relative_path<TAB>subject_id[<TAB>attack_name].
inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab1 = line.find('\t');
    if (tab1 == std::string::npos) {
      throw ValidationError("manifest line " + std::to_string(lineno) +
                            " is not tab-separated: " + path.string());
    }
    ManifestEntry e;
    e.relative_path = line.substr(0, tab1);
    const auto rest = line.substr(tab1 + 1);
    const auto tab2 = rest.find('\t');
    if (tab2 == std::string::npos) {
      e.subject_id = rest;
    } else {
      e.subject_id = rest.substr(0, tab2);
      e.attack_name = rest.substr(tab2 + 1);
    }
    if (e.relative_path.empty() || e.subject_id.empty()) {
      throw ValidationError("manifest line " + std::to_string(lineno) + " has empty fields");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

namespace detail {

inline std::string manifest_fingerprint(const std::vector<ManifestEntry>& entries,
                                        std::size_t image_hw) {
  std::string all = "hw=" + std::to_string(image_hw) + ";";
  for (const auto& e : entries) {
    all += e.relative_path;
    all += '\t';
    all += e.subject_id;
    all += '\n';
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(all)));
  return buf;
}

inline std::filesystem::path cache_dir() {
  if (const char* env = std::getenv("ADVDEF_CACHE"); env && *env) return env;
  return {};
}

}  // namespace detail

// Loads every manifest entry from root_path, normalizes, and sorts by
// image_id (the relative path). When ADVDEF_CACHE is set, the decoded
// dataset is memoized as a blob keyed by the manifest content and size.
inline Dataset load_dataset(const std::filesystem::path& root_path,
                            const std::filesystem::path& manifest_path, std::size_t image_hw) {
  auto entries = read_manifest(manifest_path);
  if (entries.empty()) throw ValidationError("empty dataset: " + manifest_path.string());

  std::sort(entries.begin(), entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) {
              return a.relative_path < b.relative_path;
            });
  for (std::size_t i = 1; i < entries.size(); ++i) {
    if (entries[i].relative_path == entries[i - 1].relative_path) {
      throw ValidationError("duplicate image_id in manifest: " + entries[i].relative_path);
    }
  }

  const auto cache_root = detail::cache_dir();
  std::filesystem::path cache_file;
  if (!cache_root.empty()) {
    cache_file = cache_root / ("dataset_" + detail::manifest_fingerprint(entries, image_hw) +
                               ".fgbin");
    if (std::filesystem::exists(cache_file)) {
      BlobFile blob = BlobFile::load(cache_file);
      Dataset ds;
      ds.image_hw = blob.u64("meta/image_hw");
      const std::uint64_t n = blob.u64("meta/count");
      for (std::uint64_t i = 0; i < n; ++i) {
        const std::string key = "img/" + std::to_string(i);
        FaceImage img;
        img.values = blob.tensor(key + "/values");
        img.image_id = blob.string(key + "/id");
        img.subject_id = blob.string(key + "/subject");
        ds.subjects[img.subject_id].push_back(ds.images.size());
        ds.images.push_back(std::move(img));
      }
      return ds;
    }
  }

  Dataset ds;
  ds.image_hw = image_hw;
  for (const auto& e : entries) {
    RawImage raw = read_raw_image(root_path / e.relative_path, image_hw);
    FaceImage img = normalize_image(raw);
    img.image_id = e.relative_path;
    img.subject_id = e.subject_id;
    ds.subjects[img.subject_id].push_back(ds.images.size());
    ds.images.push_back(std::move(img));
  }

  if (!cache_file.empty()) {
    BlobFile blob;
    blob.put_u64("meta/image_hw", image_hw);
    blob.put_u64("meta/count", ds.images.size());
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
      const std::string key = "img/" + std::to_string(i);
      blob.put_tensor(key + "/values", ds.images[i].values);
      blob.put_string(key + "/id", ds.images[i].image_id);
      blob.put_string(key + "/subject", ds.images[i].subject_id);
    }
    std::filesystem::create_directories(cache_root);
    blob.save(cache_file);
  }
  return ds;
}

}  // namespace faceguard
