/* Copyright 2026 The Leaffew Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "leaffew/core/error.hpp"
#include "leaffew/core/io.hpp"
#include "leaffew/image/ppm.hpp"

namespace leaffew::data {

enum class Background { lab, field };

inline std::string to_string(Background b) {
  return b == Background::lab ? "lab" : "field";
}

inline Background background_from_string(const std::string& s) {
  if (s == "lab") return Background::lab;
  if (s == "field") return Background::field;
  throw ValidationError("unknown background '" + s + "' (expected lab|field)");
}

struct ImageRecord {
  std::string image_id;
  std::string path;
  std::string class_label;
  std::string crop;
  Background background = Background::lab;
};

/// An image corpus: validated records plus the sorted class roster with
/// per-class counts. Immutable once loaded; all sampling works off copies.
struct DatasetManifest {
  std::string name;
  std::vector<ImageRecord> records;
  std::vector<std::string> classes;          // sorted, duplicate-free
  std::map<std::string, int> class_counts;   // label -> #records

  const ImageRecord& by_id(const std::string& id) const {
    auto it = id_index_.find(id);
    if (it == id_index_.end()) throw ValidationError("unknown image_id " + id);
    return records[it->second];
  }

  std::vector<std::string> ids_of_class(const std::string& label) const {
    std::vector<std::string> out;
    for (const auto& r : records)
      if (r.class_label == label) out.push_back(r.image_id);
    std::sort(out.begin(), out.end());
    return out;
  }

  std::set<std::string> crops() const {
    std::set<std::string> out;
    for (const auto& r : records) out.insert(r.crop);
    return out;
  }

  // Crop of a class; classes never span crops in this corpus.
  std::string crop_of_class(const std::string& label) const {
    for (const auto& r : records)
      if (r.class_label == label) return r.crop;
    throw ValidationError("unknown class " + label);
  }

  void rebuild_index() {
    id_index_.clear();
    for (std::size_t i = 0; i < records.size(); ++i)
      id_index_[records[i].image_id] = i;
  }

 private:
  std::map<std::string, std::size_t> id_index_;
};

// Validates invariants and computes derived fields: sorted class roster,
// per-class counts, id uniqueness.
inline void finalize_manifest(DatasetManifest& m, bool verify_images) {
  if (m.records.empty()) throw ValidationError("empty manifest");
  std::set<std::string> seen;
  std::set<std::string> classes;
  std::vector<std::string> unreadable;
  m.class_counts.clear();
  for (const auto& r : m.records) {
    if (!seen.insert(r.image_id).second)
      throw ValidationError("duplicate image_id " + r.image_id);
    classes.insert(r.class_label);
    ++m.class_counts[r.class_label];
    if (verify_images && !image::ppm_readable(r.path))
      unreadable.push_back(r.image_id);
  }
  if (!unreadable.empty()) {
    std::string msg = "unreadable image paths for ids:";
    for (const auto& id : unreadable) msg += " " + id;
    throw ValidationError(msg);
  }
  m.classes.assign(classes.begin(), classes.end());  // set gives sorted order
  m.rebuild_index();
}

// Manifest file layout: first line is a JSON header, every following
// non-empty line is a CSV row `image_id,path,class_label,crop,background`.
// No quoting; fields must not contain commas.
inline DatasetManifest load_manifest(const fs::path& file,
                                     bool verify_images = true) {
  if (!fs::exists(file)) throw IoError("manifest not found: " + file.string());
  const std::string text = read_file(file);
  std::size_t eol = text.find('\n');
  if (eol == std::string::npos) throw ValidationError("empty manifest");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text.substr(0, eol));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad manifest header: ") + e.what());
  }

  DatasetManifest m;
  m.name = header.value("name", file.stem().string());
  std::optional<std::set<std::string>> declared;
  if (header.contains("classes"))
    declared = std::set<std::string>(header["classes"].begin(),
                                     header["classes"].end());

  const fs::path base = file.parent_path();
  std::size_t pos = eol + 1;
  std::size_t line_no = 1;
  while (pos < text.size()) {
    std::size_t next = text.find('\n', pos);
    if (next == std::string::npos) next = text.size();
    std::string line = text.substr(pos, next - pos);
    pos = next + 1;
    ++line_no;
    if (line.empty() || line == "\r") continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::vector<std::string> cols;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        cols.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    }
    if (cols.size() != 5)
      throw ValidationError("manifest line " + std::to_string(line_no) +
                            ": expected 5 columns, got " +
                            std::to_string(cols.size()));
    ImageRecord r;
    r.image_id = cols[0];
    fs::path p = cols[1];
    r.path = p.is_absolute() ? p.string() : (base / p).string();
    r.class_label = cols[2];
    r.crop = cols[3];
    r.background = background_from_string(cols[4]);
    if (declared && !declared->count(r.class_label))
      throw ValidationError("class '" + r.class_label +
                            "' not in declared class set (line " +
                            std::to_string(line_no) + ")");
    m.records.push_back(std::move(r));
  }
  finalize_manifest(m, verify_images);
  return m;
}

inline void save_manifest(const DatasetManifest& m, const fs::path& file) {
  nlohmann::json header;
  header["format"] = "leaffew-manifest-v1";
  header["name"] = m.name;
  header["classes"] = m.classes;
  std::string out = header.dump();
  out += '\n';
  for (const auto& r : m.records) {
    out += r.image_id + "," + r.path + "," + r.class_label + "," + r.crop +
           "," + to_string(r.background) + "\n";
  }
  write_file_atomic(file, out);
}

}  // namespace leaffew::data
