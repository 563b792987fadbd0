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

#include <cstring>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "leaffew/backbone/arch.hpp"
#include "leaffew/core/io.hpp"

namespace leaffew::backbone {

// Weight file: one JSON header line (tensor manifest with offsets into the
// payload), then raw little-endian float32 blobs in manifest order. The
// same layout doubles as the interchange format for weights exported from
// other ecosystems.
template <class S>
void save_network_weights(Network<S>& net, const fs::path& path,
                          nlohmann::json meta = {}) {
  nlohmann::json header;
  header["format"] = "leaffew-weights-v1";
  header["scalar"] = "f32";
  header["backbone"] = to_string(net.kind);
  header["num_classes"] = net.num_classes;
  header["meta"] = std::move(meta);
  nlohmann::json tensors = nlohmann::json::array();
  std::string payload;
  std::size_t offset = 0;
  for (auto* p : net.params()) {
    tensors.push_back({{"name", p->name},
                       {"shape", p->shape},
                       {"offset", offset},
                       {"trainable", p->trainable}});
    std::vector<float> as_f32(p->value.begin(), p->value.end());
    const std::size_t bytes = as_f32.size() * sizeof(float);
    payload.append(reinterpret_cast<const char*>(as_f32.data()), bytes);
    offset += bytes;
  }
  header["tensors"] = std::move(tensors);
  std::string out = header.dump();
  out += '\n';
  out += payload;
  write_file_atomic(path, out);
}

template <class S>
nlohmann::json load_network_weights(Network<S>& net, const fs::path& path) {
  const std::string text = read_file(path);
  const std::size_t eol = text.find('\n');
  if (eol == std::string::npos) throw IoError("corrupt weights file " + path.string());
  nlohmann::json header = nlohmann::json::parse(text.substr(0, eol));
  if (header.value("format", "") != "leaffew-weights-v1")
    throw IoError("unrecognized weights format in " + path.string());
  const char* payload = text.data() + eol + 1;
  const std::size_t payload_size = text.size() - eol - 1;

  std::map<std::string, const nlohmann::json*> index;
  for (const auto& t : header["tensors"]) index[t["name"]] = &t;

  for (auto* p : net.params()) {
    auto it = index.find(p->name);
    if (it == index.end())
      throw IoError("weights file missing tensor " + p->name);
    const auto& t = *it->second;
    const auto shape = t["shape"].template get<std::vector<int>>();
    if (shape != p->shape)
      throw IoError("shape mismatch for tensor " + p->name);
    const std::size_t off = t["offset"].template get<std::size_t>();
    const std::size_t bytes = p->size() * sizeof(float);
    if (off + bytes > payload_size)
      throw IoError("weights payload truncated at tensor " + p->name);
    std::vector<float> as_f32(p->size());
    std::memcpy(as_f32.data(), payload + off, bytes);
    for (std::size_t i = 0; i < p->size(); ++i)
      p->value[i] = static_cast<S>(as_f32[i]);
  }
  return header;
}

}  // namespace leaffew::backbone
