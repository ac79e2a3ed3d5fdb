// Copyright 2026 The ecg2cine Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef ECG2CINE_CORE_HASH_HPP_
#define ECG2CINE_CORE_HASH_HPP_

#include <cstdint>
#include <string>

namespace ecg2cine::core {

// FNV-1a 64-bit over raw bytes. Used for manifest content hashes and the
// frozen-weights invariant checks; not cryptographic.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(uint64_t h);

// Hash of a whole file's bytes; throws IoError if unreadable.
uint64_t hash_file(const std::string& path);

}  // namespace ecg2cine::core

#endif  // ECG2CINE_CORE_HASH_HPP_
