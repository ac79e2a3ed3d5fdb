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

#ifndef ECG2CINE_CORE_NARC_HPP_
#define ECG2CINE_CORE_NARC_HPP_

#include <string>
#include <variant>
#include <vector>

#include "ecg2cine/core/array.hpp"

namespace ecg2cine::core {

// Named-array container: the on-disk archive used for dataset records,
// checkpoints and templates. Little-endian binary, insertion-ordered,
// byte-exact round trip.
//
//   magic "NARC0001"
//   u64 entry count
//   per entry: u32 name_len, name bytes, u8 dtype (0=f32 1=f64 2=i64),
//              u32 ndim, i64 dims[ndim], raw element bytes
class NamedArrays {
 public:
  using Value = std::variant<ArrayF, ArrayD, ArrayI>;

  void put(const std::string& name, ArrayF a) { emplace(name, std::move(a)); }
  void put(const std::string& name, ArrayD a) { emplace(name, std::move(a)); }
  void put(const std::string& name, ArrayI a) { emplace(name, std::move(a)); }

  bool contains(const std::string& name) const;

  const ArrayF& f32(const std::string& name) const;
  const ArrayD& f64(const std::string& name) const;
  const ArrayI& i64(const std::string& name) const;

  const std::vector<std::pair<std::string, Value>>& entries() const {
    return entries_;
  }
  size_t size() const { return entries_.size(); }

  void save(const std::string& path) const;
  static NamedArrays load(const std::string& path);

  bool operator==(const NamedArrays& other) const;

 private:
  void emplace(const std::string& name, Value v);
  const Value& find(const std::string& name) const;

  std::vector<std::pair<std::string, Value>> entries_;
};

}  // namespace ecg2cine::core

#endif  // ECG2CINE_CORE_NARC_HPP_
