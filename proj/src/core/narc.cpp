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

#include "ecg2cine/core/narc.hpp"

#include <cstring>
#include <fstream>

namespace ecg2cine::core {

namespace {

constexpr char kMagic[8] = {'N', 'A', 'R', 'C', '0', '0', '0', '1'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

template <typename T>
void write_array(std::ostream& os, const Array<T>& a) {
  write_pod<uint32_t>(os, static_cast<uint32_t>(a.ndim()));
  for (int i = 0; i < a.ndim(); ++i) write_pod<int64_t>(os, a.dim(i));
  os.write(reinterpret_cast<const char*>(a.data()),
           static_cast<std::streamsize>(a.size() * sizeof(T)));
}

template <typename T>
Array<T> read_array(std::istream& is) {
  const uint32_t ndim = read_pod<uint32_t>(is);
  Shape shape(ndim);
  for (uint32_t i = 0; i < ndim; ++i) shape[i] = read_pod<int64_t>(is);
  Array<T> a(shape);
  is.read(reinterpret_cast<char*>(a.data()),
          static_cast<std::streamsize>(a.size() * sizeof(T)));
  return a;
}

}  // namespace

void NamedArrays::emplace(const std::string& name, Value v) {
  for (auto& e : entries_) {
    if (e.first == name) {
      e.second = std::move(v);
      return;
    }
  }
  entries_.emplace_back(name, std::move(v));
}

bool NamedArrays::contains(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.first == name) return true;
  }
  return false;
}

const NamedArrays::Value& NamedArrays::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.first == name) return e.second;
  }
  throw IoError("archive entry not found: " + name);
}

const ArrayF& NamedArrays::f32(const std::string& name) const {
  const Value& v = find(name);
  if (!std::holds_alternative<ArrayF>(v)) {
    throw IoError("archive entry '" + name + "' is not f32");
  }
  return std::get<ArrayF>(v);
}

const ArrayD& NamedArrays::f64(const std::string& name) const {
  const Value& v = find(name);
  if (!std::holds_alternative<ArrayD>(v)) {
    throw IoError("archive entry '" + name + "' is not f64");
  }
  return std::get<ArrayD>(v);
}

const ArrayI& NamedArrays::i64(const std::string& name) const {
  const Value& v = find(name);
  if (!std::holds_alternative<ArrayI>(v)) {
    throw IoError("archive entry '" + name + "' is not i64");
  }
  return std::get<ArrayI>(v);
}

void NamedArrays::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for write: " + path);
  os.write(kMagic, sizeof(kMagic));
  write_pod<uint64_t>(os, entries_.size());
  for (const auto& [name, value] : entries_) {
    write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const uint8_t dtype = static_cast<uint8_t>(value.index());
    write_pod<uint8_t>(os, dtype);
    std::visit([&os](const auto& a) { write_array(os, a); }, value);
  }
  if (!os) throw IoError("write failed: " + path);
}

NamedArrays NamedArrays::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for read: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("bad archive magic (wrong file or format version): " + path);
  }
  const uint64_t count = read_pod<uint64_t>(is);
  NamedArrays out;
  for (uint64_t i = 0; i < count; ++i) {
    const uint32_t name_len = read_pod<uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint8_t dtype = read_pod<uint8_t>(is);
    switch (dtype) {
      case 0:
        out.put(name, read_array<float>(is));
        break;
      case 1:
        out.put(name, read_array<double>(is));
        break;
      case 2:
        out.put(name, read_array<int64_t>(is));
        break;
      default:
        throw IoError("unknown dtype tag in archive: " + path);
    }
    if (!is) throw IoError("truncated archive: " + path);
  }
  return out;
}

bool NamedArrays::operator==(const NamedArrays& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first != other.entries_[i].first) return false;
    const Value& a = entries_[i].second;
    const Value& b = other.entries_[i].second;
    if (a.index() != b.index()) return false;
    const bool eq = std::visit(
        [&b](const auto& av) {
          using A = std::decay_t<decltype(av)>;
          const A& bv = std::get<A>(b);
          return av.shape() == bv.shape() && av.vec() == bv.vec();
        },
        a);
    if (!eq) return false;
  }
  return true;
}

}  // namespace ecg2cine::core
