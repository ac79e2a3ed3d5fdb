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

#include "ecg2cine/core/rng.hpp"

#include <algorithm>
#include <numeric>

#include "ecg2cine/core/errors.hpp"

namespace ecg2cine::core {

std::vector<int64_t> Rng::sample_indices(int64_t n, int64_t k) {
  if (k < 0 || k > n) {
    throw ParamError("sample_indices: k=" + std::to_string(k) +
                     " out of range for n=" + std::to_string(n));
  }
  // Partial Fisher-Yates, then sort for a canonical order.
  std::vector<int64_t> pool(static_cast<size_t>(n));
  std::iota(pool.begin(), pool.end(), 0);
  for (int64_t i = 0; i < k; ++i) {
    const int64_t j = i + static_cast<int64_t>(uniform_int(static_cast<uint64_t>(n - i)));
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
  }
  std::vector<int64_t> out(pool.begin(), pool.begin() + static_cast<size_t>(k));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace ecg2cine::core
