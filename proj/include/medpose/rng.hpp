// Copyright 2026 The medpose Authors. All Rights Reserved.
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

#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace medpose {

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Order-sensitive combination of seed words into one stream seed. Used to
/// give every (run seed, step, sample) triple its own generator.
std::uint64_t derive_seed(std::initializer_list<std::uint64_t> words) noexcept;

/// FNV-1a over the bytes of `text`.
std::uint64_t hash_name(std::string_view text) noexcept;

}  // namespace medpose
