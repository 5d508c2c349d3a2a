// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string_view>

namespace modmerge {

inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ull;

/// 64-bit FNV-1a, continuing from `state`.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t state = kFnvOffset)
{
    for (unsigned char c : bytes) {
        state ^= c;
        state *= 1099511628211ull;
    }
    return state;
}

}  // namespace modmerge
