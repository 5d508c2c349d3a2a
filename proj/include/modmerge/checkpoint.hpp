// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container:
//
//   bytes 0..7   magic "MMCKPT01"
//   bytes 8..15  header length L, unsigned 64-bit little-endian
//   next L bytes UTF-8 header, one record per line:
//                  <name> TAB <d0>x<d1>x...  TAB <byte offset into payload> LF
//   remainder    payload: IEEE-754 binary64 little-endian, records packed in
//                header order with no gaps
//
// Records are written in lexicographic name order. Loading reproduces the
// exact bit pattern of every scalar.

#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "modmerge/parameter_store.hpp"

namespace modmerge {

inline constexpr std::string_view kCheckpointMagic = "MMCKPT01";

class CheckpointError : public DataError {
public:
    enum class Kind { Io, BadMagic, CorruptHeader, TruncatedPayload, DuplicateName, TrailingData };

    CheckpointError(Kind kind, const std::string& message);
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

const char* to_string(CheckpointError::Kind kind);

std::string encode_checkpoint(const ParameterStore& store);
ParameterStore decode_checkpoint(std::string_view bytes);

void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path);
ParameterStore load_checkpoint(const std::filesystem::path& path);

/// FNV-1a digest of a file's raw bytes, as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);

}  // namespace modmerge
