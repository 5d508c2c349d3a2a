// SPDX-License-Identifier: Apache-2.0

#include "modmerge/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "modmerge/digest.hpp"

namespace modmerge {

CheckpointError::CheckpointError(Kind kind, const std::string& message)
    : DataError(std::string(to_string(kind)) + ": " + message), kind_(kind)
{
}

const char* to_string(CheckpointError::Kind kind)
{
    switch (kind) {
    case CheckpointError::Kind::Io: return "i/o error";
    case CheckpointError::Kind::BadMagic: return "bad magic";
    case CheckpointError::Kind::CorruptHeader: return "corrupt header";
    case CheckpointError::Kind::TruncatedPayload: return "truncated payload";
    case CheckpointError::Kind::DuplicateName: return "duplicate name";
    case CheckpointError::Kind::TrailingData: return "trailing data";
    }
    return "unknown";
}

namespace {

using Kind = CheckpointError::Kind;

void put_u64(std::string& out, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const char* p)
{
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
}

std::size_t parse_size(std::string_view s, std::string_view what)
{
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
        throw CheckpointError(Kind::CorruptHeader, "bad " + std::string(what) + " '" + std::string(s) + "'");
    return v;
}

struct Record {
    std::string name;
    Shape shape;
    std::size_t offset = 0;
};

Record parse_record(std::string_view line)
{
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string_view::npos || line.find('\t', t2 + 1) != std::string_view::npos)
        throw CheckpointError(Kind::CorruptHeader, "malformed record '" + std::string(line) + "'");
    Record r;
    r.name = std::string(line.substr(0, t1));
    if (!valid_parameter_name(r.name)) throw CheckpointError(Kind::CorruptHeader, "invalid name '" + r.name + "'");
    std::string_view dims = line.substr(t1 + 1, t2 - t1 - 1);
    while (true) {
        const auto x = dims.find('x');
        const std::size_t d = parse_size(dims.substr(0, x), "extent");
        if (d == 0) throw CheckpointError(Kind::CorruptHeader, "zero extent for '" + r.name + "'");
        r.shape.push_back(d);
        if (x == std::string_view::npos) break;
        dims.remove_prefix(x + 1);
    }
    r.offset = parse_size(line.substr(t2 + 1), "offset");
    return r;
}

}  // namespace

std::string encode_checkpoint(const ParameterStore& store)
{
    std::string header;
    std::size_t offset = 0;
    for (const auto& [name, t] : store) {
        header += name;
        header += '\t';
        for (std::size_t i = 0; i < t.rank(); ++i) {
            if (i) header += 'x';
            header += std::to_string(t.dim(i));
        }
        header += '\t';
        header += std::to_string(offset);
        header += '\n';
        offset += t.size() * sizeof(double);
    }

    std::string out(kCheckpointMagic);
    put_u64(out, header.size());
    out += header;
    out.reserve(out.size() + offset);
    for (const auto& [_, t] : store) {
        for (double v : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

ParameterStore decode_checkpoint(std::string_view bytes)
{
    if (bytes.size() < kCheckpointMagic.size() || bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic)
        throw CheckpointError(Kind::BadMagic, "not a checkpoint container");
    if (bytes.size() < kCheckpointMagic.size() + 8)
        throw CheckpointError(Kind::CorruptHeader, "missing header length");
    const std::uint64_t header_len = get_u64(bytes.data() + kCheckpointMagic.size());
    const std::size_t header_start = kCheckpointMagic.size() + 8;
    if (header_len > bytes.size() - header_start)
        throw CheckpointError(Kind::CorruptHeader, "header length exceeds file size");
    std::string_view header = bytes.substr(header_start, header_len);
    std::string_view payload = bytes.substr(header_start + header_len);

    if (!header.empty() && header.back() != '\n')
        throw CheckpointError(Kind::CorruptHeader, "header not newline-terminated");

    std::vector<Record> records;
    std::set<std::string> seen;
    std::size_t expected_offset = 0;
    while (!header.empty()) {
        const auto nl = header.find('\n');
        Record r = parse_record(header.substr(0, nl));
        header.remove_prefix(nl + 1);
        if (!seen.insert(r.name).second) throw CheckpointError(Kind::DuplicateName, "'" + r.name + "' repeated");
        if (r.offset != expected_offset)
            throw CheckpointError(Kind::CorruptHeader, "offset of '" + r.name + "' is " + std::to_string(r.offset) +
                                                           ", expected " + std::to_string(expected_offset));
        expected_offset += shape_numel(r.shape) * sizeof(double);
        records.push_back(std::move(r));
    }

    if (payload.size() < expected_offset)
        throw CheckpointError(Kind::TruncatedPayload, "payload has " + std::to_string(payload.size()) +
                                                          " bytes, header needs " + std::to_string(expected_offset));
    if (payload.size() > expected_offset)
        throw CheckpointError(Kind::TrailingData,
                              std::to_string(payload.size() - expected_offset) + " bytes after last record");

    ParameterStore store;
    for (const auto& r : records) {
        const std::size_t n = shape_numel(r.shape);
        std::vector<double> data(n);
        const char* p = payload.data() + r.offset;
        for (std::size_t i = 0; i < n; ++i) data[i] = std::bit_cast<double>(get_u64(p + 8 * i));
        try {
            store.insert(r.name, Tensor(r.shape, std::move(data)));
        } catch (const NumericError&) {
            throw CheckpointError(Kind::CorruptHeader, "'" + r.name + "' holds non-finite values");
        }
    }
    return store;
}

void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path)
{
    const std::string bytes = encode_checkpoint(store);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(Kind::Io, "cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError(Kind::Io, "write to '" + path.string() + "' failed");
}

namespace {

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(Kind::Io, "cannot open '" + path.string() + "'");
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

ParameterStore load_checkpoint(const std::filesystem::path& path)
{
    return decode_checkpoint(read_file(path));
}

std::string file_digest(const std::filesystem::path& path)
{
    return digest_hex(fnv1a(read_file(path)));
}

}  // namespace modmerge
