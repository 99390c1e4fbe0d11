#pragma once

// Minimal zip archive support for .htz bundles. Entries are written
// uncompressed with zeroed timestamps so archives are byte-reproducible;
// reading accepts stored and deflated entries.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <zlib.h>

#include "htk1.hpp"

namespace htnn::zip {

using Entries = std::vector<std::pair<std::string, std::string>>;

inline std::uint32_t crc(const std::string& data) {
    return static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())));
}

inline std::string write(const Entries& entries) {
    using detail::put;
    std::string out, central;
    constexpr std::uint16_t dos_date = (0 << 9) | (1 << 5) | 1;  // 1980-01-01
    for (const auto& [name, data] : entries) {
        const auto offset = static_cast<std::uint32_t>(out.size());
        const std::uint32_t c = crc(data);
        const auto size = static_cast<std::uint32_t>(data.size());
        put<std::uint32_t>(out, 0x04034b50);
        put<std::uint16_t>(out, 20);
        put<std::uint16_t>(out, 0);
        put<std::uint16_t>(out, 0);  // stored
        put<std::uint16_t>(out, 0);
        put<std::uint16_t>(out, dos_date);
        put<std::uint32_t>(out, c);
        put<std::uint32_t>(out, size);
        put<std::uint32_t>(out, size);
        put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        put<std::uint16_t>(out, 0);
        out += name;
        out += data;

        put<std::uint32_t>(central, 0x02014b50);
        put<std::uint16_t>(central, 20);
        put<std::uint16_t>(central, 20);
        put<std::uint16_t>(central, 0);
        put<std::uint16_t>(central, 0);
        put<std::uint16_t>(central, 0);
        put<std::uint16_t>(central, dos_date);
        put<std::uint32_t>(central, c);
        put<std::uint32_t>(central, size);
        put<std::uint32_t>(central, size);
        put<std::uint16_t>(central, static_cast<std::uint16_t>(name.size()));
        put<std::uint16_t>(central, 0);
        put<std::uint16_t>(central, 0);
        put<std::uint16_t>(central, 0);
        put<std::uint16_t>(central, 0);
        put<std::uint32_t>(central, 0);
        put<std::uint32_t>(central, offset);
        central += name;
    }
    const auto cd_offset = static_cast<std::uint32_t>(out.size());
    out += central;
    put<std::uint32_t>(out, 0x06054b50);
    put<std::uint16_t>(out, 0);
    put<std::uint16_t>(out, 0);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(entries.size()));
    put<std::uint16_t>(out, static_cast<std::uint16_t>(entries.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(central.size()));
    put<std::uint32_t>(out, cd_offset);
    put<std::uint16_t>(out, 0);
    return out;
}

inline std::string inflate_raw(const std::string& in, std::size_t expected) {
    std::string out(expected, '\0');
    z_stream zs{};
    if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) throw FormatError("inflateInit2 failed");
    zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
    zs.avail_in = static_cast<uInt>(in.size());
    zs.next_out = reinterpret_cast<Bytef*>(out.data());
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = ::inflate(&zs, Z_FINISH);
    inflateEnd(&zs);
    if (rc != Z_STREAM_END || zs.total_out != expected) throw FormatError("corrupt deflate stream in archive");
    return out;
}

inline std::map<std::string, std::string> read(const std::string& bytes) {
    using detail::get;
    if (bytes.size() < 22) throw FormatError("archive too small");
    std::size_t eocd = bytes.size() - 22;
    while (true) {
        std::size_t p = eocd;
        if (get<std::uint32_t>(bytes, p) == 0x06054b50) break;
        if (eocd == 0 || bytes.size() - eocd > 22 + 65535) throw FormatError("zip end-of-directory record not found");
        --eocd;
    }
    std::size_t p = eocd + 10;
    const auto count = get<std::uint16_t>(bytes, p);
    get<std::uint32_t>(bytes, p);
    std::size_t cd = get<std::uint32_t>(bytes, p);

    std::map<std::string, std::string> out;
    for (std::uint16_t i = 0; i < count; ++i) {
        if (get<std::uint32_t>(bytes, cd) != 0x02014b50) throw FormatError("bad central directory entry");
        cd += 6;
        const auto method = get<std::uint16_t>(bytes, cd);
        cd += 4;
        const auto crc_expected = get<std::uint32_t>(bytes, cd);
        const auto csize = get<std::uint32_t>(bytes, cd);
        const auto usize = get<std::uint32_t>(bytes, cd);
        const auto nlen = get<std::uint16_t>(bytes, cd);
        const auto elen = get<std::uint16_t>(bytes, cd);
        const auto clen = get<std::uint16_t>(bytes, cd);
        cd += 8;
        std::size_t local = get<std::uint32_t>(bytes, cd);
        if (cd + nlen > bytes.size()) throw FormatError("truncated central directory");
        std::string name = bytes.substr(cd, nlen);
        cd += nlen + elen + clen;

        if (get<std::uint32_t>(bytes, local) != 0x04034b50) throw FormatError("bad local header for " + name);
        local += 22;
        const auto lnlen = get<std::uint16_t>(bytes, local);
        const auto lelen = get<std::uint16_t>(bytes, local);
        local += lnlen + lelen;
        if (local + csize > bytes.size()) throw FormatError("truncated entry " + name);
        std::string raw = bytes.substr(local, csize);
        std::string data;
        if (method == 0) data = std::move(raw);
        else if (method == 8) data = inflate_raw(raw, usize);
        else throw FormatError("unsupported compression method " + std::to_string(method) + " for " + name);
        if (crc(data) != crc_expected) throw FormatError("CRC mismatch for " + name);
        out.emplace(std::move(name), std::move(data));
    }
    return out;
}

}  // namespace htnn::zip
