#include "heman/zipfile.hpp"

#include <array>
#include <cstdint>
#include <vector>

#include "heman/util.hpp"

namespace heman {

namespace {

std::uint32_t crc32_of(const std::string& data) {
    static std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t c = 0xffffffffu;
    for (unsigned char ch : data) c = table[(c ^ ch) & 0xff] ^ (c >> 8);
    return c ^ 0xffffffffu;
}

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace

std::string zip_pack(const std::map<std::string, std::string>& entries) {
    struct CdEntry {
        std::string name;
        std::uint32_t crc, size, offset;
    };
    std::vector<CdEntry> cd;
    std::string out;

    for (const auto& [name, data] : entries) {
        auto offset = static_cast<std::uint32_t>(out.size());
        std::uint32_t crc = crc32_of(data);
        auto size = static_cast<std::uint32_t>(data.size());
        put_u32(out, 0x04034b50);  // local file header signature
        put_u16(out, 20);          // version needed
        put_u16(out, 0);           // general-purpose flags
        put_u16(out, 0);           // method 0 = stored
        put_u16(out, 0);           // mod time
        put_u16(out, 0);           // mod date
        put_u32(out, crc);
        put_u32(out, size);        // compressed size
        put_u32(out, size);        // uncompressed size
        put_u16(out, static_cast<std::uint16_t>(name.size()));
        put_u16(out, 0);           // extra field length
        out += name;
        out += data;
        cd.push_back({name, crc, size, offset});
    }

    auto cd_offset = static_cast<std::uint32_t>(out.size());
    for (const auto& e : cd) {
        put_u32(out, 0x02014b50);  // central directory header signature
        put_u16(out, 20);          // version made by
        put_u16(out, 20);          // version needed
        put_u16(out, 0);           // flags
        put_u16(out, 0);           // method
        put_u16(out, 0);           // mod time
        put_u16(out, 0);           // mod date
        put_u32(out, e.crc);
        put_u32(out, e.size);
        put_u32(out, e.size);
        put_u16(out, static_cast<std::uint16_t>(e.name.size()));
        put_u16(out, 0);           // extra length
        put_u16(out, 0);           // comment length
        put_u16(out, 0);           // disk number
        put_u16(out, 0);           // internal attributes
        put_u32(out, 0);           // external attributes
        put_u32(out, e.offset);
        out += e.name;
    }
    auto cd_size = static_cast<std::uint32_t>(out.size()) - cd_offset;

    put_u32(out, 0x06054b50);  // end of central directory
    put_u16(out, 0);           // this disk
    put_u16(out, 0);           // cd start disk
    put_u16(out, static_cast<std::uint16_t>(cd.size()));
    put_u16(out, static_cast<std::uint16_t>(cd.size()));
    put_u32(out, cd_size);
    put_u32(out, cd_offset);
    put_u16(out, 0);           // comment length
    return out;
}

std::map<std::string, std::string> zip_unpack(const std::string& bytes) {
    if (bytes.size() < 22) throw ParseError("zip: file too small");

    auto rd_u16 = [&](std::size_t off) {
        return static_cast<std::uint16_t>(static_cast<unsigned char>(bytes[off]) |
                                          (static_cast<unsigned char>(bytes[off + 1]) << 8));
    };
    auto rd_u32 = [&](std::size_t off) {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + i]))
                 << (8 * i);
        return v;
    };

    // Scan backwards for the end-of-central-directory record; tolerate a
    // trailing archive comment of up to 64k.
    std::size_t eocd = std::string::npos;
    std::size_t scan_start = bytes.size() >= 22 + 65535 ? bytes.size() - 22 - 65535 : 0;
    for (std::size_t i = bytes.size() - 22 + 1; i-- > scan_start;) {
        if (rd_u32(i) == 0x06054b50) {
            eocd = i;
            break;
        }
    }
    if (eocd == std::string::npos) throw ParseError("zip: end-of-central-directory not found");

    std::uint16_t count = rd_u16(eocd + 10);
    std::uint32_t cd_offset = rd_u32(eocd + 16);

    std::map<std::string, std::string> out;
    std::size_t p = cd_offset;
    for (std::uint16_t i = 0; i < count; ++i) {
        if (p + 46 > bytes.size() || rd_u32(p) != 0x02014b50)
            throw ParseError("zip: bad central directory entry");
        std::uint16_t method = rd_u16(p + 10);
        std::uint32_t size = rd_u32(p + 24);
        std::uint16_t name_len = rd_u16(p + 28);
        std::uint16_t extra_len = rd_u16(p + 30);
        std::uint16_t comment_len = rd_u16(p + 32);
        std::uint32_t local_off = rd_u32(p + 42);
        std::string name = bytes.substr(p + 46, name_len);
        if (method != 0)
            throw ParseError("zip: entry '" + name +
                             "' is compressed (only stored entries are supported)");

        if (local_off + 30 > bytes.size() || rd_u32(local_off) != 0x04034b50)
            throw ParseError("zip: bad local header for '" + name + "'");
        std::uint16_t lname = rd_u16(local_off + 26);
        std::uint16_t lextra = rd_u16(local_off + 28);
        std::size_t data_off = local_off + 30u + lname + lextra;
        if (data_off + size > bytes.size())
            throw ParseError("zip: truncated entry '" + name + "'");
        std::string data = bytes.substr(data_off, size);
        if (crc32_of(data) != rd_u32(p + 16))
            throw ParseError("zip: CRC mismatch in entry '" + name + "'");
        out[name] = std::move(data);
        p += 46u + name_len + extra_len + comment_len;
    }
    return out;
}

}  // namespace heman
