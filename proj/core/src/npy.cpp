#include "octofold/npy.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "octofold/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

namespace octofold {

namespace {

std::vector<unsigned char> gunzip(const std::vector<unsigned char>& bytes) {
    z_stream zs{};
    if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK)
        throw FormatError("gzip: failed to initialize inflater");
    std::vector<unsigned char> out;
    std::vector<unsigned char> chunk(1 << 20);
    zs.next_in = const_cast<unsigned char*>(bytes.data());
    zs.avail_in = static_cast<uInt>(bytes.size());
    int rc = Z_OK;
    do {
        zs.next_out = chunk.data();
        zs.avail_out = static_cast<uInt>(chunk.size());
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            throw FormatError("gzip: corrupt stream (zlib code " + std::to_string(rc) + ")");
        }
        out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
    } while (rc != Z_STREAM_END);
    inflateEnd(&zs);
    return out;
}

std::string header_field(const std::string& header, const std::string& key) {
    const std::size_t at = header.find("'" + key + "'");
    if (at == std::string::npos)
        throw FormatError("array container: header missing key '" + key + "'");
    std::size_t colon = header.find(':', at);
    if (colon == std::string::npos)
        throw FormatError("array container: malformed header near '" + key + "'");
    std::size_t end = colon + 1;
    int depth = 0;
    while (end < header.size()) {
        const char c = header[end];
        if (c == '(') ++depth;
        if (c == ')') --depth;
        if (c == ',' && depth == 0) break;
        if (c == '}' && depth == 0) break;
        ++end;
    }
    std::string value = header.substr(colon + 1, end - colon - 1);
    const std::size_t first = value.find_first_not_of(" \t");
    const std::size_t last = value.find_last_not_of(" \t");
    if (first == std::string::npos) return {};
    return value.substr(first, last - first + 1);
}

}  // namespace

NpyArray parse_npy(const std::vector<unsigned char>& raw) {
    const std::vector<unsigned char>* bytes = &raw;
    std::vector<unsigned char> inflated;
    if (raw.size() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b) {
        inflated = gunzip(raw);
        bytes = &inflated;
    }
    const std::vector<unsigned char>& b = *bytes;

    static const unsigned char kMagic[6] = {0x93, 'N', 'U', 'M', 'P', 'Y'};
    if (b.size() < 10 || std::memcmp(b.data(), kMagic, 6) != 0)
        throw FormatError("array container: bad magic at offset 0");
    const int major = b[6];
    std::size_t header_len = 0, header_at = 0;
    if (major == 1) {
        header_len = b[8] | (static_cast<std::size_t>(b[9]) << 8);
        header_at = 10;
    } else if (major == 2) {
        if (b.size() < 12) throw FormatError("array container: truncated v2 header");
        header_len = b[8] | (static_cast<std::size_t>(b[9]) << 8) |
                     (static_cast<std::size_t>(b[10]) << 16) |
                     (static_cast<std::size_t>(b[11]) << 24);
        header_at = 12;
    } else {
        throw FormatError("array container: unsupported version " + std::to_string(major));
    }
    if (b.size() < header_at + header_len)
        throw FormatError("array container: truncated header");
    const std::string header(reinterpret_cast<const char*>(b.data() + header_at), header_len);

    const std::string descr = header_field(header, "descr");
    if (descr != "'<f4'" && descr != "\"<f4\"")
        throw FormatError("array container: unsupported dtype " + descr + ", expected '<f4'");
    const std::string order = header_field(header, "fortran_order");
    if (order != "False")
        throw FormatError("array container: only C-order payloads are supported");

    std::string shape = header_field(header, "shape");
    if (shape.size() < 2 || shape.front() != '(' || shape.back() != ')')
        throw FormatError("array container: malformed shape " + shape);
    shape = shape.substr(1, shape.size() - 2);

    NpyArray out;
    std::int64_t count = 1;
    std::size_t pos = 0;
    while (pos < shape.size()) {
        while (pos < shape.size() && (shape[pos] == ' ' || shape[pos] == ',')) ++pos;
        if (pos >= shape.size()) break;
        std::size_t used = 0;
        std::int64_t dim = 0;
        try {
            dim = std::stoll(shape.substr(pos), &used);
        } catch (const std::exception&) {
            throw FormatError("array container: malformed shape entry in (" + shape + ")");
        }
        if (dim <= 0) throw FormatError("array container: non-positive dimension in shape");
        out.shape.push_back(dim);
        count *= dim;
        pos += used;
    }
    if (out.shape.empty()) throw FormatError("array container: empty shape");

    const std::size_t payload = b.size() - header_at - header_len;
    if (payload != static_cast<std::size_t>(count) * 4)
        throw FormatError("array container: payload is " + std::to_string(payload) +
                          " bytes, shape wants " + std::to_string(count * 4));
    out.data.resize(static_cast<std::size_t>(count));
    std::memcpy(out.data.data(), b.data() + header_at + header_len, payload);
    return out;
}

NpyArray load_npy(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFileError("cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    try {
        return parse_npy(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

void save_npy(const std::string& path, const NpyArray& array) {
    if (array.shape.empty()) throw FormatError("save: array has no shape");
    std::int64_t count = 1;
    std::string shape = "(";
    for (std::size_t i = 0; i < array.shape.size(); ++i) {
        count *= array.shape[i];
        shape += std::to_string(array.shape[i]);
        if (i + 1 < array.shape.size()) shape += ", ";
    }
    if (array.shape.size() == 1) shape += ",";  // match the canonical 1-tuple spelling
    shape += ")";
    if (count != array.size())
        throw FormatError("save: shape wants " + std::to_string(count) + " values, have " +
                          std::to_string(array.size()));

    std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': " + shape + ", }";
    const std::size_t unpadded = 10 + header.size() + 1;
    header.append((64 - unpadded % 64) % 64, ' ');
    header.push_back('\n');

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw MissingFileError("cannot write " + path);
    const unsigned char magic[8] = {0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
    out.write(reinterpret_cast<const char*>(magic), 8);
    const std::uint16_t hlen = static_cast<std::uint16_t>(header.size());
    out.write(reinterpret_cast<const char*>(&hlen), 2);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(reinterpret_cast<const char*>(array.data.data()),
              static_cast<std::streamsize>(array.data.size() * 4));
    if (!out) throw FormatError("save: short write to " + path);
}

}  // namespace octofold
