// Minimal reader/writer for the v1.0/v2.0 array container format carrying
// little-endian float32 in C order, with transparent gzip detection on read.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace octofold {

struct NpyArray {
    std::vector<std::int64_t> shape;
    std::vector<float> data;

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
};

/// Parses a container from memory. Gzip-wrapped input (magic 0x1f 0x8b) is
/// inflated first. Only '<f4' C-order payloads are accepted.
NpyArray parse_npy(const std::vector<unsigned char>& bytes);

/// Reads and parses a file; missing file and malformed content raise the
/// corresponding taxonomy errors.
NpyArray load_npy(const std::string& path);

/// Writes a v1.0 container (uncompressed).
void save_npy(const std::string& path, const NpyArray& array);

}  // namespace octofold
