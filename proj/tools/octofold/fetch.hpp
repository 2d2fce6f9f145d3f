// Dataset fetching against a pinned manifest: download, checksum, store.
#pragma once

#include <string>
#include <vector>

namespace octofold {

struct ManifestEntry {
    std::string file;
    std::string url;
    std::string sha256;  // lowercase hex; empty = unpinned (verify skipped, hash reported)
};

struct Manifest {
    std::string source;
    std::vector<ManifestEntry> files;
};

Manifest load_manifest(const std::string& path);

std::string sha256_file_hex(const std::string& path);

/// Ensures every manifest entry exists in data_dir and matches its pinned
/// checksum. Present and verified files are left untouched; missing ones
/// are downloaded. Mismatches raise IntegrityError, unreachable sources
/// FetchError with manual download instructions.
void run_fetch(const std::string& manifest_path, const std::string& data_dir);

}  // namespace octofold
