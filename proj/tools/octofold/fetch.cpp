#include "fetch.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <openssl/evp.h>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "octofold/errors.hpp"

namespace octofold {
namespace {

using nlohmann::json;

std::string manual_instructions(const ManifestEntry& entry, const std::string& dest) {
    std::ostringstream out;
    out << "; fetch it manually:\n  curl -L -o '" << dest << "' '" << entry.url << "'";
    if (!entry.sha256.empty()) out << "\nthen verify sha256 = " << entry.sha256;
    return out.str();
}

void download(const ManifestEntry& entry, const std::string& dest) {
    const auto scheme_end = entry.url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("manifest url has no scheme: " + entry.url);
    const auto path_start = entry.url.find('/', scheme_end + 3);
    const std::string base = path_start == std::string::npos ? entry.url : entry.url.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : entry.url.substr(path_start);

    const std::string part = dest + ".part";
    std::ofstream out(part, std::ios::binary);
    if (!out) throw MissingFileError("cannot write " + part);

    httplib::Client client(base);
    client.set_follow_location(true);
    client.set_connection_timeout(15, 0);
    client.set_read_timeout(120, 0);

    std::uint64_t received = 0;
    auto res = client.Get(path, [&](const char* data, size_t len) {
        out.write(data, static_cast<std::streamsize>(len));
        received += len;
        return static_cast<bool>(out);
    });
    out.close();

    if (!res || res->status != 200 || !out) {
        std::filesystem::remove(part);
        std::string why = !res ? "connection failed (" + httplib::to_string(res.error()) + ")"
                                : "HTTP status " + std::to_string(res->status);
        throw FetchError("download of " + entry.url + " failed: " + why +
                         manual_instructions(entry, dest));
    }
    std::filesystem::rename(part, dest);
    std::cout << "  downloaded " << received << " bytes\n";
}

void verify_or_report(const ManifestEntry& entry, const std::string& dest, bool fresh) {
    const std::string got = sha256_file_hex(dest);
    if (entry.sha256.empty()) {
        std::cout << "  " << entry.file << ": sha256 " << got << " (manifest unpinned)\n";
        return;
    }
    if (got != entry.sha256) {
        if (fresh) std::filesystem::remove(dest);
        throw IntegrityError(entry.file + ": sha256 mismatch, expected " + entry.sha256 +
                             ", got " + got +
                             (fresh ? " (corrupt download removed)"
                                    : "; delete the file and re-run fetch"));
    }
    std::cout << "  " << entry.file << ": sha256 verified\n";
}

}  // namespace

Manifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingFileError("cannot open manifest: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();

    json j;
    try {
        j = json::parse(buf.str());
    } catch (const json::exception& e) {
        throw FormatError(path + ": invalid JSON: " + e.what());
    }

    Manifest manifest;
    try {
        if (j.contains("source")) manifest.source = j.at("source").get<std::string>();
        for (const auto& item : j.at("files")) {
            ManifestEntry entry;
            entry.file = item.at("file").get<std::string>();
            entry.url = item.at("url").get<std::string>();
            if (item.contains("sha256") && !item.at("sha256").is_null()) {
                entry.sha256 = item.at("sha256").get<std::string>();
            }
            manifest.files.push_back(std::move(entry));
        }
    } catch (const json::exception& e) {
        throw FormatError(path + ": bad manifest: " + e.what());
    }
    if (manifest.files.empty()) throw FormatError(path + ": manifest lists no files");
    return manifest;
}

std::string sha256_file_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFileError("cannot open: " + path);

    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
        EVP_MD_CTX_free(ctx);
        throw NumericError("sha256 init failed");
    }
    std::vector<char> buf(1 << 20);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        const auto n = in.gcount();
        if (n > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<size_t>(n));
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);

    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

void run_fetch(const std::string& manifest_path, const std::string& data_dir) {
    const Manifest manifest = load_manifest(manifest_path);
    std::filesystem::create_directories(data_dir);
    if (!manifest.source.empty()) std::cout << "source: " << manifest.source << "\n";

    for (const auto& entry : manifest.files) {
        const std::string dest = data_dir + "/" + entry.file;
        if (std::filesystem::exists(dest)) {
            std::cout << entry.file << ": present\n";
            verify_or_report(entry, dest, /*fresh=*/false);
            continue;
        }
        std::cout << entry.file << ": fetching " << entry.url << "\n";
        download(entry, dest);
        verify_or_report(entry, dest, /*fresh=*/true);
    }
    std::cout << "fetch complete: " << manifest.files.size() << " file(s) in " << data_dir << "\n";
}

}  // namespace octofold
