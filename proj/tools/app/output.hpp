#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace optomech2d::cli {

/// Hex SHA-256 of a byte string.
std::string sha256_hex(const std::string& bytes);

struct Provenance {
    std::string version;
    std::string config_sha256;
    std::uint64_t seed{0};

    std::string header_line() const; // "# optomech2d <ver> config_sha256=<hex> seed=<n>"
    nlohmann::json to_json() const;
};

/// Writes artifacts into one directory. Every CSV starts with the provenance
/// line and every JSON object carries a "provenance" key.
class ArtifactWriter {
public:
    ArtifactWriter(std::filesystem::path dir, Provenance prov);

    const std::filesystem::path& dir() const { return dir_; }
    const Provenance& provenance() const { return prov_; }

    /// Opens `name`, writes the provenance line and the header row.
    std::ofstream csv(const std::string& name, const std::string& header) const;
    void json(const std::string& name, nlohmann::json j) const;
    const std::vector<std::string>& written() const { return written_; }

private:
    std::filesystem::path dir_;
    Provenance prov_;
    mutable std::vector<std::string> written_;
};

/// Shortest round-trip text; "nan" for NaN.
std::string num(double v);

} // namespace optomech2d::cli
