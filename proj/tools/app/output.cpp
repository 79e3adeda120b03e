#include "output.hpp"

#include "optomech2d/errors.hpp"
#include "optomech2d/grid_csv.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <cstdio>

namespace optomech2d::cli {

std::string sha256_hex(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw Error("sha256 failed");
    std::string out;
    char buf[3];
    for (unsigned int k = 0; k < len; ++k) {
        std::snprintf(buf, sizeof buf, "%02x", md[k]);
        out += buf;
    }
    return out;
}

std::string Provenance::header_line() const {
    return "# optomech2d " + version + " config_sha256=" + config_sha256 +
           " seed=" + std::to_string(seed);
}

nlohmann::json Provenance::to_json() const {
    return {{"tool", "optomech2d"},
            {"version", version},
            {"config_sha256", config_sha256},
            {"seed", seed}};
}

ArtifactWriter::ArtifactWriter(std::filesystem::path dir, Provenance prov)
    : dir_(std::move(dir)), prov_(std::move(prov)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw InvalidArgument("cannot create output directory " + dir_.string() + ": " + ec.message());
}

std::ofstream ArtifactWriter::csv(const std::string& name, const std::string& header) const {
    std::ofstream out(dir_ / name);
    if (!out) throw Error("cannot write " + (dir_ / name).string());
    out << prov_.header_line() << '\n' << header << '\n';
    written_.push_back(name);
    return out;
}

void ArtifactWriter::json(const std::string& name, nlohmann::json j) const {
    j["provenance"] = prov_.to_json();
    std::ofstream out(dir_ / name);
    if (!out) throw Error("cannot write " + (dir_ / name).string());
    out << j.dump(2) << '\n';
    written_.push_back(name);
}

std::string num(double v) { return std::isnan(v) ? std::string("nan") : format_double(v); }

} // namespace optomech2d::cli
