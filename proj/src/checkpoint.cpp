#include "ndgan/checkpoint.hpp"

#include <fstream>

#include "ndgan/error.hpp"
#include "ndgan/hash.hpp"

namespace ndgan {
namespace {

std::string file_name_for(const std::string& name) {
    std::string out;
    for (char c : name) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-') ? c : '_';
    return out + ".bin";
}

std::span<const unsigned char> bytes_of(const Tensor& t) {
    return {reinterpret_cast<const unsigned char*>(t.data()), t.numel() * sizeof(double)};
}

}  // namespace

void Checkpoint::put_params(const std::string& prefix, const std::vector<Param*>& params) {
    for (const Param* p : params) arrays[prefix + "/" + p->name] = p->value;
}

void Checkpoint::get_params(const std::string& prefix, const std::vector<Param*>& params) const {
    for (Param* p : params) {
        const auto it = arrays.find(prefix + "/" + p->name);
        if (it == arrays.end()) throw InputError("checkpoint: missing array " + prefix + "/" + p->name);
        if (it->second.shape() != p->value.shape()) {
            throw InputError("checkpoint: shape mismatch for " + prefix + "/" + p->name + ": " +
                             shape_str(it->second.shape()) + " vs " + shape_str(p->value.shape()));
        }
        p->value = it->second;
    }
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
    namespace fs = std::filesystem;
    const fs::path tmp = dir.string() + ".tmp";
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    nlohmann::json arrays = nlohmann::json::array();
    for (const auto& [name, t] : ckpt.arrays) {
        const std::string file = file_name_for(name);
        std::ofstream os(tmp / file, std::ios::binary);
        const auto b = bytes_of(t);
        os.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
        if (!os) throw Error("checkpoint: failed writing " + (tmp / file).string());
        arrays.push_back({{"name", name}, {"file", file}, {"shape", t.shape()}, {"sha256", sha256_hex(b)}});
    }
    nlohmann::json manifest = {{"format", "ndgan.ckpt.v1"}, {"meta", ckpt.meta}, {"arrays", arrays}};
    {
        std::ofstream os(tmp / "manifest.json");
        os << manifest.dump(2) << "\n";
        if (!os) throw Error("checkpoint: failed writing manifest");
    }
    const fs::path old = dir.string() + ".old";
    fs::remove_all(old);
    if (fs::exists(dir)) fs::rename(dir, old);
    fs::rename(tmp, dir);
    fs::remove_all(old);
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw InputError("checkpoint: no manifest in " + dir.string());
    nlohmann::json manifest;
    try {
        is >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw InputError("checkpoint: malformed manifest in " + dir.string() + ": " + e.what());
    }
    if (manifest.value("format", "") != "ndgan.ckpt.v1") throw InputError("checkpoint: unsupported format");
    Checkpoint ckpt;
    ckpt.meta = manifest.at("meta");
    for (const auto& a : manifest.at("arrays")) {
        const Shape shape = a.at("shape").get<Shape>();
        Tensor t(shape);
        std::ifstream in(dir / a.at("file").get<std::string>(), std::ios::binary);
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
        if (!in) throw InputError("checkpoint: truncated array " + a.at("name").get<std::string>());
        if (sha256_hex(bytes_of(t)) != a.at("sha256").get<std::string>()) {
            throw InputError("checkpoint: hash mismatch for " + a.at("name").get<std::string>());
        }
        ckpt.arrays.emplace(a.at("name").get<std::string>(), std::move(t));
    }
    return ckpt;
}

std::string checkpoint_hash(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw InputError("checkpoint: no manifest in " + dir.string());
    nlohmann::json manifest;
    is >> manifest;
    Sha256 h;
    h.update(manifest.at("meta").dump());
    for (const auto& a : manifest.at("arrays")) {
        h.update(a.at("name").get<std::string>());
        h.update(a.at("sha256").get<std::string>());
    }
    return h.hex();
}

}  // namespace ndgan
