#pragma once

// Checkpoints: a directory of named little-endian float64 arrays plus a
// manifest.json carrying shapes, per-array SHA-256, and free-form metadata
// (spec hashes, step, seed, optimizer state). Writes go to a sibling temp
// directory that is renamed into place.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "ndgan/layers.hpp"
#include "ndgan/tensor.hpp"

namespace ndgan {

struct Checkpoint {
    nlohmann::json meta = nlohmann::json::object();
    std::map<std::string, Tensor> arrays;

    void put_params(const std::string& prefix, const std::vector<Param*>& params);
    // Throws InputError when an array is missing or has the wrong shape.
    void get_params(const std::string& prefix, const std::vector<Param*>& params) const;
};

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Hash over the manifest's array digests and metadata; equal for
// bit-identical checkpoints.
std::string checkpoint_hash(const std::filesystem::path& dir);

}  // namespace ndgan
