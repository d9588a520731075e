#pragma once

// Datasets, normalization, latent sampling, and the 2-D ring-of-Gaussians
// oracle task rendered as images.

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ndgan/rng.hpp"
#include "ndgan/tensor.hpp"

namespace ndgan {

// [0, 255] -> [-1, 1]
inline double normalize_u8(std::uint8_t v) { return static_cast<double>(v) / 127.5 - 1.0; }
std::uint8_t denormalize_u8(double x);

struct DatasetHandle {
    std::string id;
    int resolution = 0;
    int channels = 3;
    std::size_t size = 0;
    std::string source;  // "folder" | "synthetic"
    std::string normalization = "u8[0,255]->[-1,1]";
    std::string content_hash;
};

class ImageDataset {
public:
    virtual ~ImageDataset() = default;
    virtual const DatasetHandle& handle() const = 0;
    // Writes item `index` (C*H*W values in [-1, 1]) into `out`.
    virtual void fill(std::size_t index, std::span<double> out) const = 0;
    virtual std::optional<int> label(std::size_t /*index*/) const { return std::nullopt; }
    virtual int num_classes() const { return 0; }
    // Optional per-item regression target (the 2-D point for the mixture task).
    virtual std::vector<double> regression_target(std::size_t /*index*/) const { return {}; }

    std::size_t size() const { return handle().size; }
    int resolution() const { return handle().resolution; }
    Tensor batch(std::span<const std::size_t> indices) const;
};

// Uniform-with-replacement batch indices for a training step; a pure function
// of (seed, stream, step).
std::vector<std::size_t> batch_indices(std::size_t dataset_size, std::size_t batch, std::uint64_t seed,
                                       std::string_view stream, std::uint64_t step);

// Standard-normal latents from a named stream. Identical (seed, stream, step)
// gives an identical batch, which is what lets teacher and student consume the
// same z.
Tensor sample_latents(std::size_t dim, std::size_t batch, std::uint64_t seed, std::string_view stream_id,
                      std::uint64_t step = 0);

// ---------------------------------------------------------------- synthetic

struct MixtureConfig {
    int n_modes = 8;
    double std = 0.05;
    double radius = 1.0;
    std::size_t size = 10000;
    int resolution = 32;
    std::uint64_t seed = 0;
};

class SyntheticMixture final : public ImageDataset {
public:
    // Half-width of the rendered canvas in point coordinates.
    static constexpr double kExtent = 1.5;
    // Splat standard deviation in pixels.
    static constexpr double kSplatSigma = 2.5;

    explicit SyntheticMixture(MixtureConfig cfg);

    const DatasetHandle& handle() const override { return handle_; }
    void fill(std::size_t index, std::span<double> out) const override;
    std::optional<int> label(std::size_t index) const override { return modes_.at(index); }
    int num_classes() const override { return cfg_.n_modes; }
    std::vector<double> regression_target(std::size_t index) const override {
        return {points_.at(index)[0], points_.at(index)[1]};
    }

    const MixtureConfig& config() const { return cfg_; }
    std::array<double, 2> point(std::size_t index) const { return points_.at(index); }
    std::array<double, 2> mode_center(int k) const;

    // Point-space <-> image-space views.
    void render(std::array<double, 2> p, std::span<double> out) const;
    std::array<double, 2> decode(std::span<const double> image) const;

    // Nearest mode whose center lies within `sigmas` standard deviations, or
    // nullopt.
    std::optional<int> assign_mode(std::array<double, 2> p, double sigmas = 3.0) const;

private:
    MixtureConfig cfg_;
    DatasetHandle handle_;
    std::vector<std::array<double, 2>> points_;
    std::vector<int> modes_;
};

// ---------------------------------------------------------------- folders

// Packed archive ("ndpack"): 64-byte header, contiguous uint8 CHW records,
// index footer with per-record source names. See README for the byte layout.
struct PackedArchive {
    DatasetHandle handle;
    std::vector<std::uint8_t> pixels;  // size * C * H * W
    std::vector<std::string> names;
};

void write_archive(const std::filesystem::path& path, const PackedArchive& archive);
PackedArchive read_archive(const std::filesystem::path& path);

class FolderDataset final : public ImageDataset {
public:
    explicit FolderDataset(PackedArchive archive);
    const DatasetHandle& handle() const override { return archive_.handle; }
    void fill(std::size_t index, std::span<double> out) const override;
    const PackedArchive& archive() const { return archive_; }

private:
    PackedArchive archive_;
};

struct IngestResult {
    std::shared_ptr<FolderDataset> dataset;
    std::filesystem::path archive_path;
    bool cache_hit = false;
    std::size_t skipped = 0;  // undecodable files
};

// Decodes every image in `folder` (sorted by filename), center-crops to a
// square, resizes to `resolution`, and caches the result under `cache_root`
// keyed by (content hash, resolution).
IngestResult ingest_folder(const std::filesystem::path& folder, int resolution,
                           const std::filesystem::path& cache_root);

// Cache root: $NDGAN_CACHE or ./.ndgan_cache.
std::filesystem::path default_cache_root();

// Writes a batch of [-1,1] images as a PNG grid.
void write_image_grid(const std::filesystem::path& path, const Tensor& images, int columns);

}  // namespace ndgan
