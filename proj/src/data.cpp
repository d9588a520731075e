#include "ndgan/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <numbers>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "ndgan/error.hpp"
#include "ndgan/hash.hpp"

namespace ndgan {

std::uint8_t denormalize_u8(double x) {
    const double v = std::round((x + 1.0) * 127.5);
    return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

Tensor ImageDataset::batch(std::span<const std::size_t> indices) const {
    const auto r = static_cast<std::size_t>(resolution());
    const auto c = static_cast<std::size_t>(handle().channels);
    Tensor t({indices.size(), c, r, r});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= size()) throw InputError("dataset: index out of range");
        fill(indices[i], t.item(i));
    }
    return t;
}

std::vector<std::size_t> batch_indices(std::size_t dataset_size, std::size_t batch, std::uint64_t seed,
                                       std::string_view stream, std::uint64_t step) {
    if (dataset_size == 0) throw InputError("dataset: empty");
    Rng rng(seed, stream, step);
    std::vector<std::size_t> idx(batch);
    for (auto& i : idx) i = static_cast<std::size_t>(rng.below(dataset_size));
    return idx;
}

Tensor sample_latents(std::size_t dim, std::size_t batch, std::uint64_t seed, std::string_view stream_id,
                      std::uint64_t step) {
    if (dim == 0 || batch == 0) throw InputError("sample_latents: dim and batch must be >= 1");
    Rng rng(seed, stream_id, step);
    Tensor z({batch, dim});
    for (double& v : z.values()) v = rng.normal();
    return z;
}

// ---------------------------------------------------------------- synthetic

SyntheticMixture::SyntheticMixture(MixtureConfig cfg) : cfg_(cfg) {
    if (cfg_.n_modes < 2) throw ConfigError("synthetic_mixture: n_modes must be >= 2");
    if (cfg_.size == 0) throw ConfigError("synthetic_mixture: size must be >= 1");
    handle_.id = "mixture-" + std::to_string(cfg_.n_modes) + "-s" + std::to_string(cfg_.seed);
    handle_.resolution = cfg_.resolution;
    handle_.channels = 3;
    handle_.size = cfg_.size;
    handle_.source = "synthetic";
    Rng rng(cfg_.seed, "mixture.points");
    points_.resize(cfg_.size);
    modes_.resize(cfg_.size);
    for (std::size_t i = 0; i < cfg_.size; ++i) {
        const int k = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg_.n_modes)));
        const auto c = mode_center(k);
        const double dx = rng.normal(), dy = rng.normal();
        points_[i] = {c[0] + cfg_.std * dx, c[1] + cfg_.std * dy};
        modes_[i] = k;
    }
    handle_.content_hash = sha256_hex(handle_.id + "/" + std::to_string(cfg_.size) + "/" + std::to_string(cfg_.std));
}

std::array<double, 2> SyntheticMixture::mode_center(int k) const {
    const double a = 2.0 * std::numbers::pi * k / cfg_.n_modes;
    return {cfg_.radius * std::cos(a), cfg_.radius * std::sin(a)};
}

void SyntheticMixture::render(std::array<double, 2> p, std::span<double> out) const {
    const int r = cfg_.resolution;
    const double scale = r / (2.0 * kExtent);
    const double cx = (p[0] + kExtent) * scale - 0.5;
    const double cy = (kExtent - p[1]) * scale - 0.5;
    const double inv = 1.0 / (2.0 * kSplatSigma * kSplatSigma);
    const auto plane = static_cast<std::size_t>(r) * r;
    for (int y = 0; y < r; ++y) {
        for (int x = 0; x < r; ++x) {
            const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            const double v = 2.0 * std::exp(-d2 * inv) - 1.0;
            const auto k = static_cast<std::size_t>(y) * r + x;
            out[k] = out[plane + k] = out[2 * plane + k] = v;
        }
    }
}

void SyntheticMixture::fill(std::size_t index, std::span<double> out) const { render(points_.at(index), out); }

std::array<double, 2> SyntheticMixture::decode(std::span<const double> image) const {
    const int r = cfg_.resolution;
    const auto plane = static_cast<std::size_t>(r) * r;
    std::vector<double> weight(plane, 0.0);
    for (std::size_t k = 0; k < plane; ++k) {
        for (int c = 0; c < 3; ++c) weight[k] += std::max(0.0, image[c * plane + k] + 1.0);
    }
    // The splat covers a small part of the canvas, so the median is the
    // background level. Generated images rarely reach exactly -1 and may
    // carry faint secondary blobs, so the centroid is taken in a window that
    // starts at the brightest pixel and follows the local mean.
    std::vector<double> sorted = weight;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(plane / 2), sorted.end());
    const double background = sorted[plane / 2];
    const auto peak = static_cast<std::size_t>(std::max_element(weight.begin(), weight.end()) - weight.begin());
    if (weight[peak] - background <= 0.0) return {std::nan(""), std::nan("")};
    double mx = static_cast<double>(peak % r), my = static_cast<double>(peak / r);
    const double window = 2.0 * kSplatSigma;
    for (int iter = 0; iter < 8; ++iter) {
        double total = 0.0, sx = 0.0, sy = 0.0;
        for (int y = 0; y < r; ++y) {
            for (int x = 0; x < r; ++x) {
                if ((x - mx) * (x - mx) + (y - my) * (y - my) > window * window) continue;
                const double w = std::max(0.0, weight[static_cast<std::size_t>(y) * r + x] - background);
                total += w;
                sx += w * x;
                sy += w * y;
            }
        }
        if (total <= 0.0) break;
        mx = sx / total;
        my = sy / total;
    }
    const double scale = r / (2.0 * kExtent);
    return {(mx + 0.5) / scale - kExtent, kExtent - (my + 0.5) / scale};
}

std::optional<int> SyntheticMixture::assign_mode(std::array<double, 2> p, double sigmas) const {
    if (!std::isfinite(p[0]) || !std::isfinite(p[1])) return std::nullopt;
    int best = -1;
    double best_d = 0.0;
    for (int k = 0; k < cfg_.n_modes; ++k) {
        const auto c = mode_center(k);
        const double d = std::hypot(p[0] - c[0], p[1] - c[1]);
        if (best < 0 || d < best_d) {
            best = k;
            best_d = d;
        }
    }
    if (best_d <= sigmas * cfg_.std) return best;
    return std::nullopt;
}

// ---------------------------------------------------------------- archives

namespace {

constexpr char kMagic[8] = {'N', 'D', 'G', 'P', 'A', 'C', 'K', '1'};
constexpr char kFooterMagic[8] = {'N', 'D', 'G', 'I', 'D', 'X', '0', '1'};
constexpr std::uint32_t kArchiveVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw InputError("archive: truncated file");
    return v;
}

}  // namespace

void write_archive(const std::filesystem::path& path, const PackedArchive& a) {
    const auto& h = a.handle;
    const std::size_t item = static_cast<std::size_t>(h.channels) * h.resolution * h.resolution;
    if (a.pixels.size() != item * h.size || a.names.size() != h.size) {
        throw InputError("archive: pixel/name count does not match handle");
    }
    std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw InputError("archive: cannot write " + tmp.string());
        // Header (64 bytes): magic, version, count, channels, height, width,
        // then 36 bytes of the content-hash prefix (zero padded).
        os.write(kMagic, 8);
        put<std::uint32_t>(os, kArchiveVersion);
        put<std::uint32_t>(os, static_cast<std::uint32_t>(h.size));
        put<std::uint32_t>(os, static_cast<std::uint32_t>(h.channels));
        put<std::uint32_t>(os, static_cast<std::uint32_t>(h.resolution));
        put<std::uint32_t>(os, static_cast<std::uint32_t>(h.resolution));
        char hash[36] = {};
        std::memcpy(hash, h.content_hash.data(), std::min<std::size_t>(36, h.content_hash.size()));
        os.write(hash, 36);
        const std::uint64_t records_offset = 64;
        os.write(reinterpret_cast<const char*>(a.pixels.data()), static_cast<std::streamsize>(a.pixels.size()));
        const std::uint64_t footer_offset = records_offset + a.pixels.size();
        for (std::size_t i = 0; i < h.size; ++i) {
            put<std::uint64_t>(os, records_offset + i * item);
            put<std::uint32_t>(os, static_cast<std::uint32_t>(a.names[i].size()));
            os.write(a.names[i].data(), static_cast<std::streamsize>(a.names[i].size()));
        }
        put<std::uint64_t>(os, footer_offset);
        os.write(kFooterMagic, 8);
        if (!os) throw InputError("archive: write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

PackedArchive read_archive(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InputError("archive: cannot open " + path.string());
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0) throw InputError("archive: bad magic in " + path.string());
    if (get<std::uint32_t>(is) != kArchiveVersion) throw InputError("archive: unsupported version");
    PackedArchive a;
    a.handle.size = get<std::uint32_t>(is);
    a.handle.channels = static_cast<int>(get<std::uint32_t>(is));
    const auto height = get<std::uint32_t>(is);
    const auto width = get<std::uint32_t>(is);
    if (height != width) throw InputError("archive: non-square records are not supported");
    a.handle.resolution = static_cast<int>(height);
    char hash[36];
    is.read(hash, 36);
    a.handle.content_hash.assign(hash, strnlen(hash, 36));
    a.handle.source = "folder";
    const std::size_t item = static_cast<std::size_t>(a.handle.channels) * height * width;
    a.pixels.resize(item * a.handle.size);
    is.read(reinterpret_cast<char*>(a.pixels.data()), static_cast<std::streamsize>(a.pixels.size()));
    if (!is) throw InputError("archive: truncated records");
    a.names.resize(a.handle.size);
    for (std::size_t i = 0; i < a.handle.size; ++i) {
        const auto offset = get<std::uint64_t>(is);
        if (offset != 64 + i * item) throw InputError("archive: index offset mismatch");
        const auto len = get<std::uint32_t>(is);
        a.names[i].resize(len);
        is.read(a.names[i].data(), len);
    }
    const auto footer = get<std::uint64_t>(is);
    is.read(magic, 8);
    if (!is || footer != 64 + a.pixels.size() || std::memcmp(magic, kFooterMagic, 8) != 0) {
        throw InputError("archive: corrupt footer in " + path.string());
    }
    a.handle.id = path.stem().string();
    return a;
}

FolderDataset::FolderDataset(PackedArchive archive) : archive_(std::move(archive)) {}

void FolderDataset::fill(std::size_t index, std::span<double> out) const {
    const auto& h = archive_.handle;
    const std::size_t item = static_cast<std::size_t>(h.channels) * h.resolution * h.resolution;
    const std::uint8_t* src = archive_.pixels.data() + index * item;
    for (std::size_t i = 0; i < item; ++i) out[i] = normalize_u8(src[i]);
}

std::filesystem::path default_cache_root() {
    if (const char* env = std::getenv("NDGAN_CACHE")) return env;
    return ".ndgan_cache";
}

IngestResult ingest_folder(const std::filesystem::path& folder, int resolution, const std::filesystem::path& cache_root) {
    if (!std::filesystem::is_directory(folder)) throw InputError("ingest: not a directory: " + folder.string());
    if (resolution < 1) throw ConfigError("ingest: resolution must be positive");
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(folder)) {
        if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end(),
              [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });

    Sha256 content;
    content.update("ndpack.v1/r" + std::to_string(resolution));
    for (const auto& f : files) {
        content.update(f.filename().string());
        content.update(sha256_file(f));
    }
    const std::string hash = content.hex();
    IngestResult result;
    result.archive_path = cache_root / ("folder-" + hash.substr(0, 16) + "-r" + std::to_string(resolution) + ".ndpack");
    if (std::filesystem::exists(result.archive_path)) {
        PackedArchive a = read_archive(result.archive_path);
        if (hash.compare(0, a.handle.content_hash.size(), a.handle.content_hash) == 0) {
            a.handle.id = folder.filename().string();
            result.dataset = std::make_shared<FolderDataset>(std::move(a));
            result.cache_hit = true;
            return result;
        }
    }

    PackedArchive a;
    a.handle.id = folder.filename().string();
    a.handle.resolution = resolution;
    a.handle.channels = 3;
    a.handle.source = "folder";
    a.handle.content_hash = hash.substr(0, 36);
    const auto r = static_cast<std::size_t>(resolution);
    for (const auto& f : files) {
        cv::Mat img = cv::imread(f.string(), cv::IMREAD_COLOR);
        if (img.empty()) {
            ++result.skipped;
            continue;
        }
        const int side = std::min(img.rows, img.cols);
        cv::Mat crop = img(cv::Rect((img.cols - side) / 2, (img.rows - side) / 2, side, side));
        cv::Mat resized;
        cv::resize(crop, resized, cv::Size(resolution, resolution), 0, 0,
                   side > resolution ? cv::INTER_AREA : cv::INTER_LINEAR);
        cv::Mat rgb;
        cv::cvtColor(resized, rgb, cv::COLOR_BGR2RGB);
        const std::size_t base = a.pixels.size();
        a.pixels.resize(base + 3 * r * r);
        for (std::size_t y = 0; y < r; ++y) {
            const auto* row = rgb.ptr<cv::Vec3b>(static_cast<int>(y));
            for (std::size_t x = 0; x < r; ++x) {
                for (std::size_t c = 0; c < 3; ++c) a.pixels[base + (c * r + y) * r + x] = row[x][static_cast<int>(c)];
            }
        }
        a.names.push_back(f.filename().string());
    }
    if (a.names.empty()) throw InputError("ingest: no decodable images in " + folder.string());
    a.handle.size = a.names.size();
    write_archive(result.archive_path, a);
    result.dataset = std::make_shared<FolderDataset>(std::move(a));
    return result;
}

void write_image_grid(const std::filesystem::path& path, const Tensor& images, int columns) {
    if (images.rank() != 4 || images.c() != 3) throw InputError("image grid: expected (B,3,H,W)");
    const int n = static_cast<int>(images.n());
    const int cols = std::max(1, std::min(columns, n));
    const int rows = (n + cols - 1) / cols;
    const int h = static_cast<int>(images.h()), w = static_cast<int>(images.w());
    cv::Mat grid(rows * h, cols * w, CV_8UC3, cv::Scalar(0, 0, 0));
    for (int i = 0; i < n; ++i) {
        const int oy = (i / cols) * h, ox = (i % cols) * w;
        for (int y = 0; y < h; ++y) {
            auto* row = grid.ptr<cv::Vec3b>(oy + y);
            for (int x = 0; x < w; ++x) {
                for (int c = 0; c < 3; ++c) {
                    row[ox + x][2 - c] = denormalize_u8(images.at(static_cast<std::size_t>(i), static_cast<std::size_t>(c),
                                                                  static_cast<std::size_t>(y), static_cast<std::size_t>(x)));
                }
            }
        }
    }
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), grid)) throw InputError("image grid: failed to write " + path.string());
}

}  // namespace ndgan
