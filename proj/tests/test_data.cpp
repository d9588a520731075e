#include "doctest.h"

#include <cmath>
#include <fstream>
#include <numbers>

#include <opencv2/imgcodecs.hpp>

#include "ndgan/data.hpp"
#include "ndgan/error.hpp"
#include "test_util.hpp"

using namespace ndgan;
namespace fs = std::filesystem;

TEST_CASE("u8 normalization round trip within one level") {
    for (int v = 0; v <= 255; ++v) {
        const double x = normalize_u8(static_cast<std::uint8_t>(v));
        CHECK(x >= -1.0);
        CHECK(x <= 1.0);
        CHECK(denormalize_u8(x) == v);
        CHECK(std::fabs((x + 1.0) * 127.5 - v) <= 1.0 / 255.0);
    }
    CHECK(denormalize_u8(7.0) == 255);
    CHECK(denormalize_u8(-7.0) == 0);
}

TEST_CASE("mixture mode centers sit on the unit ring") {
    SyntheticMixture m({8, 0.02, 1.0, 100, 32, 0});
    for (int k = 0; k < 8; ++k) {
        const auto c = m.mode_center(k);
        const double a = 2.0 * std::numbers::pi * k / 8.0;
        CHECK(c[0] == doctest::Approx(std::cos(a)));
        CHECK(c[1] == doctest::Approx(std::sin(a)));
    }
}

TEST_CASE("mixture sampling is seeded and balanced") {
    SyntheticMixture a({8, 0.05, 1.0, 10000, 32, 3}), b({8, 0.05, 1.0, 10000, 32, 3}), c({8, 0.05, 1.0, 10000, 32, 4});
    CHECK(a.point(17) == b.point(17));
    CHECK(a.point(17) != c.point(17));

    std::vector<int> counts(8, 0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (auto k = a.assign_mode(a.point(i))) {
            CHECK(*k == *a.label(i));
            ++counts[static_cast<std::size_t>(*k)];
        }
    }
    for (int n : counts) CHECK(std::fabs(n / 10000.0 - 0.125) <= 0.015);
}

TEST_CASE("rendered heatmaps decode back to their points") {
    SyntheticMixture m({8, 0.05, 1.0, 16, 32, 0});
    std::vector<double> img(3 * 32 * 32);
    for (int k = 0; k < 8; ++k) {
        const auto c = m.mode_center(k);
        m.render(c, img);
        for (double v : img) {
            CHECK(v >= -1.0);
            CHECK(v <= 1.0);
        }
        const auto p = m.decode(img);
        CAPTURE(k);
        CHECK(std::hypot(p[0] - c[0], p[1] - c[1]) < 0.05);
        CHECK(m.assign_mode(p) == k);
    }
    m.render({0.0, 0.0}, img);
    const auto p0 = m.decode(img);
    CHECK(std::hypot(p0[0], p0[1]) < 1e-9);
    CHECK_FALSE(m.assign_mode({0.0, 0.0}).has_value());
}

TEST_CASE("decode ignores a lifted background and a fainter ghost") {
    SyntheticMixture m({8, 0.05, 1.0, 16, 32, 0});
    std::vector<double> main(3 * 32 * 32), ghost(3 * 32 * 32), img(3 * 32 * 32);
    const auto c = m.mode_center(1);
    m.render(c, main);
    m.render(m.mode_center(5), ghost);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = main[i] + 0.3 * (ghost[i] + 1.0) + 0.06;
    const auto p = m.decode(img);
    CHECK(std::hypot(p[0] - c[0], p[1] - c[1]) < 0.05);
    CHECK(m.assign_mode(p) == 1);

    std::vector<double> flat(3 * 32 * 32, -0.9);
    CHECK(std::isnan(m.decode(flat)[0]));
}

TEST_CASE("latent streams: reproducible, standard normal, independent") {
    const Tensor a = sample_latents(64, 4, 9, "x", 2);
    CHECK(max_abs_diff(a, sample_latents(64, 4, 9, "x", 2)) == 0.0);
    CHECK(max_abs_diff(a, sample_latents(64, 4, 9, "x", 3)) > 0.0);

    const Tensor big = sample_latents(1, 1000000, 0, "stats");
    double mean = 0.0, sq = 0.0;
    for (double v : big.values()) mean += v;
    mean /= 1e6;
    for (double v : big.values()) sq += (v - mean) * (v - mean);
    CHECK(std::fabs(mean) < 0.01);
    CHECK(std::fabs(std::sqrt(sq / 1e6) - 1.0) < 0.01);

    const Tensor u = sample_latents(1, 100000, 0, "teacher.z"), v = sample_latents(1, 100000, 0, "student.z");
    double su = 0, sv = 0, suv = 0, suu = 0, svv = 0;
    for (std::size_t i = 0; i < 100000; ++i) {
        su += u[i];
        sv += v[i];
        suv += u[i] * v[i];
        suu += u[i] * u[i];
        svv += v[i] * v[i];
    }
    const double n = 1e5;
    const double rho = (suv - su * sv / n) / std::sqrt((suu - su * su / n) * (svv - sv * sv / n));
    CHECK(std::fabs(rho) < 0.05);
}

TEST_CASE("batch indices are a pure function of the step") {
    const auto a = batch_indices(100, 16, 1, "real", 5);
    CHECK(a == batch_indices(100, 16, 1, "real", 5));
    CHECK(a != batch_indices(100, 16, 1, "real", 6));
    for (auto i : a) CHECK(i < 100);
    CHECK_THROWS_AS(batch_indices(0, 4, 1, "real", 0), InputError);
}

TEST_CASE("archive round trip and corruption detection") {
    const fs::path dir = testing::scratch_dir("archive");
    PackedArchive a;
    a.handle = {"demo", 4, 3, 2, "folder", "u8[0,255]->[-1,1]", "abc123"};
    for (int i = 0; i < 2 * 3 * 16; ++i) a.pixels.push_back(static_cast<std::uint8_t>(i * 5));
    a.names = {"x.png", "y.png"};
    write_archive(dir / "a.ndpack", a);
    const PackedArchive b = read_archive(dir / "a.ndpack");
    CHECK(b.pixels == a.pixels);
    CHECK(b.names == a.names);
    CHECK(b.handle.resolution == 4);
    CHECK(b.handle.content_hash == "abc123");

    FolderDataset ds(b);
    std::vector<double> item(3 * 16);
    ds.fill(1, item);
    CHECK(item[0] == normalize_u8(a.pixels[48]));

    fs::resize_file(dir / "a.ndpack", fs::file_size(dir / "a.ndpack") - 3);
    CHECK_THROWS_AS(read_archive(dir / "a.ndpack"), InputError);
}

TEST_CASE("folder ingest: crop, resize, cache, skip corrupt files") {
    const fs::path dir = testing::scratch_dir("ingest");
    const fs::path src = dir / "images";
    fs::create_directories(src);
    cv::Mat odd(33, 47, CV_8UC3, cv::Scalar(10, 200, 90));
    cv::imwrite((src / "a.png").string(), odd);
    cv::imwrite((src / "b.png").string(), odd);
    std::ofstream(src / "junk.png") << "not an image";

    const IngestResult r = ingest_folder(src, 32, dir / "cache");
    CHECK_FALSE(r.cache_hit);
    CHECK(r.skipped == 1);
    REQUIRE(r.dataset->size() == 2);
    const Tensor batch = r.dataset->batch(std::vector<std::size_t>{0, 1});
    CHECK(batch.shape() == Shape{2, 3, 32, 32});
    for (double v : batch.values()) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
    // BGR (10, 200, 90) is stored as RGB.
    CHECK(batch.at(0, 0, 5, 5) == normalize_u8(90));
    CHECK(batch.at(0, 2, 5, 5) == normalize_u8(10));
    CHECK(max_abs_diff(slice_batch(batch, 0, 1), slice_batch(batch, 1, 2)) == 0.0);

    const IngestResult again = ingest_folder(src, 32, dir / "cache");
    CHECK(again.cache_hit);
    CHECK(again.archive_path == r.archive_path);
    CHECK(ingest_folder(src, 16, dir / "cache").archive_path != r.archive_path);

    const fs::path empty = dir / "empty";
    fs::create_directories(empty);
    CHECK_THROWS_AS(ingest_folder(empty, 32, dir / "cache"), InputError);
}

TEST_CASE("image grid writes a decodable PNG") {
    const fs::path dir = testing::scratch_dir("grid");
    const Tensor imgs = testing::random_tensor({5, 3, 8, 8}, 1, 0.5);
    write_image_grid(dir / "g.png", imgs, 4);
    const cv::Mat m = cv::imread((dir / "g.png").string());
    CHECK(m.rows == 16);
    CHECK(m.cols == 32);
}
