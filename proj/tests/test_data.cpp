#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>

#include "ramlab/data.hpp"
#include "ramlab/image_io.hpp"

using namespace ramlab;
using Catch::Approx;

TEST_CASE("generate_dataset determinism and structure") {
    DatasetSpec spec;
    spec.count = 16;
    spec.seed = 99;
    auto a = generate_dataset(spec);
    auto b = generate_dataset(spec);
    REQUIRE(a.size() == 16);

    SECTION("same seed gives identical bytes") {
        for (size_t i = 0; i < a.size(); ++i) {
            for (int64_t k = 0; k < a[i].image.size(); ++k) CHECK(a[i].image[k] == b[i].image[k]);
            CHECK(a[i].labels.v == b[i].labels.v);
        }
    }
    SECTION("different seed differs") {
        DatasetSpec other = spec;
        other.seed = 100;
        auto c = generate_dataset(other);
        bool any_diff = false;
        for (int64_t k = 0; k < a[0].image.size(); ++k)
            if (a[0].image[k] != c[0].image[k]) any_diff = true;
        CHECK(any_diff);
    }
    SECTION("every image covers at least two classes, labels and pixels in range") {
        for (const auto& s : a) {
            CHECK(s.labels.present_classes().size() >= 2);
            for (int c : s.labels.v) {
                CHECK(c >= 0);
                CHECK(c < spec.classes);
            }
            for (int64_t k = 0; k < s.image.size(); ++k) {
                CHECK(s.image[k] >= 0.0);
                CHECK(s.image[k] <= 1.0);
            }
        }
    }
    SECTION("pixels inside each drawn shape carry that shape's class") {
        for (const auto& s : a) {
            for (const auto& rec : s.shapes) {
                auto px = detail::shape_pixels(rec, spec.img_h, spec.img_w);
                CHECK(!px.empty());
                for (auto [i, j] : px) CHECK(s.labels.at(i, j) == rec.cls);
            }
        }
    }
    SECTION("shape pixels carry their palette color, the rest is background") {
        for (const auto& s : a) {
            std::vector<int> paint(32 * 32, 0);
            for (const auto& rec : s.shapes)
                for (auto [i, j] : detail::shape_pixels(rec, spec.img_h, spec.img_w))
                    paint[size_t(i) * 32 + size_t(j)] = rec.cls;
            for (int i = 0; i < spec.img_h; ++i)
                for (int j = 0; j < spec.img_w; ++j) {
                    double rgb[3];
                    palette_color(paint[size_t(i) * 32 + size_t(j)], spec.classes, rgb);
                    for (int c = 0; c < 3; ++c) {
                        double v = s.image[(int64_t(i) * spec.img_w + j) * 3 + c];
                        CHECK(std::fabs(v - rgb[c]) <= 6.0 * spec.noise_std);
                    }
                }
        }
    }
    SECTION("halo labels claim background near shapes, far background stays 0") {
        bool saw_halo = false, saw_zero = false;
        for (const auto& s : a) {
            std::vector<int> paint(32 * 32, 0);
            for (const auto& rec : s.shapes)
                for (auto [i, j] : detail::shape_pixels(rec, spec.img_h, spec.img_w))
                    paint[size_t(i) * 32 + size_t(j)] = rec.cls;
            for (int i = 0; i < 32; ++i)
                for (int j = 0; j < 32; ++j) {
                    if (paint[size_t(i) * 32 + size_t(j)] == 0 && s.labels.at(i, j) != 0)
                        saw_halo = true;
                    if (s.labels.at(i, j) == 0) saw_zero = true;
                }
        }
        CHECK(saw_halo);
        CHECK(saw_zero);
    }
    SECTION("invalid specs are rejected") {
        DatasetSpec bad = spec;
        bad.classes = 2;
        CHECK_THROWS_AS(generate_dataset(bad), std::invalid_argument);
        bad = spec;
        bad.img_h = 4;
        CHECK_THROWS_AS(generate_dataset(bad), std::invalid_argument);
    }
}

TEST_CASE("make_patch_mask placements") {
    RngState rng(5);
    auto lr = make_patch_mask(32, 32, 8, MaskLocation::lower_right, rng);
    CHECK(lr.top == 24);
    CHECK(lr.left == 24);
    CHECK(lr.contains(24, 24));
    CHECK(lr.contains(31, 31));
    CHECK_FALSE(lr.contains(23, 31));

    auto ctr = make_patch_mask(32, 32, 8, MaskLocation::center, rng);
    CHECK(ctr.top == 12);
    CHECK(ctr.left == 12);
    CHECK(ctr.contains(12, 12));
    CHECK(ctr.contains(19, 19));
    CHECK_FALSE(ctr.contains(20, 19));

    for (MaskLocation loc : {MaskLocation::lower_right, MaskLocation::lower_left,
                             MaskLocation::top_left, MaskLocation::top_right, MaskLocation::center,
                             MaskLocation::random_loc}) {
        auto m = make_patch_mask(32, 32, 8, loc, rng);
        CHECK(m.popcount() == 64);
        int64_t dense_count = 0;
        for (double v : m.dense())
            if (v == 1.0) ++dense_count;
        CHECK(dense_count == 64);
        CHECK(m.top >= 0);
        CHECK(m.left >= 0);
        CHECK(m.top + m.mh <= 32);
        CHECK(m.left + m.mw <= 32);
    }

    CHECK_THROWS_AS(make_patch_mask(32, 32, 33, MaskLocation::center, rng), std::invalid_argument);
}

TEST_CASE("ppm round trip") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "ramlab_io_test";
    fs::create_directories(dir);

    DatasetSpec spec;
    spec.count = 1;
    spec.seed = 3;
    auto data = generate_dataset(spec);
    const Tensor& img = data[0].image;

    std::string p = (dir / "img.ppm").string();
    write_ppm(p, img);
    Tensor back = read_ppm(p);
    REQUIRE(back.shape == img.shape);
    double worst = 0.0;
    for (int64_t i = 0; i < img.size(); ++i) worst = std::max(worst, std::fabs(back[i] - img[i]));
    CHECK(worst <= 1.0 / 255.0);

    SECTION("all-zero image stores zero bytes") {
        Tensor zero({2, 2, 3});
        std::string pz = (dir / "zero.ppm").string();
        write_ppm(pz, zero);
        std::ifstream in(pz, std::ios::binary);
        std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::string payload = all.substr(all.size() - 12);
        for (char c : payload) CHECK(c == 0);
    }

    SECTION("labels stored verbatim in pgm") {
        std::string pl = (dir / "lab.pgm").string();
        write_label_pgm(pl, data[0].labels);
        LabelMap back_l = read_label_pgm(pl);
        CHECK(back_l.v == data[0].labels.v);
    }

    SECTION("malformed and truncated files error") {
        std::string bad = (dir / "bad.ppm").string();
        {
            std::ofstream out(bad, std::ios::binary);
            out << "P6\n4 4\n255\nxx";  // payload too short
        }
        CHECK_THROWS_AS(read_ppm(bad), std::runtime_error);
        std::string notppm = (dir / "not.ppm").string();
        {
            std::ofstream out(notppm, std::ios::binary);
            out << "P5\n2 2\n255\nabcd";
        }
        CHECK_THROWS_AS(read_ppm(notppm), std::runtime_error);
    }

    fs::remove_all(dir);
}
