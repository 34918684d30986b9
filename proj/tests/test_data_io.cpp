#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "curvprobe/data_io.hpp"
#include "synth_data.hpp"

using namespace curvprobe;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("curvprobe_test_" + std::to_string(::getpid()) +
                                            "_" + std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("idx round trip: counts, shape, scaling") {
    TempDir tmp;
    auto raw = synth::make_class_patterns(120, 1, 28, 28, 10, 9);
    auto images = synth::write_idx_pair(tmp.str(), "train", raw);
    auto ds = load_dataset(images, DataFormat::idx);
    CHECK(ds.size() == 120);
    CHECK(ds.channels == 1);
    CHECK(ds.height == 28);
    CHECK(ds.width == 28);
    for (float v : ds.images) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    // repeated load is identical
    auto ds2 = load_dataset(images, DataFormat::idx);
    CHECK(ds.images == ds2.images);
    CHECK(ds.labels == ds2.labels);
}

TEST_CASE("cifar batch file: 3073-byte records") {
    TempDir tmp;
    auto raw = synth::make_class_patterns(50, 3, 32, 32, 10, 10);
    auto path = synth::write_cifar_batch(tmp.str() + "/data_batch_1.bin", raw);
    auto ds = load_dataset(path, DataFormat::cifar_binary);
    CHECK(ds.size() == 50);
    CHECK(ds.channels == 3);
    CHECK(ds.height == 32);
    CHECK(ds.width == 32);
    CHECK(ds.labels[0] == raw.labels[0]);

    // directory mode picks up all data_batch_*.bin
    synth::write_cifar_batch(tmp.str() + "/data_batch_2.bin",
                             synth::make_class_patterns(30, 3, 32, 32, 10, 11));
    auto all = load_dataset(tmp.str(), DataFormat::cifar_binary);
    CHECK(all.size() == 80);
}

TEST_CASE("ingestion errors are named distinctly") {
    TempDir tmp;

    SUBCASE("bad magic") {
        const std::string p = tmp.str() + "/bogus-images-idx3-ubyte";
        {
            std::ofstream out(p, std::ios::binary);
            const char junk[16] = {0x12, 0x34, 0x56, 0x78};
            out.write(junk, sizeof junk);
        }
        try {
            load_dataset(p, DataFormat::idx);
            FAIL("expected DataError");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("magic") != std::string::npos);
        }
    }
    SUBCASE("truncated file") {
        auto raw = synth::make_class_patterns(10, 1, 28, 28, 10, 12);
        auto images = synth::write_idx_pair(tmp.str(), "train", raw);
        fs::resize_file(images, 16 + 100);  // chop pixel data
        try {
            load_dataset(images, DataFormat::idx);
            FAIL("expected DataError");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("truncated") != std::string::npos);
        }
    }
    SUBCASE("cifar truncated record") {
        const std::string p = tmp.str() + "/data_batch_1.bin";
        {
            std::ofstream out(p, std::ios::binary);
            std::vector<char> partial(3073 + 100, 1);
            out.write(partial.data(), std::streamsize(partial.size()));
        }
        CHECK_THROWS_AS(load_dataset(p, DataFormat::cifar_binary), DataError);
    }
    SUBCASE("label out of range") {
        auto raw = synth::make_class_patterns(5, 1, 28, 28, 10, 13);
        raw.labels[2] = 17;
        auto images = synth::write_idx_pair(tmp.str(), "train", raw);
        try {
            load_dataset(images, DataFormat::idx);
            FAIL("expected DataError");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("label out of range") != std::string::npos);
        }
    }
}

TEST_CASE("subset semantics") {
    TempDir tmp;
    auto raw = synth::make_class_patterns(64, 1, 8, 8, 10, 14);
    auto ds = load_dataset(synth::write_idx_pair(tmp.str(), "t-images-idx3-ubyte", raw),
                           DataFormat::idx);

    SUBCASE("full-size subset is a permutation of the dataset") {
        auto s = subset(ds, ds.size(), 123);
        CHECK(s.data.size() == ds.size());
        auto sorted = s.indices;
        std::sort(sorted.begin(), sorted.end());
        for (size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
    }
    SUBCASE("same seed twice gives identical index sequences") {
        auto a = subset(ds, 20, 7);
        auto b = subset(ds, 20, 7);
        CHECK(a.indices == b.indices);
    }
    SUBCASE("different seeds give different sequences") {
        auto a = subset(ds, 20, 7);
        auto b = subset(ds, 20, 8);
        CHECK(a.indices != b.indices);
    }
    SUBCASE("class counts reported") {
        auto s = subset(ds, 30, 5);
        int64_t total = 0;
        for (auto c : s.class_counts) total += c;
        CHECK(total == 30);
    }
    SUBCASE("oversized request fails") {
        CHECK_THROWS_AS(subset(ds, ds.size() + 1, 1), ValueError);
    }
}

TEST_CASE("checkpoint round trip is bit-identical") {
    TempDir tmp;
    for (auto arch : {Arch::cnn, Arch::vit}) {
        ArchConfig cfg;
        cfg.arch = arch;
        cfg.height = cfg.width = 16;
        cfg.depth = 2;
        auto model = Classifier::create(cfg, 42);
        const std::string path = tmp.str() + "/" + arch_name(arch) + ".cprb";
        save_checkpoint(model, path, 17);
        auto loaded = load_checkpoint(path);
        CHECK(loaded.epoch == 17);
        CHECK(loaded.model.config().arch == arch);

        auto a = model.named_state();
        auto b = loaded.model.named_state();
        REQUIRE(a.size() == b.size());
        for (size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].name == b[i].name);
            const auto da = a[i].tensor.data();
            const auto db = b[i].tensor.data();
            REQUIRE(da.size() == db.size());
            CHECK(std::memcmp(da.data(), db.data(), da.size() * sizeof(float)) == 0);
        }
    }
}

TEST_CASE("checkpoint rejects wrong magic and truncation") {
    TempDir tmp;
    ArchConfig cfg;
    cfg.height = cfg.width = 16;
    auto model = Classifier::create(cfg, 1);
    const std::string path = tmp.str() + "/m.cprb";
    save_checkpoint(model, path, 0);

    SUBCASE("wrong magic") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.write("XXXX", 4);
        f.close();
        try {
            load_checkpoint(path);
            FAIL("expected DataError");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("magic") != std::string::npos);
        }
    }
    SUBCASE("truncated blob") {
        const auto sz = fs::file_size(path);
        fs::resize_file(path, sz - 64);
        CHECK_THROWS_AS(load_checkpoint(path), DataError);
    }
}
