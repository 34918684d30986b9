#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "curvprobe/csv.hpp"
#include "curvprobe/trainer.hpp"
#include "synth_data.hpp"

using namespace curvprobe;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("curvprobe_train_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

Dataset tiny_dataset(int n, uint64_t seed) {
    TempDir tmp;  // write-and-load keeps the loader on the hot path
    auto raw = synth::make_class_patterns(n, 1, 16, 16, 4, seed);
    auto images = synth::write_idx_pair(tmp.str(), "train", raw);
    auto ds = load_dataset(images, DataFormat::idx);
    ds.num_classes = 4;
    return ds;
}

ArchConfig tiny_cnn() {
    ArchConfig cfg;
    cfg.arch = Arch::cnn;
    cfg.in_channels = 1;
    cfg.height = cfg.width = 16;
    cfg.num_classes = 4;
    cfg.widths = {8, 16};
    cfg.blocks = {1, 1};
    return cfg;
}

TrainConfig small_run(const std::string& out) {
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 32;
    cfg.ckpt_every = 2;
    cfg.track_n = 24;
    cfg.seed = 5;
    cfg.out_dir = out;
    cfg.jobs = 2;
    return cfg;
}

}  // namespace

TEST_CASE("training reduces the mean loss on a small subset") {
    TempDir out;
    auto ds = tiny_dataset(200, 1);
    auto model = Classifier::create(tiny_cnn(), 7);
    auto cfg = small_run(out.str());
    cfg.epochs = 5;
    cfg.lr = 3e-3f;
    auto res = train(model, ds, cfg);
    REQUIRE(res.epoch_mean_loss.size() == 5);
    CHECK(res.epoch_mean_loss.back() < res.epoch_mean_loss.front());
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
    TempDir out;
    auto ds = tiny_dataset(64, 2);
    auto model = Classifier::create(tiny_cnn(), 8);
    auto before = model.parameters();
    std::vector<std::vector<float>> saved;
    for (const auto& p : before)
        saved.emplace_back(p.tensor.data().begin(), p.tensor.data().end());

    auto cfg = small_run(out.str());
    cfg.lr = 0.0f;
    cfg.weight_decay = 0.0f;
    auto res = train(model, ds, cfg);

    auto after = model.parameters();
    for (size_t i = 0; i < after.size(); ++i) {
        const auto d = after[i].tensor.data();
        CHECK(std::memcmp(d.data(), saved[i].data(), d.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("zero learning rate keeps losses constant across checkpoints (no-buffer arch)") {
    // Batch-norm running statistics update during train-mode forwards even
    // with lr = 0, so the cnn's eval losses drift while its parameters stay
    // frozen. The vit carries no running buffers: its loss must be constant.
    TempDir out;
    auto ds = tiny_dataset(64, 2);
    ArchConfig vc;
    vc.arch = Arch::vit;
    vc.in_channels = 1;
    vc.height = vc.width = 16;
    vc.num_classes = 4;
    vc.patch = 4;
    vc.depth = 2;
    auto model = Classifier::create(vc, 8);
    auto cfg = small_run(out.str());
    cfg.lr = 0.0f;
    cfg.weight_decay = 0.0f;
    auto res = train(model, ds, cfg);
    for (size_t s = 0; s < res.log.tracked.size(); ++s)
        for (size_t k = 1; k < res.log.ckpt_epochs.size(); ++k)
            CHECK(res.log.loss[s][k] == res.log.loss[s][0]);
}

TEST_CASE("fixed seed reproduces identical final parameters") {
    auto ds = tiny_dataset(96, 3);
    std::vector<std::vector<float>> first;
    for (int run = 0; run < 2; ++run) {
        TempDir out;
        auto model = Classifier::create(tiny_cnn(), 11);
        auto cfg = small_run(out.str());
        train(model, ds, cfg);
        if (run == 0) {
            for (const auto& p : model.parameters())
                first.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
        } else {
            auto params = model.parameters();
            for (size_t i = 0; i < params.size(); ++i) {
                const auto d = params[i].tensor.data();
                CHECK(std::memcmp(d.data(), first[i].data(), d.size() * sizeof(float)) == 0);
            }
        }
    }
}

TEST_CASE("checkpoint at epoch zero equals initialization") {
    TempDir out;
    auto ds = tiny_dataset(48, 4);
    auto model = Classifier::create(tiny_cnn(), 13);
    std::vector<std::vector<float>> init;
    for (const auto& p : model.named_state())
        init.emplace_back(p.tensor.data().begin(), p.tensor.data().end());

    auto cfg = small_run(out.str());
    auto res = train(model, ds, cfg);
    REQUIRE(res.checkpoint_epochs.front() == 0);
    auto loaded = load_checkpoint(res.checkpoint_paths.front());
    CHECK(loaded.epoch == 0);
    auto state = loaded.model.named_state();
    for (size_t i = 0; i < state.size(); ++i) {
        const auto d = state[i].tensor.data();
        CHECK(std::memcmp(d.data(), init[i].data(), d.size() * sizeof(float)) == 0);
    }
    // final checkpoint present even when epochs is not a multiple of the period
    CHECK(res.checkpoint_epochs.back() == cfg.epochs);
    // log complete: one row per tracked sample, one column per checkpoint
    CHECK(res.log.complete());
}

TEST_CASE("divergence aborts with a named error and keeps checkpoints") {
    TempDir out;
    auto ds = tiny_dataset(48, 5);
    auto model = Classifier::create(tiny_cnn(), 14);
    auto cfg = small_run(out.str());
    cfg.optimizer = TrainConfig::Optimizer::sgd;
    cfg.lr = 1e20f;  // guaranteed blow-up
    try {
        train(model, ds, cfg);
        FAIL("expected TrainingDiverged");
    } catch (const TrainingDiverged& e) {
        CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
    }
    CHECK(fs::exists(out.path / "ckpt_epoch_0.cprb"));  // last good checkpoint retained
}

TEST_CASE("dynamics report artifacts") {
    SUBCASE("constant loss gives an all-zero change matrix") {
        TrainingDynamicsLog log;
        log.tracked = {0, 1};
        log.ckpt_epochs = {0, 10, 20};
        log.loss = {{1.0f, 1.0f, 1.0f}, {2.0f, 2.0f, 2.0f}};
        log.theta1 = {{0.1, 0.1, 0.1}, {0.2, 0.2, 0.2}};
        auto rep = dynamics_report(log);
        for (const auto& row : rep.matrix.delta)
            for (float v : row) CHECK(v == 0.0f);
    }
    SUBCASE("rows sort ascending by final theta1") {
        TrainingDynamicsLog log;
        log.tracked = {0, 1};
        log.ckpt_epochs = {0, 10};
        log.loss = {{1.0f, 0.5f}, {1.0f, 0.9f}};
        log.theta1 = {{0.5, 0.9}, {0.4, 0.1}};  // final: 0.9 then 0.1
        auto rep = dynamics_report(log);
        CHECK(rep.matrix.sample_ids[0] == 1);  // final theta1 0.1 first
        CHECK(rep.matrix.sample_ids[1] == 0);
    }
    SUBCASE("clipping applies to the matrix, raw values stay in the scatter") {
        TrainingDynamicsLog log;
        log.tracked = {3};
        log.ckpt_epochs = {0, 10};
        log.loss = {{6.0f, 1.0f}};  // change -5
        log.theta1 = {{0.3, 0.3}};
        auto rep = dynamics_report(log);
        CHECK(rep.matrix.delta[0][0] == -2.0f);  // clipped
        bool found_raw = false;
        for (const auto& r : rep.loss_rows)
            if (r.epoch == 0 && r.loss_change_to_end == -5.0f) found_raw = true;
        CHECK(found_raw);
    }
    SUBCASE("incomplete log is rejected") {
        TrainingDynamicsLog log;
        log.tracked = {0, 1};
        log.ckpt_epochs = {0, 10};
        log.loss = {{1.0f, 1.0f}};  // one row missing
        log.theta1 = {{0.1, 0.1}, {0.1, 0.1}};
        CHECK_THROWS_AS(dynamics_report(log), ValueError);
    }
}

TEST_CASE("csv cells round-trip floats and quote strings") {
    // quick check of the artifact writer the trainer pipelines rely on
    CHECK(csv_cell_to_string(CsvCell(0.1)) == "0.1");
    CHECK(csv_cell_to_string(CsvCell(float(0.1f))) == "0.1");
    CHECK(csv_cell_to_string(CsvCell(int64_t(-7))) == "-7");
    CHECK(csv_cell_to_string(CsvCell(std::monostate{})) == "");
    CHECK(csv_cell_to_string(CsvCell(std::string("a,b"))) == "\"a,b\"");
    const double tricky = 0.30000000000000004;
    const std::string s = csv_cell_to_string(CsvCell(tricky));
    CHECK(std::stod(s) == tricky);
}
