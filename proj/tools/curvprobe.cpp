// curvprobe: train desk-scale classifiers and probe how their penultimate
// features move when inputs travel toward decision boundaries.
#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "curvprobe/attacks.hpp"
#include "curvprobe/boundary.hpp"
#include "curvprobe/calibration.hpp"
#include "curvprobe/csv.hpp"
#include "curvprobe/data_io.hpp"
#include "curvprobe/projection.hpp"
#include "curvprobe/svg.hpp"
#include "curvprobe/trainer.hpp"
#include "curvprobe/trajectory.hpp"
#include "curvprobe/zoo.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace curvprobe;

namespace {

constexpr const char* kVersion = "0.1.0";

uint64_t env_seed_default() {
    if (const char* s = std::getenv("CURVPROBE_SEED")) {
        try {
            return std::stoull(s);
        } catch (...) {
            throw ValueError("CURVPROBE_SEED is not a valid integer: " + std::string(s));
        }
    }
    return 0;
}

struct CommonArgs {
    std::string data;
    std::string format = "cifar";
    std::string out;
    uint64_t seed = 0;
    int jobs = 1;
    int64_t subset_n = 0;  // 0 = whole dataset
};

void add_common(CLI::App* cmd, CommonArgs& c, bool needs_data = true) {
    if (needs_data)
        cmd->add_option("--data", c.data, "dataset path (idx images file, cifar .bin file or directory)")
            ->required();
    cmd->add_option("--format", c.format, "dataset format: idx or cifar")
        ->check(CLI::IsMember({"idx", "cifar", "cifar-binary"}));
    cmd->add_option("--out", c.out, "output directory for artifacts")->required();
    cmd->add_option("--seed", c.seed, "global seed (default: CURVPROBE_SEED or 0)");
    cmd->add_option("--jobs", c.jobs, "worker threads for per-sample fan-out")
        ->check(CLI::Range(1, 256));
    cmd->add_option("--subset", c.subset_n, "analyze a seeded subset of this size (0 = all)");
}

Dataset load_and_subset(const CommonArgs& c) {
    Dataset ds = load_dataset(c.data, data_format_from_name(c.format));
    if (c.subset_n > 0 && size_t(c.subset_n) < ds.size())
        ds = subset(ds, size_t(c.subset_n), c.seed).data;
    return ds;
}

void add_travel_flags(CLI::App* cmd, TravelParams& tp) {
    cmd->add_option("--eps-i", tp.eps_init, "initial travel length");
    cmd->add_option("--eps-d", tp.eps_decay, "decay factor on a misclassified probe");
    cmd->add_option("--eps-t", tp.eps_tol, "relative bracket-width tolerance");
    cmd->add_option("--eps-max", tp.eps_max, "growth cap while no crossing is found");
    cmd->add_option("--max-iter", tp.max_iters, "probe budget per travel");
    cmd->add_flag("--literal-alg", tp.literal_alg,
                  "run the published travel loop verbatim (for comparison)");
}

// Every artifact set carries a manifest sufficient to reproduce it.
struct ManifestWriter {
    json args = json::object();
    std::string subcommand;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    void set(const std::string& key, const json& value) { args[key] = value; }

    void write(const std::string& out_dir) const {
        json m;
        m["tool"] = "curvprobe";
        m["version"] = kVersion;
        m["subcommand"] = subcommand;
        m["args"] = args;
        m["duration_seconds"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::ofstream f(out_dir + "/manifest.json", std::ios::trunc);
        if (!f) throw Error("manifest: cannot open for writing: " + out_dir + "/manifest.json");
        f << m.dump(2) << "\n";
    }
};

void common_to_manifest(ManifestWriter& mw, const CommonArgs& c, bool has_data = true) {
    if (has_data) {
        mw.set("data", c.data);
        mw.set("format", c.format);
    }
    mw.set("out", c.out);
    mw.set("seed", c.seed);
    mw.set("jobs", c.jobs);
    mw.set("subset", c.subset_n);
}

void travel_to_manifest(ManifestWriter& mw, const TravelParams& tp) {
    mw.set("eps-i", tp.eps_init);
    mw.set("eps-d", tp.eps_decay);
    mw.set("eps-t", tp.eps_tol);
    mw.set("eps-max", tp.eps_max);
    mw.set("max-iter", tp.max_iters);
    mw.set("literal-alg", tp.literal_alg);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    CommonArgs common;
    std::string arch = "cnn";
    TrainConfig cfg;
    std::string optimizer = "adamw";
    int64_t train_subset = 0;
};

int run_train(const TrainArgs& a) {
    ManifestWriter mw;
    mw.subcommand = "train";
    common_to_manifest(mw, a.common);
    mw.set("arch", a.arch);
    mw.set("epochs", a.cfg.epochs);
    mw.set("batch", a.cfg.batch_size);
    mw.set("lr", a.cfg.lr);
    mw.set("wd", a.cfg.weight_decay);
    mw.set("ckpt-every", a.cfg.ckpt_every);
    mw.set("track-n", int64_t(a.cfg.track_n));
    mw.set("optimizer", a.optimizer);
    mw.set("cosine-lr", a.cfg.cosine_lr);
    mw.set("theta-step", a.cfg.theta_step);

    Dataset ds = load_and_subset(a.common);
    fs::create_directories(a.common.out);

    ArchConfig arch;
    arch.arch = arch_from_name(a.arch);
    arch.in_channels = ds.channels;
    arch.height = ds.height;
    arch.width = ds.width;
    arch.num_classes = ds.num_classes;
    auto model = Classifier::create(arch, a.common.seed);

    TrainConfig cfg = a.cfg;
    cfg.optimizer = a.optimizer == "sgd" ? TrainConfig::Optimizer::sgd
                                         : TrainConfig::Optimizer::adamw;
    cfg.seed = a.common.seed;
    cfg.jobs = a.common.jobs;
    cfg.out_dir = a.common.out;

    auto res = train(model, ds, cfg);

    {
        CsvWriter w({"epoch", "mean_loss"});
        for (size_t e = 0; e < res.epoch_mean_loss.size(); ++e)
            w.row({int64_t(e + 1), res.epoch_mean_loss[e]});
        w.save(a.common.out + "/train_log.csv");
    }
    auto rep = dynamics_report(res.log);
    {
        std::vector<std::string> header{"sample_id", "final_theta1"};
        for (int e : rep.matrix.interval_end_epochs)
            header.push_back("dloss_to_epoch_" + std::to_string(e));
        CsvWriter w(header);
        for (size_t r = 0; r < rep.matrix.sample_ids.size(); ++r) {
            std::vector<CsvCell> cells{rep.matrix.sample_ids[r],
                                       csv_opt(rep.matrix.final_theta1[r])};
            for (float v : rep.matrix.delta[r]) cells.push_back(v);
            w.row(cells);
        }
        w.save(a.common.out + "/dynamics_loss_matrix.csv");
    }
    {
        CsvWriter w({"sample_id", "epoch", "loss_at_epoch", "loss_change_to_end", "final_theta1"});
        for (const auto& r : rep.loss_rows)
            w.row({r.sample_id, int64_t(r.epoch), r.loss_at_epoch, r.loss_change_to_end,
                   csv_opt(r.final_theta1)});
        w.save(a.common.out + "/dynamics_loss_scatter.csv");
    }
    {
        CsvWriter w({"sample_id", "epoch", "theta1_at_epoch", "final_theta1"});
        for (const auto& r : rep.theta_rows)
            w.row({r.sample_id, int64_t(r.epoch), csv_opt(r.theta1_at_epoch),
                   csv_opt(r.final_theta1)});
        w.save(a.common.out + "/dynamics_theta_scatter.csv");
    }
    {
        SvgPlot plot("training loss", "epoch", "mean loss");
        std::vector<std::array<double, 2>> pts;
        for (size_t e = 0; e < res.epoch_mean_loss.size(); ++e)
            pts.push_back({double(e + 1), res.epoch_mean_loss[e]});
        plot.polyline(pts, "#1f77b4");
        plot.save(a.common.out + "/train_loss.svg");
    }
    mw.write(a.common.out);
    std::cout << "trained " << a.arch << " for " << cfg.epochs << " epochs; "
              << res.checkpoint_paths.size() << " checkpoints in " << a.common.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

struct CalibrateArgs {
    CommonArgs common;
    std::string model;
    int bins = 10;
};

int run_calibrate(const CalibrateArgs& a) {
    ManifestWriter mw;
    mw.subcommand = "calibrate";
    common_to_manifest(mw, a.common);
    mw.set("model", a.model);
    mw.set("bins", a.bins);

    Dataset ds = load_and_subset(a.common);
    auto model = load_checkpoint(a.model).model;
    fs::create_directories(a.common.out);

    std::vector<PredictionOutcome> outcomes(ds.size());
    const size_t chunk = 256;
    for (size_t base = 0; base < ds.size(); base += chunk) {
        const size_t n = std::min(chunk, ds.size() - base);
        std::vector<size_t> idx(n);
        for (size_t i = 0; i < n; ++i) idx[i] = base + i;
        auto preds = model.predict(ds.batch(idx));
        for (size_t i = 0; i < n; ++i)
            outcomes[base + i] = {preds[i].confidence, preds[i].label == ds.labels[base + i]};
    }
    auto report = calibrate(outcomes, a.bins);

    {
        CsvWriter w({"bin", "lo", "hi", "count", "fraction", "accuracy", "mean_confidence"});
        for (size_t i = 0; i < report.bins.size(); ++i) {
            const auto& b = report.bins[i];
            w.row({int64_t(i + 1), b.lo, b.hi, int64_t(b.count), b.fraction, b.accuracy,
                   b.mean_confidence});
        }
        w.save(a.common.out + "/calibration.csv");
    }
    {
        auto rows = reliability_rows(report);
        SvgPlot plot("reliability diagram", "confidence", "accuracy");
        std::vector<std::array<double, 2>> bars;
        std::vector<double> opac;
        size_t max_count = 1;
        for (const auto& r : rows) max_count = std::max(max_count, r.count);
        for (const auto& r : rows) {
            bars.push_back({r.bin_center, r.accuracy});
            opac.push_back(r.count == 0 ? 0.0 : 0.15 + 0.85 * double(r.count) / double(max_count));
        }
        plot.bars(bars, 1.0 / double(a.bins), "#1f77b4", opac);
        plot.diagonal();
        plot.save(a.common.out + "/reliability.svg");
    }
    mw.set("ece", report.ece);
    mw.set("sece", report.sece);
    mw.write(a.common.out);
    std::cout << "ECE=" << report.ece << " sECE=" << report.sece << " over " << ds.size()
              << " samples (K=" << a.bins << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// boundary
// ---------------------------------------------------------------------------

struct BoundaryArgs {
    CommonArgs common;
    std::string model;
    std::string mode = "fgsm";
    double eps_r = 0.05;
    TravelParams travel;
};

int run_boundary(const BoundaryArgs& a) {
    ManifestWriter mw;
    mw.subcommand = "boundary";
    common_to_manifest(mw, a.common);
    mw.set("model", a.model);
    mw.set("mode", a.mode);
    mw.set("eps-r", a.eps_r);
    travel_to_manifest(mw, a.travel);

    Dataset ds = load_and_subset(a.common);
    auto model = load_checkpoint(a.model).model;
    fs::create_directories(a.common.out);

    const DirectionMode mode = mode_from_name(a.mode);
    EpsVsConfidence result;
    if (mode == DirectionMode::fgsm) {
        result = epsilon_vs_confidence(model, ds, a.travel, a.common.jobs);
    } else {
        // generic-direction variant of the same sweep
        std::vector<Prediction> preds(ds.size());
        const size_t chunk = 256;
        for (size_t base = 0; base < ds.size(); base += chunk) {
            const size_t n = std::min(chunk, ds.size() - base);
            std::vector<size_t> idx(n);
            for (size_t i = 0; i < n; ++i) idx[i] = base + i;
            auto p = model.predict(ds.batch(idx));
            std::copy(p.begin(), p.end(), preds.begin() + int64_t(base));
        }
        std::vector<size_t> correct;
        for (size_t i = 0; i < ds.size(); ++i) {
            if (preds[i].label == ds.labels[i])
                correct.push_back(i);
            else
                result.skipped_incorrect++;
        }
        result.rows.resize(correct.size());
        parallel_for(correct.size(), a.common.jobs, [&](size_t j) {
            const size_t i = correct[j];
            DirectionSpec spec;
            spec.mode = mode;
            spec.eps_r = a.eps_r;
            spec.seed = mix_seed(a.common.seed, uint64_t(i), uint64_t(mode));
            ConfidenceEpsRow row{int64_t(i), preds[i].confidence, 0.0, false};
            try {
                const auto md = make_direction(model, ds.image(i), ds.labels[i], spec);
                if (predict_traveled(model, md.start, md.d, 0.0) == ds.labels[i]) {
                    auto tr = travel_to_boundary(model, md.start, ds.labels[i], md.d, a.travel);
                    row.crossed = tr.crossed;
                    row.eps_star = tr.crossed ? tr.eps_star : 0.0;
                } else {
                    row.crossed = true;  // the jump itself crossed
                    row.eps_star = 0.0;
                }
            } catch (const Error&) {
            }
            result.rows[j] = row;
        });
        constexpr int kBins = 10;
        std::vector<double> sums(kBins, 0.0);
        std::vector<size_t> counts(kBins, 0);
        for (const auto& row : result.rows) {
            if (!row.crossed) continue;
            const int b = std::min(kBins - 1, int(row.confidence * kBins));
            sums[size_t(b)] += row.eps_star;
            counts[size_t(b)]++;
        }
        for (int b = 0; b < kBins; ++b)
            result.bin_means.push_back(
                {(b + 0.5) / kBins,
                 counts[size_t(b)] ? sums[size_t(b)] / double(counts[size_t(b)]) : 0.0,
                 counts[size_t(b)]});
    }

    {
        CsvWriter w({"sample_id", "confidence", "eps_star", "crossed"});
        for (const auto& r : result.rows)
            w.row({r.sample_id, r.confidence, r.eps_star, r.crossed});
        w.save(a.common.out + "/boundary.csv");
    }
    {
        CsvWriter w({"bin_center", "mean_eps", "count"});
        for (const auto& b : result.bin_means)
            w.row({b.bin_center, b.mean_eps, int64_t(b.count)});
        w.save(a.common.out + "/boundary_bin_means.csv");
    }
    {
        SvgPlot plot("travel length to the boundary", "confidence", "eps");
        std::vector<std::array<double, 2>> pts;
        for (const auto& r : result.rows)
            if (r.crossed) pts.push_back({r.confidence, r.eps_star});
        plot.points(pts, "#1f77b4", 2.0, 0.45);
        std::vector<std::array<double, 2>> means;
        for (const auto& b : result.bin_means)
            if (b.count > 0) means.push_back({b.bin_center, b.mean_eps});
        plot.polyline(means, "#000000", 2.0);
        plot.save(a.common.out + "/confidence_vs_eps.svg");
    }
    mw.set("skipped_incorrect", int64_t(result.skipped_incorrect));
    mw.write(a.common.out);
    std::cout << "boundary travel (" << a.mode << "): " << result.rows.size() << " samples, "
              << result.skipped_incorrect << " skipped as misclassified\n";
    return 0;
}

// ---------------------------------------------------------------------------
// trajectory
// ---------------------------------------------------------------------------

struct TrajectoryArgs {
    CommonArgs common;
    std::string model;
    std::string modes = "fgsm,rand,fgsm_perp,rand_jump_fgsm";
    int n_steps = 50;
    double step = 0.002;
    double eps_r = 0.05;
    std::string seeds = "1,2";
    TravelParams travel;
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

int run_trajectory_cmd(const TrajectoryArgs& a) {
    ManifestWriter mw;
    mw.subcommand = "trajectory";
    common_to_manifest(mw, a.common);
    mw.set("model", a.model);
    mw.set("modes", a.modes);
    mw.set("n-steps", a.n_steps);
    mw.set("step", a.step);
    mw.set("eps-r", a.eps_r);
    mw.set("seeds", a.seeds);
    travel_to_manifest(mw, a.travel);

    Dataset ds = load_and_subset(a.common);
    auto model = load_checkpoint(a.model).model;
    fs::create_directories(a.common.out);

    std::vector<DirectionMode> modes;
    for (const auto& m : split_list(a.modes)) modes.push_back(mode_from_name(m));

    // whole-travel records: boundary distance + trajectory at travel eps
    auto report = boundary_distance_report(model, ds, modes, a.travel, a.n_steps, a.eps_r,
                                           a.common.seed, a.common.jobs);

    // fixed-step records at the configured eps/N for the early-step tables
    // and the two-seed theta1 pairing
    const auto seeds = split_list(a.seeds);
    if (seeds.size() < 2) throw ValueError("trajectory: --seeds needs two comma-separated seeds");
    const uint64_t seed_a = std::stoull(seeds[0]);
    const uint64_t seed_b = std::stoull(seeds[1]);

    std::vector<size_t> correct;
    {
        const size_t chunk = 256;
        std::vector<Prediction> preds(ds.size());
        for (size_t base = 0; base < ds.size(); base += chunk) {
            const size_t n = std::min(chunk, ds.size() - base);
            std::vector<size_t> idx(n);
            for (size_t i = 0; i < n; ++i) idx[i] = base + i;
            auto p = model.predict(ds.batch(idx));
            std::copy(p.begin(), p.end(), preds.begin() + int64_t(base));
        }
        for (size_t i = 0; i < ds.size(); ++i)
            if (preds[i].label == ds.labels[i]) correct.push_back(i);
    }

    const int early_steps = 5;  // theta^(1..4) needs z^(0..5)
    auto run_fixed = [&](DirectionMode mode, uint64_t seed) {
        std::vector<TrajectoryRecord> recs(correct.size());
        parallel_for(correct.size(), a.common.jobs, [&](size_t j) {
            const size_t i = correct[j];
            DirectionSpec spec;
            spec.mode = mode;
            spec.eps_r = a.eps_r;
            spec.seed = mix_seed(seed, uint64_t(i), uint64_t(mode));
            try {
                auto rec = run_trajectory(model, ds.image(i), ds.labels[i], spec, early_steps,
                                          a.step * early_steps);
                rec.sample_id = int64_t(i);
                recs[j] = std::move(rec);
            } catch (const Error&) {
                recs[j].sample_id = int64_t(i);
                recs[j].mode = mode;
            }
        });
        return recs;
    };

    std::vector<TrajectoryRecord> early_records;
    for (DirectionMode mode : modes) {
        auto recs = run_fixed(mode, seed_a);
        early_records.insert(early_records.end(), recs.begin(), recs.end());
    }
    auto rand_a = run_fixed(DirectionMode::rand, seed_a);
    auto rand_b = run_fixed(DirectionMode::rand, seed_b);
    auto pairs = pair_theta1(rand_a, rand_b);

    auto stats_whole = curvedness_stats(report.records);
    auto stats_early = curvedness_stats(early_records);

    // trajectory.csv: long format over the whole-travel records
    {
        CsvWriter w({"sample_id", "mode", "n", "omega", "theta", "epsilon", "repr_distance",
                     "theta1", "total_turn", "confidence", "crossed"});
        for (const auto& r : report.records) {
            for (size_t n = 0; n < r.omega.size(); ++n) {
                const std::optional<double> th =
                    n < r.theta.size() ? r.theta[n] : std::optional<double>{};
                w.row({r.sample_id, mode_name(r.mode), int64_t(n + 1), r.omega[n], csv_opt(th),
                       r.eps, r.repr_distance, csv_opt(r.theta1), r.total_turn, r.confidence,
                       r.crossed});
            }
        }
        w.save(a.common.out + "/trajectory.csv");
    }
    {
        CsvWriter w({"mode", "pearson_theta1_total_turn", "count"});
        for (const auto& c : stats_whole.correlations)
            w.row({mode_name(c.mode), csv_opt(c.correlation), int64_t(c.count)});
        w.save(a.common.out + "/curvedness_correlations.csv");
    }
    {
        CsvWriter w({"sample_id", "mode", "step", "omega", "theta"});
        for (const auto& r : stats_early.early_steps)
            w.row({r.sample_id, mode_name(r.mode), int64_t(r.step), r.omega, csv_opt(r.theta)});
        w.save(a.common.out + "/early_steps.csv");
    }
    {
        CsvWriter w({"sample_id", "theta1_seed_a", "theta1_seed_b"});
        for (const auto& p : pairs)
            w.row({p.sample_id, csv_opt(p.theta1_a), csv_opt(p.theta1_b)});
        w.save(a.common.out + "/theta_pairs.csv");
    }
    {
        CsvWriter w({"sample_id", "mode", "confidence", "repr_distance", "theta1"});
        for (const auto& r : stats_whole.joint)
            w.row({r.sample_id, mode_name(r.mode), r.confidence, r.repr_distance,
                   csv_opt(r.theta1)});
        w.save(a.common.out + "/joint_confidence_distance_theta.csv");
    }
    {
        std::vector<std::string> header{"sample_id", "mode", "omega_sum"};
        for (int n = 1; n <= a.n_steps; ++n) header.push_back("w" + std::to_string(n));
        CsvWriter w(header);
        for (const auto& p : stats_whole.profiles) {
            std::vector<CsvCell> cells{p.sample_id, mode_name(p.mode), p.omega_sum};
            for (int n = 0; n < a.n_steps; ++n)
                cells.push_back(n < int(p.omega_normalized.size()) ? CsvCell(p.omega_normalized[size_t(n)])
                                                                   : CsvCell(std::monostate{}));
            w.row(cells);
        }
        w.save(a.common.out + "/profiles_omega.csv");
    }
    {
        std::vector<std::string> header{"sample_id", "mode"};
        for (int n = 1; n < a.n_steps; ++n) header.push_back("t" + std::to_string(n));
        CsvWriter w(header);
        for (const auto& p : stats_whole.profiles) {
            std::vector<CsvCell> cells{p.sample_id, mode_name(p.mode)};
            for (int n = 0; n + 1 < a.n_steps; ++n)
                cells.push_back(n < int(p.theta.size()) ? csv_opt(p.theta[size_t(n)])
                                                        : CsvCell(std::monostate{}));
            w.row(cells);
        }
        w.save(a.common.out + "/profiles_theta.csv");
    }
    {
        CsvWriter w({"sample_id", "mode", "eps_star", "repr_distance", "theta1", "confidence",
                     "crossed"});
        for (const auto& r : report.rows)
            w.row({r.sample_id, mode_name(r.mode), r.eps_star, r.repr_distance,
                   csv_opt(r.theta1), r.confidence, r.crossed});
        w.save(a.common.out + "/boundary_distance.csv");
    }
    if (!report.jump_pairs.empty()) {
        CsvWriter w({"sample_id", "eps_fgsm", "eps_rand_jump_fgsm", "both_crossed", "theta1_fgsm"});
        for (const auto& p : report.jump_pairs)
            w.row({p.sample_id, p.eps_fgsm, p.eps_jump, p.both_crossed, csv_opt(p.theta1_fgsm)});
        w.save(a.common.out + "/eps_jump_pairs.csv");
    }

    // plots: per-mode representation-space distance histograms, the
    // confidence/distance/theta scatter, early-step theta histogram,
    // two-seed theta pairing
    for (DirectionMode mode : modes) {
        std::vector<double> dists;
        for (const auto& r : report.rows)
            if (r.mode == mode && r.crossed) dists.push_back(r.repr_distance);
        if (dists.empty()) continue;
        const int nbins = 30;
        double lo = *std::min_element(dists.begin(), dists.end());
        double hi = *std::max_element(dists.begin(), dists.end());
        if (hi == lo) hi = lo + 1.0;
        std::vector<std::array<double, 2>> bars(nbins);
        for (int b = 0; b < nbins; ++b)
            bars[size_t(b)] = {lo + (b + 0.5) * (hi - lo) / nbins, 0.0};
        for (double d : dists) {
            int b = std::min(nbins - 1, int((d - lo) / (hi - lo) * nbins));
            bars[size_t(b)][1] += 1.0;
        }
        SvgPlot plot("distance to boundary in representation space (" + mode_name(mode) + ")",
                     "||z_N - z_0||", "count");
        plot.bars(bars, (hi - lo) / nbins, "#1f77b4");
        plot.save(a.common.out + "/distance_hist_" + mode_name(mode) + ".svg");
    }
    {
        SvgPlot plot("confidence vs representation distance", "confidence", "||z_N - z_0||");
        std::vector<std::array<double, 2>> low_turn, high_turn;
        for (const auto& r : stats_whole.joint) {
            if (r.mode != modes.front() || !r.theta1) continue;
            (*r.theta1 >= 0.785398 ? high_turn : low_turn)
                .push_back({r.confidence, r.repr_distance});
        }
        plot.points(low_turn, "#d4a017", 2.5, 0.6);   // flatter regions
        plot.points(high_turn, "#2e8b57", 2.5, 0.6);  // curved regions
        plot.save(a.common.out + "/confidence_distance_theta.svg");
    }
    {
        std::vector<std::array<double, 2>> pts;
        for (const auto& p : pairs)
            if (p.theta1_a && p.theta1_b) pts.push_back({*p.theta1_a, *p.theta1_b});
        SvgPlot plot("theta1 under two random directions", "seed a", "seed b");
        plot.points(pts, "#1f77b4", 2.5, 0.6);
        plot.diagonal();
        plot.save(a.common.out + "/theta_pairs.svg");
    }

    mw.set("skipped_incorrect", int64_t(report.skipped_incorrect));
    mw.write(a.common.out);
    std::cout << "trajectory: " << report.records.size() << " whole-travel records, "
              << early_records.size() << " fixed-step records, " << pairs.size()
              << " theta1 pairs\n";
    for (const auto& c : stats_whole.correlations) {
        std::cout << "  corr(theta1, total_turn) " << mode_name(c.mode) << ": ";
        if (c.correlation)
            std::cout << *c.correlation;
        else
            std::cout << "undefined";
        std::cout << " (n=" << c.count << ")\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// attack
// ---------------------------------------------------------------------------

struct AttackArgs {
    CommonArgs common;
    std::string model;
    std::string kind = "ifgsm";
    double eps = 0.002;
    int iters = 10;
    double eps_r = 0.05;
    int theta_bins = 10;
    double theta_step = 0.002;
    TravelParams travel;
};

int run_attack(const AttackArgs& a) {
    ManifestWriter mw;
    mw.subcommand = "attack";
    common_to_manifest(mw, a.common);
    mw.set("model", a.model);
    mw.set("kind", a.kind);
    mw.set("eps", a.eps);
    mw.set("iters", a.iters);
    mw.set("eps-r", a.eps_r);
    mw.set("theta-bins", a.theta_bins);
    mw.set("theta-step", a.theta_step);
    travel_to_manifest(mw, a.travel);

    Dataset ds = load_and_subset(a.common);
    auto model = load_checkpoint(a.model).model;
    fs::create_directories(a.common.out);

    AttackConfig cfg;
    cfg.kind = attack_from_name(a.kind);
    cfg.eps = a.eps;
    cfg.iters = a.iters;
    cfg.eps_r = a.eps_r;
    cfg.seed = a.common.seed;
    cfg.travel = a.travel;

    // theta1 per sample: fgsm direction, two fixed steps
    std::vector<Prediction> preds(ds.size());
    {
        const size_t chunk = 256;
        for (size_t base = 0; base < ds.size(); base += chunk) {
            const size_t n = std::min(chunk, ds.size() - base);
            std::vector<size_t> idx(n);
            for (size_t i = 0; i < n; ++i) idx[i] = base + i;
            auto p = model.predict(ds.batch(idx));
            std::copy(p.begin(), p.end(), preds.begin() + int64_t(base));
        }
    }
    std::vector<size_t> correct;
    for (size_t i = 0; i < ds.size(); ++i)
        if (preds[i].label == ds.labels[i]) correct.push_back(i);

    std::vector<TrajectoryRecord> records(correct.size());
    parallel_for(correct.size(), a.common.jobs, [&](size_t j) {
        const size_t i = correct[j];
        DirectionSpec spec;
        spec.seed = mix_seed(a.common.seed, uint64_t(i), 0x7e7a);
        try {
            auto rec = run_trajectory(model, ds.image(i), ds.labels[i], spec, 2,
                                      2.0 * a.theta_step);
            rec.sample_id = int64_t(i);
            records[j] = std::move(rec);
        } catch (const Error&) {
            records[j].sample_id = int64_t(i);
        }
    });

    struct Row {
        AttackResult res;
        std::optional<double> theta1;
        int64_t id = 0;
        bool ran = false;
    };
    std::vector<Row> rows(correct.size());
    parallel_for(correct.size(), a.common.jobs, [&](size_t j) {
        const size_t i = correct[j];
        AttackConfig per = cfg;
        per.seed = mix_seed(cfg.seed, uint64_t(i));
        rows[j].id = int64_t(i);
        rows[j].theta1 = records[j].theta1;
        try {
            rows[j].res = cfg.kind == AttackKind::rand_jump
                              ? rand_jump_attack(model, ds.image(i), ds.labels[i], per)
                              : ifgsm(model, ds.image(i), ds.labels[i], per);
            rows[j].ran = true;
        } catch (const Error&) {
            rows[j].ran = false;
        }
    });

    {
        CsvWriter w({"sample_id", "kind", "eps_budget", "eps_used", "psnr_db", "success",
                     "label_before", "label_after", "theta1"});
        for (const auto& r : rows) {
            if (!r.ran) continue;
            w.row({r.id, a.kind, a.eps, r.res.eps_used, r.res.psnr_db, r.res.success,
                   int64_t(r.res.label_before), int64_t(r.res.label_after), csv_opt(r.theta1)});
        }
        w.save(a.common.out + "/attacks.csv");
    }
    auto rep = robustness_by_curvedness(model, ds, cfg, records, a.theta_bins, a.common.jobs);
    {
        CsvWriter w({"theta_lo", "theta_hi", "count", "accuracy_after_attack"});
        for (const auto& b : rep.bins)
            w.row({b.lo, b.hi, int64_t(b.count), b.accuracy});
        w.save(a.common.out + "/robustness_by_theta.csv");
    }
    {
        SvgPlot plot("accuracy after attack vs theta1", "theta1", "accuracy");
        std::vector<std::array<double, 2>> bars;
        std::vector<double> opac;
        size_t max_count = 1;
        for (const auto& b : rep.bins) max_count = std::max(max_count, b.count);
        for (const auto& b : rep.bins) {
            bars.push_back({0.5 * (b.lo + b.hi), b.accuracy});
            opac.push_back(b.count == 0 ? 0.0 : 0.15 + 0.85 * double(b.count) / double(max_count));
        }
        plot.bars(bars, rep.bins.empty() ? 0.1 : (rep.bins[0].hi - rep.bins[0].lo) * 0.9,
                  "#1f77b4", opac);
        std::vector<std::array<double, 2>> overall{{0.0, rep.overall_accuracy},
                                                   {3.14159265, rep.overall_accuracy}};
        plot.polyline(overall, "#d62728", 1.5);
        plot.save(a.common.out + "/robustness_by_theta.svg");
    }
    // Fig.-16 analogue when the jump pipeline runs: pair each sample's plain
    // FGSM travel length against the jumped travel length.
    if (cfg.kind == AttackKind::rand_jump) {
        std::vector<std::array<double, 2>> pts;
        CsvWriter w({"sample_id", "eps_fgsm_travel", "eps_after_jump", "theta1"});
        std::vector<std::optional<double>> plain(correct.size());
        parallel_for(correct.size(), a.common.jobs, [&](size_t j) {
            const size_t i = correct[j];
            try {
                const auto d = fgsm_direction(model, ds.image(i), ds.labels[i]);
                auto tr = travel_to_boundary(model, ds.image(i), ds.labels[i], d, a.travel);
                if (tr.crossed) plain[j] = tr.eps_star;
            } catch (const Error&) {
            }
        });
        for (size_t j = 0; j < rows.size(); ++j) {
            if (!rows[j].ran || !rows[j].res.success || !plain[j]) continue;
            w.row({rows[j].id, *plain[j], rows[j].res.eps_used, csv_opt(rows[j].theta1)});
            pts.push_back({*plain[j], rows[j].res.eps_used});
        }
        w.save(a.common.out + "/eps_before_after_jump.csv");
        SvgPlot plot("travel length, original vs jumped", "eps (original)", "eps (after jump)");
        plot.points(pts, "#1f77b4", 2.5, 0.6);
        plot.diagonal();
        plot.save(a.common.out + "/eps_before_after_jump.svg");
    }
    mw.set("overall_accuracy_after_attack", rep.overall_accuracy);
    mw.write(a.common.out);
    std::cout << "attack " << a.kind << ": " << rep.attacked << " samples attacked, accuracy after "
              << rep.overall_accuracy << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// gridviz
// ---------------------------------------------------------------------------

struct GridArgs {
    CommonArgs common;
    std::string model;
    int64_t image_index = 0;
    GridVizConfig cfg;
    std::string basis = "pca_top2";
};

int run_gridviz(const GridArgs& a) {
    ManifestWriter mw;
    mw.subcommand = "gridviz";
    common_to_manifest(mw, a.common);
    mw.set("model", a.model);
    mw.set("image", a.image_index);
    mw.set("alpha", a.cfg.alpha);
    mw.set("n", a.cfg.n_half);
    mw.set("basis", a.basis);
    mw.set("eps-r", a.cfg.eps_r);

    Dataset ds = load_and_subset(a.common);
    auto model = load_checkpoint(a.model).model;
    fs::create_directories(a.common.out);
    if (a.image_index < 0 || size_t(a.image_index) >= ds.size())
        throw ValueError("gridviz: --image index out of range (dataset has " +
                         std::to_string(ds.size()) + " samples)");

    GridVizConfig cfg = a.cfg;
    cfg.basis = basis_from_name(a.basis);
    cfg.seed = a.common.seed;
    const auto x = ds.image(size_t(a.image_index));
    const int y = ds.labels[size_t(a.image_index)];
    auto grid = grid_features(model, x, y, cfg);
    auto proj = project2d(grid, cfg.basis, cfg.seed);

    {
        CsvWriter w({"i", "j", "px", "py"});
        const int N = grid.n_half;
        for (int i = -N; i <= N; ++i)
            for (int j = -N; j <= N; ++j) {
                const auto& p = proj.points[size_t(i + N) * grid.side() + size_t(j + N)];
                w.row({int64_t(i), int64_t(j), p[0], p[1]});
            }
        w.save(a.common.out + "/grid.csv");
    }
    {
        SvgPlot plot("projected feature grid (alpha=" + std::to_string(grid.alpha) + ")",
                     "p1", "p2");
        plot.grid_net(proj.points, grid.n_half, "#1f77b4");
        plot.save(a.common.out + "/grid.svg");
    }
    mw.set("alpha_used", grid.alpha);
    mw.set("pca_fallback", proj.pca_fallback);
    mw.write(a.common.out);
    std::cout << "gridviz: " << grid.z.size() << " grid points, alpha " << grid.alpha
              << (proj.pca_fallback ? " (pca degenerate; random basis used)" : "") << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// rerun from manifest
// ---------------------------------------------------------------------------

int dispatch(std::vector<std::string> argv_vec);

int run_rerun(const std::string& manifest_path, const std::string& out_override) {
    std::ifstream f(manifest_path);
    if (!f) throw Error("rerun: cannot open manifest: " + manifest_path);
    json m = json::parse(f);
    std::vector<std::string> argv_vec{m.at("subcommand").get<std::string>()};
    for (const auto& [key, value] : m.at("args").items()) {
        // derived outputs recorded for the reader, not replayable flags
        if (key == "skipped_incorrect" || key == "ece" || key == "sece" ||
            key == "alpha_used" || key == "pca_fallback" ||
            key == "overall_accuracy_after_attack")
            continue;
        if (value.is_boolean()) {
            if (value.get<bool>()) argv_vec.push_back("--" + key);
            continue;
        }
        argv_vec.push_back("--" + key);
        if (value.is_string())
            argv_vec.push_back(value.get<std::string>());
        else
            argv_vec.push_back(value.dump());
    }
    if (!out_override.empty()) {
        for (size_t i = 0; i + 1 < argv_vec.size(); ++i)
            if (argv_vec[i] == "--out") argv_vec[i + 1] = out_override;
    }
    return dispatch(std::move(argv_vec));
}

int dispatch(std::vector<std::string> argv_vec) {
    CLI::App app{"curvature probing toolkit for desk-scale classifiers"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    TrainArgs train_args;
    train_args.common.seed = env_seed_default();
    auto* cmd_train = app.add_subcommand("train", "train a classifier and log per-sample dynamics");
    add_common(cmd_train, train_args.common);
    cmd_train->add_option("--arch", train_args.arch, "cnn or vit")
        ->check(CLI::IsMember({"cnn", "vit"}));
    cmd_train->add_option("--epochs", train_args.cfg.epochs, "training epochs");
    cmd_train->add_option("--batch", train_args.cfg.batch_size, "batch size");
    cmd_train->add_option("--lr", train_args.cfg.lr, "learning rate");
    cmd_train->add_option("--wd", train_args.cfg.weight_decay, "weight decay");
    cmd_train->add_option("--ckpt-every", train_args.cfg.ckpt_every, "checkpoint period in epochs");
    cmd_train->add_option("--track-n", train_args.cfg.track_n, "tracked-subset size for dynamics");
    cmd_train->add_option("--optimizer", train_args.optimizer, "adamw or sgd")
        ->check(CLI::IsMember({"adamw", "sgd"}));
    cmd_train->add_flag("--cosine-lr", train_args.cfg.cosine_lr, "cosine learning-rate schedule");
    cmd_train->add_option("--theta-step", train_args.cfg.theta_step,
                          "input step (eps/N) for theta1 snapshots");

    CalibrateArgs cal_args;
    cal_args.common.seed = env_seed_default();
    auto* cmd_cal = app.add_subcommand("calibrate", "confidence binning, ECE and signed ECE");
    add_common(cmd_cal, cal_args.common);
    cmd_cal->add_option("--model", cal_args.model, "checkpoint path")->required();
    cmd_cal->add_option("--bins", cal_args.bins, "confidence bin count K");

    BoundaryArgs bd_args;
    bd_args.common.seed = env_seed_default();
    auto* cmd_bd = app.add_subcommand("boundary", "linear travel lengths to the decision boundary");
    add_common(cmd_bd, bd_args.common);
    cmd_bd->add_option("--model", bd_args.model, "checkpoint path")->required();
    cmd_bd->add_option("--mode", bd_args.mode,
                       "direction: fgsm, rand, fgsm_perp, rand_jump_fgsm, fgsm_jump_fgsm");
    cmd_bd->add_option("--eps-r", bd_args.eps_r, "jump magnitude for jump modes");
    add_travel_flags(cmd_bd, bd_args.travel);

    TrajectoryArgs tj_args;
    tj_args.common.seed = env_seed_default();
    auto* cmd_tj = app.add_subcommand(
        "trajectory", "step travels in increments and measure feature-space curvedness");
    add_common(cmd_tj, tj_args.common);
    cmd_tj->add_option("--model", tj_args.model, "checkpoint path")->required();
    cmd_tj->add_option("--modes", tj_args.modes, "comma list of direction modes");
    cmd_tj->add_option("--n-steps", tj_args.n_steps, "steps N for the whole travel");
    cmd_tj->add_option("--step", tj_args.step, "fixed eps/N for early-step tables");
    cmd_tj->add_option("--eps-r", tj_args.eps_r, "jump magnitude for jump modes");
    cmd_tj->add_option("--seeds", tj_args.seeds, "two seeds for the random-direction pairing");
    add_travel_flags(cmd_tj, tj_args.travel);

    AttackArgs at_args;
    at_args.common.seed = env_seed_default();
    auto* cmd_at = app.add_subcommand("attack", "FGSM, I-FGSM and random-jump attacks");
    add_common(cmd_at, at_args.common);
    cmd_at->add_option("--model", at_args.model, "checkpoint path")->required();
    cmd_at->add_option("--kind", at_args.kind, "fgsm, ifgsm or rand_jump_fgsm");
    cmd_at->add_option("--eps", at_args.eps, "l-inf budget (ifgsm) ");
    cmd_at->add_option("--iters", at_args.iters, "I-FGSM iterations T");
    cmd_at->add_option("--eps-r", at_args.eps_r, "random-jump magnitude");
    cmd_at->add_option("--theta-bins", at_args.theta_bins, "theta1 bins for the robustness table");
    cmd_at->add_option("--theta-step", at_args.theta_step, "theta1 snapshot step (eps/N)");
    add_travel_flags(cmd_at, at_args.travel);

    GridArgs gr_args;
    gr_args.common.seed = env_seed_default();
    auto* cmd_gr = app.add_subcommand("gridviz", "input-space grid projected in feature space");
    add_common(cmd_gr, gr_args.common);
    cmd_gr->add_option("--model", gr_args.model, "checkpoint path")->required();
    cmd_gr->add_option("--image", gr_args.image_index, "sample index of the grid center");
    cmd_gr->add_option("--alpha", gr_args.cfg.alpha, "grid extent (0 = auto from boundary travel)");
    cmd_gr->add_option("--n", gr_args.cfg.n_half, "grid half-width N ((2N+1)^2 points)");
    cmd_gr->add_option("--basis", gr_args.basis, "pca_top2 or random_orthonormal")
        ->check(CLI::IsMember({"pca_top2", "random_orthonormal"}));
    cmd_gr->add_option("--eps-r", gr_args.cfg.eps_r, "jump the grid center first");

    std::string rerun_manifest, rerun_out;
    auto* cmd_rr = app.add_subcommand("rerun", "re-execute a run from its manifest");
    cmd_rr->add_option("manifest", rerun_manifest, "manifest.json path")->required();
    cmd_rr->add_option("--out", rerun_out, "override the output directory");

    std::vector<const char*> argv_c;
    argv_c.push_back("curvprobe");
    for (const auto& s : argv_vec) argv_c.push_back(s.c_str());
    try {
        app.parse(int(argv_c.size()), argv_c.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // usage errors exit 2; --help/--version exit 0
    }

    if (cmd_train->parsed()) return run_train(train_args);
    if (cmd_cal->parsed()) return run_calibrate(cal_args);
    if (cmd_bd->parsed()) return run_boundary(bd_args);
    if (cmd_tj->parsed()) return run_trajectory_cmd(tj_args);
    if (cmd_at->parsed()) return run_attack(at_args);
    if (cmd_gr->parsed()) return run_gridviz(gr_args);
    if (cmd_rr->parsed()) return run_rerun(rerun_manifest, rerun_out);
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    try {
        return dispatch(std::move(args));
    } catch (const Error& e) {
        std::cerr << "curvprobe: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "curvprobe: unexpected failure: " << e.what() << "\n";
        return 1;
    }
}
