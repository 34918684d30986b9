#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "curvprobe/calibration.hpp"
#include "oracles.hpp"

using namespace curvprobe;

namespace {

std::vector<PredictionOutcome> random_preds(Rng& rng, size_t n) {
    std::vector<PredictionOutcome> out(n);
    for (auto& p : out) {
        p.confidence = std::min(1.0, 1e-9 + rng.uniform());
        p.correct = rng.uniform() < p.confidence * (0.5 + rng.uniform());
    }
    return out;
}

}  // namespace

TEST_CASE("perfectly calibrated bins give zero ECE and sECE") {
    // each bin: confidence equal to its realized accuracy
    std::vector<PredictionOutcome> preds;
    // 0.75-confidence bin: 4 samples, 3 correct -> accuracy .75
    for (int i = 0; i < 3; ++i) preds.push_back({0.75, true});
    preds.push_back({0.75, false});
    // 0.25-confidence bin: 4 samples, 1 correct
    for (int i = 0; i < 3; ++i) preds.push_back({0.25, false});
    preds.push_back({0.25, true});
    auto r = calibrate(preds, 4);
    CHECK(r.ece == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(r.sece == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("single-bin overconfident case") {
    // o=0.8, e=0.9, P=1 -> ECE = 0.1, sECE = -0.1
    std::vector<PredictionOutcome> preds;
    for (int i = 0; i < 8; ++i) preds.push_back({0.9, true});
    for (int i = 0; i < 2; ++i) preds.push_back({0.9, false});
    auto r = calibrate(preds, 1);
    CHECK(r.ece == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(r.sece == doctest::Approx(-0.1).epsilon(1e-12));
}

TEST_CASE("two-bin cancellation: ECE nonzero while sECE is zero") {
    // bin A: o-e = +0.1, bin B: o-e = -0.1, equal mass
    std::vector<PredictionOutcome> preds;
    // bin (0.2,0.4]: confidence .3, accuracy .4 -> +0.1 (10 samples, 4 correct)
    for (int i = 0; i < 4; ++i) preds.push_back({0.3, true});
    for (int i = 0; i < 6; ++i) preds.push_back({0.3, false});
    // bin (0.6,0.8]: confidence .7, accuracy .6 -> -0.1 (10 samples, 6 correct)
    for (int i = 0; i < 6; ++i) preds.push_back({0.7, true});
    for (int i = 0; i < 4; ++i) preds.push_back({0.7, false});
    auto r = calibrate(preds, 5);
    CHECK(r.ece == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(std::abs(r.sece) < 1e-15);
}

TEST_CASE("errors: empty input and out-of-range confidence") {
    CHECK_THROWS_AS(calibrate({}, 10), ValueError);
    std::vector<PredictionOutcome> bad{{0.0, true}};
    CHECK_THROWS_AS(calibrate(bad, 10), ValueError);
    std::vector<PredictionOutcome> bad2{{1.5, true}};
    CHECK_THROWS_AS(calibrate(bad2, 10), ValueError);
    std::vector<PredictionOutcome> ok{{1.0, true}};
    CHECK_NOTHROW(calibrate(ok, 10));
}

TEST_CASE("agreement with brute-force binning on random prediction sets") {
    Rng rng(20250810);
    for (int trial = 0; trial < 200; ++trial) {
        const int k = 1 + int(rng.below(20));
        auto preds = random_preds(rng, 1 + rng.below(300));
        auto fast = calibrate(preds, k);
        std::vector<std::pair<double, bool>> pairs;
        for (const auto& p : preds) pairs.emplace_back(p.confidence, p.correct);
        auto brute = oracles::brute_force_calibration(pairs, k);
        CHECK(std::abs(fast.ece - brute.ece) < 1e-12);
        CHECK(std::abs(fast.sece - brute.sece) < 1e-12);
        for (int i = 0; i < k; ++i) {
            CHECK(fast.bins[size_t(i)].count == brute.bins[size_t(i)].count);
            CHECK(std::abs(fast.bins[size_t(i)].accuracy - brute.bins[size_t(i)].accuracy) < 1e-12);
        }
    }
}

TEST_CASE("invariants: |sECE| <= ECE, P sums to one, permutation invariance") {
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        auto preds = random_preds(rng, 64);
        auto r = calibrate(preds, 10);
        CHECK(std::abs(r.sece) <= r.ece + 1e-15);
        double mass = 0.0;
        for (const auto& b : r.bins) mass += b.fraction;
        CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
        for (const auto& b : r.bins) {
            CHECK(b.accuracy >= 0.0);
            CHECK(b.accuracy <= 1.0);
            CHECK(b.mean_confidence >= 0.0);
            CHECK(b.mean_confidence <= 1.0);
        }

        auto shuffled = preds;
        for (size_t i = shuffled.size(); i > 1; --i)
            std::swap(shuffled[i - 1], shuffled[size_t(rng.below(i))]);
        auto r2 = calibrate(shuffled, 10);
        CHECK(r2.ece == r.ece);
        CHECK(r2.sece == r.sece);
    }
}

TEST_CASE("sign semantics: underconfident positive, overconfident negative") {
    Rng rng(99);
    std::vector<PredictionOutcome> under, over;
    for (int i = 0; i < 500; ++i) {
        const double c = 0.3 + 0.4 * rng.uniform();
        under.push_back({c, rng.uniform() < std::min(1.0, c + 0.25)});
        over.push_back({c, rng.uniform() < std::max(0.0, c - 0.25)});
    }
    CHECK(calibrate(under, 10).sece > 0.0);
    CHECK(calibrate(over, 10).sece < 0.0);
}

TEST_CASE("reliability rows: degenerate single-bin mass") {
    std::vector<PredictionOutcome> preds;
    for (int i = 0; i < 7; ++i) preds.push_back({0.95, i % 2 == 0});
    auto rows = reliability_rows(calibrate(preds, 10));
    REQUIRE(rows.size() == 10);
    int populated = 0;
    for (const auto& row : rows)
        if (row.count > 0) ++populated;
    CHECK(populated == 1);
    CHECK(rows[9].count == 7);
    CHECK(rows[9].bin_center == doctest::Approx(0.95));
}

TEST_CASE("reliability rows: overconfident model sits below the diagonal") {
    Rng rng(123);
    std::vector<PredictionOutcome> preds;
    for (int i = 0; i < 2000; ++i) {
        const double c = 0.5 + 0.5 * rng.uniform();
        preds.push_back({c, rng.uniform() < std::max(0.0, c - 0.3)});
    }
    auto rows = reliability_rows(calibrate(preds, 10));
    for (const auto& row : rows)
        if (row.count > 20) CHECK(row.accuracy < row.bin_center);
}
