#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "curvprobe/attacks.hpp"
#include "oracles.hpp"

using namespace curvprobe;

namespace {

ArchConfig tiny_vit() {
    ArchConfig c;
    c.arch = Arch::vit;
    c.height = c.width = 8;
    c.patch = 4;
    c.depth = 1;
    c.embed = 32;
    c.heads = 2;
    return c;
}

std::vector<float> interior_image(Rng& rng, int64_t dim) {
    std::vector<float> x(size_t(dim), 0.0f);
    for (auto& v : x) v = 0.2f + 0.6f * float(rng.uniform());
    return x;
}

}  // namespace

TEST_CASE("psnr values") {
    std::vector<float> a(100, 0.5f);
    CHECK(psnr_db(a, a) == 99.0);  // identical images hit the sentinel cap

    // one-LSB-per-pixel difference at 8-bit depth: 20 log10(255)
    std::vector<float> b(a);
    for (auto& v : b) v += 1.0f / 255.0f;
    CHECK(psnr_db(a, b) == doctest::Approx(48.1308036086791).epsilon(1e-6));

    // monotone: bigger MSE, smaller PSNR
    std::vector<float> c(a);
    for (auto& v : c) v += 3.0f / 255.0f;
    CHECK(psnr_db(a, c) < psnr_db(a, b));
}

TEST_CASE("ifgsm analytic success on a linear logistic model") {
    // 2-class linear model: logits = W^T x; along I-FGSM the score moves by
    // exactly eps * ||w1 - w0||_1 when no pixel clips.
    Rng rng(5);
    const size_t dim = 16;
    std::vector<float> w0(dim), w1(dim);
    for (size_t i = 0; i < dim; ++i) {
        w0[i] = rng.normal_f();
        w1[i] = rng.normal_f();
    }
    double l1 = 0.0;
    for (size_t i = 0; i < dim; ++i) l1 += std::abs(double(w1[i]) - w0[i]);

    auto x = interior_image(rng, int64_t(dim));
    double margin = 0.0;  // l0 - l1 at x; make it positive and known
    for (size_t i = 0; i < dim; ++i) margin += double(w0[i] - w1[i]) * x[i];
    if (margin < 0) {
        std::swap(w0, w1);
        margin = -margin;
    }

    auto logits = [&](std::span<const float> img) {
        double a = 0.0, b = 0.0;
        for (size_t i = 0; i < dim; ++i) {
            a += double(w0[i]) * img[i];
            b += double(w1[i]) * img[i];
        }
        return std::pair{a, b};
    };
    PredictImageFn classify = [&](std::span<const float> img) {
        auto [a, b] = logits(img);
        return b > a ? 1 : 0;
    };
    InputGradFn grad = [&](std::span<const float> img, int y) {
        auto [a, b] = logits(img);
        const double m = std::max(a, b);
        const double pa = std::exp(a - m), pb = std::exp(b - m);
        const double p1 = pb / (pa + pb);
        // dJ/dx for y=0 is p1 * (w1 - w0)
        std::vector<float> g(dim);
        for (size_t i = 0; i < dim; ++i) g[i] = float(p1 * (double(w1[i]) - w0[i]));
        (void)y;
        return g;
    };

    AttackConfig cfg;
    cfg.kind = AttackKind::ifgsm;
    cfg.iters = 10;

    // budget just past the margin succeeds, well short of it fails
    cfg.eps = 1.05 * margin / l1;
    auto win = ifgsm_core(grad, classify, x, 0, cfg);
    CHECK(win.success);
    cfg.eps = 0.5 * margin / l1;
    auto lose = ifgsm_core(grad, classify, x, 0, cfg);
    CHECK_FALSE(lose.success);
}

TEST_CASE("T=1 ifgsm equals fgsm bit for bit") {
    auto model = Classifier::create(tiny_vit(), 9);
    Rng rng(10);
    auto x = interior_image(rng, model.config().input_dim());
    const int y = model.predict(Tensor::from_data({1, 3, 8, 8}, x))[0].label;

    AttackConfig a;
    a.kind = AttackKind::fgsm;
    a.eps = 0.01;
    AttackConfig b;
    b.kind = AttackKind::ifgsm;
    b.eps = 0.01;
    b.iters = 1;
    auto ra = ifgsm(model, x, y, a);
    auto rb = ifgsm(model, x, y, b);
    CHECK(ra.x_adv == rb.x_adv);
    CHECK(ra.success == rb.success);
    CHECK(ra.eps_used == rb.eps_used);
}

TEST_CASE("zero budget leaves the image untouched") {
    auto model = Classifier::create(tiny_vit(), 11);
    Rng rng(12);
    auto x = interior_image(rng, model.config().input_dim());
    const int y = model.predict(Tensor::from_data({1, 3, 8, 8}, x))[0].label;
    AttackConfig cfg;
    cfg.eps = 0.0;
    auto r = ifgsm(model, x, y, cfg);
    CHECK(r.x_adv == x);
    CHECK_FALSE(r.success);
    CHECK(r.eps_used == 0.0);
    CHECK(r.psnr_db == 99.0);
}

TEST_CASE("l-inf budget is never exceeded") {
    auto model = Classifier::create(tiny_vit(), 13);
    Rng rng(14);
    AttackConfig cfg;
    cfg.eps = 0.004;
    cfg.iters = 7;
    for (int trial = 0; trial < 20; ++trial) {
        auto x = interior_image(rng, model.config().input_dim());
        const int y = model.predict(Tensor::from_data({1, 3, 8, 8}, x))[0].label;
        auto r = ifgsm(model, x, y, cfg);
        double linf = 0.0;
        for (size_t i = 0; i < x.size(); ++i)
            linf = std::max(linf, std::abs(double(r.x_adv[i]) - x[i]));
        CHECK(linf <= cfg.eps + 1.2e-7);  // one float ulp of slack at pixel scale
        for (float v : r.x_adv) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
}

TEST_CASE("rand_jump attack degenerates to plain travel when eps_r = 0") {
    auto model = Classifier::create(tiny_vit(), 15);
    Rng rng(16);
    auto x = interior_image(rng, model.config().input_dim());
    const int y = model.predict(Tensor::from_data({1, 3, 8, 8}, x))[0].label;
    AttackConfig cfg;
    cfg.kind = AttackKind::rand_jump;
    cfg.eps_r = 0.0;
    cfg.travel.max_iters = 80;
    auto r = rand_jump_attack(model, x, y, cfg);

    auto d = fgsm_direction(model, x, y);
    auto tr = travel_to_boundary(model, x, y, d, cfg.travel);
    CHECK(r.success == tr.crossed);
    if (tr.crossed) {
        CHECK(r.eps_used == doctest::Approx(tr.eps_star));
        CHECK(r.x_adv == tr.x_prime);
    }
}

TEST_CASE("rand_jump measures perturbation against the original image") {
    auto model = Classifier::create(tiny_vit(), 17);
    Rng rng(18);
    auto x = interior_image(rng, model.config().input_dim());
    const int y = model.predict(Tensor::from_data({1, 3, 8, 8}, x))[0].label;
    AttackConfig cfg;
    cfg.kind = AttackKind::rand_jump;
    cfg.eps_r = 0.05;
    cfg.seed = 3;
    cfg.travel.max_iters = 80;
    auto r = rand_jump_attack(model, x, y, cfg);
    CHECK(r.eps_used >= cfg.eps_r * (1.0 - 1e-9));  // jump included in the total
    CHECK(r.psnr_db < 99.0);                        // moved off the original
    CHECK(r.label_before == y);
}

TEST_CASE("robustness by curvedness bins") {
    auto model = Classifier::create(tiny_vit(), 19);
    Rng rng(20);
    Dataset ds;
    ds.channels = 3;
    ds.height = ds.width = 8;
    ds.num_classes = 10;
    const int n = 8;
    ds.images.resize(size_t(n) * 3 * 8 * 8);
    for (auto& v : ds.images) v = 0.2f + 0.6f * float(rng.uniform());
    ds.labels.resize(n);
    for (int i = 0; i < n; ++i) {
        size_t idx[1] = {size_t(i)};
        ds.labels[size_t(i)] = model.predict(ds.batch({idx, 1}))[0].label;
    }
    std::vector<TrajectoryRecord> recs;
    for (int i = 0; i < n; ++i) {
        TrajectoryRecord r;
        r.sample_id = i;
        r.theta1 = 0.3;  // all in one bin
        recs.push_back(r);
    }

    SUBCASE("zero-budget attack keeps accuracy at one in every populated bin") {
        AttackConfig cfg;
        cfg.eps = 0.0;
        auto rep = robustness_by_curvedness(model, ds, cfg, recs, 10, 2);
        CHECK(rep.attacked == size_t(n));
        CHECK(rep.overall_accuracy == 1.0);
        for (const auto& b : rep.bins) {
            if (b.count > 0) CHECK(b.accuracy == 1.0);
        }
    }
    SUBCASE("single populated bin matches overall accuracy") {
        AttackConfig cfg;
        cfg.eps = 0.02;
        cfg.iters = 5;
        auto rep = robustness_by_curvedness(model, ds, cfg, recs, 10, 1);
        size_t populated = 0;
        for (const auto& b : rep.bins)
            if (b.count > 0) {
                populated++;
                CHECK(b.accuracy == doctest::Approx(rep.overall_accuracy));
            }
        CHECK(populated == 1);
    }
}
