#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "curvprobe/zoo.hpp"
#include "oracles.hpp"

using namespace curvprobe;

namespace {

ArchConfig small_cnn() {
    ArchConfig c;
    c.arch = Arch::cnn;
    c.in_channels = 3;
    c.height = 16;
    c.width = 16;
    c.num_classes = 10;
    return c;
}

ArchConfig small_vit() {
    ArchConfig c;
    c.arch = Arch::vit;
    c.in_channels = 3;
    c.height = 16;
    c.width = 16;
    c.num_classes = 10;
    c.depth = 2;
    return c;
}

Tensor random_images(Rng& rng, int b, const ArchConfig& c) {
    std::vector<float> v(size_t(b) * c.in_channels * c.height * c.width);
    for (auto& x : v) x = float(rng.uniform());
    return Tensor::from_data({b, c.in_channels, c.height, c.width}, std::move(v));
}

}  // namespace

TEST_CASE("zero image through fresh models gives finite logits") {
    for (auto cfg : {small_cnn(), small_vit()}) {
        auto model = Classifier::create(cfg, 1);
        Tensor x = Tensor::zeros({2, 3, 16, 16});
        auto out = model.forward(x, false);
        CHECK(out.logits.dim(0) == 2);
        CHECK(out.logits.dim(1) == 10);
        CHECK(out.z.dim(1) == cfg.feature_dim());
        for (float v : out.logits.data()) CHECK(std::isfinite(v));
        for (float v : out.z.data()) CHECK(std::isfinite(v));
    }
}

TEST_CASE("inference is deterministic") {
    Rng rng(5);
    for (auto cfg : {small_cnn(), small_vit()}) {
        auto model = Classifier::create(cfg, 2);
        Tensor x = random_images(rng, 2, cfg);
        auto a = model.forward(x, false);
        auto b = model.forward(x, false);
        CHECK(std::equal(a.logits.data().begin(), a.logits.data().end(), b.logits.data().begin()));
        CHECK(std::equal(a.z.data().begin(), a.z.data().end(), b.z.data().begin()));
    }
}

TEST_CASE("softmax of logits sums to one per sample") {
    Rng rng(6);
    auto cfg = small_vit();
    auto model = Classifier::create(cfg, 3);
    Tensor x = random_images(rng, 3, cfg);
    NoGradGuard ng;
    auto out = model.forward(x, false);
    Tensor p = softmax(out.logits);
    for (int b = 0; b < 3; ++b) {
        double s = 0.0;
        for (int c = 0; c < 10; ++c) s += p.data()[size_t(b * 10 + c)];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
    }
}

TEST_CASE("continuity: z moves less as the input perturbation shrinks") {
    Rng rng(7);
    for (auto cfg : {small_cnn(), small_vit()}) {
        auto model = Classifier::create(cfg, 4);
        Tensor x = random_images(rng, 1, cfg);
        // clamp away from the pixel boundaries so the perturbation survives the clip
        for (auto& v : x.mutable_data()) v = 0.25f + v * 0.5f;
        auto base = model.forward(x, false);
        std::vector<float> delta(size_t(x.numel()));
        for (auto& v : delta) v = rng.normal_f();

        double prev = 1e30;
        for (double s : {1e-2, 1e-4, 1e-6}) {
            std::vector<float> xs(x.data().begin(), x.data().end());
            for (size_t i = 0; i < xs.size(); ++i) xs[i] += float(s * delta[i]);
            auto out = model.forward(Tensor::from_data(x.shape(), xs), false);
            double dist = 0.0;
            for (int64_t i = 0; i < out.z.numel(); ++i) {
                const double d = double(out.z.data()[size_t(i)]) - base.z.data()[size_t(i)];
                dist += d * d;
            }
            dist = std::sqrt(dist);
            CHECK(dist < prev);
            prev = dist;
        }
        CHECK(prev < 1e-3);  // vanishing perturbation, vanishing feature move
    }
}

TEST_CASE("predict: softmax confidence and tie-breaking") {
    // logits [3,0,0] -> label 0, confidence e^3/(e^3+2)
    auto t = Tensor::from_data({1, 3}, {3.0f, 0.0f, 0.0f});
    auto p = predictions_from_logits(t);
    CHECK(p[0].label == 0);
    CHECK(p[0].confidence == doctest::Approx(0.9094429985127419).epsilon(1e-6));

    // uniform logits, 10 classes: confidence 0.1, lowest-index winner
    auto u = predictions_from_logits(Tensor::zeros({1, 10}));
    CHECK(u[0].label == 0);
    CHECK(u[0].confidence == doctest::Approx(0.1).epsilon(1e-6));

    // saturated logits
    auto s = predictions_from_logits(Tensor::from_data({1, 2}, {50.0f, 0.0f}));
    CHECK(s[0].label == 0);
    CHECK(s[0].confidence == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("head is exactly linear on z") {
    Rng rng(8);
    for (auto cfg : {small_cnn(), small_vit()}) {
        auto model = Classifier::create(cfg, 9);
        Tensor x = random_images(rng, 2, cfg);
        auto out = model.forward(x, false);
        NoGradGuard ng;
        // logits must equal head(z) for the model's own z
        Tensor w = model.find_state("head.w");
        Tensor b = model.find_state("head.b");
        Tensor manual = add(matmul(out.z.detach(), w), b);
        for (int64_t i = 0; i < manual.numel(); ++i)
            CHECK(manual.data()[size_t(i)] == doctest::Approx(out.logits.data()[size_t(i)]).epsilon(1e-6));

        // and linearity: head(a z1 + b z2) = a head(z1) + b head(z2)
        const float ca = 0.7f, cb = -1.3f;
        Tensor z1 = Tensor::from_data(out.z.shape(), std::vector<float>(out.z.data().begin(), out.z.data().end()));
        std::vector<float> z2v(size_t(out.z.numel()));
        for (auto& v : z2v) v = rng.normal_f();
        Tensor z2 = Tensor::from_data(out.z.shape(), z2v);
        Tensor combo = add(scale(z1, ca), scale(z2, cb));
        Tensor lhs = add(matmul(combo, w), b);
        Tensor h1 = add(matmul(z1, w), b);
        Tensor h2 = add(matmul(z2, w), b);
        // a*head(z1) + b*head(z2) needs the bias handled once
        for (int64_t i = 0; i < lhs.numel(); ++i) {
            const double rhs = ca * (h1.data()[size_t(i)] - b.data()[size_t(i) % size_t(b.numel())]) +
                               cb * (h2.data()[size_t(i)] - b.data()[size_t(i) % size_t(b.numel())]) +
                               b.data()[size_t(i) % size_t(b.numel())];
            CHECK(lhs.data()[size_t(i)] == doctest::Approx(rhs).epsilon(5e-4));
        }
    }
}

TEST_CASE("shape mismatch is rejected") {
    auto model = Classifier::create(small_cnn(), 1);
    CHECK_THROWS_AS(model.forward(Tensor::zeros({1, 3, 8, 8}), false), ShapeError);
    CHECK_THROWS_AS(model.forward(Tensor::zeros({1, 1, 16, 16}), false), ShapeError);
}

TEST_CASE("input gradients flow through both architectures") {
    Rng rng(10);
    for (auto cfg : {small_cnn(), small_vit()}) {
        auto model = Classifier::create(cfg, 11);
        Tensor x = random_images(rng, 1, cfg);
        for (auto& v : x.mutable_data()) v = 0.25f + v * 0.5f;
        Tensor xg = x.clone(true);
        auto out = model.forward(xg, false);
        Tensor loss = cross_entropy(out.logits, {3});
        backward(loss);
        double norm = 0.0;
        for (float g : xg.grad()) norm += double(g) * g;
        CHECK(norm > 0.0);
        for (float g : xg.grad()) CHECK(std::isfinite(g));
    }
}
