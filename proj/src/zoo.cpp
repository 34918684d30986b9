#include "curvprobe/zoo.hpp"

#include <cmath>

namespace curvprobe {

std::string arch_name(Arch a) { return a == Arch::cnn ? "cnn" : "vit"; }

Arch arch_from_name(const std::string& s) {
    if (s == "cnn") return Arch::cnn;
    if (s == "vit") return Arch::vit;
    throw ValueError("unknown architecture '" + s + "' (expected cnn or vit)");
}

void ArchConfig::validate() const {
    if (in_channels <= 0 || height <= 0 || width <= 0 || num_classes <= 0)
        throw ValueError("arch config: non-positive input spec");
    if (arch == Arch::cnn) {
        if (widths.empty() || widths.size() != blocks.size())
            throw ValueError("arch config: widths/blocks length mismatch");
        for (int w : widths)
            if (w <= 0) throw ValueError("arch config: channel widths must be positive");
    } else {
        if (patch <= 0 || height % patch != 0 || width % patch != 0)
            throw ValueError("arch config: image side must be divisible by patch size");
        if (embed % heads != 0)
            throw ValueError("arch config: embed dim must be divisible by heads");
        if (depth <= 0 || mlp_ratio <= 0)
            throw ValueError("arch config: depth and mlp ratio must be positive");
    }
    if (!norm_mean.empty() && int(norm_mean.size()) != in_channels)
        throw ValueError("arch config: norm_mean size mismatch");
    if (!norm_std.empty() && int(norm_std.size()) != in_channels)
        throw ValueError("arch config: norm_std size mismatch");
}

namespace {

Tensor init_normal(Rng& rng, Shape shape, float stddev) {
    std::vector<float> d(size_t(shape_numel(shape)));
    for (auto& v : d) v = rng.normal_f() * stddev;
    return Tensor::from_data(std::move(shape), std::move(d), false);
}

Tensor kaiming_conv(Rng& rng, int cout, int cin, int k) {
    const float std = std::sqrt(2.0f / float(cin * k * k));
    return init_normal(rng, {cout, cin, k, k}, std);
}

}  // namespace

void Classifier::register_param(const std::string& name, Tensor t) {
    params_.push_back({name, t});
    index_.emplace(name, t);
}

void Classifier::register_buffer(const std::string& name, Tensor t) {
    buffers_.push_back({name, t});
    index_.emplace(name, t);
}

Tensor Classifier::p(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValueError("classifier: no state named '" + name + "'");
    return it->second;
}

Tensor Classifier::find_state(const std::string& name) const { return p(name); }

std::vector<NamedTensor> Classifier::named_state() const {
    std::vector<NamedTensor> all = params_;
    all.insert(all.end(), buffers_.begin(), buffers_.end());
    return all;
}

void Classifier::set_trainable(bool trainable) const {
    for (const auto& p : params_) {
        Tensor t = p.tensor;
        t.set_requires_grad(trainable);
    }
}

Classifier Classifier::create(const ArchConfig& cfg, uint64_t seed) {
    cfg.validate();
    Classifier m;
    m.cfg_ = cfg;
    Rng rng(mix_seed(seed, 0x6d6f64656cULL));  // independent init stream

    const int C = cfg.in_channels;
    std::vector<float> nm = cfg.norm_mean.empty() ? std::vector<float>(size_t(C), 0.5f) : cfg.norm_mean;
    std::vector<float> ns = cfg.norm_std.empty() ? std::vector<float>(size_t(C), 0.5f) : cfg.norm_std;
    m.cfg_.norm_mean = nm;
    m.cfg_.norm_std = ns;
    std::vector<float> inv(ns.size());
    for (size_t i = 0; i < ns.size(); ++i) {
        if (ns[i] <= 0.0f) throw ValueError("arch config: norm_std must be positive");
        inv[i] = 1.0f / ns[i];
    }
    m.register_buffer("norm.mean", Tensor::from_data({C, 1, 1}, nm));
    m.register_buffer("norm.inv_std", Tensor::from_data({C, 1, 1}, inv));

    auto add_bn = [&](const std::string& prefix, int ch) {
        m.register_param(prefix + ".gamma", Tensor::full({ch}, 1.0f));
        m.register_param(prefix + ".beta", Tensor::zeros({ch}));
        m.register_buffer(prefix + ".running_mean", Tensor::zeros({ch}));
        m.register_buffer(prefix + ".running_var", Tensor::full({ch}, 1.0f));
    };

    if (cfg.arch == Arch::cnn) {
        const int w0 = cfg.widths[0];
        m.register_param("stem.conv.w", kaiming_conv(rng, w0, C, 3));
        m.register_param("stem.conv.b", Tensor::zeros({w0}));
        add_bn("stem.bn", w0);
        int cin = w0;
        for (size_t s = 0; s < cfg.widths.size(); ++s) {
            const int cout = cfg.widths[s];
            for (int b = 0; b < cfg.blocks[s]; ++b) {
                const std::string bp = "stage" + std::to_string(s) + ".block" + std::to_string(b);
                const bool first = (b == 0);
                const int stride = (first && s > 0) ? 2 : 1;
                const int in_ch = first ? cin : cout;
                m.register_param(bp + ".conv1.w", kaiming_conv(rng, cout, in_ch, 3));
                m.register_param(bp + ".conv1.b", Tensor::zeros({cout}));
                add_bn(bp + ".bn1", cout);
                m.register_param(bp + ".conv2.w", kaiming_conv(rng, cout, cout, 3));
                m.register_param(bp + ".conv2.b", Tensor::zeros({cout}));
                add_bn(bp + ".bn2", cout);
                if (stride != 1 || in_ch != cout) {
                    m.register_param(bp + ".proj.w", kaiming_conv(rng, cout, in_ch, 1));
                    m.register_param(bp + ".proj.b", Tensor::zeros({cout}));
                    add_bn(bp + ".bnp", cout);
                }
            }
            cin = cout;
        }
        const int fd = cfg.widths.back();
        m.register_param("head.w", init_normal(rng, {fd, cfg.num_classes}, 0.01f));
        m.register_param("head.b", Tensor::zeros({cfg.num_classes}));
    } else {
        const int E = cfg.embed;
        const int tokens = (cfg.height / cfg.patch) * (cfg.width / cfg.patch);
        m.register_param("patch.w", kaiming_conv(rng, E, C, cfg.patch));
        m.register_param("patch.b", Tensor::zeros({E}));
        m.register_param("pos", init_normal(rng, {1, tokens, E}, 0.02f));
        const int hidden = E * cfg.mlp_ratio;
        for (int d = 0; d < cfg.depth; ++d) {
            const std::string bp = "block" + std::to_string(d);
            m.register_param(bp + ".ln1.gamma", Tensor::full({E}, 1.0f));
            m.register_param(bp + ".ln1.beta", Tensor::zeros({E}));
            for (const char* nm2 : {"q", "k", "v"}) {
                m.register_param(bp + ".attn." + std::string(nm2) + ".w",
                                 init_normal(rng, {E, E}, 0.02f));
                m.register_param(bp + ".attn." + std::string(nm2) + ".b",
                                 Tensor::zeros({E}));
            }
            m.register_param(bp + ".attn.proj.w", init_normal(rng, {E, E}, 0.02f));
            m.register_param(bp + ".attn.proj.b", Tensor::zeros({E}));
            m.register_param(bp + ".ln2.gamma", Tensor::full({E}, 1.0f));
            m.register_param(bp + ".ln2.beta", Tensor::zeros({E}));
            m.register_param(bp + ".mlp.fc1.w", init_normal(rng, {E, hidden}, 0.02f));
            m.register_param(bp + ".mlp.fc1.b", Tensor::zeros({hidden}));
            m.register_param(bp + ".mlp.fc2.w", init_normal(rng, {hidden, E}, 0.02f));
            m.register_param(bp + ".mlp.fc2.b", Tensor::zeros({E}));
        }
        m.register_param("final_ln.gamma", Tensor::full({E}, 1.0f));
        m.register_param("final_ln.beta", Tensor::zeros({E}));
        m.register_param("head.w", init_normal(rng, {E, cfg.num_classes}, 0.01f));
        m.register_param("head.b", Tensor::zeros({cfg.num_classes}));
    }
    return m;
}

Tensor Classifier::normalize_input(const Tensor& x) const {
    if (x.ndim() != 4 || x.dim(1) != cfg_.in_channels || x.dim(2) != cfg_.height ||
        x.dim(3) != cfg_.width)
        throw ShapeError("forward: input " + shape_str(x.shape()) + " does not match spec [B," +
                         std::to_string(cfg_.in_channels) + "," + std::to_string(cfg_.height) +
                         "," + std::to_string(cfg_.width) + "]");
    return mul(sub(clamp01(x), p("norm.mean")), p("norm.inv_std"));
}

namespace {

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    // x: [..., in] -> [..., out]
    const int64_t in = w.shape()[0];
    const int64_t out = w.shape()[1];
    Shape s = x.shape();
    Tensor x2 = reshape(x, {-1, in});
    Tensor y = add(matmul(x2, w), b);
    s.back() = out;
    return reshape(y, std::move(s));
}

}  // namespace

ForwardResult Classifier::forward_cnn(const Tensor& x, bool training) const {
    auto bn = [&](const std::string& prefix, const Tensor& t) {
        Tensor rm = p(prefix + ".running_mean");
        Tensor rv = p(prefix + ".running_var");
        return batch_norm(t, p(prefix + ".gamma"), p(prefix + ".beta"), rm, rv, training);
    };
    Tensor h = relu(bn("stem.bn", conv2d(normalize_input(x), p("stem.conv.w"),
                                         p("stem.conv.b"), 1, 1)));
    int cin = cfg_.widths[0];
    for (size_t s = 0; s < cfg_.widths.size(); ++s) {
        const int cout = cfg_.widths[s];
        for (int b = 0; b < cfg_.blocks[s]; ++b) {
            const std::string bp = "stage" + std::to_string(s) + ".block" + std::to_string(b);
            const bool first = (b == 0);
            const int stride = (first && s > 0) ? 2 : 1;
            const int in_ch = first ? cin : cout;
            Tensor main = relu(bn(bp + ".bn1", conv2d(h, p(bp + ".conv1.w"), p(bp + ".conv1.b"), stride, 1)));
            main = bn(bp + ".bn2", conv2d(main, p(bp + ".conv2.w"), p(bp + ".conv2.b"), 1, 1));
            Tensor shortcut = h;
            if (stride != 1 || in_ch != cout)
                shortcut = bn(bp + ".bnp", conv2d(h, p(bp + ".proj.w"), p(bp + ".proj.b"), stride, 0));
            h = relu(add(main, shortcut));
        }
        cin = cout;
    }
    Tensor z = mean(h, {2, 3});  // global average pool -> [B, width]
    Tensor logits = linear(z, p("head.w"), p("head.b"));
    return {logits, z};
}

ForwardResult Classifier::forward_vit(const Tensor& x) const {
    const int E = cfg_.embed;
    const int hds = cfg_.heads;
    const int dh = E / hds;
    Tensor h = conv2d(normalize_input(x), p("patch.w"), p("patch.b"), cfg_.patch, 0);
    const int64_t B = h.dim(0);
    const int64_t T = h.dim(2) * h.dim(3);
    h = permute(reshape(h, {B, E, T}), {0, 2, 1});  // [B, T, E]
    h = add(h, p("pos"));
    for (int d = 0; d < cfg_.depth; ++d) {
        const std::string bp = "block" + std::to_string(d);
        Tensor n1 = layer_norm(h, p(bp + ".ln1.gamma"), p(bp + ".ln1.beta"));
        auto split_heads = [&](const Tensor& t) {
            return permute(reshape(t, {B, T, hds, dh}), {0, 2, 1, 3});  // [B,h,T,dh]
        };
        Tensor q = split_heads(linear(n1, p(bp + ".attn.q.w"), p(bp + ".attn.q.b")));
        Tensor k = split_heads(linear(n1, p(bp + ".attn.k.w"), p(bp + ".attn.k.b")));
        Tensor v = split_heads(linear(n1, p(bp + ".attn.v.w"), p(bp + ".attn.v.b")));
        Tensor att = scaled_dot_attention(q, k, v);           // [B,h,T,dh]
        att = reshape(permute(att, {0, 2, 1, 3}), {B, T, E});  // merge heads
        att = linear(att, p(bp + ".attn.proj.w"), p(bp + ".attn.proj.b"));
        h = add(h, att);
        Tensor n2 = layer_norm(h, p(bp + ".ln2.gamma"), p(bp + ".ln2.beta"));
        Tensor mlp = linear(gelu(linear(n2, p(bp + ".mlp.fc1.w"), p(bp + ".mlp.fc1.b"))),
                            p(bp + ".mlp.fc2.w"), p(bp + ".mlp.fc2.b"));
        h = add(h, mlp);
    }
    h = layer_norm(h, p("final_ln.gamma"), p("final_ln.beta"));
    Tensor z = mean(h, {1});  // mean over tokens -> [B, E]
    Tensor logits = linear(z, p("head.w"), p("head.b"));
    return {logits, z};
}

ForwardResult Classifier::forward(const Tensor& x, bool training) const {
    return cfg_.arch == Arch::cnn ? forward_cnn(x, training) : forward_vit(x);
}

std::vector<Prediction> predictions_from_logits(const Tensor& logits) {
    NoGradGuard ng;
    Tensor probs = softmax(logits.detach());
    const int64_t B = logits.dim(0), C = logits.dim(1);
    std::vector<Prediction> out(size_t(B), Prediction{});
    for (int64_t b = 0; b < B; ++b) {
        const float* row = probs.data().data() + b * C;
        int best = 0;
        for (int64_t c = 1; c < C; ++c)
            if (row[c] > row[best]) best = int(c);  // first max wins ties
        out[size_t(b)] = {best, double(row[best])};
    }
    return out;
}

std::vector<Prediction> Classifier::predict(const Tensor& x) const {
    NoGradGuard ng;
    return predictions_from_logits(forward(x, false).logits);
}

}  // namespace curvprobe
