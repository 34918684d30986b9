#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "curvprobe/common.hpp"

namespace curvprobe {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

// One recorded value in the graph. Parents plus the recording sequence number
// give the tape: backward visits nodes in descending seq order, which is a
// topological order because every op's output is recorded after its inputs.
struct Node {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // sized lazily, same length as data
    bool requires_grad = false;
    bool leaf = true;
    uint64_t seq = 0;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    int64_t numel() const { return int64_t(data.size()); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    }
};

uint64_t next_seq();

}  // namespace detail

// Value-semantic handle to a shared graph node. Copies alias the same buffer.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int64_t numel() const;
    int64_t dim(int i) const;  // negative indices allowed
    int ndim() const { return int(shape().size()); }

    std::span<const float> data() const;
    std::span<float> mutable_data();

    bool requires_grad() const;
    // Leaf-only toggle; flipping a non-leaf would corrupt the tape.
    void set_requires_grad(bool value);
    bool has_grad() const;
    std::span<const float> grad() const;
    void zero_grad();

    // Same buffer, detached from the tape.
    Tensor detach() const;
    // Deep copy of the values, fresh leaf.
    Tensor clone(bool requires_grad = false) const;

    float item() const;

    detail::Node* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

    static Tensor wrap(std::shared_ptr<detail::Node> n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

private:
    std::shared_ptr<detail::Node> node_;
};

// RAII guard: while alive, ops do not record on the tape.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

bool grad_enabled();

// --------------------------------------------------------------------------
// Primitives. All elementwise ops broadcast with right-aligned NumPy rules.
// --------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);

// Batched matmul: [..., m, k] x [..., k, n]. Batch dims must match exactly,
// or one operand may be rank-2 (shared across the other's batch).
Tensor matmul(const Tensor& a, const Tensor& b);

// x: [B, C, H, W], w: [Cout, C, K, K], bias: [Cout] or undefined.
// Implemented as unfold (im2col) + one GEMM.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);  // exact erf form
// Clamp to [0, 1]; gradient passes through on [0, 1] inclusive.
Tensor clamp01(const Tensor& x);

Tensor softmax(const Tensor& x);  // over last axis

// Normalize over the last axis; gamma/beta shaped like that axis.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);

// x: [B, C, H, W]; per-channel affine. Training mode normalizes with batch
// statistics and updates running buffers in place; inference mode uses the
// running buffers only (a deterministic per-channel affine map).
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  float momentum = 0.1f, float eps = 1e-5f);

Tensor sum(const Tensor& x, std::vector<int> axes, bool keepdim = false);
Tensor mean(const Tensor& x, std::vector<int> axes, bool keepdim = false);
Tensor sum_all(const Tensor& x);

Tensor reshape(const Tensor& x, Shape new_shape);
Tensor permute(const Tensor& x, std::vector<int> order);
// Swap the last two axes.
Tensor transpose_last(const Tensor& x);

// q, k, v: [..., T, Dh]; softmax(q k^T / sqrt(Dh)) v.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v);

// logits: [B, C]; labels in [0, C). Mean negative log-likelihood.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Seeds d(loss)/d(loss) = 1 and accumulates grads into every reachable
// requires_grad leaf. loss must be scalar and attached to the tape.
void backward(const Tensor& loss);

// How many worker threads GEMMs may use (per-element deterministic either
// way). Defaults to 1; CURVPROBE_BLAS_THREADS overrides.
void set_blas_threads(int n);
int blas_threads();

}  // namespace curvprobe
