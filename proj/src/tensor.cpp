#include "curvprobe/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "curvprobe/gemm.hpp"

#ifdef CURVPROBE_WITH_OPENBLAS
extern "C" void openblas_set_num_threads(int);
#endif

namespace curvprobe {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

uint64_t next_seq() {
    thread_local uint64_t counter = 0;
    return ++counter;
}

}  // namespace detail

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

thread_local bool g_grad_enabled = true;

int g_blas_threads = 1;

NodePtr make_leaf(Shape shape, std::vector<float> data, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    n->leaf = true;
    n->seq = detail::next_seq();
    return n;
}

// Result node for an op. Tape recording happens only when gradients are
// enabled and at least one input participates.
NodePtr make_result(const char* op, Shape shape, std::vector<float> data,
                    std::vector<NodePtr> parents,
                    std::function<void(Node&)> backward_fn) {
    bool rg = false;
    if (g_grad_enabled) {
        for (const auto& p : parents)
            if (p->requires_grad) rg = true;
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->seq = detail::next_seq();
    n->op = op;
    if (rg) {
        n->requires_grad = true;
        n->leaf = false;
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return n;
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) +
                     " and " + shape_str(b));
}

// ---- broadcasting -----------------------------------------------------

struct BroadcastPlan {
    Shape out;
    std::vector<int64_t> stride_a;  // per out dim; 0 where a broadcasts
    std::vector<int64_t> stride_b;
    bool same_shape = false;
};

std::vector<int64_t> row_major_strides(const Shape& s) {
    std::vector<int64_t> st(s.size());
    int64_t acc = 1;
    for (int i = int(s.size()) - 1; i >= 0; --i) {
        st[size_t(i)] = acc;
        acc *= s[size_t(i)];
    }
    return st;
}

BroadcastPlan broadcast(const char* op, const Shape& a, const Shape& b) {
    BroadcastPlan p;
    if (a == b) {
        p.out = a;
        p.same_shape = true;
        return p;
    }
    const size_t nd = std::max(a.size(), b.size());
    p.out.resize(nd);
    const auto sa = row_major_strides(a);
    const auto sb = row_major_strides(b);
    p.stride_a.assign(nd, 0);
    p.stride_b.assign(nd, 0);
    for (size_t i = 0; i < nd; ++i) {
        const size_t oi = nd - 1 - i;
        const int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
        const int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (da == db) {
            p.out[oi] = da;
        } else if (da == 1) {
            p.out[oi] = db;
        } else if (db == 1) {
            p.out[oi] = da;
        } else {
            shape_fail(op, a, b);
        }
        if (da != 1 && i < a.size()) p.stride_a[oi] = sa[a.size() - 1 - i];
        if (db != 1 && i < b.size()) p.stride_b[oi] = sb[b.size() - 1 - i];
    }
    return p;
}

// Walks every output index of `out_shape`, calling fn(out_idx, a_off, b_off).
template <typename F>
void for_each_broadcast(const BroadcastPlan& p, F&& fn) {
    const size_t nd = p.out.size();
    const int64_t total = shape_numel(p.out);
    std::vector<int64_t> idx(nd, 0);
    int64_t off_a = 0, off_b = 0;
    for (int64_t i = 0; i < total; ++i) {
        fn(i, off_a, off_b);
        for (int d = int(nd) - 1; d >= 0; --d) {
            idx[size_t(d)]++;
            off_a += p.stride_a[size_t(d)];
            off_b += p.stride_b[size_t(d)];
            if (idx[size_t(d)] < p.out[size_t(d)]) break;
            off_a -= p.stride_a[size_t(d)] * p.out[size_t(d)];
            off_b -= p.stride_b[size_t(d)] * p.out[size_t(d)];
            idx[size_t(d)] = 0;
        }
    }
}

// Accumulates `src` (shaped `out`) into a buffer of shape `target`,
// summing over broadcast axes. Used by elementwise backward passes.
void reduce_into(const std::vector<float>& src, const Shape& out_shape,
                 const Shape& target, std::vector<float>& dst) {
    if (out_shape == target) {
        for (size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
        return;
    }
    BroadcastPlan p = broadcast("reduce", target, out_shape);
    // p.out == out_shape; stride_a indexes target.
    for_each_broadcast(p, [&](int64_t i, int64_t ta, int64_t) {
        dst[size_t(ta)] += src[size_t(i)];
    });
}

enum class EwKind { Add, Sub, Mul };

Tensor elementwise(const char* op, EwKind kind, const Tensor& a, const Tensor& b) {
    const auto& an = a.node_ptr();
    const auto& bn = b.node_ptr();
    BroadcastPlan plan = broadcast(op, an->shape, bn->shape);
    std::vector<float> out(size_t(shape_numel(plan.out)));
    const float* pa = an->data.data();
    const float* pb = bn->data.data();
    if (plan.same_shape) {
        const size_t n = out.size();
        switch (kind) {
            case EwKind::Add:
                for (size_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i];
                break;
            case EwKind::Sub:
                for (size_t i = 0; i < n; ++i) out[i] = pa[i] - pb[i];
                break;
            case EwKind::Mul:
                for (size_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i];
                break;
        }
    } else {
        for_each_broadcast(plan, [&](int64_t i, int64_t oa, int64_t ob) {
            const float va = pa[oa], vb = pb[ob];
            switch (kind) {
                case EwKind::Add: out[size_t(i)] = va + vb; break;
                case EwKind::Sub: out[size_t(i)] = va - vb; break;
                case EwKind::Mul: out[size_t(i)] = va * vb; break;
            }
        });
    }
    Shape out_shape = plan.out;
    return Tensor::wrap(make_result(op, out_shape, std::move(out), {an, bn},
        [kind, an, bn, out_shape](Node& self) {
            const auto& dy = self.grad;
            if (an->requires_grad) {
                an->ensure_grad();
                std::vector<float> tmp;
                const std::vector<float>* src = &dy;
                if (kind == EwKind::Mul) {
                    tmp.resize(dy.size());
                    BroadcastPlan p = broadcast("mul", an->shape, bn->shape);
                    if (p.same_shape) {
                        for (size_t i = 0; i < dy.size(); ++i) tmp[i] = dy[i] * bn->data[i];
                    } else {
                        for_each_broadcast(p, [&](int64_t i, int64_t, int64_t ob) {
                            tmp[size_t(i)] = dy[size_t(i)] * bn->data[size_t(ob)];
                        });
                    }
                    src = &tmp;
                }
                reduce_into(*src, out_shape, an->shape, an->grad);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                std::vector<float> tmp(dy.size());
                switch (kind) {
                    case EwKind::Add: tmp = dy; break;
                    case EwKind::Sub:
                        for (size_t i = 0; i < dy.size(); ++i) tmp[i] = -dy[i];
                        break;
                    case EwKind::Mul: {
                        BroadcastPlan p = broadcast("mul", an->shape, bn->shape);
                        if (p.same_shape) {
                            for (size_t i = 0; i < dy.size(); ++i) tmp[i] = dy[i] * an->data[i];
                        } else {
                            for_each_broadcast(p, [&](int64_t i, int64_t oa, int64_t) {
                                tmp[size_t(i)] = dy[size_t(i)] * an->data[size_t(oa)];
                            });
                        }
                        break;
                    }
                }
                reduce_into(tmp, out_shape, bn->shape, bn->grad);
            }
        }));
}

}  // namespace

// ---- Tensor -----------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    std::vector<float> d(size_t(shape_numel(shape)), 0.0f);
    return wrap(make_leaf(std::move(shape), std::move(d), requires_grad));
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    std::vector<float> d(size_t(shape_numel(shape)), value);
    return wrap(make_leaf(std::move(shape), std::move(d), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
    if (shape_numel(shape) != int64_t(data.size()))
        throw ShapeError("from_data: shape " + shape_str(shape) + " wants " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
    return wrap(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
int64_t Tensor::numel() const { return node_->numel(); }

int64_t Tensor::dim(int i) const {
    const int nd = ndim();
    if (i < 0) i += nd;
    if (i < 0 || i >= nd)
        throw ValueError("dim: axis " + std::to_string(i) + " out of range for " +
                         shape_str(shape()));
    return node_->shape[size_t(i)];
}

std::span<const float> Tensor::data() const { return {node_->data.data(), node_->data.size()}; }
std::span<float> Tensor::mutable_data() { return {node_->data.data(), node_->data.size()}; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
    if (!node_) throw ValueError("set_requires_grad: undefined tensor");
    if (!node_->leaf) throw ValueError("set_requires_grad: only leaves can be toggled");
    node_->requires_grad = value;
}
bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }

std::span<const float> Tensor::grad() const {
    if (!has_grad()) throw ValueError("grad: tensor has no gradient buffer");
    return {node_->grad.data(), node_->grad.size()};
}

void Tensor::zero_grad() {
    if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

Tensor Tensor::detach() const {
    auto n = std::make_shared<Node>();
    n->shape = node_->shape;
    n->data = node_->data;  // value copy keeps the detached view immutable-safe
    n->requires_grad = false;
    n->leaf = true;
    n->seq = detail::next_seq();
    return wrap(n);
}

Tensor Tensor::clone(bool requires_grad) const {
    return from_data(node_->shape, node_->data, requires_grad);
}

float Tensor::item() const {
    if (numel() != 1)
        throw ValueError("item: tensor has shape " + shape_str(shape()) + ", expected scalar");
    return node_->data[0];
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

void set_blas_threads(int n) {
    g_blas_threads = std::max(1, n);
#ifdef CURVPROBE_WITH_OPENBLAS
    openblas_set_num_threads(g_blas_threads);
#endif
}

int blas_threads() { return g_blas_threads; }

// ---- elementwise ------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return elementwise("add", EwKind::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise("sub", EwKind::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise("mul", EwKind::Mul, a, b); }

Tensor scale(const Tensor& a, float s) {
    const auto& an = a.node_ptr();
    std::vector<float> out(an->data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = an->data[i] * s;
    return Tensor::wrap(make_result("scale", an->shape, std::move(out), {an},
        [an, s](Node& self) {
            if (!an->requires_grad) return;
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * s;
        }));
}

// ---- matmul -----------------------------------------------------------

namespace {

struct MatmulDims {
    int64_t batch = 1;
    int64_t m = 0, k = 0, n = 0;
    bool a_batched = false, b_batched = false;
    Shape out;
};

MatmulDims matmul_dims(const Shape& a, const Shape& b) {
    if (a.size() < 2 || b.size() < 2) shape_fail("matmul", a, b);
    MatmulDims d;
    d.m = a[a.size() - 2];
    d.k = a[a.size() - 1];
    const int64_t kb = b[b.size() - 2];
    d.n = b[b.size() - 1];
    if (d.k != kb) shape_fail("matmul", a, b);
    Shape batch_a(a.begin(), a.end() - 2);
    Shape batch_b(b.begin(), b.end() - 2);
    if (batch_a == batch_b) {
        d.batch = shape_numel(batch_a);
        d.a_batched = d.b_batched = !batch_a.empty();
        d.out = batch_a;
    } else if (batch_b.empty()) {
        d.batch = shape_numel(batch_a);
        d.a_batched = true;
        d.out = batch_a;
    } else if (batch_a.empty()) {
        d.batch = shape_numel(batch_b);
        d.b_batched = true;
        d.out = batch_b;
    } else {
        shape_fail("matmul", a, b);
    }
    d.out.push_back(d.m);
    d.out.push_back(d.n);
    return d;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto& an = a.node_ptr();
    const auto& bn = b.node_ptr();
    const MatmulDims d = matmul_dims(an->shape, bn->shape);
    std::vector<float> out(size_t(d.batch * d.m * d.n));
    const int64_t sa = d.a_batched ? d.m * d.k : 0;
    const int64_t sb = d.b_batched ? d.k * d.n : 0;
    for (int64_t i = 0; i < d.batch; ++i) {
        gemm(false, false, int(d.m), int(d.n), int(d.k), 1.0f,
             an->data.data() + i * sa, int(d.k), bn->data.data() + i * sb,
             int(d.n), 0.0f, out.data() + i * d.m * d.n, int(d.n));
    }
    return Tensor::wrap(make_result("matmul", d.out, std::move(out), {an, bn},
        [an, bn, d](Node& self) {
            const int64_t sa = d.a_batched ? d.m * d.k : 0;
            const int64_t sb = d.b_batched ? d.k * d.n : 0;
            const int64_t so = d.m * d.n;
            if (an->requires_grad) {
                an->ensure_grad();
                // dA_i += dC_i * B_i^T; if A is shared the contributions sum in place.
                for (int64_t i = 0; i < d.batch; ++i) {
                    gemm(false, true, int(d.m), int(d.k), int(d.n), 1.0f,
                         self.grad.data() + i * so, int(d.n),
                         bn->data.data() + i * sb, int(d.n), 1.0f,
                         an->grad.data() + i * sa, int(d.k));
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int64_t i = 0; i < d.batch; ++i) {
                    gemm(true, false, int(d.k), int(d.n), int(d.m), 1.0f,
                         an->data.data() + i * sa, int(d.k),
                         self.grad.data() + i * so, int(d.n), 1.0f,
                         bn->grad.data() + i * sb, int(d.n));
                }
            }
        }));
}

// ---- conv2d -----------------------------------------------------------

namespace {

struct ConvDims {
    int64_t b, c, h, w, cout, kk, oh, ow;
    int stride, pad;
};

// col layout: [C*K*K rows][B*OH*OW cols], batch-major within each row.
void im2col(const float* x, const ConvDims& g, int kern, float* col) {
    const int64_t ohow = g.oh * g.ow;
    const int64_t cols = g.b * ohow;
    for (int64_t b = 0; b < g.b; ++b) {
        const float* xb = x + b * g.c * g.h * g.w;
        for (int64_t c = 0; c < g.c; ++c)
            for (int kh = 0; kh < kern; ++kh)
                for (int kw = 0; kw < kern; ++kw) {
                    const int64_t row = (c * kern + kh) * kern + kw;
                    float* dst = col + row * cols + b * ohow;
                    const float* xc = xb + c * g.h * g.w;
                    for (int64_t oh = 0; oh < g.oh; ++oh) {
                        const int64_t ih = oh * g.stride + kh - g.pad;
                        if (ih < 0 || ih >= g.h) {
                            std::memset(dst + oh * g.ow, 0, sizeof(float) * size_t(g.ow));
                            continue;
                        }
                        const float* xrow = xc + ih * g.w;
                        for (int64_t ow = 0; ow < g.ow; ++ow) {
                            const int64_t iw = ow * g.stride + kw - g.pad;
                            dst[oh * g.ow + ow] =
                                (iw >= 0 && iw < g.w) ? xrow[iw] : 0.0f;
                        }
                    }
                }
    }
}

void col2im(const float* col, const ConvDims& g, int kern, float* dx) {
    const int64_t ohow = g.oh * g.ow;
    const int64_t cols = g.b * ohow;
    for (int64_t b = 0; b < g.b; ++b) {
        float* xb = dx + b * g.c * g.h * g.w;
        for (int64_t c = 0; c < g.c; ++c)
            for (int kh = 0; kh < kern; ++kh)
                for (int kw = 0; kw < kern; ++kw) {
                    const int64_t row = (c * kern + kh) * kern + kw;
                    const float* src = col + row * cols + b * ohow;
                    float* xc = xb + c * g.h * g.w;
                    for (int64_t oh = 0; oh < g.oh; ++oh) {
                        const int64_t ih = oh * g.stride + kh - g.pad;
                        if (ih < 0 || ih >= g.h) continue;
                        float* xrow = xc + ih * g.w;
                        for (int64_t ow = 0; ow < g.ow; ++ow) {
                            const int64_t iw = ow * g.stride + kw - g.pad;
                            if (iw >= 0 && iw < g.w) xrow[iw] += src[oh * g.ow + ow];
                        }
                    }
                }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
    const auto& xn = x.node_ptr();
    const auto& wn = w.node_ptr();
    if (xn->shape.size() != 4 || wn->shape.size() != 4 ||
        wn->shape[2] != wn->shape[3] || xn->shape[1] != wn->shape[1])
        shape_fail("conv2d", xn->shape, wn->shape);
    ConvDims g;
    g.b = xn->shape[0];
    g.c = xn->shape[1];
    g.h = xn->shape[2];
    g.w = xn->shape[3];
    g.cout = wn->shape[0];
    const int kern = int(wn->shape[2]);
    g.kk = g.c * kern * kern;
    g.stride = stride;
    g.pad = pad;
    g.oh = (g.h + 2 * pad - kern) / stride + 1;
    g.ow = (g.w + 2 * pad - kern) / stride + 1;
    if (g.oh <= 0 || g.ow <= 0)
        throw ShapeError("conv2d: kernel " + std::to_string(kern) + " does not fit input " +
                         shape_str(xn->shape) + " with pad " + std::to_string(pad));
    const bool has_bias = bias.defined();
    NodePtr biasn = has_bias ? bias.node_ptr() : nullptr;
    if (has_bias && (biasn->shape.size() != 1 || biasn->shape[0] != g.cout))
        shape_fail("conv2d bias", biasn->shape, wn->shape);

    const int64_t ohow = g.oh * g.ow;
    const int64_t cols = g.b * ohow;
    auto col = std::make_shared<std::vector<float>>(size_t(g.kk * cols));
    im2col(xn->data.data(), g, kern, col->data());

    // prod[cout][b*ohow] = W[cout][ckk] * col[ckk][b*ohow]
    std::vector<float> prod(size_t(g.cout * cols));
    gemm(false, false, int(g.cout), int(cols), int(g.kk), 1.0f, wn->data.data(),
         int(g.kk), col->data(), int(cols), 0.0f, prod.data(), int(cols));

    std::vector<float> out(size_t(g.b * g.cout * ohow));
    for (int64_t b = 0; b < g.b; ++b)
        for (int64_t co = 0; co < g.cout; ++co) {
            const float bv = has_bias ? biasn->data[size_t(co)] : 0.0f;
            const float* src = prod.data() + co * cols + b * ohow;
            float* dst = out.data() + (b * g.cout + co) * ohow;
            for (int64_t p = 0; p < ohow; ++p) dst[p] = src[p] + bv;
        }

    Shape out_shape{g.b, g.cout, g.oh, g.ow};
    std::vector<NodePtr> parents{xn, wn};
    if (has_bias) parents.push_back(biasn);
    const bool keep_col = g_grad_enabled && (xn->requires_grad || wn->requires_grad);
    if (!keep_col) col.reset();

    return Tensor::wrap(make_result("conv2d", std::move(out_shape), std::move(out), std::move(parents),
        [xn, wn, biasn, col, g, kern, has_bias](Node& self) {
            const int64_t ohow = g.oh * g.ow;
            const int64_t cols = g.b * ohow;
            // Regroup dY to [cout][b*ohow].
            std::vector<float> dprod(size_t(g.cout * cols));
            for (int64_t b = 0; b < g.b; ++b)
                for (int64_t co = 0; co < g.cout; ++co) {
                    const float* src = self.grad.data() + (b * g.cout + co) * ohow;
                    float* dst = dprod.data() + co * cols + b * ohow;
                    std::memcpy(dst, src, sizeof(float) * size_t(ohow));
                }
            if (has_bias && biasn->requires_grad) {
                biasn->ensure_grad();
                for (int64_t co = 0; co < g.cout; ++co) {
                    double acc = 0.0;
                    const float* src = dprod.data() + co * cols;
                    for (int64_t p = 0; p < cols; ++p) acc += src[p];
                    biasn->grad[size_t(co)] += float(acc);
                }
            }
            if (wn->requires_grad) {
                wn->ensure_grad();
                // dW += dProd * col^T
                gemm(false, true, int(g.cout), int(g.kk), int(cols), 1.0f,
                     dprod.data(), int(cols), col->data(), int(cols), 1.0f,
                     wn->grad.data(), int(g.kk));
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                std::vector<float> dcol(size_t(g.kk * cols));
                gemm(true, false, int(g.kk), int(cols), int(g.cout), 1.0f,
                     wn->data.data(), int(g.kk), dprod.data(), int(cols), 0.0f,
                     dcol.data(), int(cols));
                col2im(dcol.data(), g, kern, xn->grad.data());
            }
        }));
}

// ---- activations ------------------------------------------------------

Tensor relu(const Tensor& x) {
    const auto& xn = x.node_ptr();
    std::vector<float> out(xn->data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = xn->data[i] > 0.0f ? xn->data[i] : 0.0f;
    return Tensor::wrap(make_result("relu", xn->shape, std::move(out), {xn},
        [xn](Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                if (xn->data[i] > 0.0f) xn->grad[i] += self.grad[i];
        }));
}

Tensor gelu(const Tensor& x) {
    const auto& xn = x.node_ptr();
    constexpr float inv_sqrt2 = 0.7071067811865475f;
    std::vector<float> out(xn->data.size());
    for (size_t i = 0; i < out.size(); ++i) {
        const float v = xn->data[i];
        out[i] = 0.5f * v * (1.0f + std::erf(v * inv_sqrt2));
    }
    return Tensor::wrap(make_result("gelu", xn->shape, std::move(out), {xn},
        [xn](Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            constexpr float inv_sqrt2pi = 0.3989422804014327f;
            for (size_t i = 0; i < self.grad.size(); ++i) {
                const float v = xn->data[i];
                const float cdf = 0.5f * (1.0f + std::erf(v * 0.7071067811865475f));
                const float pdf = inv_sqrt2pi * std::exp(-0.5f * v * v);
                xn->grad[i] += self.grad[i] * (cdf + v * pdf);
            }
        }));
}

Tensor clamp01(const Tensor& x) {
    const auto& xn = x.node_ptr();
    std::vector<float> out(xn->data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = clip01(xn->data[i]);
    return Tensor::wrap(make_result("clamp01", xn->shape, std::move(out), {xn},
        [xn](Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            // Pass-through on the closed interval so in-range pixels keep
            // their gradient after the pixel-space clip.
            for (size_t i = 0; i < self.grad.size(); ++i) {
                const float v = xn->data[i];
                if (v >= 0.0f && v <= 1.0f) xn->grad[i] += self.grad[i];
            }
        }));
}

// ---- softmax ----------------------------------------------------------

Tensor softmax(const Tensor& x) {
    const auto& xn = x.node_ptr();
    if (xn->shape.empty()) throw ShapeError("softmax: rank-0 input");
    const int64_t width = xn->shape.back();
    const int64_t rows = xn->numel() / width;
    std::vector<float> out(xn->data.size());
    for (int64_t r = 0; r < rows; ++r) {
        const float* in = xn->data.data() + r * width;
        float* o = out.data() + r * width;
        float mx = in[0];
        for (int64_t i = 1; i < width; ++i) mx = std::max(mx, in[i]);
        double denom = 0.0;
        for (int64_t i = 0; i < width; ++i) {
            o[i] = std::exp(in[i] - mx);
            denom += o[i];
        }
        const float inv = float(1.0 / denom);
        for (int64_t i = 0; i < width; ++i) o[i] *= inv;
    }
    return Tensor::wrap(make_result("softmax", xn->shape, std::move(out), {xn},
        [xn, width, rows](Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const float* y = self.data.data() + r * width;
                const float* dy = self.grad.data() + r * width;
                float* dx = xn->grad.data() + r * width;
                double dot = 0.0;
                for (int64_t i = 0; i < width; ++i) dot += double(dy[i]) * y[i];
                for (int64_t i = 0; i < width; ++i)
                    dx[i] += y[i] * (dy[i] - float(dot));
            }
        }));
}

// ---- layer norm -------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
    const auto& xn = x.node_ptr();
    const auto& gn = gamma.node_ptr();
    const auto& bn = beta.node_ptr();
    if (xn->shape.empty()) throw ShapeError("layer_norm: rank-0 input");
    const int64_t width = xn->shape.back();
    if (gn->shape != Shape{width} || bn->shape != Shape{width})
        shape_fail("layer_norm", xn->shape, gn->shape);
    const int64_t rows = xn->numel() / width;
    auto xhat = std::make_shared<std::vector<float>>(xn->data.size());
    auto invstd = std::make_shared<std::vector<float>>(size_t(rows));
    std::vector<float> out(xn->data.size());
    for (int64_t r = 0; r < rows; ++r) {
        const float* in = xn->data.data() + r * width;
        double mu = 0.0;
        for (int64_t i = 0; i < width; ++i) mu += in[i];
        mu /= double(width);
        double var = 0.0;
        for (int64_t i = 0; i < width; ++i) {
            const double d = in[i] - mu;
            var += d * d;
        }
        var /= double(width);
        const float is = float(1.0 / std::sqrt(var + eps));
        (*invstd)[size_t(r)] = is;
        float* xh = xhat->data() + r * width;
        float* o = out.data() + r * width;
        for (int64_t i = 0; i < width; ++i) {
            xh[i] = (in[i] - float(mu)) * is;
            o[i] = xh[i] * gn->data[size_t(i)] + bn->data[size_t(i)];
        }
    }
    return Tensor::wrap(make_result("layer_norm", xn->shape, std::move(out), {xn, gn, bn},
        [xn, gn, bn, xhat, invstd, width, rows](Node& self) {
            if (gn->requires_grad) gn->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            if (xn->requires_grad) xn->ensure_grad();
            std::vector<float> dxhat(size_t(width), 0.0f);
            for (int64_t r = 0; r < rows; ++r) {
                const float* dy = self.grad.data() + r * width;
                const float* xh = xhat->data() + r * width;
                if (gn->requires_grad || bn->requires_grad) {
                    for (int64_t i = 0; i < width; ++i) {
                        if (gn->requires_grad) gn->grad[size_t(i)] += dy[i] * xh[i];
                        if (bn->requires_grad) bn->grad[size_t(i)] += dy[i];
                    }
                }
                if (!xn->requires_grad) continue;
                double s1 = 0.0, s2 = 0.0;
                for (int64_t i = 0; i < width; ++i) {
                    dxhat[size_t(i)] = dy[i] * gn->data[size_t(i)];
                    s1 += dxhat[size_t(i)];
                    s2 += double(dxhat[size_t(i)]) * xh[i];
                }
                const float is = (*invstd)[size_t(r)];
                const float m1 = float(s1 / double(width));
                const float m2 = float(s2 / double(width));
                float* dx = xn->grad.data() + r * width;
                for (int64_t i = 0; i < width; ++i)
                    dx[i] += is * (dxhat[size_t(i)] - m1 - xh[i] * m2);
            }
        }));
}

// ---- batch norm -------------------------------------------------------

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  float momentum, float eps) {
    const auto& xn = x.node_ptr();
    const auto& gn = gamma.node_ptr();
    const auto& bn = beta.node_ptr();
    if (xn->shape.size() != 4) throw ShapeError("batch_norm: expected [B,C,H,W], got " + shape_str(xn->shape));
    const int64_t B = xn->shape[0], C = xn->shape[1], H = xn->shape[2], W = xn->shape[3];
    if (gn->shape != Shape{C} || bn->shape != Shape{C} ||
        running_mean.shape() != Shape{C} || running_var.shape() != Shape{C})
        shape_fail("batch_norm", xn->shape, gn->shape);
    const int64_t plane = H * W;
    const int64_t count = B * plane;
    std::vector<float> out(xn->data.size());

    if (!training) {
        // Deterministic per-channel affine map from the running statistics.
        std::vector<float> scale_c(size_t(C), 0.0f), shift_c(size_t(C), 0.0f);
        for (int64_t c = 0; c < C; ++c) {
            const float is = 1.0f / std::sqrt(running_var.data()[size_t(c)] + eps);
            scale_c[size_t(c)] = gn->data[size_t(c)] * is;
            shift_c[size_t(c)] = bn->data[size_t(c)] - running_mean.data()[size_t(c)] * scale_c[size_t(c)];
        }
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c) {
                const float* in = xn->data.data() + (b * C + c) * plane;
                float* o = out.data() + (b * C + c) * plane;
                const float sc = scale_c[size_t(c)], sh = shift_c[size_t(c)];
                for (int64_t p = 0; p < plane; ++p) o[p] = in[p] * sc + sh;
            }
        auto rm = running_mean.node_ptr();
        auto rv = running_var.node_ptr();
        return Tensor::wrap(make_result("batch_norm", xn->shape, std::move(out), {xn, gn, bn},
            [xn, gn, bn, rm, rv, B, C, plane, eps](Node& self) {
                if (gn->requires_grad) gn->ensure_grad();
                if (bn->requires_grad) bn->ensure_grad();
                if (xn->requires_grad) xn->ensure_grad();
                for (int64_t c = 0; c < C; ++c) {
                    const float is = 1.0f / std::sqrt(rv->data[size_t(c)] + eps);
                    const float g = gn->data[size_t(c)];
                    const float mu = rm->data[size_t(c)];
                    double dg = 0.0, db = 0.0;
                    for (int64_t b = 0; b < B; ++b) {
                        const float* dy = self.grad.data() + (b * C + c) * plane;
                        const float* in = xn->data.data() + (b * C + c) * plane;
                        float* dx = xn->requires_grad ? xn->grad.data() + (b * C + c) * plane : nullptr;
                        for (int64_t p = 0; p < plane; ++p) {
                            dg += double(dy[p]) * (in[p] - mu) * is;
                            db += dy[p];
                            if (dx) dx[p] += dy[p] * g * is;
                        }
                    }
                    if (gn->requires_grad) gn->grad[size_t(c)] += float(dg);
                    if (bn->requires_grad) bn->grad[size_t(c)] += float(db);
                }
            }));
    }

    if (count < 2) throw ValueError("batch_norm: training mode needs at least 2 values per channel");
    auto xhat = std::make_shared<std::vector<float>>(xn->data.size());
    auto invstd = std::make_shared<std::vector<float>>(size_t(C));
    for (int64_t c = 0; c < C; ++c) {
        double mu = 0.0;
        for (int64_t b = 0; b < B; ++b) {
            const float* in = xn->data.data() + (b * C + c) * plane;
            for (int64_t p = 0; p < plane; ++p) mu += in[p];
        }
        mu /= double(count);
        double var = 0.0;
        for (int64_t b = 0; b < B; ++b) {
            const float* in = xn->data.data() + (b * C + c) * plane;
            for (int64_t p = 0; p < plane; ++p) {
                const double d = in[p] - mu;
                var += d * d;
            }
        }
        var /= double(count);
        const float is = float(1.0 / std::sqrt(var + eps));
        (*invstd)[size_t(c)] = is;
        // Running buffers use the unbiased variance.
        const float unbiased = float(var * double(count) / double(count - 1));
        running_mean.mutable_data()[size_t(c)] =
            (1.0f - momentum) * running_mean.data()[size_t(c)] + momentum * float(mu);
        running_var.mutable_data()[size_t(c)] =
            (1.0f - momentum) * running_var.data()[size_t(c)] + momentum * unbiased;
        const float g = gn->data[size_t(c)], bt = bn->data[size_t(c)];
        for (int64_t b = 0; b < B; ++b) {
            const float* in = xn->data.data() + (b * C + c) * plane;
            float* xh = xhat->data() + (b * C + c) * plane;
            float* o = out.data() + (b * C + c) * plane;
            for (int64_t p = 0; p < plane; ++p) {
                xh[p] = (in[p] - float(mu)) * is;
                o[p] = xh[p] * g + bt;
            }
        }
    }
    return Tensor::wrap(make_result("batch_norm", xn->shape, std::move(out), {xn, gn, bn},
        [xn, gn, bn, xhat, invstd, B, C, plane, count](Node& self) {
            if (gn->requires_grad) gn->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            if (xn->requires_grad) xn->ensure_grad();
            for (int64_t c = 0; c < C; ++c) {
                double s_dy = 0.0, s_dyxh = 0.0;
                for (int64_t b = 0; b < B; ++b) {
                    const float* dy = self.grad.data() + (b * C + c) * plane;
                    const float* xh = xhat->data() + (b * C + c) * plane;
                    for (int64_t p = 0; p < plane; ++p) {
                        s_dy += dy[p];
                        s_dyxh += double(dy[p]) * xh[p];
                    }
                }
                if (gn->requires_grad) gn->grad[size_t(c)] += float(s_dyxh);
                if (bn->requires_grad) bn->grad[size_t(c)] += float(s_dy);
                if (!xn->requires_grad) continue;
                const float g = gn->data[size_t(c)];
                const float is = (*invstd)[size_t(c)];
                const float m_dy = float(s_dy / double(count));
                const float m_dyxh = float(s_dyxh / double(count));
                for (int64_t b = 0; b < B; ++b) {
                    const float* dy = self.grad.data() + (b * C + c) * plane;
                    const float* xh = xhat->data() + (b * C + c) * plane;
                    float* dx = xn->grad.data() + (b * C + c) * plane;
                    for (int64_t p = 0; p < plane; ++p)
                        dx[p] += g * is * (dy[p] - m_dy - xh[p] * m_dyxh);
                }
            }
        }));
}

// ---- reductions -------------------------------------------------------

namespace {

std::vector<int> normalize_axes(const Shape& shape, std::vector<int> axes) {
    const int nd = int(shape.size());
    for (auto& a : axes) {
        if (a < 0) a += nd;
        if (a < 0 || a >= nd)
            throw ValueError("reduce: axis out of range for " + shape_str(shape));
    }
    std::sort(axes.begin(), axes.end());
    axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
    return axes;
}

Tensor reduce(const char* op, const Tensor& x, std::vector<int> axes, bool keepdim, bool take_mean) {
    const auto& xn = x.node_ptr();
    axes = normalize_axes(xn->shape, axes);
    const int nd = int(xn->shape.size());
    std::vector<bool> reduced(size_t(nd), false);
    int64_t count = 1;
    for (int a : axes) {
        reduced[size_t(a)] = true;
        count *= xn->shape[size_t(a)];
    }
    Shape out_shape;
    Shape kept_shape(size_t(nd), 0);  // with 1s at reduced dims, for index math
    for (int i = 0; i < nd; ++i) {
        kept_shape[size_t(i)] = reduced[size_t(i)] ? 1 : xn->shape[size_t(i)];
        if (reduced[size_t(i)]) {
            if (keepdim) out_shape.push_back(1);
        } else {
            out_shape.push_back(xn->shape[size_t(i)]);
        }
    }
    if (out_shape.empty()) out_shape.push_back(1);

    const auto kept_strides = row_major_strides(kept_shape);
    const int64_t total = xn->numel();
    std::vector<float> acc(size_t(shape_numel(kept_shape)), 0.0f);
    {
        std::vector<int64_t> idx(size_t(nd), 0);
        int64_t out_off = 0;
        for (int64_t i = 0; i < total; ++i) {
            acc[size_t(out_off)] += xn->data[size_t(i)];
            for (int d = nd - 1; d >= 0; --d) {
                idx[size_t(d)]++;
                if (!reduced[size_t(d)]) out_off += kept_strides[size_t(d)];
                if (idx[size_t(d)] < xn->shape[size_t(d)]) break;
                if (!reduced[size_t(d)]) out_off -= kept_strides[size_t(d)] * xn->shape[size_t(d)];
                idx[size_t(d)] = 0;
            }
        }
    }
    if (take_mean) {
        const float inv = 1.0f / float(count);
        for (auto& v : acc) v *= inv;
    }
    const float scale_back = take_mean ? 1.0f / float(count) : 1.0f;
    return Tensor::wrap(make_result(op, out_shape, std::move(acc), {xn},
        [xn, reduced, kept_strides, nd, scale_back](Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const int64_t total = xn->numel();
            std::vector<int64_t> idx(size_t(nd), 0);
            int64_t out_off = 0;
            for (int64_t i = 0; i < total; ++i) {
                xn->grad[size_t(i)] += self.grad[size_t(out_off)] * scale_back;
                for (int d = nd - 1; d >= 0; --d) {
                    idx[size_t(d)]++;
                    if (!reduced[size_t(d)]) out_off += kept_strides[size_t(d)];
                    if (idx[size_t(d)] < xn->shape[size_t(d)]) break;
                    if (!reduced[size_t(d)]) out_off -= kept_strides[size_t(d)] * xn->shape[size_t(d)];
                    idx[size_t(d)] = 0;
                }
            }
        }));
}

}  // namespace

Tensor sum(const Tensor& x, std::vector<int> axes, bool keepdim) {
    return reduce("sum", x, std::move(axes), keepdim, false);
}

Tensor mean(const Tensor& x, std::vector<int> axes, bool keepdim) {
    return reduce("mean", x, std::move(axes), keepdim, true);
}

Tensor sum_all(const Tensor& x) {
    std::vector<int> axes(size_t(x.ndim()));
    std::iota(axes.begin(), axes.end(), 0);
    return reduce("sum", x, std::move(axes), false, false);
}

// ---- shape ops ----------------------------------------------------------

Tensor reshape(const Tensor& x, Shape new_shape) {
    const auto& xn = x.node_ptr();
    // One -1 dim is inferred.
    int64_t known = 1;
    int infer = -1;
    for (size_t i = 0; i < new_shape.size(); ++i) {
        if (new_shape[i] == -1) {
            if (infer >= 0) throw ShapeError("reshape: more than one -1 in " + shape_str(new_shape));
            infer = int(i);
        } else {
            known *= new_shape[i];
        }
    }
    if (infer >= 0) {
        if (known == 0 || xn->numel() % known != 0)
            shape_fail("reshape", xn->shape, new_shape);
        new_shape[size_t(infer)] = xn->numel() / known;
    }
    if (shape_numel(new_shape) != xn->numel()) shape_fail("reshape", xn->shape, new_shape);
    std::vector<float> out = xn->data;
    return Tensor::wrap(make_result("reshape", new_shape, std::move(out), {xn},
        [xn](Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
        }));
}

Tensor permute(const Tensor& x, std::vector<int> order) {
    const auto& xn = x.node_ptr();
    const int nd = int(xn->shape.size());
    if (int(order.size()) != nd) throw ShapeError("permute: order size mismatch for " + shape_str(xn->shape));
    std::vector<bool> seen(size_t(nd), false);
    Shape out_shape(size_t(nd), 0);
    for (int i = 0; i < nd; ++i) {
        int o = order[size_t(i)];
        if (o < 0) o += nd;
        if (o < 0 || o >= nd || seen[size_t(o)]) throw ShapeError("permute: bad axis order");
        seen[size_t(o)] = true;
        order[size_t(i)] = o;
        out_shape[size_t(i)] = xn->shape[size_t(o)];
    }
    const auto in_strides = row_major_strides(xn->shape);
    std::vector<int64_t> gather(size_t(nd), 0);  // stride in input per output dim
    for (int i = 0; i < nd; ++i) gather[size_t(i)] = in_strides[size_t(order[size_t(i)])];

    const int64_t total = xn->numel();
    std::vector<float> out(size_t(total), 0.0f);
    std::vector<int64_t> idx(size_t(nd), 0);
    int64_t in_off = 0;
    for (int64_t i = 0; i < total; ++i) {
        out[size_t(i)] = xn->data[size_t(in_off)];
        for (int d = nd - 1; d >= 0; --d) {
            idx[size_t(d)]++;
            in_off += gather[size_t(d)];
            if (idx[size_t(d)] < out_shape[size_t(d)]) break;
            in_off -= gather[size_t(d)] * out_shape[size_t(d)];
            idx[size_t(d)] = 0;
        }
    }
    return Tensor::wrap(make_result("permute", out_shape, std::move(out), {xn},
        [xn, out_shape, gather, nd](Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const int64_t total = int64_t(self.grad.size());
            std::vector<int64_t> idx(size_t(nd), 0);
            int64_t in_off = 0;
            for (int64_t i = 0; i < total; ++i) {
                xn->grad[size_t(in_off)] += self.grad[size_t(i)];
                for (int d = nd - 1; d >= 0; --d) {
                    idx[size_t(d)]++;
                    in_off += gather[size_t(d)];
                    if (idx[size_t(d)] < out_shape[size_t(d)]) break;
                    in_off -= gather[size_t(d)] * out_shape[size_t(d)];
                    idx[size_t(d)] = 0;
                }
            }
        }));
}

Tensor transpose_last(const Tensor& x) {
    std::vector<int> order(size_t(x.ndim()));
    std::iota(order.begin(), order.end(), 0);
    std::swap(order[order.size() - 1], order[order.size() - 2]);
    return permute(x, order);
}

// ---- attention ----------------------------------------------------------

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    if (q.ndim() < 2 || k.ndim() != q.ndim() || v.ndim() != q.ndim())
        shape_fail("attention", q.shape(), k.shape());
    const int64_t dh = q.dim(-1);
    if (k.dim(-1) != dh || v.dim(-2) != k.dim(-2))
        shape_fail("attention", k.shape(), v.shape());
    Tensor scores = scale(matmul(q, transpose_last(k)), 1.0f / std::sqrt(float(dh)));
    return matmul(softmax(scores), v);
}

// ---- cross entropy ------------------------------------------------------

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    const auto& ln = logits.node_ptr();
    if (ln->shape.size() != 2)
        throw ShapeError("cross_entropy: expected [B,C] logits, got " + shape_str(ln->shape));
    const int64_t B = ln->shape[0], C = ln->shape[1];
    if (int64_t(labels.size()) != B)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(B));
    for (int v : labels)
        if (v < 0 || v >= C)
            throw ValueError("cross_entropy: label " + std::to_string(v) + " outside [0," +
                             std::to_string(C) + ")");
    auto probs = std::make_shared<std::vector<float>>(ln->data.size());
    double loss = 0.0;
    for (int64_t b = 0; b < B; ++b) {
        const float* in = ln->data.data() + b * C;
        float* p = probs->data() + b * C;
        float mx = in[0];
        for (int64_t c = 1; c < C; ++c) mx = std::max(mx, in[c]);
        double denom = 0.0;
        for (int64_t c = 0; c < C; ++c) {
            p[c] = std::exp(in[c] - mx);
            denom += p[c];
        }
        const float inv = float(1.0 / denom);
        for (int64_t c = 0; c < C; ++c) p[c] *= inv;
        loss += std::log(denom) + mx - in[labels[size_t(b)]];
    }
    loss /= double(B);
    auto labels_copy = labels;
    return Tensor::wrap(make_result("cross_entropy", {1}, {float(loss)}, {ln},
        [ln, probs, labels_copy, B, C](Node& self) {
            if (!ln->requires_grad) return;
            ln->ensure_grad();
            const float d = self.grad[0] / float(B);
            for (int64_t b = 0; b < B; ++b) {
                const float* p = probs->data() + b * C;
                float* dx = ln->grad.data() + b * C;
                const int y = labels_copy[size_t(b)];
                for (int64_t c = 0; c < C; ++c)
                    dx[c] += d * (p[c] - (c == y ? 1.0f : 0.0f));
            }
        }));
}

// ---- backward -----------------------------------------------------------

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ValueError("backward: loss must be a defined scalar tensor");
    Node* root = loss.node();
    if (!root->requires_grad)
        throw ValueError("backward: loss is detached from the tape (no differentiable inputs)");

    // Gather the reachable subgraph once, then replay in reverse recording
    // order. Reverse seq order is a valid topological order because inputs
    // are always recorded before the ops that consume them.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{root};
    seen.insert(root);
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(),
              [](const Node* a, const Node* b) { return a->seq > b->seq; });

    root->ensure_grad();
    root->grad[0] = 1.0f;
    for (Node* n : order) {
        if (!n->backward_fn) continue;
        n->ensure_grad();
        n->backward_fn(*n);
    }
}

}  // namespace curvprobe
