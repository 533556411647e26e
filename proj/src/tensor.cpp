#include "pctrees/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <unordered_set>

#include "pctrees/error.hpp"

namespace pctrees::tensor {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) out += (i ? ", " : "") + std::to_string(s[i]);
    return out + ")";
}

namespace {

thread_local bool g_grad_enabled = true;

constexpr uint64_t kFnvOffset = 14695981039346656037ull;
constexpr uint64_t kFnvPrime = 1099511628211ull;
thread_local uint64_t g_active_hash = kFnvOffset;

inline void fold_active(uint64_t word) { g_active_hash = (g_active_hash ^ word) * kFnvPrime; }

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void KinkMonitor::reset() { g_active_hash = kFnvOffset; }

KinkMonitor KinkMonitor::read() { return {g_active_hash}; }

// One vertex of the recorded computation graph. backward_fn scatters this
// node's accumulated gradient into the parents' gradients; parents are held
// alive by the shared_ptr list.
template <typename T>
struct Node {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void()> backward_fn;
};

namespace {

template <typename T>
void ensure_grad(Node<T>* n) {
    if (n->grad.empty()) n->grad.assign(n->values.size(), T(0));
}

template <typename T>
std::shared_ptr<Node<T>> make_node(Shape shape, std::vector<T> values) {
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    return n;
}

}  // namespace

template <typename T>
TensorBase<T>::TensorBase() = default;
template <typename T>
TensorBase<T>::~TensorBase() = default;
template <typename T>
TensorBase<T>::TensorBase(const TensorBase&) = default;
template <typename T>
TensorBase<T>::TensorBase(TensorBase&&) noexcept = default;
template <typename T>
TensorBase<T>& TensorBase<T>::operator=(const TensorBase&) = default;
template <typename T>
TensorBase<T>& TensorBase<T>::operator=(TensorBase&&) noexcept = default;

template <typename T>
TensorBase<T>::TensorBase(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

template <typename T>
TensorBase<T> TensorBase<T>::zeros(const Shape& shape) {
    return TensorBase(make_node<T>(shape, std::vector<T>(shape_numel(shape), T(0))));
}

template <typename T>
TensorBase<T> TensorBase<T>::full(const Shape& shape, T value) {
    return TensorBase(make_node<T>(shape, std::vector<T>(shape_numel(shape), value)));
}

template <typename T>
TensorBase<T> TensorBase<T>::from(const Shape& shape, std::vector<T> data) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw_shape("from: shape " + shape_str(shape) + " wants " +
                    std::to_string(shape_numel(shape)) + " values, got " +
                    std::to_string(data.size()));
    return TensorBase(make_node<T>(shape, std::move(data)));
}

template <typename T>
TensorBase<T> TensorBase<T>::scalar(T value) {
    return TensorBase(make_node<T>(Shape{}, std::vector<T>{value}));
}

template <typename T>
TensorBase<T> TensorBase<T>::uniform(const Shape& shape, T lo, T hi, Rng& rng) {
    std::vector<T> data(shape_numel(shape));
    for (T& v : data) v = static_cast<T>(rng.uniform(lo, hi));
    return TensorBase(make_node<T>(shape, std::move(data)));
}

template <typename T>
const Shape& TensorBase<T>::shape() const {
    if (!node_) throw_shape("undefined tensor");
    return node_->shape;
}

template <typename T>
int TensorBase<T>::rank() const {
    return static_cast<int>(shape().size());
}

template <typename T>
int64_t TensorBase<T>::dim(int i) const {
    return shape().at(i);
}

template <typename T>
int64_t TensorBase<T>::numel() const {
    if (!node_) throw_shape("undefined tensor");
    return static_cast<int64_t>(node_->values.size());
}

template <typename T>
const std::vector<T>& TensorBase<T>::values() const {
    if (!node_) throw_shape("undefined tensor");
    return node_->values;
}

template <typename T>
std::vector<T>& TensorBase<T>::mutable_values() {
    if (!node_) throw_shape("undefined tensor");
    return node_->values;
}

template <typename T>
T TensorBase<T>::item() const {
    if (numel() != 1) throw_shape("item: tensor has " + std::to_string(numel()) + " values");
    return node_->values[0];
}

template <typename T>
bool TensorBase<T>::requires_grad() const {
    return node_ && node_->requires_grad;
}

template <typename T>
TensorBase<T>& TensorBase<T>::set_requires_grad(bool v) {
    if (!node_) throw_shape("undefined tensor");
    node_->requires_grad = v;
    return *this;
}

template <typename T>
const std::vector<T>& TensorBase<T>::grad() const {
    if (!node_) throw_shape("undefined tensor");
    return node_->grad;
}

template <typename T>
void TensorBase<T>::zero_grad() {
    if (node_) node_->grad.clear();
}

template <typename T>
Tape<T> Tape<T>::record_from(const TensorBase<T>& root) {
    Tape tape;
    if (!root.node() || !root.node()->requires_grad) return tape;
    // Iterative post-order DFS over grad-participating nodes.
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, size_t>> stack{{root.node(), 0}};
    seen.insert(root.node());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node<T>* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            tape.order_.push_back(n);
            stack.pop_back();
        }
    }
    return tape;
}

template <typename T>
void Tape<T>::run_backward(const TensorBase<T>& root) {
    if (root.numel() != 1) throw_shape("backward: root must be scalar");
    if (order_.empty()) return;
    ensure_grad(root.node());
    root.node()->grad[0] += T(1);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn) {
            ensure_grad(n);
            n->backward_fn();
        }
    }
}

template <typename T>
void TensorBase<T>::backward() const {
    Tape<T>::record_from(*this).run_backward(*this);
}

// ---------------- broadcasting machinery ----------------

namespace {

Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
    size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (size_t i = 0; i < rank; ++i) {
        int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1)
            throw_shape(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                        shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Per-output-dimension element strides into an operand, 0 on broadcast axes.
std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<int64_t> strides(out.size(), 0);
    int64_t acc = 1;
    for (size_t i = 0; i < in.size(); ++i) {
        size_t j = in.size() - 1 - i;            // dim of `in`
        size_t k = out.size() - 1 - i;           // aligned dim of `out`
        strides[k] = in[j] == 1 ? 0 : acc;
        acc *= in[j];
    }
    return strides;
}

// Walks the output index space while tracking the two input offsets.
template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<int64_t>& sa,
                        const std::vector<int64_t>& sb, F&& body) {
    int64_t total = shape_numel(out);
    int rank = static_cast<int>(out.size());
    std::vector<int64_t> idx(rank, 0);
    int64_t oa = 0, ob = 0;
    for (int64_t i = 0; i < total; ++i) {
        body(i, oa, ob);
        for (int d = rank - 1; d >= 0; --d) {
            ++idx[d];
            oa += sa[d];
            ob += sb[d];
            if (idx[d] < out[d]) break;
            idx[d] = 0;
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
        }
    }
}

template <typename T, typename Fwd, typename Bwd>
TensorBase<T> binary_op(const TensorBase<T>& a, const TensorBase<T>& b, const char* name,
                        Fwd fwd, Bwd bwd) {
    Shape out_shape = broadcast_shapes(a.shape(), b.shape(), name);
    auto sa = broadcast_strides(a.shape(), out_shape);
    auto sb = broadcast_strides(b.shape(), out_shape);
    std::vector<T> out(shape_numel(out_shape));
    const auto& av = a.values();
    const auto& bv = b.values();
    if (a.shape() == b.shape()) {
        for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
    } else {
        for_each_broadcast(out_shape, sa, sb,
                           [&](int64_t i, int64_t oa, int64_t ob) { out[i] = fwd(av[oa], bv[ob]); });
    }
    auto node = make_node<T>(out_shape, std::move(out));
    if (g_grad_enabled && (a.requires_grad() || b.requires_grad())) {
        node->requires_grad = true;
        node->parents = {a.node_shared(), b.node_shared()};
        Node<T>* self = node.get();
        Node<T>* an = a.node();
        Node<T>* bn = b.node();
        node->backward_fn = [self, an, bn, sa, sb, bwd]() {
            bool need_a = an->requires_grad;
            bool need_b = bn->requires_grad;
            if (need_a) ensure_grad(an);
            if (need_b) ensure_grad(bn);
            for_each_broadcast(self->shape, sa, sb, [&](int64_t i, int64_t oa, int64_t ob) {
                auto [da, db] = bwd(an->values[oa], bn->values[ob], self->grad[i]);
                if (need_a) an->grad[oa] += da;
                if (need_b) bn->grad[ob] += db;
            });
        };
    }
    return TensorBase<T>(std::move(node));
}

}  // namespace

template <typename T>
TensorBase<T> add(const TensorBase<T>& a, const TensorBase<T>& b) {
    return binary_op<T>(
        a, b, "add", [](T x, T y) { return x + y; },
        [](T, T, T g) { return std::pair<T, T>{g, g}; });
}

template <typename T>
TensorBase<T> sub(const TensorBase<T>& a, const TensorBase<T>& b) {
    return binary_op<T>(
        a, b, "sub", [](T x, T y) { return x - y; },
        [](T, T, T g) { return std::pair<T, T>{g, -g}; });
}

template <typename T>
TensorBase<T> mul(const TensorBase<T>& a, const TensorBase<T>& b) {
    return binary_op<T>(
        a, b, "mul", [](T x, T y) { return x * y; },
        [](T x, T y, T g) { return std::pair<T, T>{g * y, g * x}; });
}

template <typename T>
TensorBase<T> div(const TensorBase<T>& a, const TensorBase<T>& b) {
    return binary_op<T>(
        a, b, "div", [](T x, T y) { return x / y; },
        [](T x, T y, T g) { return std::pair<T, T>{g / y, -g * x / (y * y)}; });
}

template <typename T>
TensorBase<T> scale(const TensorBase<T>& a, T c) {
    std::vector<T> out(a.values().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * c;
    auto node = make_node<T>(a.shape(), std::move(out));
    if (g_grad_enabled && a.requires_grad()) {
        node->requires_grad = true;
        node->parents = {a.node_shared()};
        Node<T>* self = node.get();
        Node<T>* an = a.node();
        node->backward_fn = [self, an, c]() {
            ensure_grad(an);
            for (size_t i = 0; i < self->grad.size(); ++i) an->grad[i] += c * self->grad[i];
        };
    }
    return TensorBase<T>(std::move(node));
}

template <typename T>
TensorBase<T> relu(const TensorBase<T>& a) {
    const auto& av = a.values();
    std::vector<T> out(av.size());
    uint64_t word = 0;
    int packed = 0;
    for (size_t i = 0; i < out.size(); ++i) {
        bool on = av[i] > T(0);
        out[i] = on ? av[i] : T(0);
        word = (word << 1) | (on ? 1u : 0u);
        if (++packed == 64) {
            fold_active(word);
            word = 0;
            packed = 0;
        }
    }
    if (packed) fold_active(word);
    auto node = make_node<T>(a.shape(), std::move(out));
    if (g_grad_enabled && a.requires_grad()) {
        node->requires_grad = true;
        node->parents = {a.node_shared()};
        Node<T>* self = node.get();
        Node<T>* an = a.node();
        node->backward_fn = [self, an]() {
            ensure_grad(an);
            for (size_t i = 0; i < self->grad.size(); ++i)
                if (an->values[i] > T(0)) an->grad[i] += self->grad[i];
        };
    }
    return TensorBase<T>(std::move(node));
}

// ---------------- shape ops ----------------

template <typename T>
TensorBase<T> reshape(const TensorBase<T>& a, const Shape& shape) {
    if (shape_numel(shape) != a.numel())
        throw_shape("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                    " changes element count");
    auto node = make_node<T>(shape, a.values());
    if (g_grad_enabled && a.requires_grad()) {
        node->requires_grad = true;
        node->parents = {a.node_shared()};
        Node<T>* self = node.get();
        Node<T>* an = a.node();
        node->backward_fn = [self, an]() {
            ensure_grad(an);
            for (size_t i = 0; i < self->grad.size(); ++i) an->grad[i] += self->grad[i];
        };
    }
    return TensorBase<T>(std::move(node));
}

template <typename T>
TensorBase<T> transpose_last2(const TensorBase<T>& a) {
    if (a.rank() < 2) throw_shape("transpose_last2: rank must be >= 2");
    Shape out_shape = a.shape();
    std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
    int64_t r = a.shape()[a.rank() - 2];
    int64_t c = a.shape()[a.rank() - 1];
    int64_t batches = a.numel() / (r * c);
    std::vector<T> out(a.values().size());
    const auto& av = a.values();
    for (int64_t b = 0; b < batches; ++b) {
        const T* src = av.data() + b * r * c;
        T* dst = out.data() + b * r * c;
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
    }
    auto node = make_node<T>(out_shape, std::move(out));
    if (g_grad_enabled && a.requires_grad()) {
        node->requires_grad = true;
        node->parents = {a.node_shared()};
        Node<T>* self = node.get();
        Node<T>* an = a.node();
        node->backward_fn = [self, an, r, c, batches]() {
            ensure_grad(an);
            for (int64_t b = 0; b < batches; ++b) {
                const T* g = self->grad.data() + b * r * c;
                T* dst = an->grad.data() + b * r * c;
                for (int64_t i = 0; i < r; ++i)
                    for (int64_t j = 0; j < c; ++j) dst[i * c + j] += g[j * r + i];
            }
        };
    }
    return TensorBase<T>(std::move(node));
}

template <typename T>
TensorBase<T> concat(std::span<const TensorBase<T>> xs, int dim) {
    if (xs.empty()) throw_shape("concat: no inputs");
    int rank = xs[0].rank();
    if (dim < 0 || dim >= rank) throw_shape("concat: dim out of range");
    Shape out_shape = xs[0].shape();
    out_shape[dim] = 0;
    for (const auto& x : xs) {
        if (x.rank() != rank) throw_shape("concat: rank mismatch");
        for (int d = 0; d < rank; ++d)
            if (d != dim && x.shape()[d] != xs[0].shape()[d])
                throw_shape("concat: shape mismatch at dim " + std::to_string(d));
        out_shape[dim] += x.shape()[dim];
    }
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < dim; ++d) outer *= out_shape[d];
    for (int d = dim + 1; d < rank; ++d) inner *= out_shape[d];
    int64_t out_chunk = out_shape[dim] * inner;

    std::vector<T> out(shape_numel(out_shape));
    int64_t offset = 0;
    bool any_grad = false;
    for (const auto& x : xs) {
        int64_t chunk = x.shape()[dim] * inner;
        const auto& xv = x.values();
        for (int64_t o = 0; o < outer; ++o)
            std::copy_n(xv.data() + o * chunk, chunk, out.data() + o * out_chunk + offset);
        offset += chunk;
        any_grad = any_grad || x.requires_grad();
    }
    auto node = make_node<T>(out_shape, std::move(out));
    if (g_grad_enabled && any_grad) {
        node->requires_grad = true;
        std::vector<int64_t> chunks;
        for (const auto& x : xs) {
            node->parents.push_back(x.node_shared());
            chunks.push_back(x.shape()[dim] * inner);
        }
        Node<T>* self = node.get();
        node->backward_fn = [self, chunks, outer, out_chunk]() {
            int64_t offset = 0;
            for (size_t p = 0; p < self->parents.size(); ++p) {
                Node<T>* parent = self->parents[p].get();
                int64_t chunk = chunks[p];
                if (parent->requires_grad) {
                    ensure_grad(parent);
                    for (int64_t o = 0; o < outer; ++o) {
                        const T* g = self->grad.data() + o * out_chunk + offset;
                        T* dst = parent->grad.data() + o * chunk;
                        for (int64_t i = 0; i < chunk; ++i) dst[i] += g[i];
                    }
                }
                offset += chunk;
            }
        };
    }
    return TensorBase<T>(std::move(node));
}

// ---------------- GEMM kernels (accumulate into C) ----------------

namespace {

template <typename T>
void gemm_nn(const T* A, const T* B, T* C, int64_t M, int64_t K, int64_t N) {
    for (int64_t i = 0; i < M; ++i) {
        const T* a = A + i * K;
        T* c = C + i * N;
        for (int64_t k = 0; k < K; ++k) {
            T av = a[k];
            const T* b = B + k * N;
            for (int64_t n = 0; n < N; ++n) c[n] += av * b[n];
        }
    }
}

// C(M,N) += A(M,K) * B(N,K)^T
template <typename T>
void gemm_nt(const T* A, const T* B, T* C, int64_t M, int64_t K, int64_t N) {
    for (int64_t i = 0; i < M; ++i) {
        const T* a = A + i * K;
        T* c = C + i * N;
        for (int64_t n = 0; n < N; ++n) {
            const T* b = B + n * K;
            T acc = T(0);
            for (int64_t k = 0; k < K; ++k) acc += a[k] * b[k];
            c[n] += acc;
        }
    }
}

// C(M,N) += A(K,M)^T * B(K,N)
template <typename T>
void gemm_tn(const T* A, const T* B, T* C, int64_t M, int64_t K, int64_t N) {
    for (int64_t k = 0; k < K; ++k) {
        const T* a = A + k * M;
        const T* b = B + k * N;
        for (int64_t i = 0; i < M; ++i) {
            T av = a[i];
            T* c = C + i * N;
            for (int64_t n = 0; n < N; ++n) c[n] += av * b[n];
        }
    }
}

}  // namespace

template <typename T>
TensorBase<T> matmul(const TensorBase<T>& a, const TensorBase<T>& b) {
    if (a.rank() < 2 || b.rank() < 2) throw_shape("matmul: operands must have rank >= 2");
    int64_t m = a.shape()[a.rank() - 2];
    int64_t k = a.shape()[a.rank() - 1];
    int64_t k2 = b.shape()[b.rank() - 2];
    int64_t n = b.shape()[b.rank() - 1];
    if (k != k2)
        throw_shape("matmul: inner dims differ, " + shape_str(a.shape()) + " x " +
                    shape_str(b.shape()));
    bool b_is_weight = b.rank() == 2;
    if (!b_is_weight) {
        if (a.rank() != b.rank()) throw_shape("matmul: batch ranks differ");
        for (int d = 0; d < a.rank() - 2; ++d)
            if (a.shape()[d] != b.shape()[d]) throw_shape("matmul: batch dims differ");
    }
    int64_t batches = a.numel() / (m * k);
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(n);

    std::vector<T> out(batches * m * n, T(0));
    const T* av = a.values().data();
    const T* bv = b.values().data();
    if (b_is_weight) {
        gemm_nn(av, bv, out.data(), batches * m, k, n);
    } else {
        for (int64_t i = 0; i < batches; ++i)
            gemm_nn(av + i * m * k, bv + i * k * n, out.data() + i * m * n, m, k, n);
    }
    auto node = make_node<T>(out_shape, std::move(out));
    if (g_grad_enabled && (a.requires_grad() || b.requires_grad())) {
        node->requires_grad = true;
        node->parents = {a.node_shared(), b.node_shared()};
        Node<T>* self = node.get();
        Node<T>* an = a.node();
        Node<T>* bn = b.node();
        node->backward_fn = [self, an, bn, m, k, n, batches, b_is_weight]() {
            const T* g = self->grad.data();
            if (an->requires_grad) {
                ensure_grad(an);
                if (b_is_weight) {
                    gemm_nt(g, bn->values.data(), an->grad.data(), batches * m, n, k);
                } else {
                    for (int64_t i = 0; i < batches; ++i)
                        gemm_nt(g + i * m * n, bn->values.data() + i * k * n,
                                an->grad.data() + i * m * k, m, n, k);
                }
            }
            if (bn->requires_grad) {
                ensure_grad(bn);
                if (b_is_weight) {
                    gemm_tn(an->values.data(), g, bn->grad.data(), k, batches * m, n);
                } else {
                    for (int64_t i = 0; i < batches; ++i)
                        gemm_tn(an->values.data() + i * m * k, g + i * m * n,
                                bn->grad.data() + i * k * n, k, m, n);
                }
            }
        };
    }
    return TensorBase<T>(std::move(node));
}

// ---------------- reductions ----------------

namespace {

// Splits a shape around `dim` into outer x d x inner.
struct Split {
    int64_t outer = 1, d = 1, inner = 1;
};

Split split_at(const Shape& s, int dim, const char* op) {
    if (dim < 0 || dim >= static_cast<int>(s.size()))
        throw_shape(std::string(op) + ": dim out of range for " + shape_str(s));
    Split sp;
    for (int i = 0; i < dim; ++i) sp.outer *= s[i];
    sp.d = s[dim];
    for (size_t i = dim + 1; i < s.size(); ++i) sp.inner *= s[i];
    return sp;
}

Shape drop_dim(const Shape& s, int dim) {
    Shape out;
    for (int i = 0; i < static_cast<int>(s.size()); ++i)
        if (i != dim) out.push_back(s[i]);
    return out;
}

}  // namespace

template <typename T>
TensorBase<T> sum_over(const TensorBase<T>& a, int dim) {
    Split sp = split_at(a.shape(), dim, "sum_over");
    std::vector<T> out(sp.outer * sp.inner, T(0));
    const auto& av = a.values();
    for (int64_t o = 0; o < sp.outer; ++o)
        for (int64_t j = 0; j < sp.d; ++j) {
            const T* src = av.data() + (o * sp.d + j) * sp.inner;
            T* dst = out.data() + o * sp.inner;
            for (int64_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
        }
    auto node = make_node<T>(drop_dim(a.shape(), dim), std::move(out));
    if (g_grad_enabled && a.requires_grad()) {
        node->requires_grad = true;
        node->parents = {a.node_shared()};
        Node<T>* self = node.get();
        Node<T>* an = a.node();
        node->backward_fn = [self, an, sp]() {
            ensure_grad(an);
            for (int64_t o = 0; o < sp.outer; ++o)
                for (int64_t j = 0; j < sp.d; ++j) {
                    T* dst = an->grad.data() + (o * sp.d + j) * sp.inner;
                    const T* g = self->grad.data() + o * sp.inner;
                    for (int64_t i = 0; i < sp.inner; ++i) dst[i] += g[i];
                }
        };
    }
    return TensorBase<T>(std::move(node));
}

template <typename T>
TensorBase<T> mean_over(const TensorBase<T>& a, int dim) {
    Split sp = split_at(a.shape(), dim, "mean_over");
    return scale(sum_over(a, dim), T(1) / static_cast<T>(sp.d));
}

template <typename T>
TensorBase<T> max_over(const TensorBase<T>& a, int dim) {
    Split sp = split_at(a.shape(), dim, "max_over");
    std::vector<T> out(sp.outer * sp.inner);
    std::vector<int64_t> arg(sp.outer * sp.inner);
    const auto& av = a.values();
    for (int64_t o = 0; o < sp.outer; ++o)
        for (int64_t i = 0; i < sp.inner; ++i) {
            T best = av[(o * sp.d) * sp.inner + i];
            int64_t best_j = 0;
            for (int64_t j = 1; j < sp.d; ++j) {
                T v = av[(o * sp.d + j) * sp.inner + i];
                if (v > best) {
                    best = v;
                    best_j = j;
                }
            }
            out[o * sp.inner + i] = best;
            arg[o * sp.inner + i] = best_j;
            fold_active(static_cast<uint64_t>(best_j));
        }
    auto node = make_node<T>(drop_dim(a.shape(), dim), std::move(out));
    if (g_grad_enabled && a.requires_grad()) {
        node->requires_grad = true;
        node->parents = {a.node_shared()};
        Node<T>* self = node.get();
        Node<T>* an = a.node();
        node->backward_fn = [self, an, sp, arg = std::move(arg)]() {
            ensure_grad(an);
            for (int64_t o = 0; o < sp.outer; ++o)
                for (int64_t i = 0; i < sp.inner; ++i) {
                    int64_t j = arg[o * sp.inner + i];
                    an->grad[(o * sp.d + j) * sp.inner + i] += self->grad[o * sp.inner + i];
                }
        };
    }
    return TensorBase<T>(std::move(node));
}

template <typename T>
TensorBase<T> sum_all(const TensorBase<T>& a) {
    const auto& av = a.values();
    T total = T(0);
    for (T v : av) total += v;
    auto node = make_node<T>(Shape{}, std::vector<T>{total});
    if (g_grad_enabled && a.requires_grad()) {
        node->requires_grad = true;
        node->parents = {a.node_shared()};
        Node<T>* self = node.get();
        Node<T>* an = a.node();
        node->backward_fn = [self, an]() {
            ensure_grad(an);
            T g = self->grad[0];
            for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
        };
    }
    return TensorBase<T>(std::move(node));
}

template <typename T>
TensorBase<T> logsumexp(const TensorBase<T>& a, int dim) {
    Split sp = split_at(a.shape(), dim, "logsumexp");
    std::vector<T> out(sp.outer * sp.inner);
    const auto& av = a.values();
    for (int64_t o = 0; o < sp.outer; ++o)
        for (int64_t i = 0; i < sp.inner; ++i) {
            T mx = -std::numeric_limits<T>::infinity();
            for (int64_t j = 0; j < sp.d; ++j)
                mx = std::max(mx, av[(o * sp.d + j) * sp.inner + i]);
            T acc = T(0);
            for (int64_t j = 0; j < sp.d; ++j)
                acc += std::exp(av[(o * sp.d + j) * sp.inner + i] - mx);
            out[o * sp.inner + i] = mx + std::log(acc);
        }
    auto node = make_node<T>(drop_dim(a.shape(), dim), std::move(out));
    if (g_grad_enabled && a.requires_grad()) {
        node->requires_grad = true;
        node->parents = {a.node_shared()};
        Node<T>* self = node.get();
        Node<T>* an = a.node();
        node->backward_fn = [self, an, sp]() {
            ensure_grad(an);
            // d lse / d a_j = exp(a_j - lse)
            for (int64_t o = 0; o < sp.outer; ++o)
                for (int64_t i = 0; i < sp.inner; ++i) {
                    T lse = self->values[o * sp.inner + i];
                    T g = self->grad[o * sp.inner + i];
                    for (int64_t j = 0; j < sp.d; ++j) {
                        int64_t at = (o * sp.d + j) * sp.inner + i;
                        an->grad[at] += std::exp(an->values[at] - lse) * g;
                    }
                }
        };
    }
    return TensorBase<T>(std::move(node));
}

template <typename T>
TensorBase<T> softmax(const TensorBase<T>& a, int dim) {
    Split sp = split_at(a.shape(), dim, "softmax");
    std::vector<T> out(a.values().size());
    const auto& av = a.values();
    for (int64_t o = 0; o < sp.outer; ++o)
        for (int64_t i = 0; i < sp.inner; ++i) {
            T mx = -std::numeric_limits<T>::infinity();
            for (int64_t j = 0; j < sp.d; ++j)
                mx = std::max(mx, av[(o * sp.d + j) * sp.inner + i]);
            T denom = T(0);
            for (int64_t j = 0; j < sp.d; ++j) {
                T e = std::exp(av[(o * sp.d + j) * sp.inner + i] - mx);
                out[(o * sp.d + j) * sp.inner + i] = e;
                denom += e;
            }
            for (int64_t j = 0; j < sp.d; ++j) out[(o * sp.d + j) * sp.inner + i] /= denom;
        }
    auto node = make_node<T>(a.shape(), std::move(out));
    if (g_grad_enabled && a.requires_grad()) {
        node->requires_grad = true;
        node->parents = {a.node_shared()};
        Node<T>* self = node.get();
        Node<T>* an = a.node();
        node->backward_fn = [self, an, sp]() {
            ensure_grad(an);
            // dx_j = y_j * (g_j - sum_k g_k y_k)
            for (int64_t o = 0; o < sp.outer; ++o)
                for (int64_t i = 0; i < sp.inner; ++i) {
                    T dot = T(0);
                    for (int64_t j = 0; j < sp.d; ++j) {
                        int64_t at = (o * sp.d + j) * sp.inner + i;
                        dot += self->grad[at] * self->values[at];
                    }
                    for (int64_t j = 0; j < sp.d; ++j) {
                        int64_t at = (o * sp.d + j) * sp.inner + i;
                        an->grad[at] += self->values[at] * (self->grad[at] - dot);
                    }
                }
        };
    }
    return TensorBase<T>(std::move(node));
}

// ---------------- conv / pool ----------------

namespace {

struct ConvDims {
    int64_t N, C, H, W, F, kh, kw, Ho, Wo;
    int stride, pad;
};

// cols is (C*kh*kw) x (N*Ho*Wo), column-major by output position.
template <typename T>
void im2col(const T* x, const ConvDims& d, T* cols) {
    int64_t P = d.N * d.Ho * d.Wo;
    for (int64_t n = 0; n < d.N; ++n)
        for (int64_t c = 0; c < d.C; ++c)
            for (int64_t i = 0; i < d.kh; ++i)
                for (int64_t j = 0; j < d.kw; ++j) {
                    int64_t row = (c * d.kh + i) * d.kw + j;
                    for (int64_t ho = 0; ho < d.Ho; ++ho) {
                        int64_t hi = ho * d.stride - d.pad + i;
                        int64_t col_base = (n * d.Ho + ho) * d.Wo;
                        if (hi < 0 || hi >= d.H) {
                            for (int64_t wo = 0; wo < d.Wo; ++wo)
                                cols[row * P + col_base + wo] = T(0);
                            continue;
                        }
                        const T* xrow = x + ((n * d.C + c) * d.H + hi) * d.W;
                        for (int64_t wo = 0; wo < d.Wo; ++wo) {
                            int64_t wi = wo * d.stride - d.pad + j;
                            cols[row * P + col_base + wo] =
                                (wi < 0 || wi >= d.W) ? T(0) : xrow[wi];
                        }
                    }
                }
}

template <typename T>
void col2im_add(const T* cols, const ConvDims& d, T* dx) {
    int64_t P = d.N * d.Ho * d.Wo;
    for (int64_t n = 0; n < d.N; ++n)
        for (int64_t c = 0; c < d.C; ++c)
            for (int64_t i = 0; i < d.kh; ++i)
                for (int64_t j = 0; j < d.kw; ++j) {
                    int64_t row = (c * d.kh + i) * d.kw + j;
                    for (int64_t ho = 0; ho < d.Ho; ++ho) {
                        int64_t hi = ho * d.stride - d.pad + i;
                        if (hi < 0 || hi >= d.H) continue;
                        T* xrow = dx + ((n * d.C + c) * d.H + hi) * d.W;
                        int64_t col_base = (n * d.Ho + ho) * d.Wo;
                        for (int64_t wo = 0; wo < d.Wo; ++wo) {
                            int64_t wi = wo * d.stride - d.pad + j;
                            if (wi >= 0 && wi < d.W) xrow[wi] += cols[row * P + col_base + wo];
                        }
                    }
                }
}

}  // namespace

template <typename T>
TensorBase<T> conv2d(const TensorBase<T>& x, const TensorBase<T>& w, int stride, int pad) {
    if (x.rank() != 4 || w.rank() != 4) throw_shape("conv2d: x and w must be rank 4");
    if (stride < 1 || pad < 0) throw_shape("conv2d: invalid stride/pad");
    ConvDims d;
    d.N = x.dim(0);
    d.C = x.dim(1);
    d.H = x.dim(2);
    d.W = x.dim(3);
    d.F = w.dim(0);
    d.kh = w.dim(2);
    d.kw = w.dim(3);
    d.stride = stride;
    d.pad = pad;
    if (w.dim(1) != d.C)
        throw_shape("conv2d: weight channels " + std::to_string(w.dim(1)) + " != input " +
                    std::to_string(d.C));
    d.Ho = (d.H + 2 * pad - d.kh) / stride + 1;
    d.Wo = (d.W + 2 * pad - d.kw) / stride + 1;
    if (d.Ho < 1 || d.Wo < 1) throw_shape("conv2d: kernel larger than padded input");

    int64_t CKK = d.C * d.kh * d.kw;
    int64_t P = d.N * d.Ho * d.Wo;
    auto cols = std::make_shared<std::vector<T>>(CKK * P);
    im2col(x.values().data(), d, cols->data());

    // O (F, P) = Wflat (F, CKK) . cols, then reorder to (N, F, Ho, Wo).
    std::vector<T> o(d.F * P, T(0));
    gemm_nn(w.values().data(), cols->data(), o.data(), d.F, CKK, P);
    std::vector<T> out(d.N * d.F * d.Ho * d.Wo);
    int64_t hw = d.Ho * d.Wo;
    for (int64_t n = 0; n < d.N; ++n)
        for (int64_t f = 0; f < d.F; ++f)
            std::copy_n(o.data() + f * P + n * hw, hw, out.data() + (n * d.F + f) * hw);

    auto node = make_node<T>(Shape{d.N, d.F, d.Ho, d.Wo}, std::move(out));
    if (g_grad_enabled && (x.requires_grad() || w.requires_grad())) {
        node->requires_grad = true;
        node->parents = {x.node_shared(), w.node_shared()};
        Node<T>* self = node.get();
        Node<T>* xn = x.node();
        Node<T>* wn = w.node();
        node->backward_fn = [self, xn, wn, d, cols, CKK, P, hw]() {
            // Reorder incoming grad to the (F, P) layout of the forward GEMM.
            std::vector<T> g(d.F * P);
            for (int64_t n = 0; n < d.N; ++n)
                for (int64_t f = 0; f < d.F; ++f)
                    std::copy_n(self->grad.data() + (n * d.F + f) * hw, hw,
                                g.data() + f * P + n * hw);
            if (wn->requires_grad) {
                ensure_grad(wn);
                gemm_nt(g.data(), cols->data(), wn->grad.data(), d.F, P, CKK);
            }
            if (xn->requires_grad) {
                ensure_grad(xn);
                std::vector<T> dcols(CKK * P, T(0));
                gemm_tn(wn->values.data(), g.data(), dcols.data(), CKK, d.F, P);
                col2im_add(dcols.data(), d, xn->grad.data());
            }
        };
    }
    return TensorBase<T>(std::move(node));
}

template <typename T>
TensorBase<T> maxpool2d(const TensorBase<T>& x, int kernel, int stride, int pad) {
    if (x.rank() != 4) throw_shape("maxpool2d: input must be rank 4");
    if (kernel < 1 || stride < 1 || pad < 0) throw_shape("maxpool2d: invalid kernel/stride/pad");
    int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int64_t Ho = (H + 2 * pad - kernel) / stride + 1;
    int64_t Wo = (W + 2 * pad - kernel) / stride + 1;
    if (Ho < 1 || Wo < 1) throw_shape("maxpool2d: kernel larger than padded input");
    std::vector<T> out(N * C * Ho * Wo);
    std::vector<int64_t> arg(out.size());
    const auto& xv = x.values();
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const T* plane = xv.data() + nc * H * W;
        for (int64_t ho = 0; ho < Ho; ++ho)
            for (int64_t wo = 0; wo < Wo; ++wo) {
                T best = -std::numeric_limits<T>::infinity();
                int64_t best_at = -1;
                for (int i = 0; i < kernel; ++i) {
                    int64_t hi = ho * stride - pad + i;
                    if (hi < 0 || hi >= H) continue;
                    for (int j = 0; j < kernel; ++j) {
                        int64_t wi = wo * stride - pad + j;
                        if (wi < 0 || wi >= W) continue;
                        T v = plane[hi * W + wi];
                        if (v > best) {
                            best = v;
                            best_at = hi * W + wi;
                        }
                    }
                }
                if (best_at < 0) throw_shape("maxpool2d: empty pooling window");
                out[nc * Ho * Wo + ho * Wo + wo] = best;
                arg[nc * Ho * Wo + ho * Wo + wo] = best_at;
                fold_active(static_cast<uint64_t>(best_at));
            }
    }
    auto node = make_node<T>(Shape{N, C, Ho, Wo}, std::move(out));
    if (g_grad_enabled && x.requires_grad()) {
        node->requires_grad = true;
        node->parents = {x.node_shared()};
        Node<T>* self = node.get();
        Node<T>* xn = x.node();
        int64_t hw = H * W, ohw = Ho * Wo;
        node->backward_fn = [self, xn, arg = std::move(arg), hw, ohw, N, C]() {
            ensure_grad(xn);
            for (int64_t nc = 0; nc < N * C; ++nc)
                for (int64_t p = 0; p < ohw; ++p)
                    xn->grad[nc * hw + arg[nc * ohw + p]] += self->grad[nc * ohw + p];
        };
    }
    return TensorBase<T>(std::move(node));
}

// ---------------- batchnorm ----------------

template <typename T>
TensorBase<T> batchnorm(const TensorBase<T>& x, const TensorBase<T>& gamma,
                        const TensorBase<T>& beta, TensorBase<T>& running_mean,
                        TensorBase<T>& running_var, bool training, T momentum, T eps,
                        int channel_dim) {
    Split sp = split_at(x.shape(), channel_dim, "batchnorm");
    int64_t ch = sp.d;
    int64_t m = sp.outer * sp.inner;  // samples per channel
    auto check = [&](const TensorBase<T>& t, const char* name) {
        if (t.numel() != ch)
            throw_shape("batchnorm: " + std::string(name) + " must have " + std::to_string(ch) +
                        " values");
    };
    check(gamma, "gamma");
    check(beta, "beta");
    check(running_mean, "running_mean");
    check(running_var, "running_var");
    if (training && m < 2) throw_shape("batchnorm: training needs >= 2 samples per channel");

    const auto& xv = x.values();
    auto mean = std::make_shared<std::vector<T>>(ch, T(0));
    auto var = std::make_shared<std::vector<T>>(ch, T(0));
    if (training) {
        for (int64_t o = 0; o < sp.outer; ++o)
            for (int64_t c = 0; c < ch; ++c) {
                const T* src = xv.data() + (o * ch + c) * sp.inner;
                T acc = T(0);
                for (int64_t i = 0; i < sp.inner; ++i) acc += src[i];
                (*mean)[c] += acc;
            }
        for (int64_t c = 0; c < ch; ++c) (*mean)[c] /= static_cast<T>(m);
        for (int64_t o = 0; o < sp.outer; ++o)
            for (int64_t c = 0; c < ch; ++c) {
                const T* src = xv.data() + (o * ch + c) * sp.inner;
                T mu = (*mean)[c], acc = T(0);
                for (int64_t i = 0; i < sp.inner; ++i) {
                    T dv = src[i] - mu;
                    acc += dv * dv;
                }
                (*var)[c] += acc;
            }
        for (int64_t c = 0; c < ch; ++c) (*var)[c] /= static_cast<T>(m);  // biased
        // Running buffers live outside the graph; unbiased variance there.
        auto& rm = running_mean.mutable_values();
        auto& rv = running_var.mutable_values();
        T unbias = static_cast<T>(m) / static_cast<T>(m - 1);
        for (int64_t c = 0; c < ch; ++c) {
            rm[c] = (T(1) - momentum) * rm[c] + momentum * (*mean)[c];
            rv[c] = (T(1) - momentum) * rv[c] + momentum * (*var)[c] * unbias;
        }
    } else {
        *mean = running_mean.values();
        *var = running_var.values();
    }

    const auto& gv = gamma.values();
    const auto& bv = beta.values();
    std::vector<T> out(xv.size());
    for (int64_t o = 0; o < sp.outer; ++o)
        for (int64_t c = 0; c < ch; ++c) {
            const T* src = xv.data() + (o * ch + c) * sp.inner;
            T* dst = out.data() + (o * ch + c) * sp.inner;
            T inv = T(1) / std::sqrt((*var)[c] + eps);
            T g = gv[c], b = bv[c], mu = (*mean)[c];
            for (int64_t i = 0; i < sp.inner; ++i) dst[i] = g * (src[i] - mu) * inv + b;
        }

    auto node = make_node<T>(x.shape(), std::move(out));
    if (g_grad_enabled && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
        node->requires_grad = true;
        node->parents = {x.node_shared(), gamma.node_shared(), beta.node_shared()};
        Node<T>* self = node.get();
        Node<T>* xn = x.node();
        Node<T>* gn = gamma.node();
        Node<T>* bn = beta.node();
        node->backward_fn = [self, xn, gn, bn, sp, ch, m, mean, var, eps, training]() {
            // Per channel: xhat = (x - mu) * inv; in training mode mu and
            // sigma^2 are functions of x, so their terms enter dx.
            std::vector<T> sum_g(ch, T(0)), sum_gx(ch, T(0));
            for (int64_t o = 0; o < sp.outer; ++o)
                for (int64_t c = 0; c < ch; ++c) {
                    int64_t base = (o * ch + c) * sp.inner;
                    T inv = T(1) / std::sqrt((*var)[c] + eps);
                    T mu = (*mean)[c];
                    for (int64_t i = 0; i < sp.inner; ++i) {
                        T g = self->grad[base + i];
                        sum_g[c] += g;
                        sum_gx[c] += g * (xn->values[base + i] - mu) * inv;
                    }
                }
            if (gn->requires_grad) {
                ensure_grad(gn);
                for (int64_t c = 0; c < ch; ++c) gn->grad[c] += sum_gx[c];
            }
            if (bn->requires_grad) {
                ensure_grad(bn);
                for (int64_t c = 0; c < ch; ++c) bn->grad[c] += sum_g[c];
            }
            if (xn->requires_grad) {
                ensure_grad(xn);
                for (int64_t o = 0; o < sp.outer; ++o)
                    for (int64_t c = 0; c < ch; ++c) {
                        int64_t base = (o * ch + c) * sp.inner;
                        T inv = T(1) / std::sqrt((*var)[c] + eps);
                        T mu = (*mean)[c];
                        T gm = gn->values[c];
                        for (int64_t i = 0; i < sp.inner; ++i) {
                            T g = self->grad[base + i];
                            if (training) {
                                T xhat = (xn->values[base + i] - mu) * inv;
                                xn->grad[base + i] +=
                                    gm * inv *
                                    (g - sum_g[c] / static_cast<T>(m) -
                                     xhat * sum_gx[c] / static_cast<T>(m));
                            } else {
                                xn->grad[base + i] += gm * inv * g;
                            }
                        }
                    }
            }
        };
    }
    return TensorBase<T>(std::move(node));
}

// ---------------- losses / regularization / gathers ----------------

template <typename T>
TensorBase<T> cross_entropy(const TensorBase<T>& logits, const std::vector<int64_t>& labels) {
    if (logits.rank() != 2) throw_shape("cross_entropy: logits must be (N, K)");
    int64_t N = logits.dim(0), K = logits.dim(1);
    if (static_cast<int64_t>(labels.size()) != N)
        throw_shape("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(N) + " rows");
    for (int64_t lbl : labels)
        if (lbl < 0 || lbl >= K) throw_shape("cross_entropy: label out of range");

    const auto& lv = logits.values();
    auto probs = std::make_shared<std::vector<T>>(lv.size());
    T loss = T(0);
    for (int64_t i = 0; i < N; ++i) {
        const T* row = lv.data() + i * K;
        T mx = row[0];
        for (int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
        T denom = T(0);
        for (int64_t k = 0; k < K; ++k) denom += std::exp(row[k] - mx);
        T log_denom = std::log(denom) + mx;
        for (int64_t k = 0; k < K; ++k) (*probs)[i * K + k] = std::exp(row[k] - log_denom);
        loss += log_denom - row[labels[i]];
    }
    loss /= static_cast<T>(N);

    auto node = make_node<T>(Shape{}, std::vector<T>{loss});
    if (g_grad_enabled && logits.requires_grad()) {
        node->requires_grad = true;
        node->parents = {logits.node_shared()};
        Node<T>* self = node.get();
        Node<T>* ln = logits.node();
        node->backward_fn = [self, ln, probs, labels, N, K]() {
            ensure_grad(ln);
            T g = self->grad[0] / static_cast<T>(N);
            for (int64_t i = 0; i < N; ++i)
                for (int64_t k = 0; k < K; ++k) {
                    T p = (*probs)[i * K + k];
                    ln->grad[i * K + k] += g * (p - (k == labels[i] ? T(1) : T(0)));
                }
        };
    }
    return TensorBase<T>(std::move(node));
}

template <typename T>
TensorBase<T> dropout(const TensorBase<T>& x, T p, Rng& rng, bool training) {
    if (p < T(0) || p >= T(1)) throw_config("dropout: p must be in [0, 1)");
    if (!training || p == T(0)) return x;
    const auto& xv = x.values();
    auto mask = std::make_shared<std::vector<T>>(xv.size());
    T keep_scale = T(1) / (T(1) - p);
    std::vector<T> out(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) {
        (*mask)[i] = static_cast<T>(rng.uniform()) >= p ? keep_scale : T(0);
        out[i] = xv[i] * (*mask)[i];
    }
    auto node = make_node<T>(x.shape(), std::move(out));
    if (g_grad_enabled && x.requires_grad()) {
        node->requires_grad = true;
        node->parents = {x.node_shared()};
        Node<T>* self = node.get();
        Node<T>* xn = x.node();
        node->backward_fn = [self, xn, mask]() {
            ensure_grad(xn);
            for (size_t i = 0; i < self->grad.size(); ++i)
                xn->grad[i] += self->grad[i] * (*mask)[i];
        };
    }
    return TensorBase<T>(std::move(node));
}

template <typename T>
TensorBase<T> gather_tokens(const TensorBase<T>& x, const std::vector<int64_t>& idx,
                            const Shape& idx_shape) {
    if (x.rank() != 3) throw_shape("gather_tokens: x must be (N, n, d)");
    if (idx_shape.size() != 2 && idx_shape.size() != 3)
        throw_shape("gather_tokens: index shape must be (N, m) or (N, m, k)");
    if (idx_shape[0] != x.dim(0)) throw_shape("gather_tokens: batch mismatch");
    if (shape_numel(idx_shape) != static_cast<int64_t>(idx.size()))
        throw_shape("gather_tokens: index count mismatch");
    int64_t N = x.dim(0), n = x.dim(1), d = x.dim(2);
    int64_t per_batch = shape_numel(idx_shape) / N;
    for (size_t i = 0; i < idx.size(); ++i)
        if (idx[i] < 0 || idx[i] >= n) throw_shape("gather_tokens: index out of range");

    Shape out_shape = idx_shape;
    out_shape.push_back(d);
    std::vector<T> out(shape_numel(out_shape));
    const auto& xv = x.values();
    for (int64_t b = 0; b < N; ++b)
        for (int64_t j = 0; j < per_batch; ++j)
            std::copy_n(xv.data() + (b * n + idx[b * per_batch + j]) * d, d,
                        out.data() + (b * per_batch + j) * d);

    auto node = make_node<T>(out_shape, std::move(out));
    if (g_grad_enabled && x.requires_grad()) {
        node->requires_grad = true;
        node->parents = {x.node_shared()};
        Node<T>* self = node.get();
        Node<T>* xn = x.node();
        node->backward_fn = [self, xn, idx, N, n, d, per_batch]() {
            ensure_grad(xn);
            for (int64_t b = 0; b < N; ++b)
                for (int64_t j = 0; j < per_batch; ++j) {
                    const T* g = self->grad.data() + (b * per_batch + j) * d;
                    T* dst = xn->grad.data() + (b * n + idx[b * per_batch + j]) * d;
                    for (int64_t t = 0; t < d; ++t) dst[t] += g[t];
                }
        };
    }
    return TensorBase<T>(std::move(node));
}

// ---------------- optimizers ----------------

template <typename T>
void adam_step(std::span<TensorBase<T>> params, AdamState<T>& state, T lr, T beta1, T beta2,
               T eps) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].numel(), T(0));
            state.v[i].assign(params[i].numel(), T(0));
        }
    }
    if (state.m.size() != params.size()) throw_shape("adam_step: parameter count changed");
    ++state.step;
    T bc1 = T(1) - std::pow(beta1, static_cast<T>(state.step));
    T bc2 = T(1) - std::pow(beta2, static_cast<T>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& g = params[i].grad();
        if (g.empty()) continue;
        auto& pv = params[i].mutable_values();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (size_t j = 0; j < pv.size(); ++j) {
            m[j] = beta1 * m[j] + (T(1) - beta1) * g[j];
            v[j] = beta2 * v[j] + (T(1) - beta2) * g[j] * g[j];
            T mhat = m[j] / bc1;
            T vhat = v[j] / bc2;
            pv[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

template <typename T>
void sgd_step(std::span<TensorBase<T>> params, T lr) {
    for (auto& p : params) {
        const auto& g = p.grad();
        if (g.empty()) continue;
        auto& pv = p.mutable_values();
        for (size_t j = 0; j < pv.size(); ++j) pv[j] -= lr * g[j];
    }
}

// ---------------- checkpoint ----------------

namespace {

void write_u32(std::ofstream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t read_u32(std::ifstream& f, const std::string& path) {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    if (!f) throw_format("'" + path + "' is truncated");
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& entries) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw_io("cannot open '" + path + "' for writing");
    f.write("PCTW", 4);
    write_u32(f, static_cast<uint32_t>(entries.size()));
    for (const auto& [name, t] : entries) {
        write_u32(f, static_cast<uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(f, static_cast<uint32_t>(t.rank()));
        for (int64_t d : t.shape()) write_u32(f, static_cast<uint32_t>(d));
        f.write(reinterpret_cast<const char*>(t.values().data()),
                static_cast<std::streamsize>(t.values().size() * sizeof(float)));
    }
    if (!f) throw_io("write failed for '" + path + "'");
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw_io("cannot open '" + path + "'");
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "PCTW", 4) != 0)
        throw_format("'" + path + "' is not a PCTW checkpoint");
    uint32_t count = read_u32(f, path);
    std::vector<std::pair<std::string, Tensor>> entries;
    entries.reserve(count);
    for (uint32_t e = 0; e < count; ++e) {
        uint32_t name_len = read_u32(f, path);
        if (name_len > 4096) throw_format("'" + path + "': implausible name length");
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        uint32_t rank = read_u32(f, path);
        if (rank > 8) throw_format("'" + path + "': implausible tensor rank");
        Shape shape(rank);
        for (uint32_t d = 0; d < rank; ++d) shape[d] = read_u32(f, path);
        std::vector<float> data(shape_numel(shape));
        f.read(reinterpret_cast<char*>(data.data()),
               static_cast<std::streamsize>(data.size() * sizeof(float)));
        if (!f) throw_format("'" + path + "' is truncated");
        entries.emplace_back(std::move(name), Tensor::from(shape, std::move(data)));
    }
    return entries;
}

// ---------------- gradient checking ----------------

template <typename T>
GradCheckReport grad_check(const std::function<TensorBase<T>()>& f,
                           std::span<TensorBase<T>> wrt, const GradCheckOptions& opts) {
    GradCheckReport rep;

    KinkMonitor::reset();
    for (auto& t : wrt) t.zero_grad();
    TensorBase<T> out = f();
    uint64_t base_hash = KinkMonitor::read().active_hash;
    if (out.numel() != 1) throw_shape("grad_check: f must return a scalar");
    out.backward();

    std::vector<std::vector<T>> analytic;
    for (auto& t : wrt) {
        if (t.grad().empty())
            analytic.emplace_back(t.numel(), T(0));
        else
            analytic.push_back(t.grad());
    }

    Rng pick(opts.coord_seed);
    T h = static_cast<T>(opts.h);
    for (size_t ti = 0; ti < wrt.size(); ++ti) {
        auto& vals = wrt[ti].mutable_values();
        std::vector<int64_t> coords;
        int64_t n = static_cast<int64_t>(vals.size());
        if (opts.max_coords_per_tensor > 0 && n > opts.max_coords_per_tensor) {
            std::vector<int64_t> all(n);
            for (int64_t i = 0; i < n; ++i) all[i] = i;
            pick.shuffle(all);
            coords.assign(all.begin(), all.begin() + opts.max_coords_per_tensor);
        } else {
            coords.resize(n);
            for (int64_t i = 0; i < n; ++i) coords[i] = i;
        }
        for (int64_t c : coords) {
            T saved = vals[c];
            NoGradGuard ng;
            KinkMonitor::reset();
            vals[c] = saved + h;
            double fp = static_cast<double>(f().item());
            uint64_t hash_plus = KinkMonitor::read().active_hash;
            KinkMonitor::reset();
            vals[c] = saved - h;
            double fm = static_cast<double>(f().item());
            uint64_t hash_minus = KinkMonitor::read().active_hash;
            vals[c] = saved;
            if (hash_plus != base_hash || hash_minus != base_hash) {
                ++rep.coords_skipped;
                continue;
            }
            double fd = (fp - fm) / (2.0 * opts.h);
            double ad = static_cast<double>(analytic[ti][c]);
            double rel = std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
            rep.max_rel_err = std::max(rep.max_rel_err, rel);
            ++rep.coords_checked;
        }
    }
    rep.unstable = rep.coords_checked == 0;
    rep.pass = !rep.unstable && rep.max_rel_err <= opts.tolerance;
    return rep;
}

// ---------------- explicit instantiations ----------------

#define PCT_INSTANTIATE(T)                                                                        \
    template class TensorBase<T>;                                                                 \
    template class Tape<T>;                                                                       \
    template TensorBase<T> add<T>(const TensorBase<T>&, const TensorBase<T>&);                    \
    template TensorBase<T> sub<T>(const TensorBase<T>&, const TensorBase<T>&);                    \
    template TensorBase<T> mul<T>(const TensorBase<T>&, const TensorBase<T>&);                    \
    template TensorBase<T> div<T>(const TensorBase<T>&, const TensorBase<T>&);                    \
    template TensorBase<T> scale<T>(const TensorBase<T>&, T);                                     \
    template TensorBase<T> relu<T>(const TensorBase<T>&);                                         \
    template TensorBase<T> reshape<T>(const TensorBase<T>&, const Shape&);                        \
    template TensorBase<T> transpose_last2<T>(const TensorBase<T>&);                              \
    template TensorBase<T> concat<T>(std::span<const TensorBase<T>>, int);                        \
    template TensorBase<T> matmul<T>(const TensorBase<T>&, const TensorBase<T>&);                 \
    template TensorBase<T> sum_over<T>(const TensorBase<T>&, int);                                \
    template TensorBase<T> mean_over<T>(const TensorBase<T>&, int);                               \
    template TensorBase<T> max_over<T>(const TensorBase<T>&, int);                                \
    template TensorBase<T> sum_all<T>(const TensorBase<T>&);                                      \
    template TensorBase<T> logsumexp<T>(const TensorBase<T>&, int);                               \
    template TensorBase<T> softmax<T>(const TensorBase<T>&, int);                                 \
    template TensorBase<T> conv2d<T>(const TensorBase<T>&, const TensorBase<T>&, int, int);       \
    template TensorBase<T> maxpool2d<T>(const TensorBase<T>&, int, int, int);                     \
    template TensorBase<T> batchnorm<T>(const TensorBase<T>&, const TensorBase<T>&,               \
                                        const TensorBase<T>&, TensorBase<T>&, TensorBase<T>&,    \
                                        bool, T, T, int);                                         \
    template TensorBase<T> cross_entropy<T>(const TensorBase<T>&, const std::vector<int64_t>&);   \
    template TensorBase<T> dropout<T>(const TensorBase<T>&, T, Rng&, bool);                       \
    template TensorBase<T> gather_tokens<T>(const TensorBase<T>&, const std::vector<int64_t>&,    \
                                            const Shape&);                                        \
    template void adam_step<T>(std::span<TensorBase<T>>, AdamState<T>&, T, T, T, T);              \
    template void sgd_step<T>(std::span<TensorBase<T>>, T);                                       \
    template GradCheckReport grad_check<T>(const std::function<TensorBase<T>()>&,                 \
                                           std::span<TensorBase<T>>, const GradCheckOptions&);

PCT_INSTANTIATE(float)
PCT_INSTANTIATE(double)

#undef PCT_INSTANTIATE

}  // namespace pctrees::tensor
