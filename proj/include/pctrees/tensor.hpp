#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pctrees/rng.hpp"

namespace pctrees::tensor {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

template <typename T>
struct Node;

// Shape-carrying dense array participating in reverse-mode differentiation.
// A TensorBase is a cheap shared handle onto a graph node; forward ops
// record parent links when gradients are enabled and any input requires
// them. Instantiated for float (all model math) and double (the
// finite-difference verification harness).
template <typename T>
class TensorBase {
public:
    TensorBase();
    ~TensorBase();
    TensorBase(const TensorBase&);
    TensorBase(TensorBase&&) noexcept;
    TensorBase& operator=(const TensorBase&);
    TensorBase& operator=(TensorBase&&) noexcept;

    static TensorBase zeros(const Shape& shape);
    static TensorBase full(const Shape& shape, T value);
    static TensorBase from(const Shape& shape, std::vector<T> data);
    static TensorBase scalar(T value);
    static TensorBase uniform(const Shape& shape, T lo, T hi, Rng& rng);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int rank() const;
    int64_t dim(int i) const;
    int64_t numel() const;

    const std::vector<T>& values() const;
    // In-place edits are for leaf tensors only (parameter updates, finite
    // difference probes); recorded graphs hold earlier values by handle.
    std::vector<T>& mutable_values();
    T item() const;

    bool requires_grad() const;
    TensorBase& set_requires_grad(bool v);
    const std::vector<T>& grad() const;  // empty when no gradient accumulated
    void zero_grad();

    // Reverse-mode sweep from a scalar root (seeds d(root)/d(root) = 1).
    void backward() const;

    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& node_shared() const { return node_; }
    explicit TensorBase(std::shared_ptr<Node<T>> n);

private:
    std::shared_ptr<Node<T>> node_;
};

using Tensor = TensorBase<float>;
using DTensor = TensorBase<double>;

// Thread-local gradient recording switch; forward passes taken for
// evaluation only run cheaper with recording off.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// The recorded DAG reachable from a root, in topological order. backward()
// visits each node exactly once, in reverse, accumulating gradients
// additively across fan-out.
template <typename T>
class Tape {
public:
    static Tape record_from(const TensorBase<T>& root);
    size_t size() const { return order_.size(); }
    void run_backward(const TensorBase<T>& root);

private:
    std::vector<Node<T>*> order_;
};

// ---- elementwise (NumPy-style right-aligned broadcasting) ----
template <typename T> TensorBase<T> add(const TensorBase<T>& a, const TensorBase<T>& b);
template <typename T> TensorBase<T> sub(const TensorBase<T>& a, const TensorBase<T>& b);
template <typename T> TensorBase<T> mul(const TensorBase<T>& a, const TensorBase<T>& b);
template <typename T> TensorBase<T> div(const TensorBase<T>& a, const TensorBase<T>& b);
template <typename T> TensorBase<T> scale(const TensorBase<T>& a, T c);
template <typename T> TensorBase<T> relu(const TensorBase<T>& a);

// ---- shape ----
template <typename T> TensorBase<T> reshape(const TensorBase<T>& a, const Shape& shape);
template <typename T> TensorBase<T> transpose_last2(const TensorBase<T>& a);
template <typename T> TensorBase<T> concat(std::span<const TensorBase<T>> xs, int dim);

// ---- contractions ----
// matmul supports (m,k)x(k,n); leading-batch a with rank-2 b (weight
// broadcast); and batched a/b of equal rank with matching batch dims.
template <typename T> TensorBase<T> matmul(const TensorBase<T>& a, const TensorBase<T>& b);

// ---- reductions (the reduced axis is removed) ----
template <typename T> TensorBase<T> sum_over(const TensorBase<T>& a, int dim);
template <typename T> TensorBase<T> mean_over(const TensorBase<T>& a, int dim);
template <typename T> TensorBase<T> max_over(const TensorBase<T>& a, int dim);
template <typename T> TensorBase<T> sum_all(const TensorBase<T>& a);  // rank-0 scalar
// log(sum(exp(a))) along `dim`, stabilized by max subtraction; smooth.
template <typename T> TensorBase<T> logsumexp(const TensorBase<T>& a, int dim);

// softmax along `dim`; rows sum to 1, stabilized by max subtraction.
template <typename T> TensorBase<T> softmax(const TensorBase<T>& a, int dim);

// ---- neural-net ops ----
// Cross-correlation (no kernel flip): x (N,C,H,W), w (F,C,kh,kw);
// H' = floor((H + 2 pad - kh) / stride) + 1.
template <typename T>
TensorBase<T> conv2d(const TensorBase<T>& x, const TensorBase<T>& w, int stride, int pad);

template <typename T>
TensorBase<T> maxpool2d(const TensorBase<T>& x, int kernel, int stride, int pad);

// Normalizes over every axis except channel_dim. Train mode uses batch
// statistics and updates the running buffers in place (they stay outside
// the graph); eval mode normalizes with the running statistics.
template <typename T>
TensorBase<T> batchnorm(const TensorBase<T>& x, const TensorBase<T>& gamma,
                        const TensorBase<T>& beta, TensorBase<T>& running_mean,
                        TensorBase<T>& running_var, bool training, T momentum = T(0.1),
                        T eps = T(1e-5), int channel_dim = 1);

// Mean over the batch of -log softmax(logits)[label]; rank-0 result.
template <typename T>
TensorBase<T> cross_entropy(const TensorBase<T>& logits, const std::vector<int64_t>& labels);

template <typename T>
TensorBase<T> dropout(const TensorBase<T>& x, T p, Rng& rng, bool training);

// x (N, n, d); idx holds token indices in [0, n) with shape (N, m) or
// (N, m, k); result appends the feature axis: (N, m, d) or (N, m, k, d).
template <typename T>
TensorBase<T> gather_tokens(const TensorBase<T>& x, const std::vector<int64_t>& idx,
                            const Shape& idx_shape);

// ---- optimizers ----
template <typename T>
struct AdamState {
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    int64_t step = 0;
};

template <typename T>
void adam_step(std::span<TensorBase<T>> params, AdamState<T>& state, T lr, T beta1 = T(0.9),
               T beta2 = T(0.999), T eps = T(1e-8));

template <typename T>
void sgd_step(std::span<TensorBase<T>> params, T lr);

// ---- checkpoint ----
// Flat little-endian binary: magic "PCTW", u32 entry count, then per entry
// u32 name length, UTF-8 name, u32 rank, u32 dims, f32 payload.
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& entries);
std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path);

// ---- gradient verification ----
// relu, max_over, and maxpool2d fold the branch each element took (sign bit,
// argmax index) into a running hash. Two forward passes with equal hashes
// stayed in the same linear region of every kink, so a finite difference
// between them is trustworthy.
struct KinkMonitor {
    uint64_t active_hash;
    static void reset();
    static KinkMonitor read();
};

struct GradCheckOptions {
    double h = 1e-3;             // central-difference step
    double tolerance = 1e-2;     // max allowed relative error
    int64_t max_coords_per_tensor = 0;  // 0 = exhaustive
    uint64_t coord_seed = 1;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    int64_t coords_checked = 0;
    int64_t coords_skipped = 0;  // probes crossed a relu/max kink; not compared
    bool unstable = false;       // every coordinate crossed a kink
    bool pass = false;
};

// Compares reverse-mode gradients of the scalar-valued f against central
// finite differences, taken with respect to each tensor in `wrt` (their
// values are perturbed in place and restored). Relative error uses
// |ad - fd| / max(1, |ad|, |fd|).
template <typename T>
GradCheckReport grad_check(const std::function<TensorBase<T>()>& f,
                           std::span<TensorBase<T>> wrt, const GradCheckOptions& opts = {});

}  // namespace pctrees::tensor
