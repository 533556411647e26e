#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "doctest.h"
#include "pctrees/error.hpp"
#include "pctrees/rng.hpp"
#include "pctrees/tensor.hpp"

using namespace pctrees;
using namespace pctrees::tensor;

namespace {

template <typename T>
GradCheckReport fd_check(const std::function<TensorBase<T>()>& f,
                         std::vector<TensorBase<T>> wrt, double h, double tol) {
    GradCheckOptions opts;
    opts.h = h;
    opts.tolerance = tol;
    return grad_check<T>(f, std::span<TensorBase<T>>(wrt.data(), wrt.size()), opts);
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("matmul matches frozen products") {
    auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
    auto b = Tensor::from({2, 2}, {5, 6, 7, 8});
    auto c = matmul(a, b);
    CHECK(c.values() == std::vector<float>{19, 22, 43, 50});

    // weight broadcast: every batch slice multiplies the same rank-2 b
    Rng rng(3);
    auto batched = Tensor::uniform({3, 2, 4}, -1, 1, rng);
    auto w = Tensor::uniform({4, 5}, -1, 1, rng);
    auto y = matmul(batched, w);
    REQUIRE(y.shape() == Shape{3, 2, 5});
    for (int64_t n = 0; n < 3; ++n) {
        auto slice = Tensor::from(
            {2, 4}, std::vector<float>(batched.values().begin() + n * 8,
                                       batched.values().begin() + (n + 1) * 8));
        auto yn = matmul(slice, w);
        for (int64_t i = 0; i < 10; ++i) CHECK(y.values()[n * 10 + i] == yn.values()[i]);
    }
}

TEST_CASE("matmul gradients verify by finite differences") {
    Rng rng(5);
    auto a = DTensor::uniform({3, 4}, -1, 1, rng);
    auto b = DTensor::uniform({4, 2}, -1, 1, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    std::function<DTensor()> f = [&] { return sum_all(matmul(a, b)); };
    auto rep = fd_check<double>(f, {a, b}, 1e-6, 1e-5);
    CHECK(rep.pass);
    CHECK(rep.coords_checked == 20);
}

TEST_CASE("softmax rows form a probability simplex") {
    auto flat = softmax(Tensor::zeros({2, 4}), 1);
    for (float v : flat.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-6));

    Rng rng(7);
    auto x = Tensor::uniform({5, 7}, -4, 4, rng);
    auto s = softmax(x, 1);
    for (int64_t r = 0; r < 5; ++r) {
        double total = 0;
        for (int64_t c = 0; c < 7; ++c) {
            float v = s.values()[r * 7 + c];
            CHECK(v >= 0.0f);
            total += v;
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("softmax gradient against finite differences") {
    Rng rng(9);
    auto x = DTensor::uniform({3, 5}, -2, 2, rng);
    auto w = DTensor::uniform({3, 5}, -1, 1, rng);  // weights break the constant-sum
    x.set_requires_grad(true);
    std::function<DTensor()> f = [&] { return sum_all(mul(softmax(x, 1), w)); };
    auto rep = fd_check<double>(f, {x}, 1e-6, 1e-5);
    CHECK(rep.pass);
}

TEST_CASE("backward accumulates across fan-out") {
    // y = sum(x*x + 3x), dy/dx = 2x + 3; x participates twice in the graph
    auto x = Tensor::from({2}, {1, 2});
    x.set_requires_grad(true);
    auto y = sum_all(add(mul(x, x), scale(x, 3.0f)));
    CHECK(y.item() == doctest::Approx(14.0));
    y.backward();
    REQUIRE(x.grad().size() == 2);
    CHECK(x.grad()[0] == doctest::Approx(5.0));
    CHECK(x.grad()[1] == doctest::Approx(7.0));

    // a second backward on a fresh graph starts from clean gradients
    x.zero_grad();
    auto y2 = sum_all(mul(x, x));
    y2.backward();
    CHECK(x.grad()[0] == doctest::Approx(2.0));
}

TEST_CASE("conv2d frozen values") {
    auto x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
    auto w = Tensor::from({1, 1, 2, 2}, {1, 0, 0, 1});
    auto y = conv2d(x, w, 1, 0);
    REQUIRE(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == doctest::Approx(5.0));

    // 1x1 identity kernel reproduces the input
    auto eye = Tensor::from({1, 1, 1, 1}, {1});
    auto same = conv2d(x, eye, 1, 0);
    CHECK(same.values() == x.values());

    // padding grows the output: 2x2 input, 2x2 kernel, pad 1 -> 3x3
    auto padded = conv2d(x, w, 1, 1);
    CHECK(padded.shape() == Shape{1, 1, 3, 3});
}

TEST_CASE("conv2d gradients verify by finite differences") {
    Rng rng(11);
    auto x = DTensor::uniform({1, 2, 5, 5}, -1, 1, rng);
    auto w = DTensor::uniform({3, 2, 3, 3}, -1, 1, rng);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    std::function<DTensor()> f = [&] {
        auto y = conv2d(x, w, 2, 1);
        return sum_all(mul(y, y));
    };
    auto rep = fd_check<double>(f, {x, w}, 1e-6, 1e-5);
    CHECK(rep.pass);

    auto xf = Tensor::uniform({1, 2, 5, 5}, -1, 1, rng);
    auto wf = Tensor::uniform({2, 2, 3, 3}, -1, 1, rng);
    xf.set_requires_grad(true);
    wf.set_requires_grad(true);
    std::function<Tensor()> ff = [&] { return sum_all(conv2d(xf, wf, 1, 0)); };
    auto repf = fd_check<float>(ff, {xf, wf}, 1e-3, 1e-2);
    CHECK(repf.pass);
}

TEST_CASE("maxpool2d forward and finite differences") {
    auto x = Tensor::from({1, 1, 2, 2}, {1, 4, 3, 2});
    auto y = maxpool2d(x, 2, 2, 0);
    REQUIRE(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == doctest::Approx(4.0));

    Rng rng(13);
    auto xd = DTensor::uniform({1, 2, 6, 6}, -1, 1, rng);
    xd.set_requires_grad(true);
    std::function<DTensor()> f = [&] { return sum_all(maxpool2d(xd, 2, 2, 0)); };
    auto rep = fd_check<double>(f, {xd}, 1e-6, 1e-5);
    CHECK(rep.pass);
}

TEST_CASE("batchnorm train mode normalizes per channel") {
    Rng rng(15);
    auto x = Tensor::uniform({4, 3, 2, 2}, -2, 3, rng);
    auto gamma = Tensor::full({3}, 1.0f);
    auto beta = Tensor::zeros({3});
    auto rm = Tensor::zeros({3});
    auto rv = Tensor::full({3}, 1.0f);
    auto y = batchnorm(x, gamma, beta, rm, rv, true);

    // per-channel output statistics: mean 0, biased variance 1
    for (int64_t c = 0; c < 3; ++c) {
        double mean = 0, var = 0;
        int64_t m = 0;
        for (int64_t n = 0; n < 4; ++n)
            for (int64_t i = 0; i < 4; ++i) {
                mean += y.values()[(n * 3 + c) * 4 + i];
                ++m;
            }
        mean /= m;
        for (int64_t n = 0; n < 4; ++n)
            for (int64_t i = 0; i < 4; ++i) {
                double d = y.values()[(n * 3 + c) * 4 + i] - mean;
                var += d * d;
            }
        var /= m;
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-5));
        CHECK(std::abs(var - 1.0) < 1e-3);  // eps in the denominator shaves a little
    }

    // running buffers blend in the batch statistics (unbiased variance)
    double bm = 0;
    for (int64_t n = 0; n < 4; ++n)
        for (int64_t i = 0; i < 4; ++i) bm += x.values()[(n * 3 + 0) * 4 + i];
    bm /= 16.0;
    double bv = 0;
    for (int64_t n = 0; n < 4; ++n)
        for (int64_t i = 0; i < 4; ++i) {
            double d = x.values()[(n * 3 + 0) * 4 + i] - bm;
            bv += d * d;
        }
    bv /= 15.0;  // unbiased
    CHECK(rm.values()[0] == doctest::Approx(0.1 * bm).epsilon(1e-4));
    CHECK(rv.values()[0] == doctest::Approx(0.9 + 0.1 * bv).epsilon(1e-4));
}

TEST_CASE("batchnorm gamma zero collapses to beta, eval uses running stats") {
    Rng rng(17);
    auto x = Tensor::uniform({2, 2, 3}, -1, 1, rng);
    auto gamma = Tensor::zeros({2});
    auto beta = Tensor::from({2}, {0.5f, -1.5f});
    auto rm = Tensor::zeros({2});
    auto rv = Tensor::full({2}, 1.0f);
    auto y = batchnorm(x, gamma, beta, rm, rv, true);
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t c = 0; c < 2; ++c)
            for (int64_t i = 0; i < 3; ++i)
                CHECK(y.values()[(n * 2 + c) * 3 + i] == beta.values()[c]);

    // eval: y = gamma * (x - rm) / sqrt(rv + eps) + beta, elementwise
    auto g2 = Tensor::from({2}, {2.0f, 0.5f});
    auto rm2 = Tensor::from({2}, {0.25f, -0.5f});
    auto rv2 = Tensor::from({2}, {4.0f, 0.25f});
    auto ye = batchnorm(x, g2, beta, rm2, rv2, false);
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t c = 0; c < 2; ++c)
            for (int64_t i = 0; i < 3; ++i) {
                float xv = x.values()[(n * 2 + c) * 3 + i];
                float want = g2.values()[c] * (xv - rm2.values()[c]) /
                                 std::sqrt(rv2.values()[c] + 1e-5f) +
                             beta.values()[c];
                CHECK(ye.values()[(n * 2 + c) * 3 + i] == doctest::Approx(want).epsilon(1e-6));
            }
    // eval must not touch the running buffers
    CHECK(rm2.values() == std::vector<float>{0.25f, -0.5f});
    CHECK(rv2.values() == std::vector<float>{4.0f, 0.25f});
}

TEST_CASE("batchnorm gradients verify in both modes") {
    Rng rng(19);
    auto x = DTensor::uniform({4, 3, 2, 2}, -1, 1, rng);
    auto gamma = DTensor::uniform({3}, 0.5, 1.5, rng);
    auto beta = DTensor::uniform({3}, -0.5, 0.5, rng);
    x.set_requires_grad(true);
    gamma.set_requires_grad(true);
    beta.set_requires_grad(true);

    for (bool training : {true, false}) {
        std::function<DTensor()> f = [&] {
            auto rm = DTensor::zeros({3});  // fresh buffers per probe
            auto rv = DTensor::full({3}, 1.0);
            auto y = batchnorm(x, gamma, beta, rm, rv, training);
            return sum_all(mul(y, y));
        };
        auto rep = fd_check<double>(f, {x, gamma, beta}, 1e-6, 1e-5);
        CHECK(rep.pass);
    }
}

TEST_CASE("cross_entropy frozen values") {
    // uniform logits over 6 classes: loss = ln 6 regardless of label
    auto flat = cross_entropy(Tensor::zeros({2, 6}), {0, 3});
    CHECK(flat.item() == doctest::Approx(std::log(6.0)).epsilon(1e-6));

    // a confident correct logit drives the loss toward zero
    auto sharp = cross_entropy(Tensor::from({1, 3}, {20, 0, 0}), {0});
    CHECK(sharp.item() < 1e-6);

    CHECK_THROWS_AS(cross_entropy(Tensor::zeros({2, 3}), {0}), Error);
    CHECK_THROWS_AS(cross_entropy(Tensor::zeros({2, 3}), {0, 3}), Error);
}

TEST_CASE("cross_entropy gradient against finite differences") {
    Rng rng(21);
    auto logits = DTensor::uniform({4, 5}, -2, 2, rng);
    logits.set_requires_grad(true);
    std::function<DTensor()> f = [&] { return cross_entropy(logits, {1, 0, 4, 2}); };
    auto rep = fd_check<double>(f, {logits}, 1e-6, 1e-5);
    CHECK(rep.pass);
}

TEST_CASE("adam skips parameters without gradients") {
    auto p = Tensor::from({2}, {1.0f, -2.0f});
    AdamState<float> state;
    std::vector<Tensor> params{p};
    adam_step(std::span<Tensor>(params), state, 0.1f);
    CHECK(p.values() == std::vector<float>{1.0f, -2.0f});
}

TEST_CASE("adam first step moves by about lr in the gradient direction") {
    auto p = Tensor::from({2}, {1.0f, -2.0f});
    p.set_requires_grad(true);
    auto c = Tensor::from({2}, {2.0f, -3.0f});
    sum_all(mul(p, c)).backward();  // dL/dp = c

    AdamState<float> state;
    std::vector<Tensor> params{p};
    adam_step(std::span<Tensor>(params), state, 0.1f);
    // bias-corrected first step is lr * g / (|g| + eps) = lr * sign(g) - O(eps)
    CHECK(p.values()[0] == doctest::Approx(1.0 - 0.1).epsilon(1e-5));
    CHECK(p.values()[1] == doctest::Approx(-2.0 + 0.1).epsilon(1e-5));
    CHECK(state.step == 1);
}

TEST_CASE("adam is bitwise deterministic") {
    auto run = [] {
        Rng rng(23);
        auto p = Tensor::uniform({8}, -1, 1, rng);
        p.set_requires_grad(true);
        AdamState<float> state;
        std::vector<Tensor> params{p};
        for (int step = 0; step < 5; ++step) {
            p.zero_grad();
            auto target = Tensor::full({8}, 0.5f);
            auto d = sub(p, target);
            sum_all(mul(d, d)).backward();
            adam_step(std::span<Tensor>(params), state, 0.01f);
        }
        return p.values();
    };
    CHECK(run() == run());
}

TEST_CASE("sgd subtracts lr times the gradient exactly") {
    auto p = Tensor::from({2}, {1.0f, 2.0f});
    p.set_requires_grad(true);
    sum_all(mul(p, Tensor::from({2}, {3.0f, -4.0f}))).backward();
    std::vector<Tensor> params{p};
    sgd_step(std::span<Tensor>(params), 0.5f);
    CHECK(p.values() == std::vector<float>{1.0f - 1.5f, 2.0f + 2.0f});
}

TEST_CASE("grad_check is exact on linear functions") {
    Rng rng(25);
    auto x = DTensor::uniform({3, 3}, -1, 1, rng);
    x.set_requires_grad(true);
    std::function<DTensor()> f = [&] { return sum_all(x); };
    auto rep = fd_check<double>(f, {x}, 1e-4, 1e-5);
    CHECK(rep.pass);
    CHECK(rep.coords_skipped == 0);
    CHECK(rep.max_rel_err < 1e-9);
}

TEST_CASE("grad_check skips probes that cross a relu kink") {
    // coordinates at +-0.5 stay on one side of zero under h = 1e-3
    auto safe = DTensor::from({4}, {0.5, -0.5, 0.75, -0.25});
    safe.set_requires_grad(true);
    std::function<DTensor()> fs = [&] { return sum_all(relu(safe)); };
    auto rep_safe = fd_check<double>(fs, {safe}, 1e-3, 1e-5);
    CHECK(rep_safe.pass);
    CHECK(rep_safe.coords_skipped == 0);

    // a coordinate inside the probe radius flips sign between the +h and -h
    // evaluations; the monitor must reject it rather than compare garbage
    auto kinky = DTensor::from({4}, {0.5, 1e-4, 0.75, -0.25});
    kinky.set_requires_grad(true);
    std::function<DTensor()> fk = [&] { return sum_all(relu(kinky)); };
    auto rep_kinky = fd_check<double>(fk, {kinky}, 1e-3, 1e-5);
    CHECK(rep_kinky.coords_skipped >= 1);
    CHECK(rep_kinky.coords_checked == 4 - rep_kinky.coords_skipped);
    CHECK(rep_kinky.pass);  // the surviving coordinates still verify
}

TEST_CASE("dropout modes") {
    Rng rng(27);
    auto x = Tensor::uniform({4, 8}, 0.5, 1.5, rng);

    Rng drop_eval(1);
    auto eval = dropout(x, 0.5f, drop_eval, false);
    CHECK(eval.values() == x.values());

    Rng drop_zero(1);
    auto keep_all = dropout(x, 0.0f, drop_zero, true);
    CHECK(keep_all.values() == x.values());

    Rng drop_a(42);
    auto masked = dropout(x, 0.5f, drop_a, true);
    size_t zeros = 0;
    for (size_t i = 0; i < masked.values().size(); ++i) {
        float v = masked.values()[i];
        if (v == 0.0f) {
            ++zeros;
        } else {
            CHECK(v == doctest::Approx(x.values()[i] * 2.0f).epsilon(1e-6));
        }
    }
    CHECK(zeros > 0);
    CHECK(zeros < masked.values().size());

    Rng drop_b(42);
    auto again = dropout(x, 0.5f, drop_b, true);
    CHECK(again.values() == masked.values());  // same seed, same mask
}

TEST_CASE("broadcasting matches explicit loops") {
    auto a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    auto row = Tensor::from({3}, {10, 20, 30});
    auto col = Tensor::from({2, 1}, {100, 200});

    auto sum_row = add(a, row);
    auto mul_col = mul(a, col);
    auto outer = mul(col, row);  // (2,1) x (3) -> (2,3)
    for (int64_t i = 0; i < 2; ++i)
        for (int64_t j = 0; j < 3; ++j) {
            CHECK(sum_row.values()[i * 3 + j] == a.values()[i * 3 + j] + row.values()[j]);
            CHECK(mul_col.values()[i * 3 + j] == a.values()[i * 3 + j] * col.values()[i]);
            CHECK(outer.values()[i * 3 + j] == col.values()[i] * row.values()[j]);
        }

    auto quot = div(a, Tensor::scalar(2.0f));
    for (int64_t i = 0; i < 6; ++i) CHECK(quot.values()[i] == a.values()[i] / 2.0f);

    CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({2, 4})), Error);
}

TEST_CASE("broadcast gradients reduce over the expanded axes") {
    Rng rng(29);
    auto a = DTensor::uniform({2, 1}, -1, 1, rng);
    auto b = DTensor::uniform({1, 3}, -1, 1, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    std::function<DTensor()> f = [&] {
        auto p = mul(a, b);
        return sum_all(mul(p, p));
    };
    auto rep = fd_check<double>(f, {a, b}, 1e-6, 1e-5);
    CHECK(rep.pass);
}

TEST_CASE("reshape and transpose preserve the right values") {
    auto x = Tensor::from({2, 3, 4}, [] {
        std::vector<float> v(24);
        for (int i = 0; i < 24; ++i) v[i] = static_cast<float>(i);
        return v;
    }());
    auto r = reshape(x, {6, 4});
    CHECK(r.values() == x.values());  // row-major relabeling only
    CHECK_THROWS_AS(reshape(x, {5, 5}), Error);

    auto t = transpose_last2(x);
    REQUIRE(t.shape() == Shape{2, 4, 3});
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t i = 0; i < 3; ++i)
            for (int64_t j = 0; j < 4; ++j)
                CHECK(t.values()[(n * 4 + j) * 3 + i] == x.values()[(n * 3 + i) * 4 + j]);
}

TEST_CASE("concat stacks along either axis") {
    auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
    auto b = Tensor::from({2, 2}, {5, 6, 7, 8});
    std::vector<Tensor> parts{a, b};

    auto rows = concat(std::span<const Tensor>(parts), 0);
    REQUIRE(rows.shape() == Shape{4, 2});
    CHECK(rows.values() == std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8});

    auto cols = concat(std::span<const Tensor>(parts), 1);
    REQUIRE(cols.shape() == Shape{2, 4});
    CHECK(cols.values() == std::vector<float>{1, 2, 5, 6, 3, 4, 7, 8});
}

TEST_CASE("gather_tokens picks rows by index") {
    auto x = Tensor::from({2, 4, 3}, [] {
        std::vector<float> v(24);
        for (int i = 0; i < 24; ++i) v[i] = static_cast<float>(i);
        return v;
    }());
    auto g = gather_tokens(x, {1, 3, 0, 2}, {2, 2});
    REQUIRE(g.shape() == Shape{2, 2, 3});
    // batch 0 takes tokens 1 and 3, batch 1 takes tokens 0 and 2
    CHECK(g.values() == std::vector<float>{3, 4, 5, 9, 10, 11, 12, 13, 14, 18, 19, 20});
    CHECK_THROWS_AS(gather_tokens(x, {4, 0, 0, 0}, {2, 2}), Error);
}

TEST_CASE("shape ops differentiate through a combined pipeline") {
    Rng rng(31);
    auto a = DTensor::uniform({2, 3, 4}, -1, 1, rng);
    auto b = DTensor::uniform({2, 3, 4}, -1, 1, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    std::function<DTensor()> f = [&] {
        std::vector<DTensor> parts{a, b};
        auto cat = concat(std::span<const DTensor>(parts), 2);         // (2,3,8)
        auto t = transpose_last2(cat);                                 // (2,8,3)
        auto g = gather_tokens(t, {1, 7, 0, 3}, {2, 2});               // (2,2,3)
        auto r = reshape(g, {4, 3});
        return sum_all(mul(r, r));
    };
    auto rep = fd_check<double>(f, {a, b}, 1e-6, 1e-5);
    CHECK(rep.pass);
}

TEST_CASE("reductions agree with hand loops and differentiate") {
    auto x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(sum_over(x, 1).values() == std::vector<float>{6, 15});
    CHECK(sum_over(x, 0).values() == std::vector<float>{5, 7, 9});
    CHECK(mean_over(x, 1).values() == std::vector<float>{2, 5});
    CHECK(max_over(x, 1).values() == std::vector<float>{3, 6});
    CHECK(max_over(x, 0).values() == std::vector<float>{4, 5, 6});
    CHECK(sum_all(x).item() == 21.0f);

    Rng rng(33);
    auto xd = DTensor::uniform({3, 4}, -1, 1, rng);
    xd.set_requires_grad(true);
    std::function<DTensor()> f = [&] {
        auto s = sum_over(xd, 0);
        auto m = mean_over(xd, 1);
        auto mx = max_over(xd, 1);
        return add(add(sum_all(mul(s, s)), sum_all(mul(m, m))), sum_all(mul(mx, mx)));
    };
    auto rep = fd_check<double>(f, {xd}, 1e-6, 1e-5);
    CHECK(rep.pass);
}

TEST_CASE("logsumexp is stable and consistent with softmax") {
    auto two = logsumexp(Tensor::from({2}, {0, 0}), 0);
    CHECK(two.item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));

    // values that would overflow exp() directly
    auto big = logsumexp(Tensor::from({2}, {1000, 1000}), 0);
    CHECK(big.item() == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-6));

    Rng rng(35);
    auto x = Tensor::uniform({4, 6}, -3, 3, rng);
    auto lse = logsumexp(x, 1);
    auto sm = softmax(x, 1);
    REQUIRE(lse.shape() == Shape{4});
    for (int64_t r = 0; r < 4; ++r)
        for (int64_t c = 0; c < 6; ++c) {
            float want = std::exp(x.values()[r * 6 + c] - lse.values()[r]);
            CHECK(sm.values()[r * 6 + c] == doctest::Approx(want).epsilon(1e-5));
        }
}

TEST_CASE("logsumexp gradient against finite differences") {
    Rng rng(37);
    auto x = DTensor::uniform({3, 5}, -2, 2, rng);
    x.set_requires_grad(true);
    std::function<DTensor()> f = [&] {
        auto l = logsumexp(x, 1);
        return sum_all(mul(l, l));
    };
    auto rep = fd_check<double>(f, {x}, 1e-6, 1e-5);
    CHECK(rep.pass);
}

TEST_CASE("checkpoints round trip bitwise") {
    Rng rng(39);
    auto a = Tensor::uniform({2, 3}, -1, 1, rng);
    auto b = Tensor::scalar(0.125f);
    std::string path = temp_path("pctrees_test.pctw");
    save_checkpoint(path, {{"layer.w", a}, {"bias", b}});

    auto entries = load_checkpoint(path);
    REQUIRE(entries.size() == 2);
    CHECK(entries[0].first == "layer.w");
    CHECK(entries[0].second.shape() == a.shape());
    CHECK(entries[0].second.values() == a.values());
    CHECK(entries[1].first == "bias");
    CHECK(entries[1].second.values() == b.values());

    std::filesystem::resize_file(path, 12);
    CHECK_THROWS_AS(load_checkpoint(path), Error);
    try {
        load_checkpoint(path);
    } catch (const Error& e) {
        CHECK(e.category() == ErrorCategory::Format);
    }
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_checkpoint(path), Error);  // IO on a missing file
}

TEST_CASE("randomized composite gradients, twenty instances") {
    Rng rng(41);
    for (int inst = 0; inst < 20; ++inst) {
        int64_t m = 2 + rng.uniform_int(3);
        int64_t k = 2 + rng.uniform_int(3);
        int64_t n = 2 + rng.uniform_int(3);
        auto a = DTensor::uniform({m, k}, -1, 1, rng);
        auto b = DTensor::uniform({k, n}, -1, 1, rng);
        auto c = DTensor::uniform({n}, -1, 1, rng);
        a.set_requires_grad(true);
        b.set_requires_grad(true);
        c.set_requires_grad(true);
        std::function<DTensor()> f = [&] {
            auto h = relu(add(matmul(a, b), c));
            auto s = softmax(add(matmul(a, b), c), 1);
            return add(sum_all(mul(h, h)), sum_all(mul(s, h)));
        };
        auto rep = fd_check<double>(f, {a, b, c}, 1e-6, 1e-5);
        CHECK(rep.pass);
    }
}

TEST_CASE("float gradients hold at coarse tolerance") {
    Rng rng(43);
    for (int inst = 0; inst < 5; ++inst) {
        auto a = Tensor::uniform({3, 4}, -1, 1, rng);
        auto b = Tensor::uniform({4, 3}, -1, 1, rng);
        a.set_requires_grad(true);
        b.set_requires_grad(true);
        std::function<Tensor()> f = [&] {
            auto y = relu(matmul(a, b));
            return sum_all(mul(y, y));
        };
        auto rep = fd_check<float>(f, {a, b}, 1e-3, 1e-2);
        CHECK(rep.pass);
    }
}
