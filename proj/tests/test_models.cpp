#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "doctest.h"
#include "pctrees/error.hpp"
#include "pctrees/models.hpp"
#include "pctrees/rng.hpp"
#include "pctrees/tensor.hpp"

using namespace pctrees;
using namespace pctrees::models;
using namespace pctrees::tensor;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

// Small point-transformer instance used throughout: 32 input points
// sampled down to 16 then 8 centers with 4 neighbors per group.
PCTConfig small_pct(int num_classes) {
    PCTConfig cfg = PCTConfig::tiny(num_classes);
    cfg.input_points = 32;
    cfg.sg_points = {16, 8};
    cfg.sg_neighbors = 4;
    return cfg;
}

}  // namespace

TEST_CASE("config presets and validation") {
    auto q = ResNetQuarterConfig::quarter(1, 6);
    CHECK(q.stage_widths == std::array<int, 4>{16, 32, 64, 128});
    CHECK(q.input_channels == 1);
    CHECK(q.num_classes == 6);

    auto t = ResNetQuarterConfig::tiny(1, 4);
    CHECK(t.stage_widths == std::array<int, 4>{4, 8, 16, 32});
    CHECK(t.res == 64);

    auto bad = q;
    bad.res = 16;  // cannot survive five 2x downsamplings
    CHECK_THROWS_AS(bad.validate(), Error);

    auto p = PCTConfig::tiny(4);
    CHECK(p.input_points == 128);
    CHECK(p.sg_points == std::array<int, 2>{64, 32});
    CHECK(p.attention_dim == p.sg_dims[1]);
    p.validate();

    auto bad_p = p;
    bad_p.attention_dim = p.sg_dims[1] + 1;
    CHECK_THROWS_AS(bad_p.validate(), Error);
    bad_p = p;
    bad_p.sg_points = {32, 64};  // must decrease
    CHECK_THROWS_AS(bad_p.validate(), Error);
}

TEST_CASE("parameter count matches the canonical full-width topology") {
    // at full width the topology is standard 18-layer: 11,689,512 parameters
    // with 3 input channels and 1000 classes
    ResNetQuarterConfig full;
    full.stage_widths = {64, 128, 256, 512};
    full.input_channels = 3;
    full.num_classes = 1000;
    full.res = 224;
    CHECK(resnet_param_count(full, 1) == 11689512);

    // quartering the widths shrinks the backbone by more than 10x
    auto quarter = ResNetQuarterConfig::quarter(1, 6);
    CHECK(resnet_param_count(quarter, 6) * 10 < resnet_param_count(full, 1));

    // initialized parameter inventories agree with the analytic count
    auto base = init_resnet<float>(quarter, "baseline", 7);
    CHECK(base.count_values(true) == resnet_param_count(quarter, 6));

    auto quarter6 = ResNetQuarterConfig::quarter(6, 6);
    auto pp = init_resnet<float>(quarter6, "baselinepp", 7);
    CHECK(pp.count_values(true) == resnet_param_count(quarter6, 1));
}

TEST_CASE("init_resnet rejects unknown architectures") {
    auto cfg = ResNetQuarterConfig::tiny(1, 4);
    CHECK_THROWS_AS(init_resnet<float>(cfg, "resnet50", 1), Error);
    CHECK_THROWS_AS(init_resnet<float>(cfg, "", 1), Error);
}

TEST_CASE("multiview_forward shapes and batch equivariance") {
    Rng rng(51);
    auto cfg = ResNetQuarterConfig::tiny(1, 4);
    cfg.res = 32;
    auto params = init_resnet<float>(cfg, "baseline", 11);
    auto x = Tensor::uniform({2, 6, 32, 32}, 0, 1, rng);
    ForwardCtx<float> eval;

    auto logits = multiview_forward(params, cfg, x, Fusion::Separate, eval);
    REQUIRE(logits.shape() == Shape{2, 4});

    // swapping the two items swaps the two logit rows exactly
    std::vector<float> swapped(x.values().size());
    size_t item = 6 * 32 * 32;
    std::copy(x.values().begin() + item, x.values().end(), swapped.begin());
    std::copy(x.values().begin(), x.values().begin() + item, swapped.begin() + item);
    auto logits_sw = multiview_forward(params, cfg, Tensor::from(x.shape(), swapped),
                                       Fusion::Separate, eval);
    for (int64_t k = 0; k < 4; ++k) {
        CHECK(logits_sw.values()[k] == logits.values()[4 + k]);
        CHECK(logits_sw.values()[4 + k] == logits.values()[k]);
    }

    // channel fusion consumes all six views as one image
    auto cfg6 = ResNetQuarterConfig::tiny(6, 4);
    cfg6.res = 32;
    auto pp = init_resnet<float>(cfg6, "baselinepp", 11);
    auto logits_pp = multiview_forward(pp, cfg6, x, Fusion::Channels, eval);
    CHECK(logits_pp.shape() == Shape{2, 4});
}

TEST_CASE("point_embed is a per-point map") {
    Rng rng(53);
    auto cfg = small_pct(4);
    auto params = init_pct<float>(cfg, 13);
    ForwardCtx<float> eval;

    auto pts = Tensor::uniform({2, 8, 3}, -1, 1, rng);
    // make token 5 of batch 0 a duplicate of token 1
    {
        auto& v = pts.mutable_values();
        for (int d = 0; d < 3; ++d) v[5 * 3 + d] = v[1 * 3 + d];
    }
    auto feats = point_embed(params, cfg, pts, eval);
    REQUIRE(feats.shape() == Shape{2, 8, cfg.embed_dim});
    for (int d = 0; d < cfg.embed_dim; ++d)
        CHECK(feats.values()[5 * cfg.embed_dim + d] == feats.values()[1 * cfg.embed_dim + d]);

    // permuting tokens permutes features (eval mode: no batch statistics)
    std::vector<int> perm{3, 0, 7, 1, 5, 2, 6, 4};
    std::vector<float> pv(pts.values().size());
    for (int n = 0; n < 2; ++n)
        for (int i = 0; i < 8; ++i)
            for (int d = 0; d < 3; ++d)
                pv[(n * 8 + i) * 3 + d] = pts.values()[(n * 8 + perm[i]) * 3 + d];
    auto feats_p = point_embed(params, cfg, Tensor::from(pts.shape(), pv), eval);
    for (int n = 0; n < 2; ++n)
        for (int i = 0; i < 8; ++i)
            for (int d = 0; d < cfg.embed_dim; ++d)
                CHECK(feats_p.values()[(n * 8 + i) * cfg.embed_dim + d] ==
                      feats.values()[(n * 8 + perm[i]) * cfg.embed_dim + d]);
}

TEST_CASE("neighbor_embed reduces tokens and returns real centers") {
    Rng rng(55);
    auto cfg = small_pct(4);
    auto params = init_pct<float>(cfg, 17);
    ForwardCtx<float> eval;

    const int64_t N = 2, n = cfg.input_points;
    std::vector<double> coords(N * n * 3);
    for (auto& c : coords) c = rng.uniform(-1, 1);
    std::vector<float> coords_f(coords.begin(), coords.end());
    auto pts = Tensor::from({N, n, 3}, coords_f);

    auto feats = point_embed(params, cfg, pts, eval);
    auto [stage2, centers] = neighbor_embed(params, cfg, coords, feats, eval);
    REQUIRE(stage2.shape() == Shape{N, cfg.sg_points[1], cfg.sg_dims[1]});
    REQUIRE(centers.size() == static_cast<size_t>(N) * cfg.sg_points[1] * 3);

    // every reported center is one of the original input points
    for (int64_t b = 0; b < N; ++b)
        for (int c = 0; c < cfg.sg_points[1]; ++c) {
            bool found = false;
            for (int64_t i = 0; i < n && !found; ++i) {
                found = coords[(b * n + i) * 3 + 0] == centers[(b * cfg.sg_points[1] + c) * 3 + 0] &&
                        coords[(b * n + i) * 3 + 1] == centers[(b * cfg.sg_points[1] + c) * 3 + 1] &&
                        coords[(b * n + i) * 3 + 2] == centers[(b * cfg.sg_points[1] + c) * 3 + 2];
            }
            CHECK(found);
        }
}

TEST_CASE("attention weight rows sum to one") {
    Rng rng(57);
    auto cfg = small_pct(4);
    auto params = init_pct<float>(cfg, 19);
    auto f = Tensor::uniform({2, 8, cfg.attention_dim}, -2, 2, rng);

    auto a = attention_weights(params, "oa1.", f);
    REQUIRE(a.shape() == Shape{2, 8, 8});
    for (int64_t b = 0; b < 2; ++b)
        for (int64_t q = 0; q < 8; ++q) {
            double row = 0;
            for (int64_t k = 0; k < 8; ++k) {
                float w = a.values()[(b * 8 + q) * 8 + k];
                CHECK(w >= 0.0f);
                row += w;
            }
            CHECK(std::abs(row - 1.0) <= 1e-5);
        }
}

TEST_CASE("attention enters offset_attention only through A V") {
    // with V zeroed the block output is independent of the Q/K projections
    Rng rng(59);
    auto cfg = small_pct(4);
    auto pa = init_pct<float>(cfg, 23);
    auto pb = init_pct<float>(cfg, 29);  // different q/k weights
    for (auto* p : {&pa, &pb}) {
        for (auto& e : p->entries) {
            if (e.name == "oa1.v.w" || e.name == "oa1.v.b")
                std::fill(e.value.mutable_values().begin(), e.value.mutable_values().end(), 0.0f);
        }
    }
    // equalize everything except q/k
    for (auto& e : pb.entries) {
        if (e.name.rfind("oa1.q", 0) == 0 || e.name.rfind("oa1.k", 0) == 0) continue;
        e.value.mutable_values() = pa.at(e.name).values();
    }

    ForwardCtx<float> eval;
    auto f = Tensor::uniform({2, 8, cfg.attention_dim}, -1, 1, rng);
    auto ya = offset_attention(pa, "oa1.", f, eval);
    auto yb = offset_attention(pb, "oa1.", f, eval);
    REQUIRE(ya.shape() == f.shape());
    CHECK(ya.values() == yb.values());
}

TEST_CASE("pct_forward logits are permutation invariant in eval mode") {
    Rng rng(61);
    auto cfg = small_pct(5);
    auto params = init_pct<float>(cfg, 31);
    ForwardCtx<float> eval;

    for (int cloud = 0; cloud < 3; ++cloud) {
        auto x = Tensor::uniform({1, cfg.input_points, 3}, -1, 1, rng);
        auto base = pct_forward(params, cfg, x, eval);
        REQUIRE(base.shape() == Shape{1, 5});

        std::vector<int> order(cfg.input_points);
        for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        for (int shuffle = 0; shuffle < 5; ++shuffle) {
            rng.shuffle(order);
            std::vector<float> shuffled(x.values().size());
            for (int i = 0; i < cfg.input_points; ++i)
                for (int d = 0; d < 3; ++d)
                    shuffled[i * 3 + d] = x.values()[order[i] * 3 + d];
            auto perm = pct_forward(params, cfg, Tensor::from(x.shape(), shuffled), eval);
            for (int64_t k = 0; k < 5; ++k)
                CHECK(std::abs(perm.values()[k] - base.values()[k]) <= 1e-4);
        }
    }
}

TEST_CASE("model checkpoints restore forward behavior exactly") {
    Rng rng(63);
    auto cfg = ResNetQuarterConfig::tiny(1, 3);
    cfg.res = 32;
    auto params = init_resnet<float>(cfg, "baseline", 37);
    auto x = Tensor::uniform({2, 6, 32, 32}, 0, 1, rng);
    ForwardCtx<float> eval;
    auto before = multiview_forward(params, cfg, x, Fusion::Separate, eval);

    std::string path = temp_path("pctrees_test_model.pctw");
    save_model(params, path);
    auto loaded = load_model(path, "baseline");
    CHECK(loaded.arch == "baseline");
    CHECK(loaded.count_values(true) == params.count_values(true));
    auto after = multiview_forward(loaded, cfg, x, Fusion::Separate, eval);
    CHECK(after.values() == before.values());
    std::remove(path.c_str());
}

TEST_CASE("model meta round trips every field") {
    ModelMeta meta;
    meta.arch = "pctrees";
    meta.tiny = true;
    meta.num_classes = 4;
    meta.class_names = {"a", "b", "c", "other"};
    meta.res = 96;
    meta.extent = 3.5;
    meta.mode = "occupancy";
    meta.rescale = "unit";
    meta.input_points = 256;
    meta.seed = 1234567;

    std::string path = temp_path("pctrees_test_meta.txt");
    save_meta(meta, path);
    ModelMeta back = load_meta(path);
    CHECK(back.arch == meta.arch);
    CHECK(back.tiny == meta.tiny);
    CHECK(back.num_classes == meta.num_classes);
    CHECK(back.class_names == meta.class_names);
    CHECK(back.res == meta.res);
    CHECK(back.extent == meta.extent);
    CHECK(back.mode == meta.mode);
    CHECK(back.rescale == meta.rescale);
    CHECK(back.input_points == meta.input_points);
    CHECK(back.seed == meta.seed);
    std::remove(path.c_str());
}

TEST_CASE("full point-transformer gradients verify end to end") {
    GradCheckOptions opts;
    opts.h = 3e-7;
    opts.tolerance = 1e-5;
    opts.max_coords_per_tensor = 2;
    for (uint64_t inst = 0; inst < 3; ++inst) {
        auto cfg = small_pct(3);
        auto params = init_pct<double>(cfg, 100 + inst);
        Rng rng(200 + inst);
        auto x = DTensor::uniform({4, cfg.input_points, 3}, -1, 1, rng);
        x.set_requires_grad(true);
        std::vector<DTensor> wrt = params.trainable();
        wrt.push_back(x);

        Rng drop(0);
        ForwardCtx<double> ctx{true, &drop};
        std::vector<int64_t> labels{0, 1, 2, 1};
        std::function<DTensor()> f = [&] {
            drop = Rng(101);  // same mask on every probe
            return cross_entropy(pct_forward(params, cfg, x, ctx), labels);
        };
        opts.coord_seed = 300 + inst;
        auto rep = grad_check<double>(f, std::span<DTensor>(wrt.data(), wrt.size()), opts);
        CHECK(rep.pass);
        CHECK(rep.coords_checked > 0);
    }
}

TEST_CASE("full multiview gradients verify end to end") {
    GradCheckOptions opts;
    opts.h = 3e-7;
    opts.tolerance = 1e-5;
    opts.max_coords_per_tensor = 2;
    for (uint64_t inst = 0; inst < 3; ++inst) {
        auto cfg = ResNetQuarterConfig::tiny(1, 3);
        cfg.res = 32;
        auto params = init_resnet<double>(cfg, "baseline", 400 + inst);
        Rng rng(500 + inst);
        auto x = DTensor::uniform({2, 6, 32, 32}, 0, 1, rng);
        x.set_requires_grad(true);
        std::vector<DTensor> wrt = params.trainable();
        wrt.push_back(x);

        Rng drop(0);
        ForwardCtx<double> ctx{true, &drop};
        std::vector<int64_t> labels{0, 2};
        std::function<DTensor()> f = [&] {
            drop = Rng(77);
            return cross_entropy(multiview_forward(params, cfg, x, Fusion::Separate, ctx), labels);
        };
        opts.coord_seed = 600 + inst;
        auto rep = grad_check<double>(f, std::span<DTensor>(wrt.data(), wrt.size()), opts);
        CHECK(rep.pass);
        CHECK(rep.coords_checked > 0);
    }
}
