#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "pctrees/error.hpp"
#include "pctrees/rng.hpp"
#include "pctrees/tensor.hpp"
#include "pctrees/train.hpp"

using namespace pctrees;
using namespace pctrees::train;

namespace {

PointCloud ball_cloud(Rng& rng, size_t n, double radius, double cx, double cz) {
    PointCloud c;
    for (size_t i = 0; i < n; ++i) {
        double x, y, z;
        do {
            x = rng.uniform(-1, 1);
            y = rng.uniform(-1, 1);
            z = rng.uniform(-1, 1);
        } while (x * x + y * y + z * z > 1.0);
        c.points.push_back({cx + radius * x, radius * y, cz + radius * z});
    }
    return c;
}

PointCloud pole_cloud(Rng& rng, size_t n, double height) {
    PointCloud c;
    for (size_t i = 0; i < n; ++i)
        c.points.push_back({rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05),
                            rng.uniform(0.0, height)});
    return c;
}

// Two easily separable shape classes, `per_class` items each.
LabeledDataset two_class_dataset(uint64_t seed, size_t per_class, size_t n_points = 64) {
    Rng rng(seed);
    LabeledDataset ds;
    ds.dictionary.class_names = {"ball", "pole", "other"};
    for (size_t i = 0; i < per_class; ++i) {
        LabeledDataset::Item a;
        a.id = "ball" + std::to_string(i);
        a.cloud = ball_cloud(rng, n_points, 0.8, 0.0, 1.0);
        a.cloud.id = a.id;
        a.label = 0;
        ds.items.push_back(std::move(a));

        LabeledDataset::Item b;
        b.id = "pole" + std::to_string(i);
        b.cloud = pole_cloud(rng, n_points, 3.0);
        b.cloud.id = b.id;
        b.label = 1;
        ds.items.push_back(std::move(b));
    }
    return ds;
}

double max_norm(const PointCloud& c) {
    double m = 0;
    for (const auto& p : c.points)
        m = std::max(m, std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z));
    return m;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return s;
}

}  // namespace

TEST_CASE("per-model rescale defaults") {
    CHECK(default_rescale("baseline") == "unit");
    CHECK(default_rescale("baselinepp") == "global");
    CHECK(default_rescale("pctrees") == "global");
    CHECK_THROWS_AS(default_rescale("vgg"), Error);
}

TEST_CASE("center_and_rescale unit mode fits each cloud separately") {
    auto ds = two_class_dataset(1, 3);
    double scale = center_and_rescale(ds, "unit");
    CHECK(scale == 1.0);
    for (const auto& item : ds.items)
        CHECK(max_norm(item.cloud) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("center_and_rescale global mode shares one scale") {
    auto ds = two_class_dataset(2, 3);
    // after centering, poles (height 3) are larger than balls (diameter 1.6)
    double scale = center_and_rescale(ds, "global");
    CHECK(scale > 1.0);
    // the shared scale is the largest absolute coordinate, so after
    // rescaling some coordinate sits exactly on +-1
    double biggest = 0.0;
    for (const auto& item : ds.items)
        for (const auto& p : item.cloud.points)
            biggest = std::max({biggest, std::abs(p.x), std::abs(p.y), std::abs(p.z)});
    CHECK(biggest == doctest::Approx(1.0).epsilon(1e-9));
    // relative sizes survive: every ball stays well inside the unit sphere
    for (const auto& item : ds.items)
        if (item.label == 0) CHECK(max_norm(item.cloud) < 0.7);
    CHECK_THROWS_AS(center_and_rescale(ds, "sideways"), Error);
}

TEST_CASE("stratified_split keeps per-class proportions") {
    auto ds = two_class_dataset(3, 30);  // 30 per class
    auto [train_ds, test_ds] = stratified_split(ds, 0.8, 9);
    CHECK(train_ds.items.size() == 48);
    CHECK(test_ds.items.size() == 12);
    std::map<size_t, int> train_counts, test_counts;
    for (const auto& i : train_ds.items) ++train_counts[i.label];
    for (const auto& i : test_ds.items) ++test_counts[i.label];
    CHECK(train_counts[0] == 24);
    CHECK(train_counts[1] == 24);
    CHECK(test_counts[0] == 6);
    CHECK(test_counts[1] == 6);

    // no item lands on both sides
    std::set<std::string> train_ids;
    for (const auto& i : train_ds.items) train_ids.insert(i.id);
    for (const auto& i : test_ds.items) CHECK(train_ids.count(i.id) == 0);

    // deterministic per seed
    auto [t2, e2] = stratified_split(ds, 0.8, 9);
    for (size_t i = 0; i < t2.items.size(); ++i) CHECK(t2.items[i].id == train_ds.items[i].id);

    // a singleton class cannot be split
    LabeledDataset tiny = ds;
    tiny.items.resize(3);  // ball0, pole0, ball1 -> class 1 has one item
    CHECK_THROWS_AS(stratified_split(tiny, 0.8, 9), Error);
}

TEST_CASE("resample balances class support") {
    auto ds = two_class_dataset(4, 10);
    ds.items.erase(std::remove_if(ds.items.begin(), ds.items.end(),
                                  [](const LabeledDataset::Item& i) {
                                      return i.label == 1 && i.id > "pole3";
                                  }),
                   ds.items.end());  // 10 balls, 4 poles

    auto up = resample(ds, "up", 3);
    std::map<size_t, int> up_counts;
    for (const auto& i : up.items) ++up_counts[i.label];
    CHECK(up_counts[0] == 10);
    CHECK(up_counts[1] == 10);
    // all four original poles survive upsampling
    std::multiset<std::string> up_ids;
    for (const auto& i : up.items)
        if (i.label == 1) up_ids.insert(i.id);
    for (const auto& id : {"pole0", "pole1", "pole2", "pole3"}) CHECK(up_ids.count(id) >= 1);

    auto down = resample(ds, "down", 3);
    std::map<size_t, int> down_counts;
    std::set<std::string> down_unique;
    for (const auto& i : down.items) {
        ++down_counts[i.label];
        CHECK(down_unique.insert(i.id).second);  // without replacement
    }
    CHECK(down_counts[0] == 4);
    CHECK(down_counts[1] == 4);

    auto none = resample(ds, "none", 3);
    CHECK(none.items.size() == ds.items.size());

    auto up2 = resample(ds, "up", 3);
    REQUIRE(up2.items.size() == up.items.size());
    for (size_t i = 0; i < up.items.size(); ++i) CHECK(up2.items[i].id == up.items[i].id);

    CHECK_THROWS_AS(resample(ds, "smote", 3), Error);
}

TEST_CASE("prepare produces model-ready feature arrays") {
    auto ds = two_class_dataset(5, 4);
    center_and_rescale(ds, "global");

    TrainConfig pc;
    pc.model = "pctrees";
    pc.tiny = true;
    pc.input_points = 32;
    auto pts = prepare(ds, pc);
    CHECK(pts.kind == PreparedDataset::Kind::Points);
    CHECK(pts.points == 32);
    CHECK(pts.num_classes == 3);
    REQUIRE(pts.features.size() == ds.items.size());
    for (const auto& f : pts.features) CHECK(f.size() == 32 * 3);
    for (size_t i = 0; i < ds.items.size(); ++i)
        CHECK(pts.labels[i] == static_cast<int64_t>(ds.items[i].label));

    TrainConfig cc;
    cc.model = "baseline";
    cc.tiny = true;
    cc.res = 32;
    auto proj = prepare(ds, cc);
    CHECK(proj.kind == PreparedDataset::Kind::Projections);
    CHECK(proj.res == 32);
    for (const auto& f : proj.features) CHECK(f.size() == 6u * 32 * 32);

    LabeledDataset dup = ds;
    dup.items[1].id = dup.items[0].id;
    CHECK_THROWS_AS(prepare(dup, pc), Error);
}

TEST_CASE("auc_ovr matches frozen binary cases") {
    std::vector<double> scores{0.9, 0.1, 0.6, 0.4, 0.65, 0.35, 0.2, 0.8};
    CHECK(auc_ovr(scores, 2, {0, 0, 1, 1}) == doctest::Approx(0.75).epsilon(1e-12));

    std::vector<double> perfect{0.9, 0.1, 0.8, 0.2, 0.1, 0.9, 0.3, 0.7};
    CHECK(auc_ovr(perfect, 2, {0, 0, 1, 1}) == doctest::Approx(1.0).epsilon(1e-12));

    // all-tied scores are chance level
    std::vector<double> tied{0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5};
    CHECK(auc_ovr(tied, 2, {0, 0, 1, 1}) == doctest::Approx(0.5).epsilon(1e-12));

    CHECK_THROWS_AS(auc_ovr(scores, 2, {0, 0}), Error);          // row count mismatch
    CHECK_THROWS_AS(auc_ovr(scores, 2, {0, 0, 0, 0}), Error);    // one class only
}

TEST_CASE("auc_ovr equals the quadratic pairwise statistic") {
    Rng rng(71);
    for (int inst = 0; inst < 50; ++inst) {
        size_t n = 20 + rng.uniform_int(181);  // up to 200
        size_t k = 2 + rng.uniform_int(3);
        std::vector<int64_t> labels(n);
        for (auto& l : labels) l = rng.uniform_int(static_cast<int64_t>(k));
        labels[0] = 0;  // guarantee class 0 appears on both sides somewhere
        labels[1] = 1;
        std::vector<double> scores(n * k);
        for (size_t i = 0; i < n; ++i) {
            double total = 0;
            for (size_t c = 0; c < k; ++c) {
                // single-decimal scores force plenty of ties
                scores[i * k + c] = 0.1 * (1 + rng.uniform_int(9));
                total += scores[i * k + c];
            }
            for (size_t c = 0; c < k; ++c) scores[i * k + c] /= total;
        }

        // O(N^2) oracle: mean over pairs of [s_pos > s_neg] + 0.5 [s_pos == s_neg]
        double sum = 0;
        size_t used = 0;
        for (size_t c = 0; c < k; ++c) {
            std::vector<double> pos, neg;
            for (size_t i = 0; i < n; ++i)
                (labels[i] == static_cast<int64_t>(c) ? pos : neg).push_back(scores[i * k + c]);
            if (pos.empty() || neg.empty()) continue;
            double wins = 0;
            for (double p : pos)
                for (double q : neg) wins += p > q ? 1.0 : (p == q ? 0.5 : 0.0);
            sum += wins / (static_cast<double>(pos.size()) * neg.size());
            ++used;
        }
        REQUIRE(used > 0);
        double want = sum / used;
        CHECK(auc_ovr(scores, k, labels) == doctest::Approx(want).epsilon(1e-9));
    }
}

TEST_CASE("confusion_and_accuracy counts are exact") {
    auto r = confusion_and_accuracy({0, 1, 1, 2}, {0, 1, 2, 2}, 3);
    CHECK(r.confusion[0][0] == 1);
    CHECK(r.confusion[1][1] == 1);
    CHECK(r.confusion[2][1] == 1);
    CHECK(r.confusion[2][2] == 1);
    CHECK(r.overall == doctest::Approx(0.75));
    CHECK(r.per_class[0] == doctest::Approx(1.0));
    CHECK(r.per_class[1] == doctest::Approx(1.0));
    CHECK(r.per_class[2] == doctest::Approx(0.5));
    CHECK_THROWS_AS(confusion_and_accuracy({3, 0}, {0, 0}, 3), Error);
    CHECK_THROWS_AS(confusion_and_accuracy({0, 0}, {0, 3}, 3), Error);
    CHECK_THROWS_AS(confusion_and_accuracy({0}, {0, 0}, 3), Error);
}

TEST_CASE("a few optimizer steps reduce the loss for every architecture") {
    auto ds = two_class_dataset(6, 4, 128);
    center_and_rescale(ds, "global");

    for (const std::string name : {"baseline", "baselinepp", "pctrees"}) {
        TrainConfig cfg;
        cfg.model = name;
        cfg.tiny = true;
        cfg.res = 32;
        cfg.input_points = 64;  // tiny preset keeps 64 -> 32 sampling stages
        cfg.lr = 1e-3;
        auto prep = prepare(ds, cfg);

        Model model = build_model(cfg, prep.num_classes, 77);
        std::vector<float> flat;
        for (const auto& f : prep.features) flat.insert(flat.end(), f.begin(), f.end());
        tensor::Shape shape = model.is_point_model
                                  ? tensor::Shape{static_cast<int64_t>(prep.features.size()),
                                                  prep.points, 3}
                                  : tensor::Shape{static_cast<int64_t>(prep.features.size()), 6,
                                                  prep.res, prep.res};
        auto batch = tensor::Tensor::from(shape, flat);

        Rng drop(5);
        models::ForwardCtx<float> ctx{true, &drop};
        auto params = model.params.trainable();
        tensor::AdamState<float> state;
        double first = 0, last = 0;
        for (int step = 0; step < 10; ++step) {
            model.params.zero_grads();
            auto loss = tensor::cross_entropy(model_forward(model, batch, ctx), prep.labels);
            if (step == 0) first = loss.item();
            last = loss.item();
            loss.backward();
            tensor::adam_step(std::span<tensor::Tensor>(params.data(), params.size()), state,
                              float(cfg.lr));
        }
        CHECK(last < first);
        CHECK(std::isfinite(last));
    }
}

TEST_CASE("train_model is deterministic and writes exact metrics") {
    auto ds = two_class_dataset(7, 8, 96);
    center_and_rescale(ds, "global");
    auto [tr, te] = stratified_split(ds, 0.75, 11);

    TrainConfig cfg;
    cfg.model = "pctrees";
    cfg.tiny = true;
    cfg.input_points = 64;
    cfg.batch_size = 4;
    cfg.epochs = 2;
    cfg.lr = 1e-3;
    cfg.seed = 13;
    auto train_prep = prepare(tr, cfg);
    auto test_prep = prepare(te, cfg);

    auto r1 = train_model(cfg, train_prep, test_prep);
    auto r2 = train_model(cfg, train_prep, test_prep);

    REQUIRE(r1.epochs.size() == 3);  // untrained row + two epochs
    CHECK(std::isnan(r1.epochs[0].loss));
    CHECK(r1.epochs[0].epoch == 0);
    CHECK(r1.seconds_per_step > 0.0);
    for (size_t i = 0; i < r1.epochs.size(); ++i) {
        const auto& a = r1.epochs[i];
        const auto& b = r2.epochs[i];
        if (i > 0) CHECK(a.loss == b.loss);
        CHECK(a.overall_accuracy == b.overall_accuracy);
        CHECK(a.auc_macro_ovr == b.auc_macro_ovr);
    }

    std::string p1 = temp_path("pctrees_metrics_1.csv");
    std::string p2 = temp_path("pctrees_metrics_2.csv");
    write_metrics_csv(p1, r1.epochs);
    write_metrics_csv(p2, r2.epochs);
    std::string m1 = slurp(p1), m2 = slurp(p2);
    CHECK(m1 == m2);
    CHECK(m1.rfind("epoch,loss,overall_accuracy,auc_macro_ovr\n", 0) == 0);
    // one row per epoch entry
    CHECK(std::count(m1.begin(), m1.end(), '\n') == 4);

    std::string pt = temp_path("pctrees_timing.csv");
    write_timing_csv(pt, r1.epochs);
    CHECK(slurp(pt).rfind("epoch,seconds\n", 0) == 0);
    std::remove(p1.c_str());
    std::remove(p2.c_str());
    std::remove(pt.c_str());

    // evaluation is reproducible on its own
    auto ev = evaluate(r1.model, test_prep);
    CHECK(ev.overall_accuracy == r1.final_report.overall_accuracy);
    CHECK(ev.auc_macro_ovr == r1.final_report.auc_macro_ovr);
}

TEST_CASE("format_report includes the published reference block") {
    EvalReport rep;
    rep.overall_accuracy = 0.5;
    rep.auc_macro_ovr = 0.5;
    rep.per_class_accuracy = {0.5, 0.5};
    rep.confusion = {{1, 1}, {1, 1}};
    std::string text = format_report(rep, "pctrees", {"a", "b"});
    CHECK(text.find("model: pctrees") != std::string::npos);
    CHECK(text.find("[reference, not reproducible]") != std::string::npos);
    CHECK(text.find("baseline     0.75   0.68") != std::string::npos);
    CHECK(text.find("baselinepp   0.75   0.70") != std::string::npos);
    CHECK(text.find("pctrees      0.81   0.72") != std::string::npos);
    CHECK(text.find("protocol: stratified split") != std::string::npos);
}
