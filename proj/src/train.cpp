#include "pctrees/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "pctrees/error.hpp"
#include "pctrees/io.hpp"
#include "pctrees/rng.hpp"

namespace pctrees::train {

using tensor::Tensor;

namespace {

double now_seconds() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace

std::string default_rescale(const std::string& model) {
    if (model == "baseline") return "unit";
    if (model == "baselinepp" || model == "pctrees") return "global";
    throw_config("unknown model '" + model + "'");
}

double center_and_rescale(LabeledDataset& ds, const std::string& rescale) {
    if (rescale == "unit") {
        for (auto& item : ds.items) item.cloud = normalize_unit(item.cloud);
        return 1.0;
    }
    if (rescale == "global") {
        std::vector<PointCloud> clouds;
        clouds.reserve(ds.items.size());
        for (auto& item : ds.items) clouds.push_back(center(item.cloud));
        auto [scaled, s] = rescale_global(std::move(clouds));
        for (size_t i = 0; i < ds.items.size(); ++i) ds.items[i].cloud = std::move(scaled[i]);
        return s;
    }
    throw_config("rescale must be 'unit' or 'global', got '" + rescale + "'");
}

std::pair<LabeledDataset, LabeledDataset> stratified_split(const LabeledDataset& ds,
                                                           double fraction, uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw_config("split fraction must be in (0, 1)");
    size_t k = ds.dictionary.num_classes();
    std::vector<std::vector<size_t>> per_class(k);
    for (size_t i = 0; i < ds.items.size(); ++i) {
        if (ds.items[i].label >= k) throw_shape("split: label out of range");
        per_class[ds.items[i].label].push_back(i);
    }
    std::vector<char> to_train(ds.items.size(), 0);
    for (size_t c = 0; c < k; ++c) {
        auto& idx = per_class[c];
        if (idx.empty()) continue;
        if (idx.size() < 2)
            throw_shape("ClassTooSmall: class '" + ds.dictionary.class_names[c] +
                        "' has fewer than 2 items");
        Rng rng(Rng::derive(seed, c));
        rng.shuffle(idx);
        size_t n_train = static_cast<size_t>(std::floor(fraction * static_cast<double>(idx.size())));
        for (size_t i = 0; i < n_train; ++i) to_train[idx[i]] = 1;
    }
    LabeledDataset train_ds, test_ds;
    train_ds.dictionary = ds.dictionary;
    test_ds.dictionary = ds.dictionary;
    for (size_t i = 0; i < ds.items.size(); ++i)
        (to_train[i] ? train_ds : test_ds).items.push_back(ds.items[i]);
    return {std::move(train_ds), std::move(test_ds)};
}

LabeledDataset resample(const LabeledDataset& ds, const std::string& strategy, uint64_t seed) {
    if (strategy == "none") return ds;
    size_t k = ds.dictionary.num_classes();
    std::vector<std::vector<size_t>> per_class(k);
    for (size_t i = 0; i < ds.items.size(); ++i) per_class[ds.items[i].label].push_back(i);

    LabeledDataset out;
    out.dictionary = ds.dictionary;
    if (strategy == "up") {
        size_t target = 0;
        for (const auto& idx : per_class) target = std::max(target, idx.size());
        out.items = ds.items;  // originals always kept
        for (size_t c = 0; c < k; ++c) {
            const auto& idx = per_class[c];
            if (idx.empty()) continue;
            Rng rng(Rng::derive(seed, 100 + c));
            for (size_t extra = idx.size(); extra < target; ++extra) {
                size_t pick = idx[static_cast<size_t>(
                    rng.uniform_int(static_cast<int64_t>(idx.size())))];
                auto item = ds.items[pick];
                item.id += "#dup" + std::to_string(extra - idx.size());
                out.items.push_back(std::move(item));
            }
        }
        return out;
    }
    if (strategy == "down") {
        size_t target = std::numeric_limits<size_t>::max();
        for (const auto& idx : per_class)
            if (!idx.empty()) target = std::min(target, idx.size());
        std::vector<char> keep(ds.items.size(), 0);
        for (size_t c = 0; c < k; ++c) {
            auto idx = per_class[c];
            if (idx.empty()) continue;
            Rng rng(Rng::derive(seed, 200 + c));
            rng.shuffle(idx);
            for (size_t i = 0; i < target; ++i) keep[idx[i]] = 1;
        }
        for (size_t i = 0; i < ds.items.size(); ++i)
            if (keep[i]) out.items.push_back(ds.items[i]);
        return out;
    }
    throw_config("resample strategy must be none, up, or down");
}

namespace {

int resolved_input_points(const TrainConfig& cfg) {
    if (cfg.input_points > 0) return cfg.input_points;
    return cfg.tiny ? models::PCTConfig::tiny(2).input_points
                    : models::PCTConfig::full(2).input_points;
}

}  // namespace

PreparedDataset prepare(const LabeledDataset& ds, const TrainConfig& cfg) {
    if (ds.items.empty()) throw_shape("prepare: empty dataset");
    std::set<std::string> ids;
    for (const auto& item : ds.items)
        if (!ids.insert(item.id).second) throw_shape("prepare: duplicate id '" + item.id + "'");

    PreparedDataset out;
    out.num_classes = ds.dictionary.num_classes();
    bool point_model = cfg.model == "pctrees";
    out.kind = point_model ? PreparedDataset::Kind::Points : PreparedDataset::Kind::Projections;
    for (const auto& item : ds.items) {
        if (item.label >= out.num_classes) throw_shape("prepare: label out of range");
        out.ids.push_back(item.id);
        out.labels.push_back(static_cast<int64_t>(item.label));
        if (point_model) {
            out.points = resolved_input_points(cfg);
            PointCloud fixed = resample_fixed(item.cloud, static_cast<size_t>(out.points),
                                              Rng::derive(cfg.seed, fnv1a(item.id)));
            std::vector<float> feat;
            feat.reserve(fixed.size() * 3);
            for (const Point3& p : fixed.points) {
                feat.push_back(static_cast<float>(p.x));
                feat.push_back(static_cast<float>(p.y));
                feat.push_back(static_cast<float>(p.z));
            }
            out.features.push_back(std::move(feat));
        } else {
            out.res = cfg.res;
            auto ps = raster::project6(item.cloud, cfg.res, cfg.extent, cfg.mode);
            out.features.push_back(raster::stack_channels(ps));
        }
    }
    return out;
}

Model build_model(const TrainConfig& cfg, size_t num_classes, uint64_t init_seed) {
    Model m;
    m.name = cfg.model;
    m.tiny = cfg.tiny;
    int k = static_cast<int>(num_classes);
    if (cfg.model == "baseline" || cfg.model == "baselinepp") {
        int in_ch = cfg.model == "baseline" ? 1 : 6;
        m.cnn = cfg.tiny ? models::ResNetQuarterConfig::tiny(in_ch, k)
                         : models::ResNetQuarterConfig::quarter(in_ch, k, cfg.res);
        m.cnn.res = cfg.res;
        m.cnn.validate();
        m.params = models::init_resnet<float>(m.cnn, cfg.model, init_seed);
        m.is_point_model = false;
    } else if (cfg.model == "pctrees") {
        m.pct = cfg.tiny ? models::PCTConfig::tiny(k) : models::PCTConfig::full(k);
        if (cfg.input_points > 0) m.pct.input_points = cfg.input_points;
        m.pct.validate();
        m.params = models::init_pct<float>(m.pct, init_seed);
        m.is_point_model = true;
    } else {
        throw_config("unknown model '" + cfg.model + "'");
    }
    return m;
}

tensor::Tensor model_forward(Model& model, const tensor::Tensor& batch,
                             const models::ForwardCtx<float>& ctx) {
    if (model.is_point_model) return models::pct_forward(model.params, model.pct, batch, ctx);
    if (batch.rank() != 4 || batch.dim(2) != model.cnn.res || batch.dim(3) != model.cnn.res)
        throw_shape("model_forward: batch resolution does not match the model config");
    auto fusion = model.name == "baseline" ? models::Fusion::Separate : models::Fusion::Channels;
    return models::multiview_forward(model.params, model.cnn, batch, fusion, ctx);
}

namespace {

Tensor make_batch(const PreparedDataset& ds, const std::vector<size_t>& idx,
                  std::vector<int64_t>& labels) {
    size_t per_item = ds.features[idx[0]].size();
    std::vector<float> data;
    data.reserve(idx.size() * per_item);
    labels.clear();
    for (size_t i : idx) {
        data.insert(data.end(), ds.features[i].begin(), ds.features[i].end());
        labels.push_back(ds.labels[i]);
    }
    int64_t n = static_cast<int64_t>(idx.size());
    if (ds.kind == PreparedDataset::Kind::Projections)
        return Tensor::from({n, raster::kNumViews, ds.res, ds.res}, std::move(data));
    return Tensor::from({n, ds.points, 3}, std::move(data));
}

}  // namespace

double auc_ovr(const std::vector<double>& scores, size_t k, const std::vector<int64_t>& labels) {
    size_t n = labels.size();
    if (scores.size() != n * k) throw_shape("auc_ovr: scores size must be N*K");
    double total = 0.0;
    size_t valid = 0;
    std::vector<size_t> order(n);
    for (size_t c = 0; c < k; ++c) {
        size_t n_pos = 0;
        for (int64_t l : labels) n_pos += l == static_cast<int64_t>(c);
        size_t n_neg = n - n_pos;
        if (n_pos == 0 || n_neg == 0) continue;
        for (size_t i = 0; i < n; ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            return scores[a * k + c] < scores[b * k + c];
        });
        // Midranks over ties, 1-based.
        double rank_sum_pos = 0.0;
        size_t i = 0;
        while (i < n) {
            size_t j = i;
            while (j + 1 < n && scores[order[j + 1] * k + c] == scores[order[i] * k + c]) ++j;
            double midrank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
            for (size_t t = i; t <= j; ++t)
                if (labels[order[t]] == static_cast<int64_t>(c)) rank_sum_pos += midrank;
            i = j + 1;
        }
        double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
        total += (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
        ++valid;
    }
    if (valid == 0) throw_shape("DegenerateLabels: no class has both positives and negatives");
    return total / static_cast<double>(valid);
}

ConfusionResult confusion_and_accuracy(const std::vector<int64_t>& preds,
                                       const std::vector<int64_t>& labels, size_t k) {
    if (preds.size() != labels.size()) throw_shape("confusion: preds/labels length mismatch");
    ConfusionResult res;
    res.confusion.assign(k, std::vector<int64_t>(k, 0));
    for (size_t i = 0; i < preds.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= static_cast<int64_t>(k) || preds[i] < 0 ||
            preds[i] >= static_cast<int64_t>(k))
            throw_shape("LabelOutOfRange: label or prediction outside [0, K)");
        ++res.confusion[labels[i]][preds[i]];
    }
    int64_t correct = 0;
    res.per_class.assign(k, 0.0);
    for (size_t c = 0; c < k; ++c) {
        int64_t row = 0;
        for (size_t j = 0; j < k; ++j) row += res.confusion[c][j];
        correct += res.confusion[c][c];
        res.per_class[c] = row == 0 ? 0.0
                                    : static_cast<double>(res.confusion[c][c]) /
                                          static_cast<double>(row);
    }
    res.overall = preds.empty() ? 0.0
                                : static_cast<double>(correct) / static_cast<double>(preds.size());
    return res;
}

EvalReport evaluate(Model& model, const PreparedDataset& ds, size_t batch_size) {
    if (ds.features.empty()) throw_shape("evaluate: empty dataset");
    double t0 = now_seconds();
    tensor::NoGradGuard ng;
    models::ForwardCtx<float> ctx;  // eval mode
    size_t n = ds.features.size();
    size_t k = ds.num_classes;
    std::vector<double> scores(n * k);
    std::vector<int64_t> preds(n);
    for (size_t start = 0; start < n; start += batch_size) {
        std::vector<size_t> idx;
        for (size_t i = start; i < std::min(n, start + batch_size); ++i) idx.push_back(i);
        std::vector<int64_t> labels;
        Tensor batch = make_batch(ds, idx, labels);
        Tensor probs = tensor::softmax(model_forward(model, batch, ctx), 1);
        const auto& pv = probs.values();
        for (size_t r = 0; r < idx.size(); ++r) {
            size_t best = 0;
            for (size_t c = 0; c < k; ++c) {
                double s = static_cast<double>(pv[r * k + c]);
                scores[idx[r] * k + c] = s;
                if (s > scores[idx[r] * k + best]) best = c;
            }
            preds[idx[r]] = static_cast<int64_t>(best);
        }
    }
    ConfusionResult conf = confusion_and_accuracy(preds, ds.labels, k);
    EvalReport report;
    report.overall_accuracy = conf.overall;
    report.per_class_accuracy = conf.per_class;
    report.confusion = conf.confusion;
    report.auc_macro_ovr = auc_ovr(scores, k, ds.labels);
    report.wall_time_seconds = now_seconds() - t0;
    return report;
}

TrainResult train_model(const TrainConfig& cfg, const PreparedDataset& train_ds,
                        const PreparedDataset& test_ds) {
    if (cfg.batch_size < 1) throw_config("batch_size must be >= 1");
    if (cfg.epochs < 1) throw_config("epochs must be >= 1");
    if (train_ds.num_classes != test_ds.num_classes)
        throw_shape("train/test class count mismatch");

    TrainResult result;
    result.model = build_model(cfg, train_ds.num_classes, Rng::derive(cfg.seed, 1));
    auto trainable = result.model.params.trainable();
    std::span<Tensor> param_span(trainable);

    EvalReport report = evaluate(result.model, test_ds, cfg.batch_size);
    result.epochs.push_back({0, std::numeric_limits<double>::quiet_NaN(),
                             report.overall_accuracy, report.auc_macro_ovr,
                             report.wall_time_seconds});

    tensor::AdamState<float> adam;
    Rng shuffle_rng(Rng::derive(cfg.seed, 2));
    Rng dropout_rng(Rng::derive(cfg.seed, 3));
    models::ForwardCtx<float> ctx{true, &dropout_rng};

    size_t n = train_ds.features.size();
    double step_seconds = 0.0;
    int64_t steps = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<size_t> order(n);
        for (size_t i = 0; i < n; ++i) order[i] = i;
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        int64_t batches = 0;
        double epoch_t0 = now_seconds();
        for (size_t start = 0; start < n;) {
            size_t stop = std::min(n, start + cfg.batch_size);
            // train-mode batchnorm needs two samples per channel, so a
            // leftover single item rides with the last full batch
            if (n - stop == 1) stop = n;
            std::vector<size_t> idx(order.begin() + start, order.begin() + stop);
            start = stop;
            std::vector<int64_t> labels;
            Tensor batch = make_batch(train_ds, idx, labels);
            double t0 = now_seconds();
            result.model.params.zero_grads();
            Tensor logits = model_forward(result.model, batch, ctx);
            Tensor loss = tensor::cross_entropy(logits, labels);
            loss.backward();
            if (cfg.optimizer == "adam")
                tensor::adam_step(param_span, adam, static_cast<float>(cfg.lr));
            else if (cfg.optimizer == "sgd")
                tensor::sgd_step(param_span, static_cast<float>(cfg.lr));
            else
                throw_config("optimizer must be adam or sgd");
            step_seconds += now_seconds() - t0;
            ++steps;
            loss_sum += static_cast<double>(loss.item());
            ++batches;
        }
        double epoch_seconds = now_seconds() - epoch_t0;
        report = evaluate(result.model, test_ds, cfg.batch_size);
        result.epochs.push_back({epoch, loss_sum / static_cast<double>(batches),
                                 report.overall_accuracy, report.auc_macro_ovr, epoch_seconds});
    }
    result.final_report = report;
    result.seconds_per_step = steps == 0 ? 0.0 : step_seconds / static_cast<double>(steps);
    return result;
}

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& rows) {
    std::vector<std::vector<std::string>> csv;
    csv.push_back({"epoch", "loss", "overall_accuracy", "auc_macro_ovr"});
    for (const auto& r : rows)
        csv.push_back({std::to_string(r.epoch), io::format_double(r.loss),
                       io::format_double(r.overall_accuracy), io::format_double(r.auc_macro_ovr)});
    io::write_csv(path, csv);
}

void write_timing_csv(const std::string& path, const std::vector<EpochMetrics>& rows) {
    std::vector<std::vector<std::string>> csv;
    csv.push_back({"epoch", "seconds"});
    for (const auto& r : rows)
        csv.push_back({std::to_string(r.epoch), io::format_double(r.seconds)});
    io::write_csv(path, csv);
}

std::string format_report(const EvalReport& report, const std::string& model_name,
                          const std::vector<std::string>& class_names) {
    std::ostringstream out;
    char buf[64];
    out << "model: " << model_name << "\n";
    std::snprintf(buf, sizeof buf, "overall accuracy: %.4f\n", report.overall_accuracy);
    out << buf;
    std::snprintf(buf, sizeof buf, "macro one-vs-rest AUC: %.4f\n", report.auc_macro_ovr);
    out << buf;
    out << "per-class accuracy:\n";
    size_t width = 0;
    for (const auto& name : class_names) width = std::max(width, name.size());
    for (size_t c = 0; c < class_names.size(); ++c) {
        std::snprintf(buf, sizeof buf, "  %-*s %.4f\n", static_cast<int>(width),
                      class_names[c].c_str(), report.per_class_accuracy[c]);
        out << buf;
    }
    out << "confusion (rows = true class, cols = predicted):\n";
    for (size_t i = 0; i < report.confusion.size(); ++i) {
        out << "  ";
        for (size_t j = 0; j < report.confusion[i].size(); ++j) {
            std::snprintf(buf, sizeof buf, "%6lld", static_cast<long long>(report.confusion[i][j]));
            out << buf;
        }
        out << "\n";
    }
    std::snprintf(buf, sizeof buf, "evaluation wall time: %.2f s\n", report.wall_time_seconds);
    out << buf;
    out << "protocol: stratified split, last-epoch metrics, macro one-vs-rest AUC"
           " (midrank ties)\n";
    out << "\n";
    out << "published results on the original survey data [reference, not reproducible]:\n";
    out << "  model        AUC    accuracy  training time\n";
    out << "  baseline     0.75   0.68      ~90 mins\n";
    out << "  baselinepp   0.75   0.70      ~90 mins\n";
    out << "  pctrees      0.81   0.72      ~45 mins\n";
    return out.str();
}

}  // namespace pctrees::train
