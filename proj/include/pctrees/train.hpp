#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pctrees/georef.hpp"
#include "pctrees/models.hpp"
#include "pctrees/pointcloud.hpp"
#include "pctrees/raster.hpp"

namespace pctrees::train {

struct LabeledDataset {
    struct Item {
        std::string id;
        PointCloud cloud;
        size_t label = 0;
    };
    std::vector<Item> items;
    georef::ClassDictionary dictionary;
};

struct TrainConfig {
    size_t batch_size = 32;
    int epochs = 100;
    double lr = 1e-5;
    uint64_t seed = 0;
    double split_fraction = 0.8;
    std::string model = "pctrees";  // baseline | baselinepp | pctrees
    bool tiny = false;
    std::string optimizer = "adam";  // adam | sgd
    // preprocessing
    int res = 128;
    double extent = 2.0;
    raster::Mode mode = raster::Mode::Density;
    std::string rescale;    // "unit" | "global"; empty = per-model default
    int input_points = 0;   // point models; 0 = preset default
};

// Per-model normalization default: the plain multi-view baseline scales each
// cloud to its own unit ball; baseline++ and the point transformer share one
// global scale so relative tree heights survive normalization.
std::string default_rescale(const std::string& model);

// Center every cloud, then apply the chosen rescale ("unit" per cloud,
// "global" one shared scale over the whole set). Run this on the full
// dataset before stratified_split so train and test share the same scale.
// Returns the global scale (1.0 for unit mode).
double center_and_rescale(LabeledDataset& ds, const std::string& rescale);

// Per-class shuffled split: floor(fraction * support) to train, rest to
// test. Every class needs at least two items.
std::pair<LabeledDataset, LabeledDataset> stratified_split(const LabeledDataset& ds,
                                                           double fraction, uint64_t seed);

// "up": minority classes gain seeded draws with replacement until every
// class matches the max count (originals always kept). "down": classes are
// subsampled without replacement to the min count. "none": identity.
LabeledDataset resample(const LabeledDataset& ds, const std::string& strategy, uint64_t seed);

// Model-ready feature arrays: 6-view raster stacks for the CNNs, fixed-size
// normalized point sets for the transformer.
struct PreparedDataset {
    enum class Kind { Projections, Points };
    Kind kind = Kind::Points;
    int res = 0;     // per-view resolution (projections)
    int points = 0;  // points per cloud (point sets)
    size_t num_classes = 0;
    std::vector<std::string> ids;
    std::vector<int64_t> labels;
    std::vector<std::vector<float>> features;  // 6*res*res or points*3 per item
};

PreparedDataset prepare(const LabeledDataset& ds, const TrainConfig& cfg);

struct EvalReport {
    double overall_accuracy = 0.0;
    std::vector<double> per_class_accuracy;
    double auc_macro_ovr = 0.0;
    std::vector<std::vector<int64_t>> confusion;
    double wall_time_seconds = 0.0;
};

struct EpochMetrics {
    int epoch = 0;
    double loss = 0.0;  // mean training loss of the epoch (NaN for epoch 0)
    double overall_accuracy = 0.0;
    double auc_macro_ovr = 0.0;
    double seconds = 0.0;
};

// A built architecture plus everything needed to run it.
struct Model {
    std::string name;  // baseline | baselinepp | pctrees
    bool tiny = false;
    models::ModelParameters params;
    models::ResNetQuarterConfig cnn;
    models::PCTConfig pct;
    bool is_point_model = false;
};

Model build_model(const TrainConfig& cfg, size_t num_classes, uint64_t init_seed);

// Forward a feature batch (already stacked): CNNs get (N,6,res,res),
// the point model (N,n,3).
tensor::Tensor model_forward(Model& model, const tensor::Tensor& batch,
                             const models::ForwardCtx<float>& ctx);

struct TrainResult {
    Model model;
    std::vector<EpochMetrics> epochs;  // [0] = untrained evaluation, then 1..E
    EvalReport final_report;           // last-epoch test evaluation
    double seconds_per_step = 0.0;     // mean wall time of one optimizer step
};

// Seeded shuffled mini-batches, cross-entropy loss, Adam (or SGD) steps,
// test-set evaluation after every epoch; deterministic given seed.
TrainResult train_model(const TrainConfig& cfg, const PreparedDataset& train_ds,
                        const PreparedDataset& test_ds);

EvalReport evaluate(Model& model, const PreparedDataset& ds, size_t batch_size = 32);

// Macro one-vs-rest AUC via the rank (Mann-Whitney) statistic with tie
// midranks; classes lacking positives or negatives are skipped. scores is
// row-major N x K with rows summing to 1.
double auc_ovr(const std::vector<double>& scores, size_t k, const std::vector<int64_t>& labels);

struct ConfusionResult {
    std::vector<std::vector<int64_t>> confusion;  // [label][pred]
    double overall = 0.0;
    std::vector<double> per_class;
};

ConfusionResult confusion_and_accuracy(const std::vector<int64_t>& preds,
                                       const std::vector<int64_t>& labels, size_t k);

// metrics CSV: epoch,loss,overall_accuracy,auc_macro_ovr (deterministic per
// seed); wall-clock numbers go to the separate timing CSV: epoch,seconds.
void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& rows);
void write_timing_csv(const std::string& path, const std::vector<EpochMetrics>& rows);

// Plain-text result table for one evaluated model, followed by the published
// reference results for this architecture family on the original proprietary
// survey data (printed as context only; that corpus is not distributed).
std::string format_report(const EvalReport& report, const std::string& model_name,
                          const std::vector<std::string>& class_names);

}  // namespace pctrees::train
