#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pctrees/tensor.hpp"

namespace pctrees::models {

// ResNet18 topology with every stage's filter count divided by four,
// trained from scratch. `tiny` shrinks it further for test-scale runs.
struct ResNetQuarterConfig {
    std::array<int, 4> stage_widths{16, 32, 64, 128};
    std::array<int, 4> blocks_per_stage{2, 2, 2, 2};
    int input_channels = 1;
    int num_classes = 6;
    int res = 128;

    static ResNetQuarterConfig quarter(int input_channels, int num_classes, int res = 128);
    // Test-scale preset: widths quartered again ([4,8,16,32]), res 64.
    static ResNetQuarterConfig tiny(int input_channels, int num_classes);
    void validate() const;
};

// Analytic parameter count of the backbone + classifier for a given width
// multiple of the base topology; used to sanity-check the quarter scaling.
int64_t resnet_param_count(const ResNetQuarterConfig& cfg, int views_concatenated);

struct PCTConfig {
    int input_points = 1024;
    int embed_dim = 64;
    std::array<int, 2> sg_points{512, 256};  // strictly decreasing
    int sg_neighbors = 32;
    std::array<int, 2> sg_dims{128, 256};
    int attention_layers = 4;
    int attention_dim = 256;  // must equal sg_dims[1]
    int fused_dim = 1024;
    std::array<int, 2> head_dims{512, 256};
    int num_classes = 6;
    float dropout = 0.5f;

    static PCTConfig full(int num_classes);
    // Test-scale preset: 128 input points, all feature dims quartered,
    // centers halve per stage (128 -> 64 -> 32), 8 neighbors per group.
    static PCTConfig tiny(int num_classes);
    void validate() const;
};

template <typename T>
struct NamedParam {
    std::string name;
    tensor::TensorBase<T> value;
    bool trainable = true;  // false for batchnorm running statistics
};

// Every layer's tensors, keyed by unique name; order is fixed at init time
// and drives both the optimizer sweep and the checkpoint layout.
template <typename T>
struct ParamsT {
    std::string arch;  // "baseline" | "baselinepp" | "pctrees"
    std::vector<NamedParam<T>> entries;

    tensor::TensorBase<T>& at(const std::string& name);
    const tensor::TensorBase<T>& at(const std::string& name) const;
    bool has(const std::string& name) const;
    std::vector<tensor::TensorBase<T>> trainable() const;
    int64_t count_values(bool trainable_only = true) const;
    void zero_grads();
};

using ModelParameters = ParamsT<float>;

// Kaiming-uniform conv/linear weights, zero biases, batchnorm gamma=1
// beta=0, running stats (0, 1); seeded.
template <typename T>
ParamsT<T> init_resnet(const ResNetQuarterConfig& cfg, const std::string& arch, uint64_t seed);
template <typename T>
ParamsT<T> init_pct(const PCTConfig& cfg, uint64_t seed);

template <typename T>
struct ForwardCtx {
    bool training = false;
    Rng* rng = nullptr;  // consumed by dropout in training mode
};

enum class Fusion { Separate, Channels };

// x: (N, 6, res, res) raster stack in the fixed view order.
// Separate fusion treats the six single-channel views as six independent
// images (the backbone sees a 6N batch) and concatenates the six pooled
// 128-wide features before the dense layer; channel fusion feeds one
// 6-channel image per tree through a 6-input-channel backbone.
template <typename T>
tensor::TensorBase<T> multiview_forward(ParamsT<T>& params, const ResNetQuarterConfig& cfg,
                                        const tensor::TensorBase<T>& x, Fusion fusion,
                                        const ForwardCtx<T>& ctx);

// points (N, n, 3) -> per-point features (N, n, embed_dim): two LBR blocks.
template <typename T>
tensor::TensorBase<T> point_embed(ParamsT<T>& params, const PCTConfig& cfg,
                                  const tensor::TensorBase<T>& points, const ForwardCtx<T>& ctx);

// Two sample-and-group stages (canonical FPS centers, index-tie-broken KNN
// groups, concat(neighbor, neighbor - center), two LBRs, neighborhood max).
// Returns stage-2 center features (N, sg_points[1], sg_dims[1]) and the
// center coordinates as a flat (N * sg_points[1] * 3) array.
template <typename T>
std::pair<tensor::TensorBase<T>, std::vector<double>> neighbor_embed(
    ParamsT<T>& params, const PCTConfig& cfg, const std::vector<double>& coords,
    const tensor::TensorBase<T>& features, const ForwardCtx<T>& ctx);

// Normalized attention weights A (N, n, n): E = Q K^T put through softmax
// along the query axis then L1 along the key axis (the reversed rule).
// Computed in one pass as softmax_key(E - logsumexp_query(E)), which is the
// same map without the intermediate division; rows sum to 1 exactly.
template <typename T>
tensor::TensorBase<T> attention_weights(ParamsT<T>& params, const std::string& prefix,
                                        const tensor::TensorBase<T>& f);

// Offset attention: Q/K project to d/4, V to d; the attention output A V is
// subtracted from the input and the offset re-enters through LBR(f - A V) + f.
template <typename T>
tensor::TensorBase<T> offset_attention(ParamsT<T>& params, const std::string& prefix,
                                       const tensor::TensorBase<T>& f, const ForwardCtx<T>& ctx);

// clouds (N, input_points, 3), normalized coordinates -> logits (N, K).
template <typename T>
tensor::TensorBase<T> pct_forward(ParamsT<T>& params, const PCTConfig& cfg,
                                  const tensor::TensorBase<T>& clouds, const ForwardCtx<T>& ctx);

// Plain key-value text block stored beside a checkpoint: architecture,
// preprocessing, and the class dictionary the model was trained with.
struct ModelMeta {
    std::string arch;
    bool tiny = false;
    int num_classes = 0;
    std::vector<std::string> class_names;
    int res = 128;
    double extent = 2.0;
    std::string mode = "density";     // density | occupancy
    std::string rescale = "global";   // unit | global
    int input_points = 0;             // point models only
    uint64_t seed = 0;
};

void save_meta(const ModelMeta& meta, const std::string& path);
ModelMeta load_meta(const std::string& path);

void save_model(const ModelParameters& params, const std::string& checkpoint_path);
ModelParameters load_model(const std::string& checkpoint_path, const std::string& arch);

}  // namespace pctrees::models
