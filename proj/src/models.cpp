#include "pctrees/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "pctrees/error.hpp"
#include "pctrees/pointcloud.hpp"
#include "pctrees/tensor.hpp"

namespace pctrees::models {

using tensor::Shape;
using tensor::shape_numel;
using tensor::TensorBase;

void ResNetQuarterConfig::validate() const {
    for (int w : stage_widths)
        if (w < 1) throw_config("resnet: stage widths must be positive");
    for (int b : blocks_per_stage)
        if (b < 1) throw_config("resnet: blocks per stage must be positive");
    if (input_channels != 1 && input_channels != 6)
        throw_config("resnet: input channels must be 1 (separate views) or 6 (channel fusion)");
    if (num_classes < 2) throw_config("resnet: need at least 2 classes");
    if (res < 32) throw_config("resnet: res must be >= 32 to survive five 2x downsamplings");
}

ResNetQuarterConfig ResNetQuarterConfig::quarter(int input_channels, int num_classes, int res) {
    ResNetQuarterConfig cfg;
    cfg.input_channels = input_channels;
    cfg.num_classes = num_classes;
    cfg.res = res;
    cfg.validate();
    return cfg;
}

ResNetQuarterConfig ResNetQuarterConfig::tiny(int input_channels, int num_classes) {
    ResNetQuarterConfig cfg;
    cfg.stage_widths = {4, 8, 16, 32};
    cfg.input_channels = input_channels;
    cfg.num_classes = num_classes;
    cfg.res = 64;
    cfg.validate();
    return cfg;
}

PCTConfig PCTConfig::full(int num_classes) {
    PCTConfig cfg;
    cfg.num_classes = num_classes;
    cfg.validate();
    return cfg;
}

PCTConfig PCTConfig::tiny(int num_classes) {
    PCTConfig cfg;
    cfg.input_points = 128;
    cfg.embed_dim = 16;
    cfg.sg_points = {64, 32};
    cfg.sg_neighbors = 8;
    cfg.sg_dims = {32, 64};
    cfg.attention_dim = 64;
    cfg.fused_dim = 256;
    cfg.head_dims = {128, 64};
    cfg.num_classes = num_classes;
    cfg.validate();
    return cfg;
}

void PCTConfig::validate() const {
    if (input_points < sg_points[0] || sg_points[0] <= sg_points[1] || sg_points[1] < 1)
        throw_config("pct: need input_points >= sg_points[0] > sg_points[1] >= 1");
    if (embed_dim < 1 || sg_dims[0] < 1 || sg_dims[1] < 1)
        throw_config("pct: feature dims must be positive");
    if (sg_neighbors < 1 || sg_neighbors > sg_points[1])
        throw_config("pct: sg_neighbors must be in [1, sg_points[1]]");
    if (attention_dim != sg_dims[1])
        throw_config("pct: attention_dim must equal sg_dims[1]");
    if (attention_dim % 4 != 0) throw_config("pct: attention_dim must be divisible by 4");
    if (attention_layers < 1) throw_config("pct: need at least one attention layer");
    if (fused_dim < 1 || head_dims[0] < 1 || head_dims[1] < 1)
        throw_config("pct: head dims must be positive");
    if (num_classes < 2) throw_config("pct: need at least 2 classes");
    if (dropout < 0.0f || dropout >= 1.0f) throw_config("pct: dropout must be in [0, 1)");
}

// ---------------- parameter plumbing ----------------

template <typename T>
TensorBase<T>& ParamsT<T>::at(const std::string& name) {
    for (auto& e : entries)
        if (e.name == name) return e.value;
    throw_shape("unknown parameter '" + name + "' in " + arch);
}

template <typename T>
const TensorBase<T>& ParamsT<T>::at(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return e.value;
    throw_shape("unknown parameter '" + name + "' in " + arch);
}

template <typename T>
bool ParamsT<T>::has(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return true;
    return false;
}

template <typename T>
std::vector<TensorBase<T>> ParamsT<T>::trainable() const {
    std::vector<TensorBase<T>> out;
    for (const auto& e : entries)
        if (e.trainable) out.push_back(e.value);
    return out;
}

template <typename T>
int64_t ParamsT<T>::count_values(bool trainable_only) const {
    int64_t n = 0;
    for (const auto& e : entries)
        if (e.trainable || !trainable_only) n += e.value.numel();
    return n;
}

template <typename T>
void ParamsT<T>::zero_grads() {
    for (auto& e : entries) e.value.zero_grad();
}

namespace {

// One place defines every tensor of an architecture; init and the analytic
// parameter count both walk it. fan_in <= 0 marks non-weight tensors.
struct TensorSpec {
    std::string name;
    Shape shape;
    bool trainable;
    int64_t fan_in;
};

template <typename Fn>
void bn_specs(const std::string& prefix, int64_t ch, Fn&& fn) {
    fn(TensorSpec{prefix + ".gamma", {ch}, true, 0});
    fn(TensorSpec{prefix + ".beta", {ch}, true, 0});
    fn(TensorSpec{prefix + ".rm", {ch}, false, 0});
    fn(TensorSpec{prefix + ".rv", {ch}, false, 0});
}

template <typename Fn>
void linear_specs(const std::string& prefix, int64_t in, int64_t out, Fn&& fn) {
    fn(TensorSpec{prefix + ".w", {in, out}, true, in});
    fn(TensorSpec{prefix + ".b", {out}, true, 0});
}

template <typename Fn>
void lbr_specs(const std::string& prefix, int64_t in, int64_t out, Fn&& fn) {
    linear_specs(prefix, in, out, fn);
    bn_specs(prefix + ".bn", out, fn);
}

template <typename Fn>
void for_each_resnet_tensor(const ResNetQuarterConfig& cfg, int views_concatenated, Fn&& fn) {
    const auto& sw = cfg.stage_widths;
    fn(TensorSpec{"conv1.w",
                  {sw[0], cfg.input_channels, 7, 7},
                  true,
                  static_cast<int64_t>(cfg.input_channels) * 49});
    bn_specs("bn1", sw[0], fn);
    for (int s = 0; s < 4; ++s) {
        for (int b = 0; b < cfg.blocks_per_stage[s]; ++b) {
            std::string prefix = "layer" + std::to_string(s + 1) + "." + std::to_string(b) + ".";
            int in_ch = b == 0 ? (s == 0 ? sw[0] : sw[s - 1]) : sw[s];
            int out_ch = sw[s];
            int stride = (b == 0 && s > 0) ? 2 : 1;
            fn(TensorSpec{prefix + "conv1.w",
                          {out_ch, in_ch, 3, 3},
                          true,
                          static_cast<int64_t>(in_ch) * 9});
            bn_specs(prefix + "bn1", out_ch, fn);
            fn(TensorSpec{prefix + "conv2.w",
                          {out_ch, out_ch, 3, 3},
                          true,
                          static_cast<int64_t>(out_ch) * 9});
            bn_specs(prefix + "bn2", out_ch, fn);
            if (stride != 1 || in_ch != out_ch) {
                fn(TensorSpec{prefix + "down.w", {out_ch, in_ch, 1, 1}, true, in_ch});
                bn_specs(prefix + "downbn", out_ch, fn);
            }
        }
    }
    linear_specs("fc", static_cast<int64_t>(views_concatenated) * sw[3], cfg.num_classes, fn);
}

template <typename Fn>
void for_each_pct_tensor(const PCTConfig& cfg, Fn&& fn) {
    lbr_specs("embed1", 3, cfg.embed_dim, fn);
    lbr_specs("embed2", cfg.embed_dim, cfg.embed_dim, fn);
    int in = cfg.embed_dim;
    for (int s = 0; s < 2; ++s) {
        std::string prefix = "sg" + std::to_string(s + 1);
        lbr_specs(prefix + ".lbr1", 2 * in, cfg.sg_dims[s], fn);
        lbr_specs(prefix + ".lbr2", cfg.sg_dims[s], cfg.sg_dims[s], fn);
        in = cfg.sg_dims[s];
    }
    int d = cfg.attention_dim;
    for (int a = 0; a < cfg.attention_layers; ++a) {
        std::string prefix = "oa" + std::to_string(a + 1) + ".";
        linear_specs(prefix + "q", d, d / 4, fn);
        linear_specs(prefix + "k", d, d / 4, fn);
        linear_specs(prefix + "v", d, d, fn);
        lbr_specs(prefix + "lbr", d, d, fn);
    }
    lbr_specs("fuse", cfg.attention_layers * d, cfg.fused_dim, fn);
    lbr_specs("head1", 2 * cfg.fused_dim, cfg.head_dims[0], fn);
    lbr_specs("head2", cfg.head_dims[0], cfg.head_dims[1], fn);
    linear_specs("fc", cfg.head_dims[1], cfg.num_classes, fn);
}

template <typename T>
NamedParam<T> materialize(const TensorSpec& spec, Rng& rng) {
    NamedParam<T> p;
    p.name = spec.name;
    p.trainable = spec.trainable;
    if (spec.fan_in > 0) {
        T bound = static_cast<T>(std::sqrt(6.0 / static_cast<double>(spec.fan_in)));
        p.value = TensorBase<T>::uniform(spec.shape, -bound, bound, rng);
    } else if (spec.name.ends_with(".gamma") || spec.name.ends_with(".rv")) {
        p.value = TensorBase<T>::full(spec.shape, T(1));
    } else {
        p.value = TensorBase<T>::zeros(spec.shape);  // biases, beta, rm
    }
    p.value.set_requires_grad(spec.trainable);
    return p;
}

}  // namespace

int64_t resnet_param_count(const ResNetQuarterConfig& cfg, int views_concatenated) {
    int64_t n = 0;
    for_each_resnet_tensor(cfg, views_concatenated, [&](const TensorSpec& s) {
        if (s.trainable) n += shape_numel(s.shape);
    });
    return n;
}

template <typename T>
ParamsT<T> init_resnet(const ResNetQuarterConfig& cfg, const std::string& arch, uint64_t seed) {
    cfg.validate();
    if (arch != "baseline" && arch != "baselinepp")
        throw_config("init_resnet: arch must be baseline or baselinepp");
    int views = arch == "baseline" ? 6 : 1;
    ParamsT<T> params;
    params.arch = arch;
    Rng rng(seed);
    for_each_resnet_tensor(cfg, views, [&](const TensorSpec& s) {
        params.entries.push_back(materialize<T>(s, rng));
    });
    return params;
}

template <typename T>
ParamsT<T> init_pct(const PCTConfig& cfg, uint64_t seed) {
    cfg.validate();
    ParamsT<T> params;
    params.arch = "pctrees";
    Rng rng(seed);
    for_each_pct_tensor(cfg, [&](const TensorSpec& s) {
        params.entries.push_back(materialize<T>(s, rng));
    });
    return params;
}

// ---------------- forward passes ----------------

namespace {

template <typename T>
TensorBase<T> bn_layer(ParamsT<T>& p, const std::string& prefix, const TensorBase<T>& x,
                       const ForwardCtx<T>& ctx, int channel_dim) {
    return tensor::batchnorm(x, p.at(prefix + ".gamma"), p.at(prefix + ".beta"),
                             p.at(prefix + ".rm"), p.at(prefix + ".rv"), ctx.training, T(0.1),
                             T(1e-5), channel_dim);
}

template <typename T>
TensorBase<T> lbr(ParamsT<T>& p, const std::string& prefix, const TensorBase<T>& x,
                  const ForwardCtx<T>& ctx, int channel_dim) {
    auto h = tensor::add(tensor::matmul(x, p.at(prefix + ".w")), p.at(prefix + ".b"));
    return tensor::relu(bn_layer(p, prefix + ".bn", h, ctx, channel_dim));
}

template <typename T>
TensorBase<T> resnet_backbone(ParamsT<T>& p, const ResNetQuarterConfig& cfg,
                              const TensorBase<T>& x, const ForwardCtx<T>& ctx) {
    auto h = tensor::conv2d(x, p.at("conv1.w"), 2, 3);
    h = tensor::relu(bn_layer(p, "bn1", h, ctx, 1));
    h = tensor::maxpool2d(h, 3, 2, 1);
    for (int s = 0; s < 4; ++s)
        for (int b = 0; b < cfg.blocks_per_stage[s]; ++b) {
            std::string prefix = "layer" + std::to_string(s + 1) + "." + std::to_string(b) + ".";
            int stride = (b == 0 && s > 0) ? 2 : 1;
            auto identity = h;
            auto out = tensor::conv2d(h, p.at(prefix + "conv1.w"), stride, 1);
            out = tensor::relu(bn_layer(p, prefix + "bn1", out, ctx, 1));
            out = tensor::conv2d(out, p.at(prefix + "conv2.w"), 1, 1);
            out = bn_layer(p, prefix + "bn2", out, ctx, 1);
            if (p.has(prefix + "down.w")) {
                identity = tensor::conv2d(identity, p.at(prefix + "down.w"), stride, 0);
                identity = bn_layer(p, prefix + "downbn", identity, ctx, 1);
            }
            h = tensor::relu(tensor::add(out, identity));
        }
    // Global average pool to (batch, channels).
    return tensor::mean_over(tensor::mean_over(h, 3), 2);
}

}  // namespace

template <typename T>
TensorBase<T> multiview_forward(ParamsT<T>& params, const ResNetQuarterConfig& cfg,
                                const TensorBase<T>& x, Fusion fusion, const ForwardCtx<T>& ctx) {
    if (x.rank() != 4 || x.dim(1) != 6)
        throw_shape("multiview_forward: input must be (N, 6, res, res)");
    int64_t n = x.dim(0);
    int64_t res = x.dim(2);
    TensorBase<T> features;
    if (fusion == Fusion::Separate) {
        if (cfg.input_channels != 1)
            throw_config("multiview_forward: separate fusion needs a 1-channel backbone");
        auto flat = tensor::reshape(x, {n * 6, 1, res, res});
        auto pooled = resnet_backbone(params, cfg, flat, ctx);  // (6N, C)
        features = tensor::reshape(pooled, {n, 6 * cfg.stage_widths[3]});
    } else {
        if (cfg.input_channels != 6)
            throw_config("multiview_forward: channel fusion needs a 6-channel backbone");
        features = resnet_backbone(params, cfg, x, ctx);
    }
    return tensor::add(tensor::matmul(features, params.at("fc.w")), params.at("fc.b"));
}

template <typename T>
TensorBase<T> point_embed(ParamsT<T>& params, const PCTConfig& cfg,
                          const TensorBase<T>& points, const ForwardCtx<T>& ctx) {
    if (points.rank() != 3 || points.dim(2) != 3)
        throw_shape("point_embed: input must be (N, n, 3)");
    (void)cfg;
    auto h = lbr(params, "embed1", points, ctx, 2);
    return lbr(params, "embed2", h, ctx, 2);
}

template <typename T>
std::pair<TensorBase<T>, std::vector<double>> neighbor_embed(ParamsT<T>& params,
                                                             const PCTConfig& cfg,
                                                             const std::vector<double>& coords,
                                                             const TensorBase<T>& features,
                                                             const ForwardCtx<T>& ctx) {
    if (features.rank() != 3) throw_shape("neighbor_embed: features must be (N, n, d)");
    int64_t batch = features.dim(0);
    int64_t n_in = features.dim(1);
    if (static_cast<int64_t>(coords.size()) != batch * n_in * 3)
        throw_shape("neighbor_embed: coords and features disagree on point count");

    TensorBase<T> f = features;
    std::vector<double> cur = coords;
    for (int s = 0; s < 2; ++s) {
        int64_t n_out = cfg.sg_points[s];
        int64_t k = cfg.sg_neighbors;
        if (n_out > n_in) throw_shape("neighbor_embed: stage wants more centers than points");
        std::string prefix = "sg" + std::to_string(s + 1);

        // Geometry (outside the graph): canonical FPS centers, then KNN
        // groups among this stage's input points.
        std::vector<int64_t> center_idx(batch * n_out);
        std::vector<int64_t> group_idx(batch * n_out * k);
        std::vector<double> center_coords(batch * n_out * 3);
        for (int64_t b = 0; b < batch; ++b) {
            PointCloud pc;
            pc.points.resize(n_in);
            for (int64_t i = 0; i < n_in; ++i)
                pc.points[i] = {cur[(b * n_in + i) * 3], cur[(b * n_in + i) * 3 + 1],
                                cur[(b * n_in + i) * 3 + 2]};
            std::vector<size_t> centers = fps_indices(pc, static_cast<size_t>(n_out));
            for (int64_t j = 0; j < n_out; ++j) {
                size_t c = centers[j];
                center_idx[b * n_out + j] = static_cast<int64_t>(c);
                center_coords[(b * n_out + j) * 3] = pc.points[c].x;
                center_coords[(b * n_out + j) * 3 + 1] = pc.points[c].y;
                center_coords[(b * n_out + j) * 3 + 2] = pc.points[c].z;
                std::vector<size_t> nb = knn(pc, pc.points[c], static_cast<size_t>(k));
                for (int64_t t = 0; t < k; ++t)
                    group_idx[(b * n_out + j) * k + t] = static_cast<int64_t>(nb[t]);
            }
        }

        auto neigh = tensor::gather_tokens(f, group_idx, {batch, n_out, k});  // (N,m,k,d)
        auto cent = tensor::gather_tokens(f, center_idx, {batch, n_out});     // (N,m,d)
        auto cent4 = tensor::reshape(cent, {batch, n_out, 1, f.dim(2)});
        auto rel = tensor::sub(neigh, cent4);
        std::array<TensorBase<T>, 2> parts{neigh, rel};
        auto grouped = tensor::concat(std::span<const TensorBase<T>>(parts), 3);
        auto h = lbr(params, prefix + ".lbr1", grouped, ctx, 3);
        h = lbr(params, prefix + ".lbr2", h, ctx, 3);
        f = tensor::max_over(h, 2);  // (N, m, d_out)
        cur = std::move(center_coords);
        n_in = n_out;
    }
    return {f, cur};
}

template <typename T>
TensorBase<T> attention_weights(ParamsT<T>& params, const std::string& prefix,
                                const TensorBase<T>& f) {
    if (f.rank() != 3) throw_shape("attention_weights: input must be (N, n, d)");
    auto q = tensor::add(tensor::matmul(f, params.at(prefix + "q.w")), params.at(prefix + "q.b"));
    auto k = tensor::add(tensor::matmul(f, params.at(prefix + "k.w")), params.at(prefix + "k.b"));
    auto energy = tensor::matmul(q, tensor::transpose_last2(k));  // (N, nq, nk)
    // Softmax over the query axis then L1 over the key axis (the reversed
    // normalization) equals a key-axis softmax of E minus each column's
    // query-axis logsumexp: exp(E - lse) is the query softmax, and a second
    // normalization over keys is itself a softmax in log space. Dividing by
    // the raw key-axis sum instead would pole out where a row is dominated
    // in every column.
    auto lse = tensor::logsumexp(energy, 1);  // (N, nk)
    auto shifted = tensor::sub(energy, tensor::reshape(lse, {f.dim(0), 1, f.dim(1)}));
    return tensor::softmax(shifted, 2);
}

template <typename T>
TensorBase<T> offset_attention(ParamsT<T>& params, const std::string& prefix,
                               const TensorBase<T>& f, const ForwardCtx<T>& ctx) {
    if (f.rank() != 3) throw_shape("offset_attention: input must be (N, n, d)");
    auto v = tensor::add(tensor::matmul(f, params.at(prefix + "v.w")), params.at(prefix + "v.b"));
    auto norm = attention_weights(params, prefix, f);
    auto sa = tensor::matmul(norm, v);  // (N, n, d)
    auto offset = tensor::sub(f, sa);
    return tensor::add(lbr(params, prefix + "lbr", offset, ctx, 2), f);
}

template <typename T>
TensorBase<T> pct_forward(ParamsT<T>& params, const PCTConfig& cfg, const TensorBase<T>& clouds,
                          const ForwardCtx<T>& ctx) {
    if (clouds.rank() != 3 || clouds.dim(2) != 3)
        throw_shape("pct_forward: input must be (N, n, 3)");
    if (clouds.dim(1) != cfg.input_points)
        throw_shape("pct_forward: expected " + std::to_string(cfg.input_points) + " points, got " +
                    std::to_string(clouds.dim(1)));
    std::vector<double> coords(clouds.values().begin(), clouds.values().end());

    auto f0 = point_embed(params, cfg, clouds, ctx);
    auto [f, center_coords] = neighbor_embed(params, cfg, coords, f0, ctx);
    (void)center_coords;

    std::vector<TensorBase<T>> layers;
    layers.reserve(cfg.attention_layers);
    TensorBase<T> h = f;
    for (int a = 0; a < cfg.attention_layers; ++a) {
        h = offset_attention(params, "oa" + std::to_string(a + 1) + ".", h, ctx);
        layers.push_back(h);
    }
    auto cat = tensor::concat(std::span<const TensorBase<T>>(layers), 2);
    auto fused = lbr(params, "fuse", cat, ctx, 2);  // (N, m, fused_dim)

    auto gmax = tensor::max_over(fused, 1);
    auto gmean = tensor::mean_over(fused, 1);
    std::array<TensorBase<T>, 2> pools{gmax, gmean};
    auto global = tensor::concat(std::span<const TensorBase<T>>(pools), 1);  // (N, 2*fused)

    auto head = lbr(params, "head1", global, ctx, 1);
    if (ctx.training) {
        if (!ctx.rng) throw_config("pct_forward: training mode needs an rng for dropout");
        head = tensor::dropout(head, static_cast<T>(cfg.dropout), *ctx.rng, true);
    }
    head = lbr(params, "head2", head, ctx, 1);
    if (ctx.training) head = tensor::dropout(head, static_cast<T>(cfg.dropout), *ctx.rng, true);
    return tensor::add(tensor::matmul(head, params.at("fc.w")), params.at("fc.b"));
}

// ---------------- persistence ----------------

void save_meta(const ModelMeta& meta, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw_io("cannot open '" + path + "' for writing");
    f << "arch=" << meta.arch << "\n";
    f << "tiny=" << (meta.tiny ? 1 : 0) << "\n";
    f << "num_classes=" << meta.num_classes << "\n";
    for (size_t i = 0; i < meta.class_names.size(); ++i)
        f << "class." << i << "=" << meta.class_names[i] << "\n";
    f << "res=" << meta.res << "\n";
    f << "extent=" << meta.extent << "\n";
    f << "mode=" << meta.mode << "\n";
    f << "rescale=" << meta.rescale << "\n";
    f << "input_points=" << meta.input_points << "\n";
    f << "seed=" << meta.seed << "\n";
    if (!f) throw_io("write failed for '" + path + "'");
}

ModelMeta load_meta(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw_io("cannot open '" + path + "'");
    ModelMeta meta;
    std::string line;
    size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw_format(path + ":" + std::to_string(lineno) + ": expected key=value");
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        if (key == "arch")
            meta.arch = val;
        else if (key == "tiny")
            meta.tiny = val == "1";
        else if (key == "num_classes")
            meta.num_classes = std::stoi(val);
        else if (key.starts_with("class.")) {
            size_t idx = std::stoul(key.substr(6));
            if (meta.class_names.size() <= idx) meta.class_names.resize(idx + 1);
            meta.class_names[idx] = val;
        } else if (key == "res")
            meta.res = std::stoi(val);
        else if (key == "extent")
            meta.extent = std::stod(val);
        else if (key == "mode")
            meta.mode = val;
        else if (key == "rescale")
            meta.rescale = val;
        else if (key == "input_points")
            meta.input_points = std::stoi(val);
        else if (key == "seed")
            meta.seed = std::stoull(val);
        else
            throw_format(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    if (meta.arch.empty() || meta.num_classes < 2)
        throw_format(path + ": incomplete model metadata");
    return meta;
}

void save_model(const ModelParameters& params, const std::string& checkpoint_path) {
    std::vector<std::pair<std::string, tensor::Tensor>> entries;
    entries.reserve(params.entries.size());
    for (const auto& e : params.entries) entries.emplace_back(e.name, e.value);
    tensor::save_checkpoint(checkpoint_path, entries);
}

ModelParameters load_model(const std::string& checkpoint_path, const std::string& arch) {
    ModelParameters params;
    params.arch = arch;
    for (auto& [name, value] : tensor::load_checkpoint(checkpoint_path)) {
        NamedParam<float> p;
        p.trainable = !(name.ends_with(".rm") || name.ends_with(".rv"));
        p.value = std::move(value);
        p.value.set_requires_grad(p.trainable);
        p.name = std::move(name);
        params.entries.push_back(std::move(p));
    }
    return params;
}

// ---------------- explicit instantiations ----------------

#define PCT_MODEL_INSTANTIATE(T)                                                                  \
    template struct ParamsT<T>;                                                                   \
    template ParamsT<T> init_resnet<T>(const ResNetQuarterConfig&, const std::string&, uint64_t); \
    template ParamsT<T> init_pct<T>(const PCTConfig&, uint64_t);                                  \
    template TensorBase<T> multiview_forward<T>(ParamsT<T>&, const ResNetQuarterConfig&,          \
                                                const TensorBase<T>&, Fusion,                     \
                                                const ForwardCtx<T>&);                            \
    template TensorBase<T> point_embed<T>(ParamsT<T>&, const PCTConfig&, const TensorBase<T>&,    \
                                          const ForwardCtx<T>&);                                  \
    template std::pair<TensorBase<T>, std::vector<double>> neighbor_embed<T>(                     \
        ParamsT<T>&, const PCTConfig&, const std::vector<double>&, const TensorBase<T>&,          \
        const ForwardCtx<T>&);                                                                    \
    template TensorBase<T> attention_weights<T>(ParamsT<T>&, const std::string&,                  \
                                                const TensorBase<T>&);                            \
    template TensorBase<T> offset_attention<T>(ParamsT<T>&, const std::string&,                   \
                                               const TensorBase<T>&, const ForwardCtx<T>&);       \
    template TensorBase<T> pct_forward<T>(ParamsT<T>&, const PCTConfig&, const TensorBase<T>&,    \
                                          const ForwardCtx<T>&);

PCT_MODEL_INSTANTIATE(float)
PCT_MODEL_INSTANTIATE(double)

#undef PCT_MODEL_INSTANTIATE

}  // namespace pctrees::models
