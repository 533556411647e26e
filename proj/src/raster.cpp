#include "pctrees/raster.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "pctrees/error.hpp"

namespace pctrees::raster {

const char* view_name(View v) {
    switch (v) {
        case View::Top: return "top";
        case View::Bottom: return "bottom";
        case View::Front: return "front";
        case View::Back: return "back";
        case View::Left: return "left";
        case View::Right: return "right";
    }
    return "unknown";
}

namespace {

// In-plane (u, v) world coordinates for a view, per the sign table in the
// header, plus the lower window bounds (x/y windows are centered, z starts
// at the ground).
struct UV {
    double u, v, u_lo, v_lo;
};

UV plane_coords(const Point3& p, View view, double extent) {
    double half = extent / 2.0;
    switch (view) {
        case View::Top: return {p.x, p.y, -half, -half};
        case View::Bottom: return {p.x, p.y, -half, -half};
        case View::Front: return {-p.x, p.z, -half, 0.0};
        case View::Back: return {p.x, p.z, -half, 0.0};
        case View::Left: return {-p.y, p.z, -half, 0.0};
        case View::Right: return {p.y, p.z, -half, 0.0};
    }
    throw_config("project: unknown view");
}

struct Pixel {
    int row, col;
    bool clipped;
};

Pixel rasterize(const Point3& p, View view, int res, double extent) {
    UV uv = plane_coords(p, view, extent);
    double cell = extent / res;
    auto bin = [&](double w, double lo) {
        return static_cast<int>(std::floor((w - lo) / cell));
    };
    int col = bin(uv.u, uv.u_lo);
    int raw_row = bin(uv.v, uv.v_lo);
    bool clipped = col < 0 || col >= res || raw_row < 0 || raw_row >= res;
    col = std::clamp(col, 0, res - 1);
    raw_row = std::clamp(raw_row, 0, res - 1);
    return {res - 1 - raw_row, col, clipped};  // row 0 = maximum v
}

Raster finalize(std::vector<float> counts, int res, Mode mode) {
    if (mode == Mode::Occupancy) {
        for (float& v : counts) v = v > 0.0f ? 1.0f : 0.0f;
    } else {
        float mx = *std::max_element(counts.begin(), counts.end());
        for (float& v : counts) v /= mx;  // nonempty cloud, so mx >= 1
    }
    return {res, res, std::move(counts)};
}

}  // namespace

Raster project(const PointCloud& cloud, View view, int res, double extent, Mode mode) {
    if (cloud.empty()) throw_empty_cloud("project");
    if (res < 1) throw_config("InvalidResolution: res must be >= 1");
    if (!(extent > 0.0)) throw_config("project: extent must be positive");
    std::vector<float> counts(static_cast<size_t>(res) * res, 0.0f);
    for (const Point3& p : cloud.points) {
        Pixel px = rasterize(p, view, res, extent);
        counts[static_cast<size_t>(px.row) * res + px.col] += 1.0f;
    }
    return finalize(std::move(counts), res, mode);
}

ProjectionSet project6(const PointCloud& cloud, int res, double extent, Mode mode) {
    if (cloud.empty()) throw_empty_cloud("project6");
    if (res < 1) throw_config("InvalidResolution: res must be >= 1");
    if (!(extent > 0.0)) throw_config("project6: extent must be positive");
    std::array<std::vector<float>, kNumViews> counts;
    for (auto& c : counts) c.assign(static_cast<size_t>(res) * res, 0.0f);
    ProjectionSet ps;
    for (const Point3& p : cloud.points) {
        bool any_clip = false;
        for (int v = 0; v < kNumViews; ++v) {
            Pixel px = rasterize(p, static_cast<View>(v), res, extent);
            counts[v][static_cast<size_t>(px.row) * res + px.col] += 1.0f;
            any_clip = any_clip || px.clipped;
        }
        if (any_clip) ++ps.clipped_points;
    }
    for (int v = 0; v < kNumViews; ++v) ps.views[v] = finalize(std::move(counts[v]), res, mode);
    return ps;
}

std::vector<float> stack_channels(const ProjectionSet& ps) {
    size_t plane = ps.views[0].values.size();
    std::vector<float> out;
    out.reserve(plane * kNumViews);
    for (const Raster& r : ps.views) out.insert(out.end(), r.values.begin(), r.values.end());
    return out;
}

void write_pgm(const Raster& r, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw_io("cannot open '" + path + "' for writing");
    f << "P5\n" << r.width << " " << r.height << "\n255\n";
    for (float v : r.values) {
        unsigned char byte = static_cast<unsigned char>(std::lround(255.0f * v));
        f.write(reinterpret_cast<const char*>(&byte), 1);
    }
    if (!f) throw_io("write failed for '" + path + "'");
}

void write_raw(const ProjectionSet& ps, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw_io("cannot open '" + path + "' for writing");
    char header[24] = {'P', 'C', 'T', 'R'};
    uint32_t views = kNumViews;
    uint32_t res = static_cast<uint32_t>(ps.views[0].width);
    std::memcpy(header + 4, &views, 4);
    std::memcpy(header + 8, &res, 4);
    f.write(header, sizeof header);
    for (const Raster& r : ps.views)
        f.write(reinterpret_cast<const char*>(r.values.data()),
                static_cast<std::streamsize>(r.values.size() * sizeof(float)));
    if (!f) throw_io("write failed for '" + path + "'");
}

std::vector<float> read_raw(const std::string& path, uint32_t* out_views, uint32_t* out_res) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw_io("cannot open '" + path + "'");
    char header[24];
    f.read(header, sizeof header);
    if (!f || std::memcmp(header, "PCTR", 4) != 0)
        throw_format("'" + path + "' is not a PCTR raster file");
    uint32_t views, res;
    std::memcpy(&views, header + 4, 4);
    std::memcpy(&res, header + 8, 4);
    std::vector<float> values(static_cast<size_t>(views) * res * res);
    f.read(reinterpret_cast<char*>(values.data()),
           static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (!f) throw_format("'" + path + "' is truncated");
    if (out_views) *out_views = views;
    if (out_res) *out_res = res;
    return values;
}

}  // namespace pctrees::raster
