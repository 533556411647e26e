#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pctrees/pointcloud.hpp"

namespace pctrees::raster {

enum class View : int {
    Top = 0,     // +z
    Bottom = 1,  // -z
    Front = 2,   // +y
    Back = 3,    // -y
    Left = 4,    // -x
    Right = 5,   // +x
};

enum class Mode { Occupancy, Density };

constexpr int kNumViews = 6;

const char* view_name(View v);

// Single-channel projection image, row-major, values in [0, 1].
struct Raster {
    int width = 0;
    int height = 0;
    std::vector<float> values;  // width * height

    float at(int row, int col) const { return values[static_cast<size_t>(row) * width + col]; }
};

// In-plane axis table. u is the image column coordinate (increases
// rightward), v the world coordinate mapped to rows (row 0 is the TOP of the
// image, i.e. maximum v). The window is [-extent/2, +extent/2) for x/y and
// [0, extent) for z; points outside are clipped to the border pixels.
//
//   view        u     v
//   top(+z)     +x    +y
//   bottom(-z)  +x    +y   (same mapping as top: occlusion-free projection
//                           carries no depth, so the pair shares support)
//   front(+y)   -x    +z
//   back(-y)    +x    +z
//   left(-x)    -y    +z
//   right(+x)   +y    +z
//
// col = clamp(floor((u - u_lo) / cell), 0, res-1), cell = extent / res,
// row = res - 1 - clamp(floor((v - v_lo) / cell), 0, res-1).
Raster project(const PointCloud& cloud, View view, int res, double extent, Mode mode);

struct ProjectionSet {
    std::array<Raster, kNumViews> views;  // fixed order: top, bottom, front, back, left, right
    size_t clipped_points = 0;            // points clipped to a border pixel in any view
};

ProjectionSet project6(const PointCloud& cloud, int res, double extent, Mode mode);

// Flatten to a single (6, res, res) channel-major array in the fixed view
// order, ready for the tensor boundary.
std::vector<float> stack_channels(const ProjectionSet& ps);

// 8-bit binary PGM (P5), pixel = round(255 * value), for visual inspection.
void write_pgm(const Raster& r, const std::string& path);

// Raw float32 export: 24-byte header (bytes 0-3 magic "PCTR", 4-7 u32 view
// count, 8-11 u32 res, 12-23 reserved zero), then row-major little-endian
// f32 planes in the fixed view order.
void write_raw(const ProjectionSet& ps, const std::string& path);
std::vector<float> read_raw(const std::string& path, uint32_t* out_views, uint32_t* out_res);

}  // namespace pctrees::raster
