#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace pctrees {

struct Point3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    friend bool operator==(const Point3&, const Point3&) = default;
};

// Lexicographic (x, y, z) order, used as the deterministic tie-break in
// sampling routines.
bool lex_less(const Point3& a, const Point3& b);

double dist2(const Point3& a, const Point3& b);

// One segmented tree: an unordered set of LiDAR returns plus identity and an
// optional planar location in the shared (UTM-like) frame.
struct PointCloud {
    std::string id;
    std::vector<Point3> points;
    std::optional<std::pair<double, double>> location;  // planar meters
    std::optional<double> height;                       // meters

    size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

// Arithmetic mean per coordinate. Throws EmptyCloud on an empty cloud.
Point3 centroid(const PointCloud& cloud);

// Translate so the x/y centroid is at the origin and min z is 0 (keeps
// "height above ground" readable from z).
PointCloud center(const PointCloud& cloud);

// Divide every coordinate of every cloud by the single global scale
// s = max over clouds of max |coordinate|. Returns the clouds and s.
// Relative heights across clouds are preserved exactly.
// Pre: clouds centered. Throws DegenerateScale when s == 0.
std::pair<std::vector<PointCloud>, double> rescale_global(std::vector<PointCloud> clouds);

// Per-cloud alternative: center, then divide by the cloud's own max point
// norm so the result fits in the unit ball. Removes absolute scale.
PointCloud normalize_unit(const PointCloud& cloud);

// Farthest point sampling with a canonical, input-order-independent rule:
//   seed  = point farthest from the centroid (ties: lexicographically
//           smallest (x, y, z)),
//   step  = unselected point maximizing min distance to the selected set
//           (same tie-break).
// Output order is selection order. n >= size() returns the cloud unchanged.
PointCloud fps(const PointCloud& cloud, size_t n);

// Same selection as positions into cloud.points (identity order when
// n >= size()); what feature-gathering layers consume.
std::vector<size_t> fps_indices(const PointCloud& cloud, size_t n);

// Indices of the k nearest points to `query`, ascending distance, distance
// ties broken toward the smaller index. Requires 1 <= k <= size().
std::vector<size_t> knn(const PointCloud& cloud, const Point3& query, size_t k);

// Keep exactly the clouds with strictly more than `min_points` points.
std::vector<PointCloud> filter_min_points(std::vector<PointCloud> clouds, size_t min_points);

// Fixed-size resampling for models that consume constant point counts:
// |points| >  n -> uniform subset without replacement (seeded),
// |points| == n -> identity,
// |points| <  n -> original points plus uniform draws with replacement.
PointCloud resample_fixed(const PointCloud& cloud, size_t n, uint64_t seed);

}  // namespace pctrees
