#include "pctrees/pointcloud.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pctrees/error.hpp"
#include "pctrees/rng.hpp"

namespace pctrees {

bool lex_less(const Point3& a, const Point3& b) {
    if (a.x != b.x) return a.x < b.x;
    if (a.y != b.y) return a.y < b.y;
    return a.z < b.z;
}

double dist2(const Point3& a, const Point3& b) {
    double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
    return dx * dx + dy * dy + dz * dz;
}

Point3 centroid(const PointCloud& cloud) {
    if (cloud.empty()) throw_empty_cloud("centroid");
    Point3 c;
    for (const Point3& p : cloud.points) {
        c.x += p.x;
        c.y += p.y;
        c.z += p.z;
    }
    double n = static_cast<double>(cloud.size());
    return {c.x / n, c.y / n, c.z / n};
}

PointCloud center(const PointCloud& cloud) {
    Point3 c = centroid(cloud);
    double min_z = std::numeric_limits<double>::infinity();
    for (const Point3& p : cloud.points) min_z = std::min(min_z, p.z);
    PointCloud out = cloud;
    for (Point3& p : out.points) {
        p.x -= c.x;
        p.y -= c.y;
        p.z -= min_z;
    }
    return out;
}

std::pair<std::vector<PointCloud>, double> rescale_global(std::vector<PointCloud> clouds) {
    double s = 0.0;
    for (const PointCloud& cloud : clouds) {
        if (cloud.empty()) throw_empty_cloud("rescale_global");
        for (const Point3& p : cloud.points)
            s = std::max({s, std::abs(p.x), std::abs(p.y), std::abs(p.z)});
    }
    if (s == 0.0) throw_shape("DegenerateScale: all coordinates are zero");
    for (PointCloud& cloud : clouds)
        for (Point3& p : cloud.points) {
            p.x /= s;
            p.y /= s;
            p.z /= s;
        }
    return {std::move(clouds), s};
}

PointCloud normalize_unit(const PointCloud& cloud) {
    PointCloud out = center(cloud);
    double s = 0.0;
    for (const Point3& p : out.points)
        s = std::max(s, std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z));
    if (s == 0.0) throw_shape("DegenerateScale: cloud '" + cloud.id + "' collapses to a point");
    for (Point3& p : out.points) {
        p.x /= s;
        p.y /= s;
        p.z /= s;
    }
    return out;
}

namespace {

// Centroid over a sorted copy: addition order no longer depends on the
// caller's point order, so fps is exactly permutation invariant.
Point3 order_free_centroid(const std::vector<Point3>& points) {
    std::vector<Point3> sorted = points;
    std::sort(sorted.begin(), sorted.end(), lex_less);
    Point3 c;
    for (const Point3& p : sorted) {
        c.x += p.x;
        c.y += p.y;
        c.z += p.z;
    }
    double n = static_cast<double>(sorted.size());
    return {c.x / n, c.y / n, c.z / n};
}

}  // namespace

std::vector<size_t> fps_indices(const PointCloud& cloud, size_t n) {
    if (cloud.empty()) throw_empty_cloud("fps");
    if (n == 0) throw_shape("fps: sample size must be positive");
    const std::vector<Point3>& pts = cloud.points;
    if (n >= pts.size()) {
        std::vector<size_t> all(pts.size());
        for (size_t i = 0; i < all.size(); ++i) all[i] = i;
        return all;
    }
    Point3 c = order_free_centroid(pts);

    // Seed: farthest from centroid, ties to the lexicographically smallest.
    size_t seed = 0;
    double best = -1.0;
    for (size_t i = 0; i < pts.size(); ++i) {
        double d = dist2(pts[i], c);
        if (d > best || (d == best && lex_less(pts[i], pts[seed]))) {
            best = d;
            seed = i;
        }
    }

    std::vector<double> min_d(pts.size(), std::numeric_limits<double>::infinity());
    std::vector<char> taken(pts.size(), 0);
    std::vector<size_t> out;
    out.reserve(n);
    size_t cur = seed;
    taken[cur] = 1;
    out.push_back(cur);
    while (out.size() < n) {
        size_t next = pts.size();
        double far = -1.0;
        for (size_t i = 0; i < pts.size(); ++i) {
            if (taken[i]) continue;
            min_d[i] = std::min(min_d[i], dist2(pts[i], pts[cur]));
            if (min_d[i] > far ||
                (min_d[i] == far && (next == pts.size() || lex_less(pts[i], pts[next])))) {
                far = min_d[i];
                next = i;
            }
        }
        cur = next;
        taken[cur] = 1;
        out.push_back(cur);
    }
    return out;
}

PointCloud fps(const PointCloud& cloud, size_t n) {
    std::vector<size_t> idx = fps_indices(cloud, n);
    if (idx.size() == cloud.size()) return cloud;
    PointCloud out;
    out.id = cloud.id;
    out.location = cloud.location;
    out.height = cloud.height;
    out.points.reserve(idx.size());
    for (size_t i : idx) out.points.push_back(cloud.points[i]);
    return out;
}

std::vector<size_t> knn(const PointCloud& cloud, const Point3& query, size_t k) {
    if (k < 1 || k > cloud.size())
        throw_shape("knn: k must be in [1, " + std::to_string(cloud.size()) + "]");
    // Sorting (distance, index) pairs gives ascending distance with ties
    // already broken toward the smaller index.
    std::vector<std::pair<double, size_t>> d(cloud.size());
    for (size_t i = 0; i < d.size(); ++i) d[i] = {dist2(cloud.points[i], query), i};
    std::partial_sort(d.begin(), d.begin() + static_cast<ptrdiff_t>(k), d.end());
    std::vector<size_t> idx(k);
    for (size_t i = 0; i < k; ++i) idx[i] = d[i].second;
    return idx;
}

std::vector<PointCloud> filter_min_points(std::vector<PointCloud> clouds, size_t min_points) {
    std::erase_if(clouds, [&](const PointCloud& c) { return c.size() <= min_points; });
    return clouds;
}

PointCloud resample_fixed(const PointCloud& cloud, size_t n, uint64_t seed) {
    if (cloud.empty()) throw_empty_cloud("resample_fixed");
    if (n == 0) throw_shape("resample_fixed: target size must be positive");
    PointCloud out;
    out.id = cloud.id;
    out.location = cloud.location;
    out.height = cloud.height;
    Rng rng(seed);
    if (cloud.size() > n) {
        std::vector<size_t> idx(cloud.size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        rng.shuffle(idx);
        idx.resize(n);
        out.points.reserve(n);
        for (size_t i : idx) out.points.push_back(cloud.points[i]);
    } else {
        out.points = cloud.points;
        out.points.reserve(n);
        while (out.points.size() < n) {
            size_t i = static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(cloud.size())));
            out.points.push_back(cloud.points[i]);
        }
    }
    return out;
}

}  // namespace pctrees
