#include "pctrees/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>

#include "pctrees/error.hpp"
#include "pctrees/io.hpp"
#include "pctrees/rng.hpp"

namespace pctrees::synth {

const char* crown_name(Crown c) {
    switch (c) {
        case Crown::Umbrella: return "umbrella";
        case Crown::Cone: return "cone";
        case Crown::Sphere: return "sphere";
        case Crown::Shrub: return "shrub";
    }
    throw_config("unknown crown");
}

Crown crown_from_name(const std::string& name) {
    if (name == "umbrella") return Crown::Umbrella;
    if (name == "cone") return Crown::Cone;
    if (name == "sphere") return Crown::Sphere;
    if (name == "shrub") return Crown::Shrub;
    throw_config("unknown crown '" + name + "'");
}

std::vector<Archetype> default_archetypes() {
    return {
        {"umbrella", Crown::Umbrella, 8.0, 12.0, 3.0, 5.0, 0.35, 0.05},
        {"cone", Crown::Cone, 4.0, 6.0, 1.0, 2.5, 0.15, 0.05},
        {"shrub", Crown::Shrub, 0.8, 2.0, 0.8, 2.0, 0.0, 0.05},
    };
}

namespace {

void validate(const Archetype& a) {
    if (!(a.height_min > 0.0 && a.height_max >= a.height_min))
        throw_config("archetype '" + a.name + "': height range must be positive and ordered");
    if (!(a.crown_radius_min > 0.0 && a.crown_radius_max >= a.crown_radius_min))
        throw_config("archetype '" + a.name + "': radius range must be positive and ordered");
    if (!(a.trunk_fraction >= 0.0 && a.trunk_fraction <= 1.0))
        throw_config("archetype '" + a.name + "': trunk_fraction outside [0, 1]");
    if (a.jitter_sigma < 0.0)
        throw_config("archetype '" + a.name + "': negative jitter");
}

double crown_bottom(Crown c, double height, double radius) {
    switch (c) {
        case Crown::Umbrella: return height;
        case Crown::Cone: return 0.3 * height;
        case Crown::Sphere: return std::max(0.0, height - 2.0 * radius);
        case Crown::Shrub: return 0.0;
    }
    return 0.0;
}

}  // namespace

PointCloud generate_cloud(const Archetype& a, size_t n, uint64_t seed) {
    if (n < 1) throw_config("InvalidCount: need at least one point");
    validate(a);
    Rng rng(seed);
    double height = rng.uniform(a.height_min, a.height_max);
    double radius = rng.uniform(a.crown_radius_min, a.crown_radius_max);
    size_t n_trunk = std::min<size_t>(n, static_cast<size_t>(std::llround(
                                             a.trunk_fraction * static_cast<double>(n))));
    double base = crown_bottom(a.crown, height, radius);
    constexpr double two_pi = 2.0 * std::numbers::pi;

    PointCloud cloud;
    cloud.points.reserve(n);
    for (size_t i = 0; i < n - n_trunk; ++i) {
        Point3 p;
        double th = rng.uniform(0.0, two_pi);
        switch (a.crown) {
            case Crown::Umbrella: {
                double r = radius * std::sqrt(rng.uniform());
                p = {r * std::cos(th), r * std::sin(th), height};
                break;
            }
            case Crown::Cone: {
                double z = rng.uniform(base, height);
                double r = radius * (height - z) / (height - base);
                p = {r * std::cos(th), r * std::sin(th), z};
                break;
            }
            case Crown::Sphere: {
                double cz = rng.uniform(-1.0, 1.0);
                double s = std::sqrt(1.0 - cz * cz);
                p = {radius * s * std::cos(th), radius * s * std::sin(th),
                     height - radius + radius * cz};
                break;
            }
            case Crown::Shrub: {
                double cz = rng.uniform();  // upper half only
                double s = std::sqrt(1.0 - cz * cz);
                p = {radius * s * std::cos(th), radius * s * std::sin(th), height * cz};
                break;
            }
        }
        p.x += rng.normal(0.0, a.jitter_sigma);
        p.y += rng.normal(0.0, a.jitter_sigma);
        p.z += rng.normal(0.0, a.jitter_sigma);
        cloud.points.push_back(p);
    }
    for (size_t i = 0; i < n_trunk; ++i) {
        Point3 p{0.0, 0.0, base > 0.0 ? rng.uniform(0.0, base) : 0.0};
        p.x += rng.normal(0.0, a.jitter_sigma);
        p.y += rng.normal(0.0, a.jitter_sigma);
        p.z += rng.normal(0.0, a.jitter_sigma);
        cloud.points.push_back(p);
    }
    return cloud;
}

SynthDataset generate_dataset(const std::vector<Archetype>& archetypes, size_t per_class,
                              size_t n_points, uint64_t seed) {
    if (archetypes.empty()) throw_config("need at least one archetype");
    if (per_class < 1) throw_config("InvalidCount: per_class must be >= 1");

    SynthDataset sd;
    // Corner post at the origin: census offsets and manifest coordinates
    // share one frame, so matching the emitted files needs no frame input.
    for (const auto& a : archetypes) sd.dataset.dictionary.class_names.push_back(a.name);

    size_t total = archetypes.size() * per_class;
    size_t cols = static_cast<size_t>(std::ceil(std::sqrt(static_cast<double>(total))));
    size_t item = 0;
    char buf[64];
    for (size_t c = 0; c < archetypes.size(); ++c) {
        for (size_t j = 0; j < per_class; ++j, ++item) {
            uint64_t s = Rng::derive(seed, item);
            Rng meta(Rng::derive(s, 2));
            size_t n = n_points ? n_points
                                : 800 + static_cast<size_t>(meta.uniform_int(2201));
            PointCloud cloud = generate_cloud(archetypes[c], n, Rng::derive(s, 1));

            std::snprintf(buf, sizeof buf, "%s_%04zu", archetypes[c].name.c_str(), item);
            cloud.id = buf;
            // Grid pitch 10 m, so 1 m rounding cells are unique per item; the
            // cloud and its census record get independent sub-cell offsets.
            double east = static_cast<double>(item % cols) * 10.0;
            double north = static_cast<double>(item / cols) * 10.0;
            cloud.location = {{sd.frame.post_x + east + meta.uniform(-0.3, 0.3),
                               sd.frame.post_y + north + meta.uniform(-0.3, 0.3)}};
            double max_z = 0.0;
            for (const Point3& p : cloud.points) max_z = std::max(max_z, p.z);
            cloud.height = max_z;

            georef::CensusRecord rec;
            std::snprintf(buf, sizeof buf, "t%04zu", item);
            rec.tag = buf;
            rec.species = archetypes[c].name;
            rec.east_offset = east + meta.uniform(-0.3, 0.3);
            rec.north_offset = north + meta.uniform(-0.3, 0.3);
            rec.dbh = 2.0 * max_z + meta.uniform(0.0, 5.0);
            rec.alive = true;
            sd.census.push_back(std::move(rec));
            sd.dataset.items.push_back({cloud.id, std::move(cloud), c});
        }
    }
    return sd;
}

void write_dataset(const SynthDataset& sd, const std::string& dir) {
    std::filesystem::create_directories(std::filesystem::path(dir) / "clouds");
    std::vector<io::ManifestEntry> manifest;
    for (const auto& item : sd.dataset.items) {
        if (!item.cloud.location) throw_shape("cloud '" + item.id + "' has no location");
        std::string rel = "clouds/" + item.id + ".xyz.csv";
        io::write_xyz_csv(item.cloud, (std::filesystem::path(dir) / rel).string());
        manifest.push_back({item.id, rel, item.cloud.location->first,
                            item.cloud.location->second, item.cloud.height.value_or(0.0)});
    }
    io::write_manifest(manifest, (std::filesystem::path(dir) / "manifest.csv").string());
    io::write_census(sd.census, (std::filesystem::path(dir) / "census.csv").string());
}

}  // namespace pctrees::synth
