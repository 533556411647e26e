#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pctrees/georef.hpp"
#include "pctrees/pointcloud.hpp"
#include "pctrees/train.hpp"

namespace pctrees::synth {

enum class Crown { Umbrella, Cone, Sphere, Shrub };

const char* crown_name(Crown c);
Crown crown_from_name(const std::string& name);

// Parametric tree shape family. Crown surfaces:
//   umbrella - flattened disk at the sampled height,
//   cone     - linear taper from crown base to the apex,
//   sphere   - spherical shell of the sampled radius, top touching height,
//   shrub    - ground-level hemi-ellipsoid shell (vertical semi-axis =
//              height, horizontal = radius).
// Trunk points lie on the vertical segment below the crown. Every point
// gets isotropic Gaussian jitter of the given sigma.
struct Archetype {
    std::string name;
    Crown crown = Crown::Cone;
    double height_min = 1.0;
    double height_max = 2.0;
    double crown_radius_min = 0.5;
    double crown_radius_max = 1.0;
    double trunk_fraction = 0.2;  // fraction of points on the trunk
    double jitter_sigma = 0.05;   // meters
};

// Three deliberately separable shapes with disjoint height ranges:
// umbrella (acacia-like), cone, shrub.
std::vector<Archetype> default_archetypes();

PointCloud generate_cloud(const Archetype& a, size_t n, uint64_t seed);

struct SynthDataset {
    train::LabeledDataset dataset;  // class index = archetype order
    std::vector<georef::CensusRecord> census;
    georef::PlotFrame frame;
};

// Balanced dataset with unique grid locations (10 m pitch) so the matching
// path can be exercised end to end against the emitted census.
// n_points = 0 draws counts uniformly in [800, 3000] per cloud, which
// exercises both sides of the usual 1000-point quality filter.
SynthDataset generate_dataset(const std::vector<Archetype>& archetypes, size_t per_class,
                              size_t n_points, uint64_t seed);

// Writes <dir>/clouds/<id>.xyz.csv, <dir>/manifest.csv, <dir>/census.csv --
// the same formats the real-data path consumes.
void write_dataset(const SynthDataset& sd, const std::string& dir);

}  // namespace pctrees::synth
