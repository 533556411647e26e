#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pctrees/pointcloud.hpp"

namespace pctrees::georef {

// One ground-truth stem from the plot census.
struct CensusRecord {
    std::string tag;
    std::string species;
    double east_offset = 0.0;   // meters due east of the corner post
    double north_offset = 0.0;  // meters due north of the corner post
    double dbh = -1.0;          // centimeters; negative means unrecorded
    bool alive = true;
};

// Corner post position in the shared planar frame; axes aligned with due
// east / due north.
struct PlotFrame {
    double post_x = 0.0;
    double post_y = 0.0;
};

std::pair<double, double> to_shared_frame(const CensusRecord& record, const PlotFrame& frame);

// A census record with its shared-frame coordinates resolved.
struct LocatedRecord {
    std::string tag;
    std::string species;
    double x = 0.0;
    double y = 0.0;
};

std::vector<LocatedRecord> locate_records(const std::vector<CensusRecord>& records,
                                          const PlotFrame& frame,
                                          bool include_dead);

struct MatchResult {
    std::vector<std::pair<std::string, std::string>> pairs;  // (cloud id, census tag)
    size_t ambiguous_cells = 0;
    size_t unmatched_clouds = 0;
    size_t unmatched_records = 0;
    double match_rate = 0.0;  // |pairs| / |clouds|
};

// Grid-cell matching: every location maps to the integer cell
// (round-half-away-from-zero of x/cell_size, same for y); a pair is emitted
// iff a cell holds exactly one cloud and exactly one record. Cells with two
// or more candidates on either side yield no pairs and count as ambiguous.
// cell_size = 1 rounds to the nearest whole meter.
MatchResult match_by_rounding(const std::vector<PointCloud>& clouds,
                              const std::vector<LocatedRecord>& records,
                              double cell_size = 1.0);

// Species name -> dense class index; the last class is always "other".
struct ClassDictionary {
    std::vector<std::string> class_names;  // size top_k + 1, "other" last

    size_t num_classes() const { return class_names.size(); }
    size_t other_index() const { return class_names.size() - 1; }
    // Total over all species strings: unknown species map to "other".
    size_t index_of(const std::string& species) const;
};

// The top_k species by matched-image count (ties alphabetical) become
// classes 0..top_k-1 in descending-count order; everything else is "other".
ClassDictionary group_species(const std::vector<std::string>& matched_species, size_t top_k);

std::map<std::string, size_t> species_counts(const std::vector<std::string>& matched_species);

}  // namespace pctrees::georef
