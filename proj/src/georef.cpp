#include "pctrees/georef.hpp"

#include <algorithm>
#include <cmath>

#include "pctrees/error.hpp"

namespace pctrees::georef {

std::pair<double, double> to_shared_frame(const CensusRecord& record, const PlotFrame& frame) {
    return {frame.post_x + record.east_offset, frame.post_y + record.north_offset};
}

std::vector<LocatedRecord> locate_records(const std::vector<CensusRecord>& records,
                                          const PlotFrame& frame, bool include_dead) {
    std::vector<LocatedRecord> out;
    out.reserve(records.size());
    for (const CensusRecord& r : records) {
        if (!r.alive && !include_dead) continue;
        auto [x, y] = to_shared_frame(r, frame);
        out.push_back({r.tag, r.species, x, y});
    }
    return out;
}

namespace {

// Round half away from zero, matching how field coordinates are reported.
int64_t round_cell(double v, double cell_size) { return std::llround(v / cell_size); }

struct CellKey {
    int64_t x;
    int64_t y;
    auto operator<=>(const CellKey&) const = default;
};

}  // namespace

MatchResult match_by_rounding(const std::vector<PointCloud>& clouds,
                              const std::vector<LocatedRecord>& records, double cell_size) {
    if (!(cell_size > 0.0)) throw_config("match: cell_size must be positive");

    std::map<CellKey, std::vector<size_t>> cloud_cells;
    for (size_t i = 0; i < clouds.size(); ++i) {
        if (!clouds[i].location)
            throw_shape("match: cloud '" + clouds[i].id + "' has no location");
        auto [x, y] = *clouds[i].location;
        cloud_cells[{round_cell(x, cell_size), round_cell(y, cell_size)}].push_back(i);
    }
    std::map<CellKey, std::vector<size_t>> record_cells;
    for (size_t i = 0; i < records.size(); ++i)
        record_cells[{round_cell(records[i].x, cell_size), round_cell(records[i].y, cell_size)}]
            .push_back(i);

    MatchResult res;
    size_t matched_clouds = 0, matched_records = 0;
    for (const auto& [key, cs] : cloud_cells) {
        auto it = record_cells.find(key);
        size_t n_rec = it == record_cells.end() ? 0 : it->second.size();
        if (cs.size() == 1 && n_rec == 1) {
            res.pairs.emplace_back(clouds[cs[0]].id, records[it->second[0]].tag);
            ++matched_clouds;
            ++matched_records;
        } else if (cs.size() > 1 || n_rec > 1) {
            ++res.ambiguous_cells;
        }
    }
    for (const auto& [key, rs] : record_cells) {
        if (rs.size() > 1 && !cloud_cells.contains(key)) ++res.ambiguous_cells;
    }
    res.unmatched_clouds = clouds.size() - matched_clouds;
    res.unmatched_records = records.size() - matched_records;
    res.match_rate = clouds.empty()
                         ? 0.0
                         : static_cast<double>(res.pairs.size()) / static_cast<double>(clouds.size());
    return res;
}

size_t ClassDictionary::index_of(const std::string& species) const {
    for (size_t i = 0; i + 1 < class_names.size(); ++i)
        if (class_names[i] == species) return i;
    return other_index();
}

std::map<std::string, size_t> species_counts(const std::vector<std::string>& matched_species) {
    std::map<std::string, size_t> counts;
    for (const std::string& s : matched_species) ++counts[s];
    return counts;
}

ClassDictionary group_species(const std::vector<std::string>& matched_species, size_t top_k) {
    if (top_k == 0) throw_config("group_species: top_k must be positive");
    auto counts = species_counts(matched_species);
    std::vector<std::pair<std::string, size_t>> ranked(counts.begin(), counts.end());
    // Descending count; the map already gave alphabetical order within ties.
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    ClassDictionary dict;
    for (size_t i = 0; i < ranked.size() && i < top_k; ++i)
        dict.class_names.push_back(ranked[i].first);
    dict.class_names.push_back("other");
    return dict;
}

}  // namespace pctrees::georef
