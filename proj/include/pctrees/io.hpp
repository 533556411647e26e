#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pctrees/georef.hpp"
#include "pctrees/pointcloud.hpp"

namespace pctrees::io {

// Minimal comma-separated values; no quoting (none of the formats here
// carry embedded commas). Blank lines are skipped.
std::vector<std::vector<std::string>> read_csv(const std::string& path);
void write_csv(const std::string& path, const std::vector<std::vector<std::string>>& rows);

std::string format_double(double v);  // shortest round-trippable decimal

std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);

// XYZ-CSV point cloud: header "x,y,z", one point per row, decimal meters;
// the cloud id is the file stem (name without directories or extensions).
PointCloud read_xyz_csv(const std::string& path);
void write_xyz_csv(const PointCloud& cloud, const std::string& path);

struct ManifestEntry {
    std::string id;
    std::string path;  // relative paths resolve against the manifest's directory
    double utm_x = 0.0;
    double utm_y = 0.0;
    double height = 0.0;
};

// Dataset manifest CSV: header "id,path,utm_x,utm_y,height".
std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path);

// Loads every cloud in the manifest, attaching location and height.
std::vector<PointCloud> load_clouds(const std::string& manifest_path);

// Census CSV: header "tag,species,east_offset,north_offset,dbh,alive";
// dbh may be empty; alive is true/false (1/0 accepted).
std::vector<georef::CensusRecord> read_census(const std::string& path);
void write_census(const std::vector<georef::CensusRecord>& records, const std::string& path);

// Match report CSV: header "cloud_id,census_tag,class_index,class_name".
void write_match_report(const std::string& path,
                        const std::vector<std::pair<std::string, std::string>>& pairs,
                        const std::vector<std::string>& species_per_pair,
                        const georef::ClassDictionary& dict);

}  // namespace pctrees::io
