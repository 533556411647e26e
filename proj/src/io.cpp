#include "pctrees/io.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pctrees/error.hpp"

namespace pctrees::io {

namespace {

std::vector<std::string> split_commas(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

double parse_double(const std::string& s, const std::string& path, size_t line) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw_format(path + ":" + std::to_string(line) + ": '" + s + "' is not a number");
    return v;
}

void expect_header(const std::vector<std::vector<std::string>>& rows,
                   const std::vector<std::string>& expected, const std::string& path) {
    if (rows.empty() || rows[0] != expected) {
        std::string want;
        for (const std::string& h : expected) want += (want.empty() ? "" : ",") + h;
        throw_format(path + ": expected header '" + want + "'");
    }
}

}  // namespace

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw_io("cannot open '" + path + "'");
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line == "\r") continue;
        rows.push_back(split_commas(line));
    }
    return rows;
}

std::string read_text(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw_io("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw_io("cannot open '" + path + "' for writing");
    f << text;
    if (!f) throw_io("write failed for '" + path + "'");
}

void write_csv(const std::string& path, const std::vector<std::vector<std::string>>& rows) {
    std::ofstream f(path);
    if (!f) throw_io("cannot open '" + path + "' for writing");
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) f << (i ? "," : "") << row[i];
        f << "\n";
    }
    if (!f) throw_io("write failed for '" + path + "'");
}

std::string format_double(double v) {
    char buf[32];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        double back = 0.0;
        std::sscanf(buf, "%lf", &back);
        if (back == v) break;
    }
    return buf;
}

PointCloud read_xyz_csv(const std::string& path) {
    auto rows = read_csv(path);
    expect_header(rows, {"x", "y", "z"}, path);
    PointCloud cloud;
    std::string stem = std::filesystem::path(path).filename().string();
    if (auto dot = stem.find('.'); dot != std::string::npos) stem.resize(dot);
    cloud.id = stem;
    cloud.points.reserve(rows.size() - 1);
    for (size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].size() != 3)
            throw_format(path + ":" + std::to_string(i + 1) + ": expected 3 fields");
        cloud.points.push_back({parse_double(rows[i][0], path, i + 1),
                                parse_double(rows[i][1], path, i + 1),
                                parse_double(rows[i][2], path, i + 1)});
    }
    return cloud;
}

void write_xyz_csv(const PointCloud& cloud, const std::string& path) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"x", "y", "z"});
    for (const Point3& p : cloud.points)
        rows.push_back({format_double(p.x), format_double(p.y), format_double(p.z)});
    write_csv(path, rows);
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    auto rows = read_csv(path);
    expect_header(rows, {"id", "path", "utm_x", "utm_y", "height"}, path);
    std::vector<ManifestEntry> entries;
    for (size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].size() != 5)
            throw_format(path + ":" + std::to_string(i + 1) + ": expected 5 fields");
        entries.push_back({rows[i][0], rows[i][1], parse_double(rows[i][2], path, i + 1),
                           parse_double(rows[i][3], path, i + 1),
                           parse_double(rows[i][4], path, i + 1)});
    }
    return entries;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"id", "path", "utm_x", "utm_y", "height"});
    for (const ManifestEntry& e : entries)
        rows.push_back({e.id, e.path, format_double(e.utm_x), format_double(e.utm_y),
                        format_double(e.height)});
    write_csv(path, rows);
}

std::vector<PointCloud> load_clouds(const std::string& manifest_path) {
    auto entries = read_manifest(manifest_path);
    std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
    std::vector<PointCloud> clouds;
    clouds.reserve(entries.size());
    for (const ManifestEntry& e : entries) {
        std::filesystem::path p(e.path);
        if (p.is_relative()) p = base / p;
        PointCloud cloud = read_xyz_csv(p.string());
        cloud.id = e.id;
        cloud.location = {e.utm_x, e.utm_y};
        cloud.height = e.height;
        clouds.push_back(std::move(cloud));
    }
    return clouds;
}

std::vector<georef::CensusRecord> read_census(const std::string& path) {
    auto rows = read_csv(path);
    expect_header(rows, {"tag", "species", "east_offset", "north_offset", "dbh", "alive"}, path);
    std::vector<georef::CensusRecord> records;
    for (size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].size() != 6)
            throw_format(path + ":" + std::to_string(i + 1) + ": expected 6 fields");
        georef::CensusRecord r;
        r.tag = rows[i][0];
        r.species = rows[i][1];
        r.east_offset = parse_double(rows[i][2], path, i + 1);
        r.north_offset = parse_double(rows[i][3], path, i + 1);
        r.dbh = rows[i][4].empty() ? -1.0 : parse_double(rows[i][4], path, i + 1);
        const std::string& a = rows[i][5];
        if (a == "true" || a == "1")
            r.alive = true;
        else if (a == "false" || a == "0")
            r.alive = false;
        else
            throw_format(path + ":" + std::to_string(i + 1) + ": alive must be true/false");
        records.push_back(std::move(r));
    }
    return records;
}

void write_census(const std::vector<georef::CensusRecord>& records, const std::string& path) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"tag", "species", "east_offset", "north_offset", "dbh", "alive"});
    for (const georef::CensusRecord& r : records)
        rows.push_back({r.tag, r.species, format_double(r.east_offset),
                        format_double(r.north_offset), r.dbh < 0.0 ? "" : format_double(r.dbh),
                        r.alive ? "true" : "false"});
    write_csv(path, rows);
}

void write_match_report(const std::string& path,
                        const std::vector<std::pair<std::string, std::string>>& pairs,
                        const std::vector<std::string>& species_per_pair,
                        const georef::ClassDictionary& dict) {
    if (pairs.size() != species_per_pair.size())
        throw_shape("match report: pairs and species lists differ in length");
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"cloud_id", "census_tag", "class_index", "class_name"});
    for (size_t i = 0; i < pairs.size(); ++i) {
        size_t cls = dict.index_of(species_per_pair[i]);
        rows.push_back({pairs[i].first, pairs[i].second, std::to_string(cls),
                        dict.class_names[cls]});
    }
    write_csv(path, rows);
}

}  // namespace pctrees::io
