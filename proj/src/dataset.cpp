#include "crykit/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "crykit/errors.hpp"

namespace crykit {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

constexpr const char* kHeader =
    "path,month,gender,reason,pathology,subject_id,f0_hz,f1_hz,f2_hz";

}  // namespace

std::string to_string(Gender g) {
    switch (g) {
        case Gender::male: return "male";
        case Gender::female: return "female";
        default: return "unspecified";
    }
}

Gender gender_from_string(const std::string& s) {
    if (s == "male") return Gender::male;
    if (s == "female") return Gender::female;
    if (s == "unspecified" || s.empty()) return Gender::unspecified;
    throw MalformedManifest("unknown gender '" + s + "'");
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());

    DatasetManifest manifest;
    manifest.base_dir = path.has_parent_path() ? path.parent_path()
                                               : std::filesystem::path(".");

    std::string line;
    int line_no = 0;
    if (!std::getline(in, line))
        throw MalformedManifest(path.string() + ": empty file");
    ++line_no;
    {
        // Tolerate trailing \r from foreign editors.
        std::string hdr = line;
        if (!hdr.empty() && hdr.back() == '\r') hdr.pop_back();
        if (hdr != kHeader)
            throw MalformedManifest(path.string() + ":1: bad header");
    }

    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto fields = split_csv_line(line);
        const std::string where =
            path.string() + ":" + std::to_string(line_no);
        if (fields.size() != 9)
            throw MalformedManifest(where + ": expected 9 fields, got " +
                                    std::to_string(fields.size()));
        ManifestRow row;
        row.path = fields[0];
        if (row.path.empty())
            throw MalformedManifest(where + ": empty path");
        try {
            std::size_t consumed = 0;
            row.month = std::stoi(fields[1], &consumed);
            if (consumed != fields[1].size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
            throw MalformedManifest(where + ": bad month '" + fields[1] + "'");
        }
        if (row.month < 0 || row.month > 6)
            throw MalformedManifest(where + ": month " +
                                    std::to_string(row.month) +
                                    " outside [0, 6]");
        try {
            row.gender = gender_from_string(fields[2]);
        } catch (const MalformedManifest&) {
            throw MalformedManifest(where + ": bad gender '" + fields[2] +
                                    "'");
        }
        row.reason = fields[3];
        row.pathology = fields[4];
        row.subject_id = fields[5];
        auto parse_opt = [&](const std::string& s, const char* name) {
            std::optional<double> v;
            if (!s.empty()) {
                try {
                    std::size_t consumed = 0;
                    v = std::stod(s, &consumed);
                    if (consumed != s.size()) throw std::invalid_argument("");
                } catch (const std::exception&) {
                    throw MalformedManifest(where + ": bad " +
                                            std::string(name) + " '" + s +
                                            "'");
                }
            }
            return v;
        };
        row.f0_hz = parse_opt(fields[6], "f0_hz");
        row.f1_hz = parse_opt(fields[7], "f1_hz");
        row.f2_hz = parse_opt(fields[8], "f2_hz");
        manifest.rows.push_back(std::move(row));
    }

    // Paths must be unique and must exist.
    {
        std::vector<std::string> seen;
        for (const auto& row : manifest.rows) seen.push_back(row.path);
        std::sort(seen.begin(), seen.end());
        for (std::size_t i = 1; i < seen.size(); ++i)
            if (seen[i] == seen[i - 1])
                throw MalformedManifest(path.string() + ": duplicate path '" +
                                        seen[i] + "'");
    }
    std::string missing;
    int missing_count = 0;
    for (const auto& row : manifest.rows) {
        if (!std::filesystem::exists(manifest.resolve(row))) {
            if (!missing.empty()) missing += ", ";
            missing += row.path;
            ++missing_count;
        }
    }
    if (missing_count > 0)
        throw MissingFile(path.string() + ": " +
                          std::to_string(missing_count) +
                          " missing file(s): " + missing);
    return manifest;
}

void save_manifest(const DatasetManifest& manifest,
                   const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << kHeader << '\n';
    for (const auto& row : manifest.rows) {
        out << row.path << ',' << row.month << ',' << to_string(row.gender)
            << ',' << row.reason << ',' << row.pathology << ','
            << row.subject_id << ',';
        if (row.f0_hz) out << fmt_g17(*row.f0_hz);
        out << ',';
        if (row.f1_hz) out << fmt_g17(*row.f1_hz);
        out << ',';
        if (row.f2_hz) out << fmt_g17(*row.f2_hz);
        out << '\n';
    }
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace crykit
