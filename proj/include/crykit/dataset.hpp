#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace crykit {

enum class Gender { male, female, unspecified };

std::string to_string(Gender g);
Gender gender_from_string(const std::string& s);

/// One labeled clip. Paths are stored relative to the manifest file.
struct ManifestRow {
    std::string path;
    int month = 0;  // 0..6
    Gender gender = Gender::unspecified;
    std::string reason = "synthetic";
    std::string pathology = "healthy";
    std::string subject_id;
    // Ground-truth synthesis parameters, present for synthetic rows.
    std::optional<double> f0_hz, f1_hz, f2_hz;
};

struct DatasetManifest {
    std::filesystem::path base_dir;  // directory the paths resolve against
    std::vector<ManifestRow> rows;

    std::filesystem::path resolve(const ManifestRow& row) const {
        std::filesystem::path p(row.path);
        return p.is_absolute() ? p : base_dir / p;
    }
};

// CSV header: path,month,gender,reason,pathology,subject_id,f0_hz,f1_hz,f2_hz
// (the last three may be empty). Throws MalformedManifest with the line
// number; load additionally throws MissingFile listing every row whose
// file does not exist.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest,
                   const std::filesystem::path& path);

}  // namespace crykit
