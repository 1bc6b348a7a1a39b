#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "crykit/cnn.hpp"
#include "crykit/experiments.hpp"
#include "crykit/synth.hpp"

namespace crykit {

/// Toolkit-wide configuration. Every field has a default, so an empty
/// (or absent) config file is valid; the CLI flags override file values.
struct CliConfig {
    std::uint64_t seed = 12345;
    int sample_rate = kCanonicalRate;
    int jobs = 1;

    StftParams stft;
    double db_floor = -80.0;

    AgeAnchors synth;
    double male_fraction = 0.5;
    int clips_per_subject = 5;

    TrainConfig train;
    int n_runs = 10;
    int k = 5;
    bool full_pairs = false;

    std::filesystem::path corpus_dir = "corpus";
    std::filesystem::path cache_dir = "cache";
    std::filesystem::path report_dir = "reports";

    // Flat `key = value` text format; '#' starts a comment. Unknown keys
    // are rejected so typos fail loudly.
    static CliConfig load(const std::filesystem::path& path);
    void set(const std::string& key, const std::string& value);

    FeatureConfig features() const {
        return FeatureConfig{sample_rate, stft, db_floor};
    }
    ExperimentConfig experiment() const {
        ExperimentConfig e;
        e.train = train;
        e.n_runs = n_runs;
        e.k = k;
        e.base_seed = seed;
        e.jobs = jobs;
        return e;
    }
};

}  // namespace crykit
