#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "crykit/cnn.hpp"
#include "crykit/dataset.hpp"
#include "crykit/dsp.hpp"

namespace crykit {

struct FeatureConfig {
    int sample_rate = kCanonicalRate;
    StftParams stft;
    double db_floor = -80.0;
};

/// Manifest rows plus their classifier-ready images, index-aligned.
struct PreparedDataset {
    std::vector<ManifestRow> rows;
    std::vector<SpectrogramImage> images;
};

// Materializes one 64x64 image per clip (load -> resample -> stft ->
// render). The cache is keyed by a hash of the WAV bytes and the feature
// parameters, so repeated runs skip recomputation; recompute_count, when
// given, receives the number of images actually computed.
PreparedDataset prepare_images(const DatasetManifest& manifest,
                               const std::filesystem::path& cache_dir,
                               const FeatureConfig& config = {}, int jobs = 1,
                               std::size_t* recompute_count = nullptr);

struct AgePairSpec {
    int low_month = 0;
    int high_month = 0;
};

// Paper mode (full_pairs = false) keeps the pairs anchored at months
// 0-2; [0..6] yields the fifteen pairs 01..06, 12..16, 23..26.
std::vector<AgePairSpec> make_pairs(const std::vector<int>& months,
                                    bool full_pairs = false);

struct FoldAssignment {
    int k = 0;
    std::vector<int> fold_of;  // per-sample fold index in [0, k)
};

// Stratified k-fold assignment: per-class counts per fold differ by at
// most one, as do total fold sizes. Deterministic per seed. Throws
// ClassTooSmall when a class has fewer than k samples.
FoldAssignment kfold_split(const std::vector<int>& labels, int k,
                           std::uint64_t seed);

struct RunResult {
    std::string experiment_id;
    int n_runs = 0;
    int k = 0;
    std::vector<double> accuracies;  // indexed run * k + fold
    double mean() const;
};

struct ExperimentConfig {
    TrainConfig train;
    int n_runs = 10;
    int k = 5;
    std::uint64_t base_seed = 0;
    int jobs = 1;
};

// One binary age pair: n_runs repetitions of stratified k-fold CV, each
// run re-randomizing both the folds and the model init from seeds
// derived off (base_seed, run, fold).
RunResult run_binary_pair(const AgePairSpec& pair, const PreparedDataset& data,
                          const ExperimentConfig& config);

struct PairResultTable {
    std::vector<std::pair<AgePairSpec, RunResult>> entries;
};

PairResultTable run_pair_table(const std::vector<AgePairSpec>& pairs,
                               const PreparedDataset& data,
                               const ExperimentConfig& config);

// Same protocol per gender subset; returns (male, female). Throws
// MissingGender when a requested month lacks one gender.
std::pair<PairResultTable, PairResultTable> run_gender_split(
    const std::vector<AgePairSpec>& pairs, const PreparedDataset& data,
    const ExperimentConfig& config);

/// Binary screening model: class 0 = months 0-3 (drawn equally per
/// month), class 1 = month 4.
struct DiagnosisModel {
    Model model;
    std::set<std::string> train_subjects;
};

DiagnosisModel train_diagnosis_model(const PreparedDataset& data,
                                     const ExperimentConfig& config);

struct CohortResult {
    std::string name;
    int n = 0;
    double fraction_younger = 0.0;  // undefined (NaN) when n == 0
    // Fraction of clips whose verdict matches the labeled month
    // (months 0-3 -> younger, month 4 -> 4-month).
    double accuracy = 0.0;
    std::vector<int> verdicts;  // per clip: 0 = younger, 1 = 4-month
};

struct DiagnosisResult {
    std::vector<CohortResult> cohorts;
};

// Applies the screening model to each named cohort. Cohort subjects must
// be disjoint from the training subjects (SubjectLeakage otherwise).
DiagnosisResult run_diagnosis(
    const DiagnosisModel& model,
    const std::vector<std::pair<std::string, PreparedDataset>>& cohorts);

// --- reports ---

// Flat per-pair table: low_month,high_month,mean_accuracy,n_runs,k.
void write_pair_table_csv(const PairResultTable& table,
                          const std::filesystem::path& path);
PairResultTable read_pair_table_csv(const std::filesystem::path& path);

// Line-chart data grouped by anchor month:
// anchor_month,comparison_month,accuracy.
void write_line_chart_csv(const PairResultTable& table,
                          const std::filesystem::path& path);

// Per-cohort table: cohort,n,fraction_younger,accuracy.
void write_diagnosis_csv(const DiagnosisResult& result,
                         const std::filesystem::path& path);
DiagnosisResult read_diagnosis_csv(const std::filesystem::path& path);

std::string format_summary(const PairResultTable* pairs,
                           const DiagnosisResult* diagnosis);

}  // namespace crykit
