#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "crykit/audio_io.hpp"
#include "crykit/dataset.hpp"

namespace crykit {

struct Formant {
    double center_hz = 0.0;
    double bandwidth_hz = 0.0;
};

struct GapEvent {
    double start_s = 0.0;
    double length_s = 0.0;
};

/// Age-conditioned acoustic parameters for one synthetic cry.
struct SynthProfile {
    int age_months = 0;                // 0..6
    double f0_hz = 442.0;              // 250..700
    std::vector<Formant> formants;     // F1, F2 (optionally F3), ascending
    double duration_s = 3.0;
    double jitter_pct = 1.0;           // cycle-to-cycle F0 perturbation
    std::vector<GapEvent> gaps;        // glottal-closure silences
    bool creak_tail = false;
    Gender gender = Gender::unspecified;
};

/// Distribution parameters for one month.
struct AgeParams {
    double f0_mean = 0.0, f0_sd = 0.0;
    double f1_mean = 0.0, f1_sd = 0.0;
    double f2_mean = 0.0, f2_sd = 0.0;
    double gap_prob = 0.0;
    double creak_prob = 0.0;
};

/// Anchor values the default table is built from. Month-0 and month-4
/// rows are pinned; months in between interpolate linearly and months
/// 5-6 hold the month-4 values (development plateaus there).
struct AgeAnchors {
    double f0_low = 442.0, f0_high = 457.0;
    double f1_low = 1470.0, f1_high = 1921.0;
    double f2_low = 2339.0, f2_high = 4423.0;
    double f0_sd_low = 80.0, f0_sd_high = 120.0;
    double f1_sd_low = 150.0, f1_sd_high = 300.0;
    double f2_sd_low = 250.0, f2_sd_high = 500.0;
    double gap_prob_month3 = 0.3, gap_prob_month4 = 0.7;
    double creak_prob = 0.25;
};

class AgeParameterTable {
public:
    static AgeParameterTable from_anchors(const AgeAnchors& anchors);
    static const AgeParameterTable& defaults();

    const AgeParams& month(int m) const { return months_.at(m); }
    // Piecewise-linear interpolation at a fractional month in [0, 6].
    AgeParams at(double month) const;

private:
    std::array<AgeParams, 7> months_{};
};

// Male vocal tracts develop slower in this corpus: the month axis is
// shifted back by half a month before the table lookup.
double effective_month(double month, Gender gender);

// Samples an age-conditioned profile. Deterministic per (month, gender,
// seed). Throws MonthOutOfRange outside [0, 6].
SynthProfile age_profile(int month, Gender gender, std::uint64_t seed,
                         const AgeParameterTable& table =
                             AgeParameterTable::defaults());

// Quasi-periodic pulse train: one band-limited impulse per glottal cycle,
// cycle length perturbed by jitter_pct.
AudioClip glottal_source(double f0_hz, double duration_s, double jitter_pct,
                         int sample_rate, std::uint64_t seed);

// Cascade of two-pole resonators, one per formant. Unity gain at each
// center frequency. Throws UnstableFilter when a bandwidth is <= 0.
AudioClip apply_formants(const AudioClip& source,
                         const std::vector<Formant>& formants);

// Full source-filter synthesis: pulse train -> gap zeroing -> resonators
// -> per-burst attack/decay envelope -> optional creak tail -> peak 0.9.
AudioClip synth_cry(const SynthProfile& profile,
                    int sample_rate = kCanonicalRate, std::uint64_t seed = 0);

struct CorpusSpec {
    std::vector<int> months;  // label months, each 0..6
    int per_month = 100;
    double male_fraction = 0.5;
    std::uint64_t seed = 0;
    int sample_rate = kCanonicalRate;
    int clips_per_subject = 5;
    std::string subject_prefix = "subj";
    std::string pathology = "healthy";
    // When set, clips are synthesized with this month's acoustics while
    // keeping the label months above (used for delayed-development
    // cohorts).
    std::optional<int> acoustic_month_override;
    AgeParameterTable table = AgeParameterTable::defaults();
};

// Writes per_month WAV files per requested month plus manifest.csv into
// out_dir; returns the manifest. Parameter draws are quantile-stratified
// per month so even small corpora realize the table's month-over-month
// trends exactly.
DatasetManifest synth_corpus(const CorpusSpec& spec,
                             const std::filesystem::path& out_dir);

}  // namespace crykit
