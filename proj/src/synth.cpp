#include "crykit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <numeric>

#include "crykit/errors.hpp"
#include "crykit/rng.hpp"

namespace crykit {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kF0Low = 250.0, kF0High = 700.0;
constexpr double kF1Bandwidth = 100.0, kF2Bandwidth = 150.0;
constexpr double kF1Min = 400.0, kF1Max = 3500.0;
constexpr double kF2Max = 7600.0;
constexpr double kMinFormantSpread = 200.0;
constexpr double kCreakTailSeconds = 0.25;
constexpr double kCreakAmplitude = 0.35;

double lerp(double a, double b, double t) { return a + (b - a) * t; }

// Acklam's rational approximation to the standard normal quantile,
// |error| < 1.2e-9. Used for stratified corpus draws.
double inverse_normal_cdf(double p) {
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425, phigh = 1.0 - plow;
    if (!(p > 0.0 && p < 1.0))
        throw InvalidArgument("inverse_normal_cdf: p outside (0, 1)");
    if (p < plow) {
        const double q = std::sqrt(-2.0 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q +
                c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    if (p > phigh) {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q +
                 c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double q = p - 0.5, r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r +
            a[5]) *
           q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r +
            1.0);
}

int gender_code(Gender g) {
    switch (g) {
        case Gender::male: return 1;
        case Gender::female: return 2;
        default: return 3;
    }
}

// Adds a Hann-windowed sinc impulse centered at fractional position pos.
void add_bandlimited_impulse(std::vector<double>& samples, double pos,
                             double amplitude) {
    constexpr int kHalfWidth = 16;
    constexpr double kCutoff = 0.95;  // fraction of Nyquist
    const auto n = static_cast<std::ptrdiff_t>(samples.size());
    const auto k0 = static_cast<std::ptrdiff_t>(std::ceil(pos - kHalfWidth));
    const auto k1 = static_cast<std::ptrdiff_t>(std::floor(pos + kHalfWidth));
    for (std::ptrdiff_t k = std::max<std::ptrdiff_t>(0, k0);
         k <= std::min(n - 1, k1); ++k) {
        const double d = k - pos;
        double s;
        if (std::abs(d) < 1e-12) {
            s = kCutoff;
        } else {
            const double x = kPi * kCutoff * d;
            s = kCutoff * std::sin(x) / x;
        }
        const double w = 0.5 + 0.5 * std::cos(kPi * d / kHalfWidth);
        samples[k] += amplitude * s * w;
    }
}

void validate_profile(const SynthProfile& p, int sample_rate) {
    if (p.age_months < 0 || p.age_months > 6)
        throw MonthOutOfRange("profile month " + std::to_string(p.age_months));
    if (!(p.f0_hz >= kF0Low && p.f0_hz <= kF0High))
        throw InvalidArgument("profile f0 " + std::to_string(p.f0_hz) +
                              " outside [250, 700]");
    double prev = 0.0;
    for (const auto& f : p.formants) {
        if (f.center_hz <= prev)
            throw InvalidArgument("formant centers must increase strictly");
        if (f.center_hz >= sample_rate / 2.0)
            throw InvalidArgument("formant center above Nyquist");
        prev = f.center_hz;
    }
    if (p.duration_s <= 0.0)
        throw InvalidArgument("profile duration must be positive");
    double last_end = -1.0;
    auto sorted = p.gaps;
    std::sort(sorted.begin(), sorted.end(),
              [](const GapEvent& a, const GapEvent& b) {
                  return a.start_s < b.start_s;
              });
    for (const auto& g : sorted) {
        if (g.start_s < 0.0 || g.length_s <= 0.0 ||
            g.start_s + g.length_s > p.duration_s)
            throw InvalidArgument("gap event outside [0, duration]");
        if (g.start_s < last_end)
            throw InvalidArgument("gap events overlap");
        last_end = g.start_s + g.length_s;
    }
}

}  // namespace

AgeParameterTable AgeParameterTable::from_anchors(const AgeAnchors& an) {
    AgeParameterTable t;
    for (int m = 0; m <= 6; ++m) {
        // Months 0 and 1 share the low anchor; 1..4 interpolate; 5-6 hold.
        const double u = m <= 1 ? 0.0 : std::min(1.0, (m - 1) / 3.0);
        const double sd_u = std::min(1.0, m / 4.0);
        AgeParams p;
        p.f0_mean = lerp(an.f0_low, an.f0_high, u);
        p.f1_mean = lerp(an.f1_low, an.f1_high, u);
        p.f2_mean = lerp(an.f2_low, an.f2_high, u);
        p.f0_sd = lerp(an.f0_sd_low, an.f0_sd_high, sd_u);
        p.f1_sd = lerp(an.f1_sd_low, an.f1_sd_high, sd_u);
        p.f2_sd = lerp(an.f2_sd_low, an.f2_sd_high, sd_u);
        if (m <= 2)
            p.gap_prob = 0.0;
        else if (m == 3)
            p.gap_prob = an.gap_prob_month3;
        else
            p.gap_prob = an.gap_prob_month4;
        p.creak_prob = an.creak_prob;
        t.months_[m] = p;
    }
    return t;
}

const AgeParameterTable& AgeParameterTable::defaults() {
    static const AgeParameterTable t = from_anchors(AgeAnchors{});
    return t;
}

AgeParams AgeParameterTable::at(double month) const {
    const double m = std::clamp(month, 0.0, 6.0);
    const int lo = std::min(5, static_cast<int>(m));
    const double u = m - lo;
    const AgeParams& a = months_[lo];
    const AgeParams& b = months_[lo + 1];
    AgeParams p;
    p.f0_mean = lerp(a.f0_mean, b.f0_mean, u);
    p.f0_sd = lerp(a.f0_sd, b.f0_sd, u);
    p.f1_mean = lerp(a.f1_mean, b.f1_mean, u);
    p.f1_sd = lerp(a.f1_sd, b.f1_sd, u);
    p.f2_mean = lerp(a.f2_mean, b.f2_mean, u);
    p.f2_sd = lerp(a.f2_sd, b.f2_sd, u);
    p.gap_prob = lerp(a.gap_prob, b.gap_prob, u);
    p.creak_prob = lerp(a.creak_prob, b.creak_prob, u);
    return p;
}

double effective_month(double month, Gender gender) {
    const double shifted = gender == Gender::male ? month - 0.5 : month;
    return std::clamp(shifted, 0.0, 6.0);
}

namespace {

// Draws the stochastic profile fields shared by age_profile and the
// corpus generator. The acoustic parameters themselves come from the
// caller (plain Gaussian draws vs. stratified draws).
void fill_profile_events(SynthProfile& p, const AgeParams& params, Rng& rng) {
    p.duration_s = rng.uniform(1.0, 7.0);
    p.jitter_pct = rng.uniform(0.5, 2.0);
    p.gaps.clear();
    if (rng.bernoulli(params.gap_prob)) {
        const int n_gaps = rng.bernoulli(0.3) ? 2 : 1;
        double prev_end = 0.0;
        for (int g = 0; g < n_gaps; ++g) {
            const double len = rng.uniform(0.1, 0.3);
            const double lo = 0.15 * p.duration_s;
            const double hi = 0.85 * p.duration_s - len;
            if (hi <= lo) break;
            const double start = rng.uniform(lo, hi);
            if (start < prev_end + 0.1) continue;  // keep gaps apart
            p.gaps.push_back({start, len});
            prev_end = start + len;
        }
        std::sort(p.gaps.begin(), p.gaps.end(),
                  [](const GapEvent& a, const GapEvent& b) {
                      return a.start_s < b.start_s;
                  });
    }
    p.creak_tail = rng.bernoulli(params.creak_prob);
}

SynthProfile profile_from_params(int month, Gender gender, double f0,
                                 double f1, double f2) {
    SynthProfile p;
    p.age_months = month;
    p.gender = gender;
    p.f0_hz = std::clamp(f0, kF0Low, kF0High);
    f1 = std::clamp(f1, kF1Min, kF1Max);
    f2 = std::clamp(std::max(f2, f1 + kMinFormantSpread), 0.0, kF2Max);
    p.formants = {{f1, kF1Bandwidth}, {f2, kF2Bandwidth}};
    return p;
}

}  // namespace

SynthProfile age_profile(int month, Gender gender, std::uint64_t seed,
                         const AgeParameterTable& table) {
    if (month < 0 || month > 6)
        throw MonthOutOfRange("month " + std::to_string(month) +
                              " outside [0, 6]");
    Rng rng(hash_mix(seed, static_cast<std::uint64_t>(month),
                     static_cast<std::uint64_t>(gender_code(gender))));
    const AgeParams params = table.at(effective_month(month, gender));
    SynthProfile p = profile_from_params(
        month, gender, rng.gaussian(params.f0_mean, params.f0_sd),
        rng.gaussian(params.f1_mean, params.f1_sd),
        rng.gaussian(params.f2_mean, params.f2_sd));
    fill_profile_events(p, params, rng);
    return p;
}

AudioClip glottal_source(double f0_hz, double duration_s, double jitter_pct,
                         int sample_rate, std::uint64_t seed) {
    if (!(f0_hz > 0.0 && f0_hz < sample_rate / 2.0))
        throw InvalidArgument("glottal_source: f0 outside (0, rate/2)");
    if (duration_s <= 0.0)
        throw InvalidArgument("glottal_source: nonpositive duration");

    AudioClip clip;
    clip.sample_rate = sample_rate;
    clip.samples.assign(
        static_cast<std::size_t>(std::llround(duration_s * sample_rate)),
        0.0);

    Rng rng(seed);
    const double nominal_period = sample_rate / f0_hz;
    double pos = nominal_period * 0.5;
    const double n = static_cast<double>(clip.samples.size());
    while (pos < n) {
        add_bandlimited_impulse(clip.samples, pos, 1.0);
        double period =
            nominal_period * (1.0 + jitter_pct / 100.0 * rng.gaussian());
        period = std::clamp(period, 0.5 * nominal_period,
                            1.5 * nominal_period);
        pos += period;
    }
    for (double& s : clip.samples) s = std::clamp(s, -1.0, 1.0);
    return clip;
}

AudioClip apply_formants(const AudioClip& source,
                         const std::vector<Formant>& formants) {
    if (formants.empty()) return source;
    const int rate = source.sample_rate;
    for (const auto& f : formants) {
        if (!(f.center_hz > 0.0 && f.center_hz < rate / 2.0))
            throw InvalidArgument("formant center outside (0, rate/2)");
        const double r = std::exp(-kPi * f.bandwidth_hz / rate);
        if (r >= 1.0)
            throw UnstableFilter("resonator pole radius >= 1 (bandwidth " +
                                 std::to_string(f.bandwidth_hz) + " Hz)");
    }

    AudioClip out = source;
    for (const auto& f : formants) {
        const double r = std::exp(-kPi * f.bandwidth_hz / rate);
        const double theta = 2.0 * kPi * f.center_hz / rate;
        const double b1 = 2.0 * r * std::cos(theta);
        const double b2 = -r * r;
        // Unity gain at the center frequency.
        const std::complex<double> z2(std::cos(2.0 * theta),
                                      -std::sin(2.0 * theta));
        const double gain = (1.0 - r) * std::abs(1.0 - r * z2);
        double y1 = 0.0, y2 = 0.0;
        for (double& s : out.samples) {
            const double y = gain * s + b1 * y1 + b2 * y2;
            y2 = y1;
            y1 = y;
            s = y;
        }
    }

    double peak = 0.0;
    for (double s : out.samples) peak = std::max(peak, std::abs(s));
    if (peak > 1.0) {
        const double scale = 0.95 / peak;
        for (double& s : out.samples) s *= scale;
    }
    return out;
}

AudioClip synth_cry(const SynthProfile& profile, int sample_rate,
                    std::uint64_t seed) {
    validate_profile(profile, sample_rate);

    AudioClip exc = glottal_source(profile.f0_hz, profile.duration_s,
                                   profile.jitter_pct, sample_rate,
                                   hash_mix(seed, 0x65786369));
    const std::size_t n = exc.samples.size();

    auto to_index = [&](double t) {
        return std::clamp<std::size_t>(
            static_cast<std::size_t>(std::llround(t * sample_rate)), 0, n);
    };

    // Glottal closure: no excitation inside declared gaps.
    for (const auto& gap : profile.gaps) {
        const std::size_t a = to_index(gap.start_s);
        const std::size_t b = to_index(gap.start_s + gap.length_s);
        std::fill(exc.samples.begin() + a, exc.samples.begin() + b, 0.0);
    }

    // Creak: the last stretch of the cry degenerates into irregular
    // low-energy pulses with no stable period.
    std::size_t tail_start = n;
    if (profile.creak_tail) {
        const double tail_s =
            std::min(kCreakTailSeconds, 0.2 * profile.duration_s);
        tail_start = n - to_index(tail_s);
        std::fill(exc.samples.begin() + tail_start, exc.samples.end(), 0.0);
        Rng rng(hash_mix(seed, 0x63726b));
        const double nominal_period = sample_rate / profile.f0_hz;
        double pos = static_cast<double>(tail_start) + nominal_period;
        while (pos < static_cast<double>(n)) {
            add_bandlimited_impulse(exc.samples, pos, kCreakAmplitude);
            pos += nominal_period * rng.uniform(1.5, 3.0);
        }
    }

    AudioClip voiced = apply_formants(exc, profile.formants);

    // Per-burst attack/decay; everything outside a burst (the gaps) is
    // silenced outright.
    std::vector<std::pair<std::size_t, std::size_t>> bursts;
    std::size_t cursor = 0;
    for (const auto& gap : profile.gaps) {
        const std::size_t a = to_index(gap.start_s);
        const std::size_t b = to_index(gap.start_s + gap.length_s);
        if (a > cursor) bursts.emplace_back(cursor, a);
        cursor = b;
    }
    if (cursor < n) bursts.emplace_back(cursor, n);

    std::vector<double> envelope(n, 0.0);
    const std::size_t attack = to_index(0.06);
    const std::size_t decay = to_index(0.08);
    for (const auto& [b0, b1] : bursts) {
        const std::size_t len = b1 - b0;
        const std::size_t a = std::min(attack, len / 4);
        const std::size_t d = std::min(decay, len / 4);
        for (std::size_t i = b0; i < b1; ++i) {
            double e = 1.0;
            if (i - b0 < a) {
                const double u = static_cast<double>(i - b0) / a;
                e = 0.5 - 0.5 * std::cos(kPi * u);
            } else if (b1 - i <= d) {
                const double u = static_cast<double>(b1 - i) / d;
                e = 0.5 - 0.5 * std::cos(kPi * u);
            }
            envelope[i] = e;
        }
    }
    for (std::size_t i = 0; i < n; ++i) voiced.samples[i] *= envelope[i];

    double peak = 0.0;
    for (double s : voiced.samples) peak = std::max(peak, std::abs(s));
    if (peak > 0.0) {
        const double scale = 0.9 / peak;
        for (double& s : voiced.samples) s *= scale;
    }
    return voiced;
}

DatasetManifest synth_corpus(const CorpusSpec& spec,
                             const std::filesystem::path& out_dir) {
    if (spec.per_month < 1)
        throw InvalidArgument("synth_corpus: per_month must be >= 1");
    if (spec.months.empty())
        throw InvalidArgument("synth_corpus: no months requested");
    for (int m : spec.months)
        if (m < 0 || m > 6)
            throw MonthOutOfRange("corpus month " + std::to_string(m));
    if (!(spec.male_fraction >= 0.0 && spec.male_fraction <= 1.0))
        throw InvalidArgument("synth_corpus: male_fraction outside [0, 1]");
    if (spec.clips_per_subject < 1)
        throw InvalidArgument("synth_corpus: clips_per_subject must be >= 1");

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir))
        throw IoError("cannot create corpus dir " + out_dir.string());

    const int n = spec.per_month;

    // Quantile strata and month-independent shuffles: months with equal
    // table rows then receive identical parameter sets, so empirical
    // per-month means and sds follow the table ordering exactly.
    std::vector<double> strata(n);
    for (int i = 0; i < n; ++i)
        strata[i] = inverse_normal_cdf((i + 0.5) / n);
    std::array<std::vector<int>, 3> perm;
    for (int p = 0; p < 3; ++p) {
        perm[p].resize(n);
        std::iota(perm[p].begin(), perm[p].end(), 0);
        Rng prng(hash_mix(spec.seed, 0x70657200 + p));
        prng.shuffle(perm[p]);
    }

    // Subject gender assignment, shared across months.
    const int n_subjects = (n + spec.clips_per_subject - 1) /
                           spec.clips_per_subject;
    std::vector<int> subject_order(n_subjects);
    std::iota(subject_order.begin(), subject_order.end(), 0);
    {
        Rng grng(hash_mix(spec.seed, 0x67656e));
        grng.shuffle(subject_order);
    }
    const int n_male = static_cast<int>(
        std::lround(spec.male_fraction * n_subjects));
    std::vector<bool> subject_male(n_subjects, false);
    for (int s = 0; s < n_male; ++s) subject_male[subject_order[s]] = true;

    DatasetManifest manifest;
    manifest.base_dir = out_dir;

    std::uint64_t file_index = 0;
    for (int month : spec.months) {
        const int acoustic_month =
            spec.acoustic_month_override.value_or(month);
        for (int i = 0; i < n; ++i, ++file_index) {
            const int subject = i / spec.clips_per_subject;
            const Gender gender =
                subject_male[subject] ? Gender::male : Gender::female;
            const AgeParams params =
                spec.table.at(effective_month(acoustic_month, gender));

            SynthProfile p = profile_from_params(
                month, gender, params.f0_mean + params.f0_sd * strata[perm[0][i]],
                params.f1_mean + params.f1_sd * strata[perm[1][i]],
                params.f2_mean + params.f2_sd * strata[perm[2][i]]);
            const std::uint64_t file_seed = hash_mix(spec.seed, file_index);
            Rng rng(hash_mix(file_seed, 0x65767400));
            fill_profile_events(p, params, rng);

            const AudioClip clip = synth_cry(p, spec.sample_rate, file_seed);

            char name[64];
            std::snprintf(name, sizeof(name), "m%d_%04d.wav", month, i);
            save_wav(clip, out_dir / name);

            ManifestRow row;
            row.path = name;
            row.month = month;
            row.gender = gender;
            row.reason = "synthetic";
            row.pathology = spec.pathology;
            char sid[80];
            std::snprintf(sid, sizeof(sid), "%s-m%d-s%03d",
                          spec.subject_prefix.c_str(), month, subject);
            row.subject_id = sid;
            row.f0_hz = p.f0_hz;
            row.f1_hz = p.formants[0].center_hz;
            row.f2_hz = p.formants[1].center_hz;
            manifest.rows.push_back(std::move(row));
        }
    }

    save_manifest(manifest, out_dir / "manifest.csv");
    return manifest;
}

}  // namespace crykit
