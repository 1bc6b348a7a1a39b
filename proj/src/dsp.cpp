#include "crykit/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>

#include "crykit/errors.hpp"
#include "crykit/fft.hpp"

namespace crykit {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kVoicingThreshold = 0.5;
// Frames whose RMS sits below this (dB rel. clip peak) carry no usable
// resonance information and are skipped by the formant tracker.
constexpr double kFormantEnergyFloorDb = -40.0;

std::vector<double> hann_window(int n) {
    std::vector<double> w(n);
    for (int i = 0; i < n; ++i)
        w[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / n);
    return w;
}

std::vector<double> hamming_window(int n) {
    std::vector<double> w(n);
    for (int i = 0; i < n; ++i)
        w[i] = 0.54 - 0.46 * std::cos(2.0 * kPi * i / (n - 1));
    return w;
}

// Durand-Kerner simultaneous root iteration for a monic real polynomial
// z^p + c[0] z^(p-1) + ... + c[p-1].
std::vector<std::complex<double>> polynomial_roots(
    const std::vector<double>& c) {
    const int p = static_cast<int>(c.size());
    std::vector<std::complex<double>> roots(p);
    const std::complex<double> seed(0.4, 0.9);
    std::complex<double> acc(1.0, 0.0);
    for (int i = 0; i < p; ++i) {
        acc *= seed;
        roots[i] = acc;
    }
    auto eval = [&](std::complex<double> z) {
        std::complex<double> v(1.0, 0.0);
        for (int i = 0; i < p; ++i) v = v * z + c[i];
        return v;
    };
    for (int iter = 0; iter < 500; ++iter) {
        double max_step = 0.0;
        for (int i = 0; i < p; ++i) {
            std::complex<double> denom(1.0, 0.0);
            for (int j = 0; j < p; ++j)
                if (j != i) denom *= roots[i] - roots[j];
            if (std::abs(denom) < 1e-300) continue;
            const std::complex<double> step = eval(roots[i]) / denom;
            roots[i] -= step;
            max_step = std::max(max_step, std::abs(step));
        }
        if (max_step < 1e-12) break;
    }
    return roots;
}

std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

Spectrogram stft(const AudioClip& clip, const StftParams& params) {
    if (params.window_len <= 0 || params.hop <= 0 ||
        params.hop > params.window_len || params.fft_len < params.window_len)
        throw InvalidArgument("stft: need 0 < hop <= window_len <= fft_len");
    const std::size_t n = clip.samples.size();
    if (n < static_cast<std::size_t>(params.window_len))
        throw ClipTooShort("stft: clip shorter than one window");

    const std::vector<double> window = hann_window(params.window_len);
    const int n_frames =
        1 + static_cast<int>(
                (n - params.window_len + params.hop - 1) / params.hop);
    const int n_bins = params.fft_len / 2 + 1;

    Spectrogram spec;
    spec.params = params;
    spec.sample_rate = clip.sample_rate;
    spec.n_frames = n_frames;
    spec.n_bins = n_bins;
    spec.mags.assign(static_cast<std::size_t>(n_frames) * n_bins, 0.0);

    std::vector<double> frame(params.fft_len);
    for (int t = 0; t < n_frames; ++t) {
        const std::size_t start = static_cast<std::size_t>(t) * params.hop;
        std::fill(frame.begin(), frame.end(), 0.0);
        const std::size_t avail =
            std::min<std::size_t>(params.window_len, n - start);
        for (std::size_t i = 0; i < avail; ++i)
            frame[i] = clip.samples[start + i] * window[i];
        const auto spectrum = fft_real(frame);
        for (int k = 0; k < n_bins; ++k)
            spec.at(t, k) = std::abs(spectrum[k]);
    }
    return spec;
}

SpectrogramImage render_image(const Spectrogram& spec, double db_floor) {
    if (spec.n_frames <= 0 || spec.n_bins <= 0)
        throw InvalidArgument("render_image: empty spectrogram");

    const std::size_t count = spec.mags.size();
    double max_mag = 0.0;
    for (double m : spec.mags) max_mag = std::max(max_mag, m);

    SpectrogramImage img;
    img.pixels.assign(kImageSize * kImageSize, 0.5f);
    if (max_mag <= 0.0) return img;  // degenerate: uniform mid-gray

    std::vector<double> db(count);
    const double max_db = 20.0 * std::log10(max_mag);
    const double floor_db = max_db + db_floor;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < count; ++i) {
        double d = spec.mags[i] > 0.0 ? 20.0 * std::log10(spec.mags[i])
                                      : floor_db;
        d = std::max(d, floor_db);
        db[i] = d;
        lo = std::min(lo, d);
        hi = std::max(hi, d);
    }
    if (hi - lo <= 0.0) {
        return img;  // constant spectrogram: keep mid-gray
    }
    const double scale = 1.0 / (hi - lo);

    // Bilinear resample from n_frames x n_bins to 64 x 64 with edge clamp.
    for (int r = 0; r < kImageSize; ++r) {
        const double ft = spec.n_frames > 1
                              ? static_cast<double>(r) * (spec.n_frames - 1) /
                                    (kImageSize - 1)
                              : 0.0;
        const int t0 = static_cast<int>(ft);
        const int t1 = std::min(t0 + 1, spec.n_frames - 1);
        const double wt = ft - t0;
        for (int col = 0; col < kImageSize; ++col) {
            const double fb = spec.n_bins > 1
                                  ? static_cast<double>(col) *
                                        (spec.n_bins - 1) / (kImageSize - 1)
                                  : 0.0;
            const int b0 = static_cast<int>(fb);
            const int b1 = std::min(b0 + 1, spec.n_bins - 1);
            const double wb = fb - b0;
            const double v =
                (1.0 - wt) * ((1.0 - wb) * db[t0 * spec.n_bins + b0] +
                              wb * db[t0 * spec.n_bins + b1]) +
                wt * ((1.0 - wb) * db[t1 * spec.n_bins + b0] +
                      wb * db[t1 * spec.n_bins + b1]);
            img.pixels[r * kImageSize + col] =
                static_cast<float>(std::clamp((v - lo) * scale, 0.0, 1.0));
        }
    }
    return img;
}

PitchTrack estimate_f0(const AudioClip& clip, double band_low_hz,
                       double band_high_hz, int frame_len, int hop) {
    const int rate = clip.sample_rate;
    if (!(band_low_hz > 0.0 && band_low_hz < band_high_hz &&
          band_high_hz < rate / 2.0))
        throw InvalidArgument("estimate_f0: need 0 < low < high < rate/2");

    PitchTrack track;
    const std::size_t n = clip.samples.size();
    if (n < static_cast<std::size_t>(frame_len)) return track;

    const int lag_min = std::max(1, static_cast<int>(rate / band_high_hz));
    const int lag_max = std::min(frame_len - 1,
                                 static_cast<int>(std::ceil(rate / band_low_hz)));
    if (lag_min >= lag_max)
        throw InvalidArgument("estimate_f0: frame too short for the band");

    for (std::size_t start = 0; start + frame_len <= n; start += hop) {
        const double* x = clip.samples.data() + start;
        PitchFrame pf;
        pf.time_s = static_cast<double>(start) / rate;

        double best_r = 0.0;
        int best_lag = 0;
        std::vector<double> corr(lag_max + 1, 0.0);
        for (int lag = lag_min; lag <= lag_max; ++lag) {
            const int m = frame_len - lag;
            double num = 0.0, e0 = 0.0, e1 = 0.0;
            for (int i = 0; i < m; ++i) {
                num += x[i] * x[i + lag];
                e0 += x[i] * x[i];
                e1 += x[i + lag] * x[i + lag];
            }
            const double denom = std::sqrt(e0 * e1);
            const double r = denom > 0.0 ? num / denom : 0.0;
            corr[lag] = r;
            if (r > best_r) {
                best_r = r;
                best_lag = lag;
            }
        }

        pf.confidence = std::clamp(best_r, 0.0, 1.0);
        if (best_lag > 0 && pf.confidence >= kVoicingThreshold) {
            double lag = best_lag;
            if (best_lag > lag_min && best_lag < lag_max) {
                // Parabolic interpolation around the peak lag.
                const double y0 = corr[best_lag - 1];
                const double y1 = corr[best_lag];
                const double y2 = corr[best_lag + 1];
                const double denom = y0 - 2.0 * y1 + y2;
                if (std::abs(denom) > 1e-12)
                    lag += 0.5 * (y0 - y2) / denom;
            }
            pf.voiced = true;
            pf.f0_hz = rate / lag;
            // Keep the estimate inside the search band even after
            // interpolation nudges the lag.
            pf.f0_hz = std::clamp(pf.f0_hz, band_low_hz, band_high_hz);
        }
        track.push_back(pf);
    }
    return track;
}

LpcResult lpc_coeffs(std::span<const double> frame, int order) {
    if (order <= 0 || order >= static_cast<int>(frame.size()))
        throw InvalidArgument("lpc_coeffs: need 0 < order < frame length");

    std::vector<double> r(order + 1, 0.0);
    for (int lag = 0; lag <= order; ++lag) {
        double acc = 0.0;
        for (std::size_t i = lag; i < frame.size(); ++i)
            acc += frame[i] * frame[i - lag];
        if (!std::isfinite(acc))
            throw DegenerateFrame("lpc_coeffs: non-finite autocorrelation");
        r[lag] = acc;
    }
    if (r[0] <= 0.0)
        throw DegenerateFrame("lpc_coeffs: zero-energy frame");

    // Levinson-Durbin recursion.
    LpcResult res;
    res.coeffs.assign(order, 0.0);
    res.reflection.assign(order, 0.0);
    std::vector<double> prev(order, 0.0);
    double err = r[0];
    for (int i = 0; i < order; ++i) {
        double acc = r[i + 1];
        for (int j = 0; j < i; ++j) acc -= prev[j] * r[i - j];
        const double k = err > 0.0 ? acc / err : 0.0;
        res.reflection[i] = k;
        res.coeffs[i] = k;
        for (int j = 0; j < i; ++j)
            res.coeffs[j] = prev[j] - k * prev[i - 1 - j];
        err *= (1.0 - k * k);
        std::copy(res.coeffs.begin(), res.coeffs.begin() + i + 1,
                  prev.begin());
    }
    res.gain = std::max(err, 0.0);
    return res;
}

FormantTrack estimate_formants(const AudioClip& clip, int order, int frame_len,
                               int hop) {
    const int rate = clip.sample_rate;
    if (order <= 0) order = rate / 1000 + 2;
    if (frame_len <= order)
        throw InvalidArgument("estimate_formants: frame shorter than order");

    FormantTrack track;
    const std::size_t n = clip.samples.size();
    if (n < static_cast<std::size_t>(frame_len)) return track;

    double peak = 0.0;
    for (double x : clip.samples) peak = std::max(peak, std::abs(x));
    const double energy_floor =
        peak * std::pow(10.0, kFormantEnergyFloorDb / 20.0);

    // Pre-emphasis flattens the excitation tilt before the all-pole fit.
    std::vector<double> emphasized(n);
    emphasized[0] = clip.samples[0];
    for (std::size_t i = 1; i < n; ++i)
        emphasized[i] = clip.samples[i] - 0.97 * clip.samples[i - 1];

    const std::vector<double> window = hamming_window(frame_len);
    std::vector<double> frame(frame_len);

    for (std::size_t start = 0; start + frame_len <= n; start += hop) {
        FormantFrame ff;
        ff.time_s = static_cast<double>(start) / rate;

        double rms = 0.0;
        for (int i = 0; i < frame_len; ++i) {
            const double s = clip.samples[start + i];
            rms += s * s;
        }
        rms = std::sqrt(rms / frame_len);
        if (peak <= 0.0 || rms < energy_floor) {
            track.push_back(ff);
            continue;
        }

        for (int i = 0; i < frame_len; ++i)
            frame[i] = emphasized[start + i] * window[i];

        LpcResult lpc;
        try {
            lpc = lpc_coeffs(frame, order);
        } catch (const DegenerateFrame&) {
            track.push_back(ff);
            continue;
        }

        // A(z) = 1 - sum a_i z^-i; roots of z^p - a_1 z^(p-1) - ... - a_p.
        std::vector<double> monic(order);
        for (int i = 0; i < order; ++i) monic[i] = -lpc.coeffs[i];
        const auto roots = polynomial_roots(monic);

        std::vector<double> freqs;
        for (const auto& z : roots) {
            const double radius = std::abs(z);
            const double angle = std::arg(z);
            if (radius <= 0.9 || angle <= 0.0 || angle >= kPi) continue;
            freqs.push_back(angle * rate / (2.0 * kPi));
        }
        std::sort(freqs.begin(), freqs.end());
        if (freqs.size() >= 2) {
            ff.f1_hz = freqs[0];
            ff.f2_hz = freqs[1];
            ff.valid = true;
        }
        track.push_back(ff);
    }
    return track;
}

ScatterStats scatter_stats(
    const std::vector<std::pair<std::string, FormantTrack>>& tracks) {
    ScatterStats stats;
    auto group_of = [&](const std::string& label) -> GroupStats& {
        for (auto& g : stats)
            if (g.label == label) return g;
        stats.push_back(GroupStats{label});
        return stats.back();
    };

    for (const auto& [label, track] : tracks) {
        GroupStats& g = group_of(label);
        for (const auto& f : track)
            if (f.valid) g.points.emplace_back(f.f1_hz, f.f2_hz);
    }

    for (auto& g : stats) {
        g.n = static_cast<int>(g.points.size());
        if (g.n == 0)
            throw EmptyGroup("scatter_stats: group '" + g.label +
                             "' has no valid frames");
        double s1 = 0.0, s2 = 0.0;
        for (const auto& [f1, f2] : g.points) {
            s1 += f1;
            s2 += f2;
        }
        g.f1_mean = s1 / g.n;
        g.f2_mean = s2 / g.n;
        double v1 = 0.0, v2 = 0.0;
        for (const auto& [f1, f2] : g.points) {
            v1 += (f1 - g.f1_mean) * (f1 - g.f1_mean);
            v2 += (f2 - g.f2_mean) * (f2 - g.f2_mean);
        }
        g.f1_sd = std::sqrt(v1 / g.n);
        g.f2_sd = std::sqrt(v2 / g.n);
    }
    return stats;
}

void write_pgm(const SpectrogramImage& image,
               const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "P5\n" << kImageSize << " " << kImageSize << "\n255\n";
    for (float p : image.pixels) {
        const int v = std::clamp(static_cast<int>(std::lround(p * 255.0f)),
                                 0, 255);
        out.put(static_cast<char>(v));
    }
    if (!out) throw IoError("write failed for " + path.string());
}

void write_image_bin(const SpectrogramImage& image,
                     const std::filesystem::path& path) {
    if (image.pixels.size() != kImageSize * kImageSize)
        throw InvalidArgument("write_image_bin: bad pixel count");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    static_assert(sizeof(float) == 4);
    out.write(reinterpret_cast<const char*>(image.pixels.data()),
              static_cast<std::streamsize>(image.pixels.size() * 4));
    if (!out) throw IoError("write failed for " + path.string());
}

SpectrogramImage read_image_bin(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    SpectrogramImage img;
    img.pixels.resize(kImageSize * kImageSize);
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size() * 4));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size() * 4))
        throw IoError("short read on " + path.string());
    return img;
}

void write_pitch_csv(const PitchTrack& track,
                     const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "time_s,f0_hz,confidence\n";
    for (const auto& f : track) {
        out << fmt_g17(f.time_s) << ',';
        if (f.voiced) out << fmt_g17(f.f0_hz);
        out << ',' << fmt_g17(f.confidence) << '\n';
    }
}

void write_formant_csv(const FormantTrack& track,
                       const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "time_s,f1_hz,f2_hz,valid\n";
    for (const auto& f : track) {
        out << fmt_g17(f.time_s) << ',';
        if (f.valid) out << fmt_g17(f.f1_hz);
        out << ',';
        if (f.valid) out << fmt_g17(f.f2_hz);
        out << ',' << (f.valid ? 1 : 0) << '\n';
    }
}

void write_scatter_csv(const ScatterStats& stats,
                       const std::filesystem::path& stats_path,
                       const std::filesystem::path& points_path) {
    std::ofstream out(stats_path);
    if (!out) throw IoError("cannot write " + stats_path.string());
    out << "group,n,f1_mean,f1_sd,f2_mean,f2_sd\n";
    for (const auto& g : stats)
        out << g.label << ',' << g.n << ',' << fmt_g17(g.f1_mean) << ','
            << fmt_g17(g.f1_sd) << ',' << fmt_g17(g.f2_mean) << ','
            << fmt_g17(g.f2_sd) << '\n';

    std::ofstream pts(points_path);
    if (!pts) throw IoError("cannot write " + points_path.string());
    pts << "group,f1_hz,f2_hz\n";
    for (const auto& g : stats)
        for (const auto& [f1, f2] : g.points)
            pts << g.label << ',' << fmt_g17(f1) << ',' << fmt_g17(f2) << '\n';
}

}  // namespace crykit
