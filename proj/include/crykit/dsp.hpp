#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "crykit/audio_io.hpp"

namespace crykit {

/// STFT analysis parameters (Hann window).
struct StftParams {
    int window_len = 512;
    int hop = 256;
    int fft_len = 512;  // >= window_len; frame is zero-padded up to this
};

/// Time-frequency magnitude matrix, row-major [n_frames x n_bins],
/// n_bins = fft_len/2 + 1.
struct Spectrogram {
    std::vector<double> mags;
    int n_frames = 0;
    int n_bins = 0;
    StftParams params;
    int sample_rate = 0;

    double at(int frame, int bin) const { return mags[frame * n_bins + bin]; }
    double& at(int frame, int bin) { return mags[frame * n_bins + bin]; }
};

inline constexpr int kImageSize = 64;

/// 64x64 intensity rendering fed to the classifier. Row = time,
/// column = frequency, values in [0, 1].
struct SpectrogramImage {
    std::vector<float> pixels;  // kImageSize * kImageSize, row-major

    float at(int row, int col) const { return pixels[row * kImageSize + col]; }
};

struct PitchFrame {
    double time_s = 0.0;
    double f0_hz = 0.0;  // meaningful only when voiced
    bool voiced = false;
    double confidence = 0.0;  // normalized autocorrelation peak, [0, 1]
};
using PitchTrack = std::vector<PitchFrame>;

struct FormantFrame {
    double time_s = 0.0;
    double f1_hz = 0.0;
    double f2_hz = 0.0;
    bool valid = false;
};
using FormantTrack = std::vector<FormantFrame>;

struct GroupStats {
    std::string label;
    int n = 0;  // valid frames
    double f1_mean = 0.0, f1_sd = 0.0;
    double f2_mean = 0.0, f2_sd = 0.0;
    std::vector<std::pair<double, double>> points;  // raw (F1, F2)
};
using ScatterStats = std::vector<GroupStats>;

struct LpcResult {
    std::vector<double> coeffs;      // a_1..a_p: x[n] ~ sum a_i x[n-i]
    std::vector<double> reflection;  // k_1..k_p, |k| < 1 for stable fits
    double gain = 0.0;               // residual energy, >= 0
};

// Short-time Fourier transform. Frames are hop-spaced from sample 0;
// the last partial frame is zero-padded. Throws ClipTooShort when the
// clip is shorter than one window.
Spectrogram stft(const AudioClip& clip, const StftParams& params = {});

// Magnitudes -> dB (clamped db_floor below max) -> min-max normalized
// -> bilinear 64x64. A constant spectrogram renders mid-gray.
SpectrogramImage render_image(const Spectrogram& spec, double db_floor = -80.0);

// Autocorrelation pitch tracker over the given search band (Hz).
// A frame is voiced when the normalized autocorrelation peak reaches 0.5.
PitchTrack estimate_f0(const AudioClip& clip, double band_low_hz = 250.0,
                       double band_high_hz = 700.0, int frame_len = 512,
                       int hop = 256);

// Levinson-Durbin solution of the autocorrelation normal equations.
// Throws DegenerateFrame for all-zero or non-finite input.
LpcResult lpc_coeffs(std::span<const double> frame, int order);

// LPC root formant tracker: pre-emphasis 0.97, order defaults to
// sample_rate/1000 + 2, roots kept when radius > 0.9 and the angle maps
// into (0, Nyquist). First two surviving frequencies are (F1, F2).
FormantTrack estimate_formants(const AudioClip& clip, int order = 0,
                               int frame_len = 512, int hop = 256);

// Per-group mean/sd of F1 and F2 over valid frames, plus the raw points.
// Throws EmptyGroup when a group has no valid frame.
ScatterStats scatter_stats(
    const std::vector<std::pair<std::string, FormantTrack>>& tracks);

// --- serialization ---

void write_pgm(const SpectrogramImage& image, const std::filesystem::path&);
// Flat little-endian float32 dump (4096 values) used by the image cache.
void write_image_bin(const SpectrogramImage&, const std::filesystem::path&);
SpectrogramImage read_image_bin(const std::filesystem::path&);

void write_pitch_csv(const PitchTrack&, const std::filesystem::path&);
void write_formant_csv(const FormantTrack&, const std::filesystem::path&);
void write_scatter_csv(const ScatterStats&, const std::filesystem::path& stats,
                       const std::filesystem::path& points);

}  // namespace crykit
