#pragma once

#include <filesystem>
#include <vector>

namespace crykit {

// Canonical internal rate for the whole pipeline. Cry energy of interest
// sits below 8 kHz, so everything is resampled to this on ingest.
inline constexpr int kCanonicalRate = 16000;

/// Mono waveform, samples in [-1, 1].
struct AudioClip {
    std::vector<double> samples;
    int sample_rate = kCanonicalRate;

    double duration_s() const {
        return sample_rate > 0
                   ? static_cast<double>(samples.size()) / sample_rate
                   : 0.0;
    }
};

/// Parameters for energy-based segmentation. Defaults follow the 1-7 s
/// clip lengths the corpus uses; the thresholds are tunable per corpus.
struct SegmentSpec {
    double min_len_s = 1.0;
    double max_len_s = 7.0;
    double silence_db_floor = -40.0;  // dB relative to clip peak, < 0
    double min_silence_s = 0.2;
};

// Reads a linear-PCM RIFF/WAVE file (8/16/24-bit int or 32-bit float,
// 1 or 2 channels). Stereo is averaged to mono; samples are scaled to
// [-1, 1]. Throws MalformedWav / UnsupportedEncoding.
AudioClip load_wav(const std::filesystem::path& path);

// Writes 16-bit PCM mono at the clip's sample rate.
void save_wav(const AudioClip& clip, const std::filesystem::path& path);

// Band-limited (windowed-sinc) resampling. Output duration matches the
// input within one output sample period.
AudioClip resample(const AudioClip& clip, int target_rate);

// Splits a recording into energy-active segments bounded by silence.
// Active regions longer than max_len_s are cut at max_len_s boundaries;
// regions shorter than min_len_s are dropped.
std::vector<AudioClip> segment_clip(const AudioClip& clip,
                                    const SegmentSpec& spec);

// Frame RMS track used by segmentation; exposed for tests and tools.
// Returns one RMS value per hop-spaced frame.
std::vector<double> frame_rms(const AudioClip& clip, int frame_len, int hop);

}  // namespace crykit
