#include "crykit/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "crykit/errors.hpp"

namespace crykit {

namespace {

constexpr std::uint16_t kFormatPcm = 0x0001;
constexpr std::uint16_t kFormatIeeeFloat = 0x0003;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t read_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t read_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) |
           (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) |
           (static_cast<std::uint32_t>(p[3]) << 24);
}

void write_u16(std::ofstream& out, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 2);
}

void write_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

double decode_sample(const unsigned char* p, int bits, std::uint16_t format) {
    if (format == kFormatIeeeFloat) {
        float f;
        std::memcpy(&f, p, 4);
        return std::clamp(static_cast<double>(f), -1.0, 1.0);
    }
    switch (bits) {
        case 8:
            // 8-bit WAV is unsigned.
            return (static_cast<int>(p[0]) - 128) / 128.0;
        case 16: {
            std::int16_t s;
            std::memcpy(&s, p, 2);
            return s / 32768.0;
        }
        case 24: {
            std::int32_t s = (static_cast<std::int32_t>(p[0]) << 8) |
                             (static_cast<std::int32_t>(p[1]) << 16) |
                             (static_cast<std::int32_t>(p[2]) << 24);
            return (s >> 8) / 8388608.0;
        }
        default:
            throw UnsupportedEncoding("unsupported bit depth " +
                                      std::to_string(bits));
    }
}

}  // namespace

AudioClip load_wav(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());

    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw MalformedWav(path.string() + ": not a RIFF/WAVE file");
    }

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    bool have_fmt = false;
    const unsigned char* data = nullptr;
    std::size_t data_len = 0;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const unsigned char* hdr = bytes.data() + pos;
        std::uint32_t chunk_len = read_u32(hdr + 4);
        pos += 8;
        if (std::memcmp(hdr, "fmt ", 4) == 0) {
            if (chunk_len < 16 || pos + 16 > bytes.size())
                throw MalformedWav(path.string() + ": truncated fmt chunk");
            const unsigned char* f = bytes.data() + pos;
            format = read_u16(f);
            channels = read_u16(f + 2);
            rate = read_u32(f + 4);
            bits = read_u16(f + 14);
            if (format == kFormatExtensible) {
                // Sub-format GUID starts with the real format tag.
                if (chunk_len < 40 || pos + 40 > bytes.size())
                    throw MalformedWav(path.string() +
                                       ": truncated extensible fmt chunk");
                format = read_u16(f + 24);
            }
            have_fmt = true;
        } else if (std::memcmp(hdr, "data", 4) == 0) {
            if (pos + chunk_len > bytes.size())
                throw MalformedWav(path.string() + ": truncated data chunk");
            data = bytes.data() + pos;
            data_len = chunk_len;
        }
        pos += chunk_len + (chunk_len & 1);  // chunks are 2-byte aligned
    }

    if (!have_fmt) throw MalformedWav(path.string() + ": missing fmt chunk");
    if (data == nullptr)
        throw MalformedWav(path.string() + ": missing data chunk");
    if (format != kFormatPcm && format != kFormatIeeeFloat)
        throw UnsupportedEncoding(path.string() + ": format tag " +
                                  std::to_string(format));
    if (format == kFormatIeeeFloat && bits != 32)
        throw UnsupportedEncoding(path.string() + ": " +
                                  std::to_string(bits) + "-bit float");
    if (channels != 1 && channels != 2)
        throw UnsupportedEncoding(path.string() + ": " +
                                  std::to_string(channels) + " channels");
    if (rate == 0) throw MalformedWav(path.string() + ": zero sample rate");
    if (bits != 8 && bits != 16 && bits != 24 && bits != 32)
        throw UnsupportedEncoding(path.string() + ": " +
                                  std::to_string(bits) + "-bit samples");

    const std::size_t bytes_per_sample = bits / 8;
    const std::size_t frame_size = bytes_per_sample * channels;
    if (frame_size == 0 || data_len % frame_size != 0)
        throw MalformedWav(path.string() + ": data chunk not frame-aligned");

    const std::size_t n_frames = data_len / frame_size;
    AudioClip clip;
    clip.sample_rate = static_cast<int>(rate);
    clip.samples.resize(n_frames);
    for (std::size_t i = 0; i < n_frames; ++i) {
        const unsigned char* fr = data + i * frame_size;
        double acc = 0.0;
        for (int c = 0; c < channels; ++c)
            acc += decode_sample(fr + c * bytes_per_sample, bits, format);
        clip.samples[i] = acc / channels;
    }
    return clip;
}

void save_wav(const AudioClip& clip, const std::filesystem::path& path) {
    if (clip.sample_rate <= 0)
        throw InvalidArgument("save_wav: nonpositive sample rate");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());

    const std::uint32_t n = static_cast<std::uint32_t>(clip.samples.size());
    const std::uint32_t data_len = n * 2;
    out.write("RIFF", 4);
    write_u32(out, 36 + data_len);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    write_u32(out, 16);
    write_u16(out, kFormatPcm);
    write_u16(out, 1);  // mono
    write_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
    write_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * 2);
    write_u16(out, 2);   // block align
    write_u16(out, 16);  // bits
    out.write("data", 4);
    write_u32(out, data_len);
    for (double x : clip.samples) {
        long q = std::lround(std::clamp(x, -1.0, 1.0) * 32768.0);
        std::int16_t s =
            static_cast<std::int16_t>(std::clamp<long>(q, -32768, 32767));
        unsigned char b[2] = {
            static_cast<unsigned char>(s & 0xff),
            static_cast<unsigned char>((static_cast<std::uint16_t>(s) >> 8) &
                                       0xff)};
        out.write(reinterpret_cast<const char*>(b), 2);
    }
    if (!out) throw IoError("write failed for " + path.string());
}

AudioClip resample(const AudioClip& clip, int target_rate) {
    if (target_rate <= 0)
        throw InvalidArgument("resample: nonpositive target rate");
    if (clip.sample_rate == target_rate || clip.samples.empty()) {
        AudioClip out = clip;
        out.sample_rate = target_rate;
        return out;
    }

    const double ratio =
        static_cast<double>(target_rate) / clip.sample_rate;
    const std::size_t out_len = static_cast<std::size_t>(
        std::llround(static_cast<double>(clip.samples.size()) * ratio));

    // Cutoff at the narrower Nyquist; widen the kernel accordingly when
    // downsampling so the transition band stays proportional.
    const double cutoff = std::min(1.0, ratio);
    const int zero_crossings = 16;
    const double half_width = zero_crossings / cutoff;

    AudioClip out;
    out.sample_rate = target_rate;
    out.samples.resize(out_len);

    const auto& x = clip.samples;
    const std::ptrdiff_t n_in = static_cast<std::ptrdiff_t>(x.size());
    for (std::size_t n = 0; n < out_len; ++n) {
        const double t = n / ratio;  // position in input samples
        const std::ptrdiff_t k0 = static_cast<std::ptrdiff_t>(
            std::ceil(t - half_width));
        const std::ptrdiff_t k1 = static_cast<std::ptrdiff_t>(
            std::floor(t + half_width));
        double acc = 0.0;
        for (std::ptrdiff_t k = std::max<std::ptrdiff_t>(0, k0);
             k <= std::min(n_in - 1, k1); ++k) {
            const double d = t - k;
            double s;
            if (std::abs(d) < 1e-12) {
                s = cutoff;
            } else {
                const double a = 3.14159265358979323846 * cutoff * d;
                s = cutoff * std::sin(a) / a;
            }
            // Hann-windowed sinc.
            const double w =
                0.5 + 0.5 * std::cos(3.14159265358979323846 * d / half_width);
            acc += x[k] * s * w;
        }
        out.samples[n] = std::clamp(acc, -1.0, 1.0);
    }
    return out;
}

std::vector<double> frame_rms(const AudioClip& clip, int frame_len, int hop) {
    std::vector<double> rms;
    if (clip.samples.empty() || frame_len <= 0 || hop <= 0) return rms;
    const std::size_t n = clip.samples.size();
    for (std::size_t start = 0; start < n; start += hop) {
        const std::size_t end = std::min(n, start + frame_len);
        double acc = 0.0;
        for (std::size_t i = start; i < end; ++i)
            acc += clip.samples[i] * clip.samples[i];
        rms.push_back(std::sqrt(acc / static_cast<double>(end - start)));
    }
    return rms;
}

std::vector<AudioClip> segment_clip(const AudioClip& clip,
                                    const SegmentSpec& spec) {
    if (clip.samples.empty())
        throw InvalidArgument("segment_clip: empty clip");
    if (!(spec.min_len_s > 0.0 && spec.min_len_s < spec.max_len_s))
        throw InvalidArgument("segment_clip: need 0 < min_len_s < max_len_s");
    if (!(spec.silence_db_floor < 0.0))
        throw InvalidArgument("segment_clip: silence_db_floor must be < 0");

    const int rate = clip.sample_rate;
    const int frame_len = std::max(1, rate / 50);  // 20 ms
    const int hop = std::max(1, rate / 100);       // 10 ms

    const double peak = [&] {
        double p = 0.0;
        for (double x : clip.samples) p = std::max(p, std::abs(x));
        return p;
    }();
    std::vector<AudioClip> segments;
    if (peak == 0.0) return segments;

    const double threshold =
        peak * std::pow(10.0, spec.silence_db_floor / 20.0);
    const std::vector<double> rms = frame_rms(clip, frame_len, hop);
    std::vector<bool> active(rms.size());
    for (std::size_t i = 0; i < rms.size(); ++i)
        active[i] = rms[i] >= threshold;

    // Silent gaps shorter than min_silence_s do not split a region.
    const std::size_t min_silence_frames = static_cast<std::size_t>(
        std::ceil(spec.min_silence_s * rate / hop));
    std::size_t i = 0;
    while (i < active.size()) {
        if (!active[i]) {
            std::size_t j = i;
            while (j < active.size() && !active[j]) ++j;
            const bool interior = i > 0 && j < active.size();
            if (interior && j - i < min_silence_frames)
                for (std::size_t k = i; k < j; ++k) active[k] = true;
            i = j;
        } else {
            ++i;
        }
    }

    // Collect active runs as sample ranges, then enforce length bounds.
    const std::size_t n = clip.samples.size();
    const std::size_t min_len =
        static_cast<std::size_t>(std::llround(spec.min_len_s * rate));
    const std::size_t max_len =
        static_cast<std::size_t>(std::llround(spec.max_len_s * rate));
    i = 0;
    while (i < active.size()) {
        if (!active[i]) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < active.size() && active[j]) ++j;
        std::size_t begin = i * static_cast<std::size_t>(hop);
        std::size_t end = std::min(
            n, (j - 1) * static_cast<std::size_t>(hop) + frame_len);
        while (begin < end) {
            const std::size_t len = std::min(max_len, end - begin);
            if (len >= min_len) {
                AudioClip seg;
                seg.sample_rate = rate;
                seg.samples.assign(clip.samples.begin() + begin,
                                   clip.samples.begin() + begin + len);
                segments.push_back(std::move(seg));
            }
            begin += len;
        }
        i = j;
    }
    return segments;
}

}  // namespace crykit
