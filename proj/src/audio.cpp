#include "echorange/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "echorange/errors.hpp"

namespace echorange::audio {

AudioClip::AudioClip(int channels, std::size_t frames, int sample_rate)
    : channels_(channels), frames_(frames), sample_rate_(sample_rate),
      samples_(frames * static_cast<std::size_t>(channels), 0.0f) {
    if (channels < 1) throw DomainError("AudioClip: channels must be >= 1");
    if (sample_rate <= 0) throw DomainError("AudioClip: sample_rate must be > 0");
}

std::vector<double> AudioClip::channel(int c) const {
    std::vector<double> out(frames_);
    for (std::size_t t = 0; t < frames_; ++t) out[t] = samples_[t * channels_ + c];
    return out;
}

void AudioClip::validate() const {
    if (channels_ < 1) throw DomainError("AudioClip: channels must be >= 1");
    if (sample_rate_ <= 0) throw DomainError("AudioClip: sample_rate must be > 0");
    for (float v : samples_)
        if (!std::isfinite(v)) throw DomainError("AudioClip: non-finite sample");
}

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;

void write_le(std::ofstream& out, std::uint32_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t read_le(const unsigned char* p, int bytes) {
    std::uint32_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

float clamp_unit(float v) { return std::min(1.0f, std::max(-1.0f, v)); }

}  // namespace

AudioClip read_wav(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_wav: cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw FormatError("read_wav: not a RIFF/WAVE file: " + path.string());

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t sample_rate = 0;
    bool have_fmt = false;
    const unsigned char* data = nullptr;
    std::uint32_t data_len = 0;
    bool have_data = false;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const char* tag = reinterpret_cast<const char*>(bytes.data() + pos);
        const std::uint32_t len = read_le(bytes.data() + pos + 4, 4);
        const std::size_t body = pos + 8;
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            if (len < 16 || body + 16 > bytes.size())
                throw FormatError("read_wav: malformed fmt chunk");
            format = static_cast<std::uint16_t>(read_le(bytes.data() + body, 2));
            channels = static_cast<std::uint16_t>(read_le(bytes.data() + body + 2, 2));
            sample_rate = read_le(bytes.data() + body + 4, 4);
            bits = static_cast<std::uint16_t>(read_le(bytes.data() + body + 14, 2));
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            if (body + len > bytes.size())
                throw CorruptFileError("read_wav: truncated data chunk in " + path.string());
            data = bytes.data() + body;
            data_len = len;
            have_data = true;
        }
        pos = body + len + (len & 1);  // chunks are word-aligned
    }

    if (!have_fmt || !have_data) throw FormatError("read_wav: missing fmt or data chunk");
    if (channels < 1 || sample_rate == 0) throw FormatError("read_wav: invalid fmt fields");

    int bytes_per_sample = 0;
    if (format == kFormatPcm && bits == 16) bytes_per_sample = 2;
    else if (format == kFormatPcm && bits == 24) bytes_per_sample = 3;
    else if (format == kFormatFloat && bits == 32) bytes_per_sample = 4;
    else
        throw UnsupportedError("read_wav: unsupported encoding (format " + std::to_string(format) +
                               ", " + std::to_string(bits) + " bit)");

    const std::size_t frame_bytes = static_cast<std::size_t>(bytes_per_sample) * channels;
    if (data_len % frame_bytes != 0)
        throw CorruptFileError("read_wav: data chunk not a whole number of frames");
    const std::size_t frames = data_len / frame_bytes;

    AudioClip clip(channels, frames, static_cast<int>(sample_rate));
    const unsigned char* p = data;
    for (std::size_t i = 0; i < frames * channels; ++i, p += bytes_per_sample) {
        float v = 0.0f;
        if (bytes_per_sample == 2) {
            const auto raw = static_cast<std::int16_t>(read_le(p, 2));
            v = static_cast<float>(raw) / 32768.0f;
        } else if (bytes_per_sample == 3) {
            std::int32_t raw = static_cast<std::int32_t>(read_le(p, 3) << 8) >> 8;  // sign extend
            v = static_cast<float>(raw) / 8388608.0f;
        } else {
            std::uint32_t raw = read_le(p, 4);
            std::memcpy(&v, &raw, 4);
        }
        clip.samples()[i] = v;
    }
    return clip;
}

void write_wav(const AudioClip& clip, const std::filesystem::path& path, WavEncoding encoding) {
    clip.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_wav: cannot open " + path.string());

    int bits = 0;
    std::uint16_t format = kFormatPcm;
    switch (encoding) {
        case WavEncoding::pcm16: bits = 16; break;
        case WavEncoding::pcm24: bits = 24; break;
        case WavEncoding::float32: bits = 32; format = kFormatFloat; break;
    }
    const std::uint16_t channels = static_cast<std::uint16_t>(clip.channels());
    const std::uint32_t bytes_per_sample = bits / 8;
    const std::uint32_t data_len =
        static_cast<std::uint32_t>(clip.frames() * channels * bytes_per_sample);

    out.write("RIFF", 4);
    write_le(out, 36 + data_len, 4);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    write_le(out, 16, 4);
    write_le(out, format, 2);
    write_le(out, channels, 2);
    write_le(out, static_cast<std::uint32_t>(clip.sample_rate()), 4);
    write_le(out, static_cast<std::uint32_t>(clip.sample_rate()) * channels * bytes_per_sample, 4);
    write_le(out, channels * bytes_per_sample, 2);
    write_le(out, static_cast<std::uint32_t>(bits), 2);
    out.write("data", 4);
    write_le(out, data_len, 4);

    for (float s : clip.samples()) {
        if (encoding == WavEncoding::float32) {
            std::uint32_t raw;
            std::memcpy(&raw, &s, 4);
            write_le(out, raw, 4);
        } else if (encoding == WavEncoding::pcm16) {
            const double v = clamp_unit(s);
            auto q = static_cast<std::int32_t>(std::lrint(v * 32768.0));
            q = std::min(q, 32767);
            write_le(out, static_cast<std::uint32_t>(static_cast<std::uint16_t>(q)), 2);
        } else {
            const double v = clamp_unit(s);
            auto q = static_cast<std::int32_t>(std::lrint(v * 8388608.0));
            q = std::min(q, 8388607);
            write_le(out, static_cast<std::uint32_t>(q) & 0xFFFFFF, 3);
        }
    }
    if (!out) throw IoError("write_wav: write failed for " + path.string());
}

AudioClip mix(const AudioClip& a, const AudioClip& b, std::size_t offset, double gain) {
    if (a.sample_rate() != b.sample_rate())
        throw ShapeError("mix: sample rate mismatch");
    if (a.channels() != b.channels())
        throw ShapeError("mix: channel count mismatch");

    const std::size_t out_frames = std::max(a.frames(), offset + b.frames());
    AudioClip out(a.channels(), out_frames, a.sample_rate());
    const int ch = a.channels();
    for (std::size_t t = 0; t < out_frames; ++t) {
        for (int c = 0; c < ch; ++c) {
            double acc = 0.0;
            if (t < a.frames()) acc += a.at(t, c);
            if (t >= offset && t - offset < b.frames()) acc += gain * b.at(t - offset, c);
            out.at(t, c) = static_cast<float>(acc);
        }
    }
    return out;
}

}  // namespace echorange::audio
