#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace echorange::audio {

// Canonical project sample rate. Synthetic scenes are rendered at this rate
// and the feature pipeline refuses anything else.
inline constexpr int kCanonicalSampleRate = 24000;

enum class WavEncoding { pcm16, pcm24, float32 };

// Multichannel sample buffer, float32 storage interleaved by frame,
// nominal range [-1, 1]. Immutable by convention once built: everything
// downstream shares clips read-only.
class AudioClip {
public:
    AudioClip() = default;
    AudioClip(int channels, std::size_t frames, int sample_rate);

    static AudioClip silence(int channels, std::size_t frames, int sample_rate) {
        return AudioClip(channels, frames, sample_rate);
    }

    int channels() const { return channels_; }
    std::size_t frames() const { return frames_; }
    int sample_rate() const { return sample_rate_; }

    float& at(std::size_t frame, int channel) { return samples_[frame * channels_ + channel]; }
    float at(std::size_t frame, int channel) const { return samples_[frame * channels_ + channel]; }

    const std::vector<float>& samples() const { return samples_; }
    std::vector<float>& samples() { return samples_; }

    // One channel as a contiguous buffer (copies; the clip stores interleaved).
    std::vector<double> channel(int c) const;

    // Throws DomainError on NaN/Inf samples or invalid geometry.
    void validate() const;

private:
    int channels_ = 0;
    std::size_t frames_ = 0;
    int sample_rate_ = 0;
    std::vector<float> samples_;  // frames * channels, frame-interleaved
};

// RIFF/WAVE, little-endian, fmt codes 1 (PCM 16/24 bit) and 3 (IEEE float32).
AudioClip read_wav(const std::filesystem::path& path);
void write_wav(const AudioClip& clip, const std::filesystem::path& path, WavEncoding encoding);

// out[t] = a[t] + gain*b[t - offset]; output length max(len(a), offset + len(b)).
// Accumulates in 64-bit. Rates and channel counts must match.
AudioClip mix(const AudioClip& a, const AudioClip& b, std::size_t offset, double gain);

}  // namespace echorange::audio
