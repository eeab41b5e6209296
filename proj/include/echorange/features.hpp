#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

#include "echorange/audio.hpp"

namespace echorange::feat {

// Front-end geometry: 20 ms hop at 24 kHz gives a 50 Hz frame rate shared by
// features, labels and model output. 64 mel bins and 64 GCC lags stack into
// one [10 x frames x 64] tensor.
inline constexpr int kNfft = 1024;
inline constexpr int kHop = 480;
inline constexpr int kNumMels = 64;
inline constexpr int kNumLags = 64;
inline constexpr int kNumMaps = 10;  // 4 log-mel + 6 GCC pairs
inline constexpr double kLogMelEpsilon = 1e-8;
inline constexpr double kPhatEpsilon = 1e-12;

// Unordered channel pairs in lexicographic order; GCC map m corresponds to
// kGccPairs[m - 4].
inline constexpr std::array<std::array<int, 2>, 6> kGccPairs = {
    {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}};

inline double feature_frame_rate(double sample_rate) { return sample_rate / kHop; }

inline std::size_t feature_frame_count(std::size_t n_samples) {
    return n_samples >= kNfft ? 1 + (n_samples - kNfft) / kHop : 0;
}

struct Spectrogram {
    int n_fft = 0;
    int hop = 0;
    double sample_rate = 0.0;
    std::size_t frames = 0;
    std::size_t bins = 0;  // n_fft/2 + 1
    std::vector<std::complex<double>> values;  // frames x bins, row-major

    std::complex<double>& at(std::size_t f, std::size_t k) { return values[f * bins + k]; }
    std::complex<double> at(std::size_t f, std::size_t k) const { return values[f * bins + k]; }
};

Spectrogram stft(const std::vector<double>& x, int n_fft, int hop, double sample_rate);

struct MelBank {
    int n_mels = 0;
    std::size_t bins = 0;
    std::vector<double> weights;       // n_mels x bins, row-major
    std::vector<double> center_freqs;  // Hz, one per filter

    double weight(int m, std::size_t k) const { return weights[static_cast<std::size_t>(m) * bins + k]; }
};

// Triangular filters equally spaced on mel(f) = 2595 log10(1 + f/700).
MelBank mel_bank(int n_mels, int n_fft, double sample_rate, double f_min, double f_max);

// ln(bank * |X|^2 + eps); frames x n_mels row-major.
std::vector<double> log_mel(const Spectrogram& spec, const MelBank& bank);

// PHAT-normalized cross-correlation in the lag domain. Output frames x n_lags
// with index n_lags/2 = lag 0; a signal in j delayed by k relative to i peaks
// at index n_lags/2 - k.
std::vector<double> gcc_phat(const Spectrogram& spec_i, const Spectrogram& spec_j, int n_lags);

// Per-map standardization statistics (computed on a training split; the floor
// keeps constant maps harmless).
struct StandardizationStats {
    std::array<double, kNumMaps> mean{};
    std::array<double, kNumMaps> stddev{};  // floored at 1e-6

    void save_json(const std::filesystem::path& path) const;
    static StandardizationStats load_json(const std::filesystem::path& path);
};

struct FeatureTensor {
    std::size_t frames = 0;
    std::size_t bins = kNumLags;  // == kNumMels == 64
    std::vector<double> data;     // kNumMaps x frames x bins, row-major

    double& at(int map, std::size_t f, std::size_t k) {
        return data[(static_cast<std::size_t>(map) * frames + f) * bins + k];
    }
    double at(int map, std::size_t f, std::size_t k) const {
        return data[(static_cast<std::size_t>(map) * frames + f) * bins + k];
    }
};

// Maps 0-3: log-mel per channel; maps 4-9: GCC-PHAT per pair (kGccPairs).
// Stats, when given, standardize each map as (v - mean) / stddev.
FeatureTensor assemble_features(const audio::AudioClip& clip,
                                const StandardizationStats* stats = nullptr);

// Binary feature cache, little-endian float32:
// header {magic "ERFT", version u32, maps u32, frames u32, bins u32} then
// row-major data. Values round-trip through float32 by design, so a cache hit
// and a fresh computation feed identical numbers downstream.
void write_feature_cache(const FeatureTensor& features, const std::filesystem::path& path);
FeatureTensor read_feature_cache(const std::filesystem::path& path);

}  // namespace echorange::feat
