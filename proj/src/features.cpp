#include "echorange/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "echorange/dsp.hpp"
#include "echorange/errors.hpp"

namespace echorange::feat {

Spectrogram stft(const std::vector<double>& x, int n_fft, int hop, double sample_rate) {
    if (static_cast<int>(x.size()) < n_fft)
        throw DomainError("stft: input shorter than n_fft");
    if (hop <= 0 || n_fft <= 0) throw DomainError("stft: n_fft and hop must be positive");

    const auto window = dsp::hann_window(static_cast<std::size_t>(n_fft));
    Spectrogram spec;
    spec.n_fft = n_fft;
    spec.hop = hop;
    spec.sample_rate = sample_rate;
    spec.bins = static_cast<std::size_t>(n_fft) / 2 + 1;
    spec.frames = 1 + (x.size() - static_cast<std::size_t>(n_fft)) / static_cast<std::size_t>(hop);
    spec.values.resize(spec.frames * spec.bins);

    std::vector<double> frame(static_cast<std::size_t>(n_fft));
    for (std::size_t f = 0; f < spec.frames; ++f) {
        const std::size_t start = f * static_cast<std::size_t>(hop);
        for (int n = 0; n < n_fft; ++n) frame[n] = window[n] * x[start + n];
        const auto bins = dsp::rfft(frame);
        std::copy(bins.begin(), bins.end(), spec.values.begin() + f * spec.bins);
    }
    return spec;
}

namespace {

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

}  // namespace

MelBank mel_bank(int n_mels, int n_fft, double sample_rate, double f_min, double f_max) {
    const std::size_t bins = static_cast<std::size_t>(n_fft) / 2 + 1;
    if (static_cast<std::size_t>(n_mels) >= bins)
        throw DomainError("mel_bank: n_mels must be smaller than the bin count");

    std::vector<double> edges(n_mels + 2);
    const double mel_lo = hz_to_mel(f_min);
    const double mel_hi = hz_to_mel(f_max);
    for (int i = 0; i < n_mels + 2; ++i)
        edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));

    MelBank bank;
    bank.n_mels = n_mels;
    bank.bins = bins;
    bank.weights.assign(static_cast<std::size_t>(n_mels) * bins, 0.0);
    bank.center_freqs.assign(n_mels, 0.0);
    for (int m = 0; m < n_mels; ++m) {
        const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
        bank.center_freqs[m] = mid;
        for (std::size_t k = 0; k < bins; ++k) {
            const double f = sample_rate * static_cast<double>(k) / n_fft;
            double w = 0.0;
            if (f > lo && f < hi)
                w = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
            bank.weights[static_cast<std::size_t>(m) * bins + k] = std::max(0.0, w);
        }
    }
    return bank;
}

std::vector<double> log_mel(const Spectrogram& spec, const MelBank& bank) {
    if (bank.bins != spec.bins) throw ShapeError("log_mel: filterbank/spectrogram bin mismatch");
    std::vector<double> out(spec.frames * static_cast<std::size_t>(bank.n_mels));
    std::vector<double> power(spec.bins);
    for (std::size_t f = 0; f < spec.frames; ++f) {
        for (std::size_t k = 0; k < spec.bins; ++k) {
            const auto v = spec.at(f, k);
            power[k] = v.real() * v.real() + v.imag() * v.imag();
        }
        for (int m = 0; m < bank.n_mels; ++m) {
            double acc = 0.0;
            const double* w = &bank.weights[static_cast<std::size_t>(m) * bank.bins];
            for (std::size_t k = 0; k < spec.bins; ++k) acc += w[k] * power[k];
            out[f * bank.n_mels + m] = std::log(acc + kLogMelEpsilon);
        }
    }
    return out;
}

std::vector<double> gcc_phat(const Spectrogram& spec_i, const Spectrogram& spec_j, int n_lags) {
    if (spec_i.frames != spec_j.frames || spec_i.bins != spec_j.bins ||
        spec_i.n_fft != spec_j.n_fft)
        throw ShapeError("gcc_phat: spectrogram geometry mismatch");
    const int half = n_lags / 2;
    const std::size_t n = static_cast<std::size_t>(spec_i.n_fft);

    std::vector<double> out(spec_i.frames * static_cast<std::size_t>(n_lags));
    std::vector<std::complex<double>> cross(spec_i.bins);
    for (std::size_t f = 0; f < spec_i.frames; ++f) {
        for (std::size_t k = 0; k < spec_i.bins; ++k) {
            const auto c = spec_i.at(f, k) * std::conj(spec_j.at(f, k));
            cross[k] = c / std::max(std::abs(c), kPhatEpsilon);
        }
        const auto r = dsp::irfft(cross, n);  // circular correlation, lag 0 at index 0
        for (int lag = -half; lag < half; ++lag) {
            const std::size_t idx = static_cast<std::size_t>((lag + static_cast<int>(n)) %
                                                             static_cast<int>(n));
            out[f * n_lags + (half + lag)] = r[idx];
        }
    }
    return out;
}

void StandardizationStats::save_json(const std::filesystem::path& path) const {
    nlohmann::ordered_json j;
    j["mean"] = mean;
    j["stddev"] = stddev;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("StandardizationStats: cannot write " + path.string());
    out << j.dump(2) << "\n";
}

StandardizationStats StandardizationStats::load_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("StandardizationStats: cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
        StandardizationStats s;
        for (int m = 0; m < kNumMaps; ++m) {
            s.mean[m] = j.at("mean").at(m).get<double>();
            s.stddev[m] = j.at("stddev").at(m).get<double>();
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("StandardizationStats: bad file: " + std::string(e.what()));
    }
}

FeatureTensor assemble_features(const audio::AudioClip& clip, const StandardizationStats* stats) {
    if (clip.channels() != 4) throw ShapeError("assemble_features: clip must have 4 channels");
    if (clip.sample_rate() != audio::kCanonicalSampleRate)
        throw ShapeError("assemble_features: clip not at the canonical sample rate");

    std::array<Spectrogram, 4> specs;
    for (int c = 0; c < 4; ++c)
        specs[c] = stft(clip.channel(c), kNfft, kHop, clip.sample_rate());

    static const MelBank bank =
        mel_bank(kNumMels, kNfft, audio::kCanonicalSampleRate, 0.0,
                 audio::kCanonicalSampleRate / 2.0);

    FeatureTensor feats;
    feats.frames = specs[0].frames;
    feats.bins = kNumLags;
    feats.data.resize(static_cast<std::size_t>(kNumMaps) * feats.frames * feats.bins);

    for (int c = 0; c < 4; ++c) {
        const auto lm = log_mel(specs[c], bank);
        std::copy(lm.begin(), lm.end(), feats.data.begin() + c * feats.frames * feats.bins);
    }
    for (int p = 0; p < 6; ++p) {
        const auto g = gcc_phat(specs[kGccPairs[p][0]], specs[kGccPairs[p][1]], kNumLags);
        std::copy(g.begin(), g.end(), feats.data.begin() + (4 + p) * feats.frames * feats.bins);
    }

    if (stats) {
        for (int m = 0; m < kNumMaps; ++m) {
            const double mu = stats->mean[m];
            const double inv = 1.0 / stats->stddev[m];
            double* d = &feats.data[static_cast<std::size_t>(m) * feats.frames * feats.bins];
            for (std::size_t i = 0; i < feats.frames * feats.bins; ++i) d[i] = (d[i] - mu) * inv;
        }
    }
    for (double v : feats.data)
        if (!std::isfinite(v)) throw DomainError("assemble_features: non-finite feature value");
    return feats;
}

namespace {
constexpr std::uint32_t kCacheVersion = 1;
}

void write_feature_cache(const FeatureTensor& features, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("feature cache: cannot write " + path.string());
    out.write("ERFT", 4);
    const std::uint32_t header[4] = {kCacheVersion, kNumMaps,
                                     static_cast<std::uint32_t>(features.frames),
                                     static_cast<std::uint32_t>(features.bins)};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    std::vector<float> buf(features.data.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(features.data[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!out) throw IoError("feature cache: write failed for " + path.string());
}

FeatureTensor read_feature_cache(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("feature cache: cannot open " + path.string());
    char magic[4];
    std::uint32_t header[4];
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(header), sizeof(header));
    if (!in || std::memcmp(magic, "ERFT", 4) != 0)
        throw FormatError("feature cache: bad magic in " + path.string());
    if (header[0] != kCacheVersion)
        throw UnsupportedError("feature cache: unsupported version");
    if (header[1] != kNumMaps) throw FormatError("feature cache: unexpected map count");

    FeatureTensor feats;
    feats.frames = header[2];
    feats.bins = header[3];
    std::vector<float> buf(static_cast<std::size_t>(kNumMaps) * feats.frames * feats.bins);
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw CorruptFileError("feature cache: truncated data in " + path.string());
    feats.data.assign(buf.begin(), buf.end());
    return feats;
}

}  // namespace echorange::feat
