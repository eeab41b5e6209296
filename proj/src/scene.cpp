#include "echorange/scene.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "echorange/dsp.hpp"
#include "echorange/errors.hpp"
#include "echorange/features.hpp"
#include "echorange/rng.hpp"

namespace echorange::scene {

void RoomSpec::validate() const {
    const double d[3] = {dims.x, dims.y, dims.z};
    for (double v : d)
        if (v < 2.0 || v > 50.0) throw DomainError("RoomSpec: dimension outside [2, 50] m");
    for (double a : wall_absorption)
        if (!(a > 0.0 && a <= 1.0)) throw DomainError("RoomSpec: absorption outside (0, 1]");
    if (max_image_order < 0) throw DomainError("RoomSpec: negative image order");
}

ArrayGeometry ArrayGeometry::tetrahedral(const Vec3& center, double radius) {
    // Vertices at radius r: front-up, right-down, left-down, back-up. The
    // mirror plane y=0 and the quarter-turn rotoreflection about z map this
    // vertex set onto itself, which is what channel-swap augmentation uses.
    const double a = radius * std::sqrt(2.0 / 3.0);  // sqrt(2) * r / sqrt(3)
    const double b = radius / std::sqrt(3.0);
    ArrayGeometry g;
    g.center = center;
    g.mic_offsets = {Vec3{a, 0.0, b}, Vec3{0.0, -a, -b}, Vec3{0.0, a, -b}, Vec3{-a, 0.0, b}};
    return g;
}

void ArrayGeometry::validate(const RoomSpec& room) const {
    for (int i = 0; i < 4; ++i)
        if (!room.contains(mic_position(i)))
            throw DomainError("ArrayGeometry: microphone outside room");
    const double ref = distance(mic_position(0), mic_position(1));
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j)
            if (std::abs(distance(mic_position(i), mic_position(j)) - ref) > 1e-9)
                throw DomainError("ArrayGeometry: not a regular tetrahedron");
}

Vec3 Trajectory::position_at(double t) const {
    if (keypoints.empty()) throw DomainError("Trajectory: no keypoints");
    if (t <= keypoints.front().time) return keypoints.front().position;
    if (t >= keypoints.back().time) return keypoints.back().position;
    for (std::size_t i = 1; i < keypoints.size(); ++i) {
        if (t <= keypoints[i].time) {
            const auto& k0 = keypoints[i - 1];
            const auto& k1 = keypoints[i];
            const double u = (t - k0.time) / (k1.time - k0.time);
            return k0.position + (k1.position - k0.position) * u;
        }
    }
    return keypoints.back().position;
}

void Trajectory::validate(const RoomSpec& room) const {
    if (keypoints.empty()) throw DomainError("Trajectory: no keypoints");
    for (std::size_t i = 0; i < keypoints.size(); ++i) {
        if (i > 0 && !(keypoints[i].time > keypoints[i - 1].time))
            throw DomainError("Trajectory: keypoint times must be strictly increasing");
        if (!room.contains(keypoints[i].position))
            throw DomainError("Trajectory: keypoint outside room");
    }
    if (onset < 0.0) throw DomainError("Trajectory: onset < 0");
    if (!(offset_time > onset)) throw DomainError("Trajectory: offset_time <= onset");
}

namespace {

constexpr int kSincHalfWidth = 8;

double windowed_sinc(double u) {
    if (std::abs(u) >= kSincHalfWidth) return 0.0;
    const double w = 0.5 * (1.0 + std::cos(dsp::kPi * u / kSincHalfWidth));
    if (u == 0.0) return w;
    const double pu = dsp::kPi * u;
    return w * std::sin(pu) / pu;
}

struct Tap {
    double delay_samples;
    double amplitude;
};

std::vector<Tap> image_taps(const RoomSpec& room, const Vec3& src, const Vec3& mic, double fs,
                            double c) {
    std::array<double, 6> beta;  // amplitude reflection coefficient per surface
    for (int i = 0; i < 6; ++i) beta[i] = std::sqrt(1.0 - room.wall_absorption[i]);

    const int order = room.max_image_order;
    const int n_max = order / 2 + 1;
    std::vector<Tap> taps;
    for (int nx = -n_max; nx <= n_max; ++nx)
        for (int ny = -n_max; ny <= n_max; ++ny)
            for (int nz = -n_max; nz <= n_max; ++nz)
                for (int q = 0; q < 8; ++q) {
                    const int qx = q & 1, qy = (q >> 1) & 1, qz = (q >> 2) & 1;
                    const int refl = std::abs(nx - qx) + std::abs(nx) + std::abs(ny - qy) +
                                     std::abs(ny) + std::abs(nz - qz) + std::abs(nz);
                    if (refl > order) continue;
                    const Vec3 img{(1 - 2 * qx) * src.x + 2 * nx * room.dims.x,
                                   (1 - 2 * qy) * src.y + 2 * ny * room.dims.y,
                                   (1 - 2 * qz) * src.z + 2 * nz * room.dims.z};
                    const double d = distance(img, mic);
                    const double g = std::pow(beta[0], std::abs(nx - qx)) *
                                     std::pow(beta[1], std::abs(nx)) *
                                     std::pow(beta[2], std::abs(ny - qy)) *
                                     std::pow(beta[3], std::abs(ny)) *
                                     std::pow(beta[4], std::abs(nz - qz)) *
                                     std::pow(beta[5], std::abs(nz));
                    if (g == 0.0) continue;
                    taps.push_back({d / c * fs, g / d});
                }
    return taps;
}

}  // namespace

std::vector<double> image_source_ir(const RoomSpec& room, const Vec3& src, const Vec3& mic,
                                    double fs, double c) {
    room.validate();
    if (!room.contains(src) || !room.contains(mic))
        throw DomainError("image_source_ir: position outside room");
    if (distance(src, mic) < 1e-12)
        throw DomainError("image_source_ir: source and microphone coincide (singularity)");
    if (fs <= 0.0 || c <= 0.0) throw DomainError("image_source_ir: fs and c must be positive");

    const auto taps = image_taps(room, src, mic, fs, c);
    double max_delay = 0.0;
    for (const auto& t : taps) max_delay = std::max(max_delay, t.delay_samples);
    std::vector<double> ir(static_cast<std::size_t>(std::ceil(max_delay)) + kSincHalfWidth + 2,
                           0.0);
    for (const auto& t : taps) {
        const int lo = std::max(0, static_cast<int>(std::ceil(t.delay_samples)) - kSincHalfWidth);
        const int hi = static_cast<int>(std::floor(t.delay_samples)) + kSincHalfWidth;
        for (int j = lo; j <= hi && j < static_cast<int>(ir.size()); ++j)
            ir[j] += t.amplitude * windowed_sinc(j - t.delay_samples);
    }
    return ir;
}

SceneAnnotation annotate_distance(const Trajectory& traj, const Vec3& center, double frame_rate,
                                  std::size_t n_frames) {
    if (frame_rate <= 0.0) throw DomainError("annotate_distance: frame_rate must be > 0");
    if (traj.keypoints.empty()) throw DomainError("annotate_distance: empty trajectory");

    SceneAnnotation ann;
    ann.frame_rate = frame_rate;
    ann.activity.resize(n_frames, 0);
    ann.distance.resize(n_frames, 0.0);
    for (std::size_t f = 0; f < n_frames; ++f) {
        const double t = (static_cast<double>(f) + 0.5) / frame_rate;  // frame center
        if (t >= traj.onset && t <= traj.offset_time) {
            ann.activity[f] = 1;
            ann.distance[f] = distance(traj.position_at(t), center);
        }
    }
    return ann;
}

RenderResult render_scene(const RoomSpec& room, const ArrayGeometry& array, const Trajectory& traj,
                          const audio::AudioClip& source, const audio::AudioClip* noise,
                          double snr_db, double fs) {
    room.validate();
    array.validate(room);
    traj.validate(room);
    if (source.channels() != 1) throw ShapeError("render_scene: source must be mono");
    if (source.sample_rate() != static_cast<int>(fs))
        throw ShapeError("render_scene: source sample rate mismatch");
    if (noise && noise->channels() != 4)
        throw ShapeError("render_scene: noise must have 4 channels");

    const std::size_t a0 = static_cast<std::size_t>(std::llround(traj.onset * fs));
    std::size_t a1 = static_cast<std::size_t>(std::llround(traj.offset_time * fs));
    double offset_time = traj.offset_time;
    if (a1 - a0 > source.frames()) {
        a1 = a0 + source.frames();
        offset_time = static_cast<double>(a1) / fs;
        std::cerr << "render_scene: source shorter than active span, truncating to "
                  << offset_time << " s\n";
    }
    const std::size_t span = a1 - a0;
    if (span == 0) throw DomainError("render_scene: empty active span");

    const auto src_samples = source.channel(0);
    bool silent = true;
    for (std::size_t i = 0; i < span && silent; ++i)
        if (src_samples[i] != 0.0f) silent = false;
    if (silent) throw DomainError("render_scene: source signal is silent over the active span");

    // Piecewise-static render: <=100 ms hops, 50%-overlap triangular fades
    // (COLA-exact with half-sample offsets; first and last segments keep their
    // outer halves at unity gain).
    const std::size_t hop = static_cast<std::size_t>(std::llround(0.100 * fs));
    const std::size_t n_segments = (span + hop - 1) / hop;

    std::array<std::vector<double>, 4> out;
    std::size_t out_len = 0;
    for (std::size_t k = 0; k < n_segments; ++k) {
        const std::size_t seg_start = k * hop;
        const std::size_t seg_end = std::min(seg_start + 2 * hop, span);
        std::vector<double> seg(seg_end - seg_start);
        for (std::size_t i = 0; i < seg.size(); ++i) {
            double w;
            if (i < hop)
                w = (k == 0) ? 1.0 : (static_cast<double>(i) + 0.5) / static_cast<double>(hop);
            else
                w = (k == n_segments - 1)
                        ? 1.0
                        : (2.0 * static_cast<double>(hop) - static_cast<double>(i) - 0.5) /
                              static_cast<double>(hop);
            seg[i] = src_samples[seg_start + i] * w;
        }
        const double t_center = traj.onset + (static_cast<double>(seg_start) +
                                              static_cast<double>(hop)) / fs;
        const Vec3 pos = traj.position_at(std::min(t_center, offset_time));
        if (!room.contains(pos)) throw DomainError("render_scene: trajectory exits room");

        for (int m = 0; m < 4; ++m) {
            const auto ir = image_source_ir(room, pos, array.mic_position(m), fs);
            const auto conv = dsp::fft_convolve(seg, ir);
            const std::size_t base = a0 + seg_start;
            if (out[m].size() < base + conv.size()) out[m].resize(base + conv.size(), 0.0);
            for (std::size_t i = 0; i < conv.size(); ++i) out[m][base + i] += conv[i];
            out_len = std::max(out_len, out[m].size());
        }
    }
    out_len = std::max(out_len, static_cast<std::size_t>(feat::kNfft));
    for (auto& ch : out) ch.resize(out_len, 0.0);

    audio::AudioClip clip(4, out_len, static_cast<int>(fs));
    for (int m = 0; m < 4; ++m)
        for (std::size_t t = 0; t < out_len; ++t) clip.at(t, m) = static_cast<float>(out[m][t]);

    if (noise && std::isfinite(snr_db)) {
        // SNR over the active span: per-channel RMS averaged across channels.
        auto span_rms = [&](auto&& sample_at) {
            double acc = 0.0;
            for (int m = 0; m < 4; ++m) {
                double e = 0.0;
                for (std::size_t t = a0; t < a1; ++t) {
                    const double v = sample_at(t, m);
                    e += v * v;
                }
                acc += std::sqrt(e / static_cast<double>(span));
            }
            return acc / 4.0;
        };
        audio::AudioClip tiled(4, out_len, static_cast<int>(fs));
        const std::size_t n_frames_noise = noise->frames();
        if (n_frames_noise == 0) throw ShapeError("render_scene: empty noise clip");
        for (std::size_t t = 0; t < out_len; ++t)
            for (int m = 0; m < 4; ++m) tiled.at(t, m) = noise->at(t % n_frames_noise, m);

        const double sig_rms = span_rms([&](std::size_t t, int m) { return out[m][t]; });
        const double noise_rms =
            span_rms([&](std::size_t t, int m) { return static_cast<double>(tiled.at(t, m)); });
        if (noise_rms > 0.0) {
            const double gain = sig_rms / (noise_rms * std::pow(10.0, snr_db / 20.0));
            clip = audio::mix(clip, tiled, 0, gain);
        }
    }

    Trajectory effective = traj;
    effective.offset_time = offset_time;
    const std::size_t n_frames = feat::feature_frame_count(out_len);
    RenderResult result{std::move(clip),
                        annotate_distance(effective, array.center, feat::feature_frame_rate(fs),
                                          n_frames)};
    return result;
}

void DatasetConfig::validate() const {
    if (rooms.size() < 2) throw ConfigError("dataset config: need at least 2 rooms");
    if (n_scenes < 1) throw ConfigError("dataset config: need at least 1 scene");
    if (rooms_train < 1 || rooms_val < 1 || rooms_test < 1)
        throw ConfigError("dataset config: fewer rooms than splits (each split needs a room)");
    if (static_cast<std::size_t>(rooms_train + rooms_val + rooms_test) != rooms.size())
        throw ConfigError("dataset config: split sizes must sum to the room count");
    if (snr_db_min > snr_db_max || duration_min_s > duration_max_s)
        throw ConfigError("dataset config: empty range");
    if (duration_min_s < 1.0)
        throw ConfigError("dataset config: scenes need at least 1 s for onset/offset structure");
    for (const auto& r : rooms) r.validate();
}

DatasetConfig DatasetConfig::from_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("dataset config: cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("dataset config: invalid JSON: " + std::string(e.what()));
    }
    try {
        DatasetConfig c;
        c.seed = j.value("seed", 0ULL);
        c.n_scenes = j.at("scenes").get<int>();
        c.rooms_train = j.at("split").at("train").get<int>();
        c.rooms_val = j.at("split").at("val").get<int>();
        c.rooms_test = j.at("split").at("test").get<int>();
        if (j.contains("snr_db")) {
            c.snr_db_min = j["snr_db"].at(0).get<double>();
            c.snr_db_max = j["snr_db"].at(1).get<double>();
        }
        if (j.contains("duration_s")) {
            c.duration_min_s = j["duration_s"].at(0).get<double>();
            c.duration_max_s = j["duration_s"].at(1).get<double>();
        }
        for (const auto& rj : j.at("rooms")) {
            RoomSpec r;
            r.room_id = rj.at("id").get<std::string>();
            r.dims = {rj.at("dims").at(0).get<double>(), rj.at("dims").at(1).get<double>(),
                      rj.at("dims").at(2).get<double>()};
            const auto& ab = rj.at("absorption");
            for (int i = 0; i < 6; ++i) r.wall_absorption[i] = ab.at(i).get<double>();
            r.max_image_order = rj.value("max_image_order", 2);
            c.rooms.push_back(std::move(r));
        }
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("dataset config: missing or mistyped field: " + std::string(e.what()));
    }
}

namespace {

// Band-limited noise burst with slow amplitude modulation; constant target RMS
// keeps the level-vs-distance cue learnable.
audio::AudioClip synth_source(Rng& rng, std::size_t n_samples, double fs) {
    std::vector<double> x(n_samples);
    double lp = 0.0;
    const double pole = 0.6 + 0.3 * rng.uniform();
    const double am_rate = rng.uniform(0.5, 3.0);
    const double am_phase = rng.uniform(0.0, dsp::kTwoPi);
    const double tone_hz = rng.uniform(200.0, 2000.0);
    const double tone_mix = rng.uniform(0.0, 0.5);
    for (std::size_t i = 0; i < n_samples; ++i) {
        lp = pole * lp + (1.0 - pole) * rng.normal();
        const double t = static_cast<double>(i) / fs;
        const double am = 0.55 + 0.45 * std::sin(dsp::kTwoPi * am_rate * t + am_phase);
        x[i] = am * (lp + tone_mix * std::sin(dsp::kTwoPi * tone_hz * t));
    }
    double rms = 0.0;
    for (double v : x) rms += v * v;
    rms = std::sqrt(rms / static_cast<double>(n_samples));
    const double target = rng.uniform(0.04, 0.06);
    const double g = rms > 0.0 ? target / rms : 0.0;
    audio::AudioClip clip(1, n_samples, static_cast<int>(fs));
    for (std::size_t i = 0; i < n_samples; ++i) clip.at(i, 0) = static_cast<float>(x[i] * g);
    return clip;
}

audio::AudioClip synth_noise(Rng& rng, std::size_t n_samples, double fs) {
    audio::AudioClip clip(4, n_samples, static_cast<int>(fs));
    for (std::size_t i = 0; i < n_samples; ++i)
        for (int c = 0; c < 4; ++c) clip.at(i, c) = static_cast<float>(0.05 * rng.normal());
    return clip;
}

struct RenderedScene {
    SceneRecord record;
    audio::AudioClip clip;
};

RenderedScene render_one(const DatasetConfig& cfg, std::uint64_t master_seed, int index,
                         const RoomSpec& room, const std::string& split) {
    Rng rng(derive_seed(master_seed, static_cast<std::uint64_t>(index)));
    const double fs = audio::kCanonicalSampleRate;
    const double duration = rng.uniform(cfg.duration_min_s, cfg.duration_max_s);
    const auto total = static_cast<std::size_t>(std::llround(duration * fs));

    // Array somewhere near the middle of the room, never hugging a wall.
    const Vec3 center{room.dims.x * (0.4 + 0.2 * rng.uniform()),
                      room.dims.y * (0.4 + 0.2 * rng.uniform()),
                      std::min(room.dims.z * (0.35 + 0.3 * rng.uniform()), room.dims.z - 0.5)};
    const auto array = ArrayGeometry::tetrahedral(center);

    const double margin = 0.3;
    auto random_point = [&] {
        for (int attempt = 0; attempt < 64; ++attempt) {
            Vec3 p{rng.uniform(margin, room.dims.x - margin),
                   rng.uniform(margin, room.dims.y - margin),
                   rng.uniform(margin, room.dims.z - margin)};
            if (distance(p, center) >= 0.35) return p;
        }
        throw DomainError("make_dataset: could not place source away from the array");
    };

    Trajectory traj;
    traj.onset = rng.uniform(0.2, std::max(0.25, std::min(0.9, 0.3 * duration)));
    traj.offset_time = std::min(duration - 0.4, traj.onset + rng.uniform(0.5, 0.8) * duration);
    if (traj.offset_time < traj.onset + 0.25) traj.offset_time = traj.onset + 0.25;
    const bool moving = rng.uniform() < 0.5;
    traj.keypoints.push_back({traj.onset, random_point()});
    if (moving) {
        const int extra = 1 + static_cast<int>(rng.uniform_index(2));
        for (int k = 1; k <= extra; ++k) {
            const double t =
                traj.onset + (traj.offset_time - traj.onset) * static_cast<double>(k) / extra;
            traj.keypoints.push_back({t, random_point()});
        }
    }

    const std::size_t span =
        static_cast<std::size_t>(std::llround((traj.offset_time - traj.onset) * fs));
    auto source = synth_source(rng, span, fs);
    auto noise = synth_noise(rng, total, fs);
    const double snr = rng.uniform(cfg.snr_db_min, cfg.snr_db_max);

    auto rendered = render_scene(room, array, traj, source, &noise, snr, fs);

    char name[32];
    std::snprintf(name, sizeof(name), "scene_%04d", index);
    RenderedScene out;
    out.record.scene_id = name;
    out.record.wav_path = std::string("scenes/") + name + ".wav";
    out.record.room_id = room.room_id;
    out.record.split = split;
    out.record.frame_rate = rendered.annotation.frame_rate;
    out.record.activity = rendered.annotation.activity;
    out.record.distance = rendered.annotation.distance;
    out.clip = std::move(rendered.clip);
    return out;
}

}  // namespace

std::filesystem::path make_dataset(const DatasetConfig& config, std::uint64_t seed,
                                   const std::filesystem::path& out_dir, int jobs) {
    config.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "scenes", ec);
    if (ec)
        throw IoError("make_dataset: cannot create " + (out_dir / "scenes").string() + ": " +
                      ec.message());

    // Rooms are assigned to splits in config order; scenes round-robin over
    // rooms so every split sees all of its rooms.
    std::vector<std::string> room_split(config.rooms.size());
    for (std::size_t i = 0; i < config.rooms.size(); ++i) {
        if (static_cast<int>(i) < config.rooms_train) room_split[i] = "train";
        else if (static_cast<int>(i) < config.rooms_train + config.rooms_val) room_split[i] = "val";
        else room_split[i] = "test";
    }

    std::vector<RenderedScene> scenes(config.n_scenes);
    std::atomic<int> next{0};
    std::atomic<bool> failed{false};
    std::string error_msg;
    std::mutex error_mutex;

    auto worker = [&] {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= config.n_scenes || failed.load()) break;
            try {
                const std::size_t room_idx = static_cast<std::size_t>(i) % config.rooms.size();
                scenes[i] = render_one(config, seed, i, config.rooms[room_idx],
                                       room_split[room_idx]);
                audio::write_wav(scenes[i].clip, out_dir / scenes[i].record.wav_path,
                                 audio::WavEncoding::float32);
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(error_mutex);
                failed.store(true);
                if (error_msg.empty()) error_msg = e.what();
            }
        }
    };

    const int n_threads = std::max(1, jobs);
    std::vector<std::thread> pool;
    for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (failed.load()) throw DomainError("make_dataset: scene render failed: " + error_msg);

    const auto manifest_path = out_dir / "manifest.jsonl";
    std::ofstream out(manifest_path, std::ios::binary);
    if (!out) throw IoError("make_dataset: cannot write " + manifest_path.string());
    for (const auto& s : scenes) {
        nlohmann::ordered_json j;
        j["scene_id"] = s.record.scene_id;
        j["wav_path"] = s.record.wav_path;
        j["room_id"] = s.record.room_id;
        j["split"] = s.record.split;
        j["frame_rate"] = s.record.frame_rate;
        j["activity"] = s.record.activity;
        j["distance"] = s.record.distance;
        out << j.dump() << "\n";
    }
    return manifest_path;
}

std::vector<SceneRecord> load_manifest(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("load_manifest: cannot open " + manifest_path.string());
    std::vector<SceneRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            SceneRecord r;
            r.scene_id = j.at("scene_id").get<std::string>();
            r.wav_path = j.at("wav_path").get<std::string>();
            r.room_id = j.at("room_id").get<std::string>();
            r.split = j.at("split").get<std::string>();
            r.frame_rate = j.at("frame_rate").get<double>();
            r.activity = j.at("activity").get<std::vector<std::uint8_t>>();
            r.distance = j.at("distance").get<std::vector<double>>();
            if (r.activity.size() != r.distance.size())
                throw FormatError("load_manifest: activity/distance length mismatch in " +
                                  r.scene_id);
            records.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("load_manifest: bad record: " + std::string(e.what()));
        }
    }
    return records;
}

std::filesystem::path resolve_wav_path(const std::filesystem::path& manifest_path,
                                       const SceneRecord& record) {
    return manifest_path.parent_path() / record.wav_path;
}

}  // namespace echorange::scene
