#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "echorange/audio.hpp"
#include "echorange/geometry.hpp"

namespace echorange::scene {

// Image-source impulse response between one source and one microphone.
// One windowed-sinc tap per image up to room.max_image_order, amplitude
// (product of reflection coefficients) / distance, delay distance / c.
std::vector<double> image_source_ir(const RoomSpec& room, const Vec3& src, const Vec3& mic,
                                    double fs, double c = kSpeedOfSound);

// Frame-wise activity and source distance to `center`. A frame is active when
// its center time falls inside [onset, offset_time].
SceneAnnotation annotate_distance(const Trajectory& traj, const Vec3& center, double frame_rate,
                                  std::size_t n_frames);

struct RenderResult {
    audio::AudioClip clip;        // 4 channels
    SceneAnnotation annotation;   // at the feature frame rate
};

// Moving-source render: trajectory discretized into <=100 ms hops, per-hop
// static IRs, 50%-overlap triangular cross-fade, noise mixed to the requested
// SNR over the active span. snr_db = +inf (or noise = nullptr) means no noise.
RenderResult render_scene(const RoomSpec& room, const ArrayGeometry& array, const Trajectory& traj,
                          const audio::AudioClip& source, const audio::AudioClip* noise,
                          double snr_db, double fs);

struct SceneRecord {
    std::string scene_id;
    std::string wav_path;   // relative to the manifest directory
    std::string room_id;
    std::string split;      // train | val | test
    double frame_rate = 0.0;
    std::vector<std::uint8_t> activity;
    std::vector<double> distance;

    SceneAnnotation annotation() const { return {frame_rate, activity, distance}; }
};

struct DatasetConfig {
    std::vector<RoomSpec> rooms;
    int rooms_train = 0, rooms_val = 0, rooms_test = 0;  // room-disjoint split sizes
    int n_scenes = 0;
    double snr_db_min = 15.0, snr_db_max = 25.0;
    double duration_min_s = 5.0, duration_max_s = 5.0;
    std::uint64_t seed = 0;

    static DatasetConfig from_json_file(const std::filesystem::path& path);
    void validate() const;
};

// Renders every scene (deterministic in config.seed, independent of jobs),
// writes float32 WAVs plus a JSON-lines manifest; returns the manifest path.
std::filesystem::path make_dataset(const DatasetConfig& config, std::uint64_t seed,
                                   const std::filesystem::path& out_dir, int jobs = 1);

std::vector<SceneRecord> load_manifest(const std::filesystem::path& manifest_path);

// Resolves a record's wav_path against the directory the manifest lives in.
std::filesystem::path resolve_wav_path(const std::filesystem::path& manifest_path,
                                       const SceneRecord& record);

}  // namespace echorange::scene
