#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "echorange/audio.hpp"
#include "echorange/features.hpp"
#include "echorange/geometry.hpp"
#include "echorange/loss.hpp"
#include "echorange/net.hpp"
#include "echorange/scene.hpp"

namespace echorange::train {

struct TrainConfig {
    double learning_rate = 1e-3;
    int patience_epochs = 40;
    int batch_size = 16;
    int max_epochs = 200;
    std::uint64_t seed = 0;
    loss::RegressorKind regressor;          // distance phase only
    bool augment = false;                   // channel-swap x8 on the train split
    std::optional<std::filesystem::path> init_checkpoint;
    int window_frames = 256;                // fixed chunking of scene sequences
    net::CRNNConfig model;

    static TrainConfig from_json_file(const std::filesystem::path& path);
    void validate() const;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_metric = 0.0;  // detector: F1 at 0.5; distance: masked val loss
    bool best = false;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
    std::string stopping_reason;

    void save_csv(const std::filesystem::path& path) const;
};

// Adam with bias correction: m/v per parameter (registry order), shared
// hyperparameters beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::int64_t step = 0;
    std::vector<net::Tensor> m;
    std::vector<net::Tensor> v;

    static AdamState for_params(const net::CRNNParams& params);
};

// One optimizer step over the registry; grads[i] pairs with params.tensor(i).
// Aborts with DomainError on non-finite gradients.
void adam_step(net::CRNNParams& params, const std::vector<net::Tensor>& grads, AdamState& state,
               double learning_rate);

// The eight label-preserving channel permutations of the canonical
// tetrahedral array: quarter-turn rotoreflections about the vertical axis
// composed with the left-right mirror (dihedral group of order 8).
std::array<std::array<int, 4>, 8> channel_swap_permutations();

// Geometric isometry realizing permutation p: a 3x3 row-major matrix M with
// M * offset[p[i]] = offset[i] for the canonical array.
std::array<double, 9> channel_swap_isometry(const std::array<int, 4>& permutation);

// Variant k has channel i = source channel perm[k][i]; annotations are
// returned unchanged (distance to the array center is rotation-invariant).
std::vector<std::pair<audio::AudioClip, scene::SceneAnnotation>> channel_swap_variants(
    const audio::AudioClip& clip, const scene::SceneAnnotation& annotation);

feat::StandardizationStats compute_standardization(const std::vector<feat::FeatureTensor>& feats);

// Cache-aware feature loading: honors ECHORANGE_CACHE when set (values then
// round through float32 so cache hits and misses feed identical numbers).
feat::FeatureTensor load_scene_features(const std::filesystem::path& manifest,
                                        const scene::SceneRecord& record);

struct TrainResult {
    std::filesystem::path checkpoint_path;
    std::filesystem::path stats_path;
    TrainLog log;
    feat::StandardizationStats stats;
    double best_val_loss = 0.0;
    double final_metric = 0.0;  // detector: F1 on val split
};

// Detector pre-training: BCE-only objective (the regressor term is disabled),
// early stopping on validation loss, best-epoch weights restored. The
// distance head receives no gradient and stays at its initialization.
TrainResult train_detector(const std::filesystem::path& manifest, const TrainConfig& config,
                           const std::filesystem::path& out_dir, int jobs = 1);

// Full objective with the configured regressor; optionally initialized from
// another checkpoint (detector pre-training or another corpus's model).
TrainResult train_distance(const std::filesystem::path& manifest, const TrainConfig& config,
                           const std::filesystem::path& out_dir, int jobs = 1);

// Frame-level F1 of thresholded activity predictions at 0.5.
double detector_f1(const std::vector<std::uint8_t>& truth, const std::vector<double>& predicted,
                   double threshold = 0.5);

}  // namespace echorange::train
