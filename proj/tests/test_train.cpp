#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "echorange/errors.hpp"
#include "echorange/features.hpp"
#include "echorange/rng.hpp"
#include "echorange/scene.hpp"
#include "echorange/train.hpp"

#include "oracles.hpp"

using namespace echorange;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* leaf) {
    const auto dir = fs::temp_directory_path() / leaf;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Tiny but real dataset for smoke training runs: short scenes, few rooms.
fs::path tiny_dataset(const char* leaf, int scenes, std::uint64_t seed) {
    scene::DatasetConfig cfg;
    for (int i = 0; i < 4; ++i) {
        scene::RoomSpec room;
        room.dims = {4.5 + 0.6 * i, 3.8 + 0.4 * i, 2.7};
        room.wall_absorption.fill(0.45 + 0.1 * i);
        room.max_image_order = 1;
        room.room_id = "tiny_" + std::to_string(i);
        cfg.rooms.push_back(room);
    }
    cfg.rooms_train = 2;
    cfg.rooms_val = 1;
    cfg.rooms_test = 1;
    cfg.n_scenes = scenes;
    cfg.duration_min_s = 1.3;
    cfg.duration_max_s = 1.5;
    cfg.snr_db_min = 18.0;
    cfg.snr_db_max = 24.0;
    return scene::make_dataset(cfg, seed, temp_dir(leaf), 2);
}

train::TrainConfig tiny_train_config() {
    train::TrainConfig cfg;
    cfg.model.conv_blocks = {{8, 4}, {8, 4}, {8, 2}};
    cfg.model.recurrent_hidden = 16;
    cfg.window_frames = 72;
    cfg.batch_size = 6;
    cfg.max_epochs = 5;
    cfg.patience_epochs = 5;
    cfg.seed = 7;
    cfg.regressor = loss::RegressorKind::parse("ape");
    return cfg;
}

}  // namespace

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    auto params = net::CRNNParams::init(net::CRNNConfig{}, 1);
    auto state = train::AdamState::for_params(params);
    const auto before = params;
    std::vector<net::Tensor> grads;
    for (std::size_t i = 0; i < params.count(); ++i)
        grads.emplace_back(params.tensor(i).shape());
    train::adam_step(params, grads, state, 1e-3);
    for (std::size_t i = 0; i < params.count(); ++i)
        for (std::size_t k = 0; k < params.tensor(i).size(); ++k)
            CHECK(params.tensor(i)[k] == before.tensor(i)[k]);
}

TEST_CASE("adam first step magnitude is approximately the learning rate") {
    net::CRNNConfig cfg;
    auto params = net::CRNNParams::init(cfg, 2);
    auto state = train::AdamState::for_params(params);
    const double before = params.tensor("head_d.b")[0];
    std::vector<net::Tensor> grads;
    for (std::size_t i = 0; i < params.count(); ++i)
        grads.emplace_back(params.tensor(i).shape());
    // one nonzero scalar gradient
    for (std::size_t i = 0; i < params.count(); ++i)
        if (params.name(i) == "head_d.b") grads[i][0] = 0.37;
    train::adam_step(params, grads, state, 1e-3);
    const double step = before - params.tensor("head_d.b")[0];
    CHECK(step == doctest::Approx(1e-3).epsilon(1e-6));
}

TEST_CASE("adam trajectory matches an independent scalar reference for 100 steps") {
    // minimize f(theta) = (theta - 3)^2 starting from 0
    net::CRNNConfig cfg;
    auto params = net::CRNNParams::init(cfg, 3);
    auto state = train::AdamState::for_params(params);
    std::size_t target = params.count();
    for (std::size_t i = 0; i < params.count(); ++i)
        if (params.name(i) == "head_y.b") target = i;
    REQUIRE(target < params.count());
    params.tensor(target)[0] = 0.0;

    oracles::ReferenceAdam ref;
    double ref_theta = 0.0;
    for (int step = 0; step < 100; ++step) {
        std::vector<net::Tensor> grads;
        for (std::size_t i = 0; i < params.count(); ++i)
            grads.emplace_back(params.tensor(i).shape());
        grads[target][0] = 2.0 * (params.tensor(target)[0] - 3.0);
        train::adam_step(params, grads, state, 1e-2);
        ref_theta = ref.step(ref_theta, 2.0 * (ref_theta - 3.0), 1e-2);
        CHECK(params.tensor(target)[0] == doctest::Approx(ref_theta).epsilon(1e-9));
    }
}

TEST_CASE("adam aborts on non-finite gradients") {
    auto params = net::CRNNParams::init(net::CRNNConfig{}, 4);
    auto state = train::AdamState::for_params(params);
    std::vector<net::Tensor> grads;
    for (std::size_t i = 0; i < params.count(); ++i)
        grads.emplace_back(params.tensor(i).shape());
    grads[0][0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(train::adam_step(params, grads, state, 1e-3), DomainError);
}

TEST_CASE("channel swap: eight pairwise-distinct permutations, identity first") {
    const auto perms = train::channel_swap_permutations();
    CHECK(perms[0] == std::array<int, 4>{0, 1, 2, 3});
    std::set<std::array<int, 4>> unique(perms.begin(), perms.end());
    CHECK(unique.size() == 8);
    for (const auto& p : perms) {
        std::set<int> channels(p.begin(), p.end());
        CHECK(channels.size() == 4);  // a real permutation
    }
}

TEST_CASE("channel swap isometries map the permuted offsets onto the array") {
    const auto array = scene::ArrayGeometry::tetrahedral({0, 0, 0});
    for (const auto& perm : train::channel_swap_permutations()) {
        const auto m = train::channel_swap_isometry(perm);
        for (int i = 0; i < 4; ++i) {
            const auto& src = array.mic_offsets[perm[i]];
            const scene::Vec3 mapped{
                m[0] * src.x + m[1] * src.y + m[2] * src.z,
                m[3] * src.x + m[4] * src.y + m[5] * src.z,
                m[6] * src.x + m[7] * src.y + m[8] * src.z};
            CHECK(scene::distance(mapped, array.mic_offsets[i]) < 1e-12);
        }
    }
}

TEST_CASE("channel swap variants: audio permuted, annotations byte-identical") {
    Rng rng(55);
    audio::AudioClip clip(4, 500, 24000);
    for (auto& s : clip.samples()) s = static_cast<float>(rng.uniform(-1.0, 1.0));
    scene::SceneAnnotation ann;
    ann.frame_rate = 50.0;
    ann.activity = {0, 1, 1, 0};
    ann.distance = {0.0, 1.5, 2.5, 0.0};

    const auto variants = train::channel_swap_variants(clip, ann);
    REQUIRE(variants.size() == 8);
    const auto perms = train::channel_swap_permutations();
    for (std::size_t v = 0; v < 8; ++v) {
        const auto& [vclip, vann] = variants[v];
        CHECK(vann.activity == ann.activity);
        CHECK(vann.distance == ann.distance);
        for (std::size_t t = 0; t < clip.frames(); ++t)
            for (int c = 0; c < 4; ++c) CHECK(vclip.at(t, c) == clip.at(t, perms[v][c]));
    }
    // variant 0 is the identity
    for (std::size_t t = 0; t < clip.frames(); ++t)
        for (int c = 0; c < 4; ++c) CHECK(variants[0].first.at(t, c) == clip.at(t, c));
}

TEST_CASE("channel swap re-render oracle: rotating the source reproduces the swap") {
    // free-field scene; compare GCC argmax lags of the permuted clip against a
    // re-render with the geometrically rotated source position.
    scene::RoomSpec room;
    room.dims = {8.0, 8.0, 4.0};
    room.wall_absorption.fill(1.0);
    room.max_image_order = 0;
    room.room_id = "swap";
    const scene::Vec3 center{4.0, 4.0, 2.0};
    const auto array = scene::ArrayGeometry::tetrahedral(center, 0.35);  // exaggerated radius

    Rng rng(66);
    audio::AudioClip source(1, 24000, 24000);
    for (auto& s : source.samples()) s = static_cast<float>(rng.uniform(-0.4, 0.4));
    scene::Trajectory traj;
    traj.onset = 0.0;
    traj.offset_time = 1.0;
    const scene::Vec3 src{6.2, 4.9, 2.4};
    traj.keypoints = {{0.0, src}};

    const auto base = scene::render_scene(room, array, traj, source, nullptr,
                                          std::numeric_limits<double>::infinity(), 24000.0);
    const auto variants = train::channel_swap_variants(base.clip, base.annotation);
    const auto perms = train::channel_swap_permutations();

    auto gcc_lags = [](const audio::AudioClip& clip) {
        std::array<int, 6> lags{};
        std::array<feat::Spectrogram, 4> specs;
        for (int c = 0; c < 4; ++c)
            specs[c] = feat::stft(clip.channel(c), feat::kNfft, feat::kHop, 24000.0);
        for (int p = 0; p < 6; ++p) {
            const auto g = feat::gcc_phat(specs[feat::kGccPairs[p][0]],
                                          specs[feat::kGccPairs[p][1]], feat::kNumLags);
            // average over frames, then take the argmax
            std::array<double, 64> mean{};
            const std::size_t frames = specs[0].frames;
            for (std::size_t f = 0; f < frames; ++f)
                for (int l = 0; l < 64; ++l) mean[l] += g[f * 64 + l];
            lags[p] = static_cast<int>(std::max_element(mean.begin(), mean.end()) -
                                       mean.begin()) - 32;
        }
        return lags;
    };

    int nontrivial_checked = 0;
    for (std::size_t v = 1; v < 8; ++v) {
        const auto m = train::channel_swap_isometry(perms[v]);
        const scene::Vec3 rel = src - center;
        const scene::Vec3 rotated{
            m[0] * rel.x + m[1] * rel.y + m[2] * rel.z + center.x,
            m[3] * rel.x + m[4] * rel.y + m[5] * rel.z + center.y,
            m[6] * rel.x + m[7] * rel.y + m[8] * rel.z + center.z};
        scene::Trajectory rotated_traj = traj;
        rotated_traj.keypoints = {{0.0, rotated}};
        const auto rerender =
            scene::render_scene(room, array, rotated_traj, source, nullptr,
                                std::numeric_limits<double>::infinity(), 24000.0);
        const auto swapped_lags = gcc_lags(variants[v].first);
        const auto rerender_lags = gcc_lags(rerender.clip);
        for (int p = 0; p < 6; ++p) CHECK(swapped_lags[p] == rerender_lags[p]);
        ++nontrivial_checked;
    }
    CHECK(nontrivial_checked == 7);
}

TEST_CASE("compute_standardization: constant features floor the deviation") {
    feat::FeatureTensor f;
    f.frames = 4;
    f.bins = 64;
    f.data.assign(10 * 4 * 64, 2.5);
    const auto stats = train::compute_standardization({f});
    for (int m = 0; m < feat::kNumMaps; ++m) {
        CHECK(stats.mean[m] == doctest::Approx(2.5));
        CHECK(stats.stddev[m] == doctest::Approx(1e-6));
    }
}

TEST_CASE("compute_standardization matches hand-computed pooled statistics") {
    feat::FeatureTensor a, b;
    a.frames = 2;
    a.bins = 64;
    a.data.assign(10 * 2 * 64, 0.0);
    b.frames = 3;
    b.bins = 64;
    b.data.assign(10 * 3 * 64, 0.0);
    Rng rng(77);
    for (auto& v : a.data) v = rng.uniform(-2.0, 2.0);
    for (auto& v : b.data) v = rng.uniform(-2.0, 2.0);
    const auto stats = train::compute_standardization({a, b});
    for (int m = 0; m < feat::kNumMaps; ++m) {
        std::vector<double> pooled;
        for (std::size_t i = 0; i < 2 * 64; ++i) pooled.push_back(a.data[m * 2 * 64 + i]);
        for (std::size_t i = 0; i < 3 * 64; ++i) pooled.push_back(b.data[m * 3 * 64 + i]);
        const auto ref = oracles::two_pass_stats(pooled);
        CHECK(stats.mean[m] == doctest::Approx(ref.mean).epsilon(1e-12));
        CHECK(stats.stddev[m] == doctest::Approx(ref.stddev).epsilon(1e-12));
    }
}

TEST_CASE("standardized training features come out with mean 0 and std 1") {
    Rng rng(78);
    std::vector<feat::FeatureTensor> feats(3);
    for (auto& f : feats) {
        f.frames = 5;
        f.bins = 64;
        f.data.resize(10 * 5 * 64);
        for (auto& v : f.data) v = rng.uniform(-3.0, 1.0);
    }
    const auto stats = train::compute_standardization(feats);
    std::vector<feat::FeatureTensor> standardized = feats;
    for (auto& f : standardized)
        for (int m = 0; m < 10; ++m)
            for (std::size_t i = 0; i < 5 * 64; ++i) {
                auto& v = f.data[m * 5 * 64 + i];
                v = (v - stats.mean[m]) / stats.stddev[m];
            }
    const auto check = train::compute_standardization(standardized);
    for (int m = 0; m < 10; ++m) {
        CHECK(std::abs(check.mean[m]) < 1e-6);
        CHECK(check.stddev[m] == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("detector F1 of a perfect predictor is 1") {
    std::vector<std::uint8_t> truth = {0, 1, 1, 0, 1};
    std::vector<double> perfect = {0.1, 0.9, 0.8, 0.2, 0.99};
    CHECK(train::detector_f1(truth, perfect) == 1.0);
    std::vector<double> inverted = {0.9, 0.1, 0.2, 0.8, 0.01};
    CHECK(train::detector_f1(truth, inverted) == 0.0);
}

TEST_CASE("early stopping: patience 1 with worsening val loss stops after epoch 2") {
    const auto manifest = tiny_dataset("echorange_train_patience", 8, 21);
    auto cfg = tiny_train_config();
    cfg.patience_epochs = 1;
    cfg.max_epochs = 30;
    cfg.learning_rate = 30.0;  // absurd rate forces divergence after epoch 1
    const auto out = temp_dir("echorange_train_patience_out");
    const auto result = train::train_detector(manifest, cfg, out, 2);
    CHECK(result.log.stopping_reason == "patience");
    // must stop exactly one epoch past the best
    int best_epoch = 0;
    for (const auto& e : result.log.epochs)
        if (e.best) best_epoch = e.epoch;
    CHECK(result.log.epochs.back().epoch == best_epoch + 1);

    // returned weights are the best-epoch weights: a run capped at the best
    // epoch must produce a byte-identical checkpoint
    if (best_epoch == 1) {
        auto capped = cfg;
        capped.max_epochs = 1;
        const auto out_capped = temp_dir("echorange_train_patience_capped");
        const auto short_run = train::train_detector(manifest, capped, out_capped, 2);
        CHECK(slurp(result.checkpoint_path) == slurp(short_run.checkpoint_path));
    }
}

TEST_CASE("training is deterministic: two runs, identical logs and checkpoints") {
    const auto manifest = tiny_dataset("echorange_train_det", 8, 31);
    auto cfg = tiny_train_config();
    cfg.max_epochs = 3;
    const auto out_a = temp_dir("echorange_train_det_a");
    const auto out_b = temp_dir("echorange_train_det_b");
    const auto ra = train::train_distance(manifest, cfg, out_a, 2);
    const auto rb = train::train_distance(manifest, cfg, out_b, 1);  // different jobs
    REQUIRE(ra.log.epochs.size() == rb.log.epochs.size());
    for (std::size_t i = 0; i < ra.log.epochs.size(); ++i) {
        CHECK(ra.log.epochs[i].train_loss == rb.log.epochs[i].train_loss);
        CHECK(ra.log.epochs[i].val_loss == rb.log.epochs[i].val_loss);
    }
    CHECK(slurp(ra.checkpoint_path) == slurp(rb.checkpoint_path));
}

TEST_CASE("smoke run: five epochs of distance training mostly reduce train loss") {
    const auto manifest = tiny_dataset("echorange_train_smoke", 10, 41);
    auto cfg = tiny_train_config();  // seed 7, 5 epochs
    const auto out = temp_dir("echorange_train_smoke_out");
    const auto result = train::train_distance(manifest, cfg, out, 2);
    REQUIRE(result.log.epochs.size() == 5);
    int improvements = 0;
    for (std::size_t i = 1; i < result.log.epochs.size(); ++i)
        if (result.log.epochs[i].train_loss <= result.log.epochs[i - 1].train_loss + 1e-12)
            ++improvements;
    CHECK(improvements >= 3);  // monotone-or-tie in at least 4 of 5 epochs' spirit
    CHECK(result.log.epochs.back().train_loss < result.log.epochs.front().train_loss);
}

TEST_CASE("detector pre-training leaves the distance head at its initialization") {
    const auto manifest = tiny_dataset("echorange_train_psed", 8, 51);
    auto cfg = tiny_train_config();
    cfg.max_epochs = 3;
    const auto out = temp_dir("echorange_train_psed_out");
    const auto result = train::train_detector(manifest, cfg, out, 2);

    const auto trained = net::load_checkpoint(result.checkpoint_path, cfg.model);
    const auto fresh = net::CRNNParams::init(cfg.model, cfg.seed);
    // distance head untouched
    for (const char* name : {"head_y.w", "head_y.b"}) {
        const auto& a = trained.tensor(name);
        const auto& b = fresh.tensor(name);
        for (std::size_t k = 0; k < a.size(); ++k)
            CHECK(a[k] == static_cast<double>(static_cast<float>(b[k])));
    }
    // detector head did move
    bool moved = false;
    const auto& dw = trained.tensor("head_d.w");
    const auto& fw = fresh.tensor("head_d.w");
    for (std::size_t k = 0; k < dw.size(); ++k)
        if (dw[k] != static_cast<double>(static_cast<float>(fw[k]))) moved = true;
    CHECK(moved);
}

TEST_CASE("distance training initialized from a detector checkpoint keeps its detector head") {
    const auto manifest = tiny_dataset("echorange_train_init", 8, 61);
    auto cfg = tiny_train_config();
    cfg.max_epochs = 2;
    const auto detector_out = temp_dir("echorange_train_init_det");
    const auto detector = train::train_detector(manifest, cfg, detector_out, 2);

    auto fine = cfg;
    fine.init_checkpoint = detector.checkpoint_path;
    fine.max_epochs = 1;
    // at epoch 0 the model parameters equal the checkpoint; verify via a
    // zero-learning-rate run whose best weights are the initial ones
    fine.learning_rate = 1e-12;
    const auto fine_out = temp_dir("echorange_train_init_fine");
    const auto result = train::train_distance(manifest, fine, fine_out, 2);

    const auto from_det = net::load_checkpoint(detector.checkpoint_path, cfg.model);
    const auto from_fine = net::load_checkpoint(result.checkpoint_path, cfg.model);
    for (const char* name : {"head_d.w", "head_d.b", "head_y.w", "head_y.b"}) {
        const auto& a = from_det.tensor(name);
        const auto& b = from_fine.tensor(name);
        for (std::size_t k = 0; k < a.size(); ++k)
            CHECK(b[k] == doctest::Approx(a[k]).epsilon(1e-7));
    }

    // digest mismatch: incompatible checkpoint is rejected
    auto wrong = cfg;
    wrong.model.recurrent_hidden = 24;
    wrong.init_checkpoint = detector.checkpoint_path;
    const auto wrong_out = temp_dir("echorange_train_init_wrong");
    CHECK_THROWS_AS(train::train_distance(manifest, wrong, wrong_out, 2), IncompatibleError);
}

TEST_CASE("regressor string plumbing reaches the training loss") {
    auto cfg = tiny_train_config();
    cfg.regressor = loss::RegressorKind::parse("tape:0.01");
    CHECK(cfg.regressor.variant == loss::Regressor::TAPE);
    CHECK(cfg.regressor.delta == doctest::Approx(0.01));
    cfg.validate();
}

TEST_CASE("training rejects manifests without a train split") {
    const auto dir = temp_dir("echorange_no_train_split");
    {
        std::ofstream out(dir / "manifest.jsonl");
        out << R"({"scene_id":"s0","wav_path":"s0.wav","room_id":"r","split":"test",)"
            << R"("frame_rate":50.0,"activity":[1],"distance":[1.0]})" << "\n";
    }
    CHECK_THROWS_AS(
        train::train_detector(dir / "manifest.jsonl", tiny_train_config(), dir / "out", 1),
        ConfigError);
}

TEST_CASE("render_scene propagates trajectory validation failures") {
    scene::RoomSpec room;
    room.dims = {4.0, 4.0, 3.0};
    room.wall_absorption.fill(0.5);
    room.max_image_order = 1;
    room.room_id = "bad_traj";
    const auto array = scene::ArrayGeometry::tetrahedral({2.0, 2.0, 1.5});
    scene::Trajectory traj;
    traj.onset = 0.1;
    traj.offset_time = 0.5;
    traj.keypoints = {{0.0, {5.0, 2.0, 1.5}}};  // outside the room
    audio::AudioClip source(1, 24000, 24000);
    source.at(0, 0) = 0.5f;
    CHECK_THROWS_AS(scene::render_scene(room, array, traj, source, nullptr,
                                        std::numeric_limits<double>::infinity(), 24000.0),
                    DomainError);
}

TEST_CASE("ECHORANGE_CACHE: hits and misses feed identical feature values") {
    const auto manifest = tiny_dataset("echorange_cache_env", 4, 71);
    const auto records = scene::load_manifest(manifest);
    REQUIRE(!records.empty());

    const auto cache_dir = temp_dir("echorange_cache_env_dir");
    setenv("ECHORANGE_CACHE", cache_dir.string().c_str(), 1);
    const auto first = train::load_scene_features(manifest, records[0]);   // miss: computes+stores
    const auto second = train::load_scene_features(manifest, records[0]);  // hit: reads cache
    unsetenv("ECHORANGE_CACHE");
    const auto uncached = train::load_scene_features(manifest, records[0]);

    REQUIRE(first.data.size() == second.data.size());
    for (std::size_t i = 0; i < first.data.size(); ++i) {
        CHECK(first.data[i] == second.data[i]);  // bit-identical across hit/miss
        CHECK(first.data[i] ==
              static_cast<double>(static_cast<float>(uncached.data[i])));
    }
    CHECK(!fs::is_empty(cache_dir));
}

TEST_CASE("train config json round-trip with validation errors") {
    const auto dir = temp_dir("echorange_cfg");
    {
        std::ofstream out(dir / "train.json");
        out << R"({"learning_rate": 0.002, "patience_epochs": 3, "batch_size": 4,
                   "max_epochs": 9, "seed": 13, "regressor": "tape:0.2", "augment": true,
                   "model": {"hidden": 24}})";
    }
    const auto cfg = train::TrainConfig::from_json_file(dir / "train.json");
    CHECK(cfg.learning_rate == doctest::Approx(0.002));
    CHECK(cfg.patience_epochs == 3);
    CHECK(cfg.batch_size == 4);
    CHECK(cfg.max_epochs == 9);
    CHECK(cfg.seed == 13);
    CHECK(cfg.augment);
    CHECK(cfg.model.recurrent_hidden == 24);
    CHECK(cfg.regressor.to_string() == "tape:0.2");

    {
        std::ofstream out(dir / "bad.json");
        out << R"({"learning_rate": -1})";
    }
    CHECK_THROWS_AS(train::TrainConfig::from_json_file(dir / "bad.json"), ConfigError);
}
