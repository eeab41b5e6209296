#include "echorange/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <mutex>

#include <json.hpp>

#include "echorange/errors.hpp"
#include "echorange/hash.hpp"
#include "echorange/parallel.hpp"
#include "echorange/rng.hpp"

namespace echorange::train {

TrainConfig TrainConfig::from_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("train config: cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("train config: invalid JSON: " + std::string(e.what()));
    }
    try {
        TrainConfig c;
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.patience_epochs = j.value("patience_epochs", c.patience_epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.max_epochs = j.value("max_epochs", c.max_epochs);
        c.seed = j.value("seed", c.seed);
        c.augment = j.value("augment", c.augment);
        c.window_frames = j.value("window_frames", c.window_frames);
        if (j.contains("regressor"))
            c.regressor = loss::RegressorKind::parse(j["regressor"].get<std::string>());
        if (j.contains("init_checkpoint"))
            c.init_checkpoint = std::filesystem::path(j["init_checkpoint"].get<std::string>());
        if (j.contains("model")) {
            const auto& m = j["model"];
            if (m.contains("conv_blocks")) {
                c.model.conv_blocks.clear();
                for (const auto& b : m["conv_blocks"])
                    c.model.conv_blocks.push_back(
                        {b.at("channels").get<int>(), b.at("pool").get<int>()});
            }
            c.model.recurrent_hidden = m.value("hidden", c.model.recurrent_hidden);
            c.model.dropout_rate = m.value("dropout", c.model.dropout_rate);
        }
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("train config: missing or mistyped field: " + std::string(e.what()));
    }
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("train config: learning_rate must be > 0");
    if (patience_epochs < 1) throw ConfigError("train config: patience_epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("train config: max_epochs must be >= 1");
    if (window_frames < 1) throw ConfigError("train config: window_frames must be >= 1");
    regressor.validate();
    model.validate();
}

void TrainLog::save_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("train log: cannot write " + path.string());
    out << "epoch,train_loss,val_loss,val_metric,best\n";
    char buf[160];
    for (const auto& e : epochs) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%d\n", e.epoch, e.train_loss,
                      e.val_loss, e.val_metric, e.best ? 1 : 0);
        out << buf;
    }
    out << "# stopping_reason," << stopping_reason << "\n";
}

AdamState AdamState::for_params(const net::CRNNParams& params) {
    AdamState s;
    s.m.reserve(params.count());
    s.v.reserve(params.count());
    for (std::size_t i = 0; i < params.count(); ++i) {
        s.m.emplace_back(params.tensor(i).shape());
        s.v.emplace_back(params.tensor(i).shape());
    }
    return s;
}

void adam_step(net::CRNNParams& params, const std::vector<net::Tensor>& grads, AdamState& state,
               double learning_rate) {
    if (grads.size() != params.count() || state.m.size() != params.count())
        throw ShapeError("adam_step: gradient/state count mismatch");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.count(); ++i) {
        net::Tensor& theta = params.tensor(i);
        const net::Tensor& g = grads[i];
        if (g.size() != theta.size()) throw ShapeError("adam_step: gradient shape mismatch");
        net::Tensor& m = state.m[i];
        net::Tensor& v = state.v[i];
        for (std::size_t k = 0; k < theta.size(); ++k) {
            const double gk = g[k];
            if (!std::isfinite(gk))
                throw DomainError("adam_step: non-finite gradient in " + params.name(i) +
                                  " (training aborted)");
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * gk;
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * gk * gk;
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            theta[k] -= learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

namespace {

struct PermMatrix {
    std::array<int, 4> perm;
    std::array<double, 9> matrix;  // row-major, m_i = M * m_perm[i]
};

std::array<double, 9> mat_mul(const std::array<double, 9>& a, const std::array<double, 9>& b) {
    std::array<double, 9> c{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) c[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
    return c;
}

// Closure of the two generators: quarter-turn rotoreflection about z and the
// left-right mirror. Deterministic BFS order, identity first.
const std::vector<PermMatrix>& swap_group() {
    static const std::vector<PermMatrix> group = [] {
        const PermMatrix identity{{0, 1, 2, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}};
        // (x,y,z) -> (-y,x,-z): channel i takes the signal of channel a[i]
        const PermMatrix a{{1, 3, 0, 2}, {0, -1, 0, 1, 0, 0, 0, 0, -1}};
        // (x,y,z) -> (x,-y,z)
        const PermMatrix b{{0, 2, 1, 3}, {1, 0, 0, 0, -1, 0, 0, 0, 1}};

        auto compose = [](const PermMatrix& p, const PermMatrix& q) {
            PermMatrix r;
            for (int i = 0; i < 4; ++i) r.perm[i] = q.perm[p.perm[i]];
            r.matrix = mat_mul(p.matrix, q.matrix);
            return r;
        };

        std::vector<PermMatrix> closure{identity};
        for (std::size_t i = 0; i < closure.size(); ++i) {
            for (const auto& gen : {a, b}) {
                const PermMatrix candidate = compose(closure[i], gen);
                bool known = false;
                for (const auto& existing : closure)
                    if (existing.perm == candidate.perm) known = true;
                if (!known) closure.push_back(candidate);
            }
        }
        return closure;
    }();
    return group;
}

}  // namespace

std::array<std::array<int, 4>, 8> channel_swap_permutations() {
    const auto& group = swap_group();
    std::array<std::array<int, 4>, 8> out{};
    for (std::size_t i = 0; i < 8; ++i) out[i] = group[i].perm;
    return out;
}

std::array<double, 9> channel_swap_isometry(const std::array<int, 4>& permutation) {
    for (const auto& e : swap_group())
        if (e.perm == permutation) return e.matrix;
    throw DomainError("channel_swap_isometry: not a member of the swap group");
}

std::vector<std::pair<audio::AudioClip, scene::SceneAnnotation>> channel_swap_variants(
    const audio::AudioClip& clip, const scene::SceneAnnotation& annotation) {
    if (clip.channels() != 4) throw ShapeError("channel_swap_variants: clip must have 4 channels");
    std::vector<std::pair<audio::AudioClip, scene::SceneAnnotation>> out;
    out.reserve(8);
    for (const auto& perm : channel_swap_permutations()) {
        audio::AudioClip variant(4, clip.frames(), clip.sample_rate());
        for (std::size_t t = 0; t < clip.frames(); ++t)
            for (int c = 0; c < 4; ++c) variant.at(t, c) = clip.at(t, perm[c]);
        out.emplace_back(std::move(variant), annotation);
    }
    return out;
}

feat::StandardizationStats compute_standardization(
    const std::vector<feat::FeatureTensor>& feats) {
    if (feats.empty()) throw NoDataError("compute_standardization: empty training split");
    feat::StandardizationStats stats;
    for (int m = 0; m < feat::kNumMaps; ++m) {
        double sum = 0.0;
        std::size_t count = 0;
        for (const auto& f : feats) {
            const double* d = &f.data[static_cast<std::size_t>(m) * f.frames * f.bins];
            for (std::size_t i = 0; i < f.frames * f.bins; ++i) sum += d[i];
            count += f.frames * f.bins;
        }
        const double mean = sum / static_cast<double>(count);
        double ss = 0.0;
        for (const auto& f : feats) {
            const double* d = &f.data[static_cast<std::size_t>(m) * f.frames * f.bins];
            for (std::size_t i = 0; i < f.frames * f.bins; ++i)
                ss += (d[i] - mean) * (d[i] - mean);
        }
        stats.mean[m] = mean;
        stats.stddev[m] = std::max(std::sqrt(ss / static_cast<double>(count)), 1e-6);
    }
    return stats;
}

double detector_f1(const std::vector<std::uint8_t>& truth, const std::vector<double>& predicted,
                   double threshold) {
    if (truth.size() != predicted.size()) throw ShapeError("detector_f1: length mismatch");
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const bool p = predicted[i] >= threshold;
        if (p && truth[i]) ++tp;
        else if (p && !truth[i]) ++fp;
        else if (!p && truth[i]) ++fn;
    }
    if (tp == 0 && fp == 0 && fn == 0) return 1.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

namespace {

struct LoadedScene {
    scene::SceneRecord record;
    feat::FeatureTensor features;  // standardized in place once stats exist
};

void round_through_float32(feat::FeatureTensor& f) {
    for (auto& v : f.data) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace

feat::FeatureTensor load_scene_features(const std::filesystem::path& manifest,
                                        const scene::SceneRecord& record) {
    const char* cache_env = std::getenv("ECHORANGE_CACHE");
    const auto wav = scene::resolve_wav_path(manifest, record);
    if (cache_env && *cache_env) {
        const std::filesystem::path cache_dir(cache_env);
        std::filesystem::create_directories(cache_dir);
        char name[32];
        const auto key = fnv1a64(std::filesystem::absolute(wav).string());
        std::snprintf(name, sizeof(name), "%016llx.erft", static_cast<unsigned long long>(key));
        const auto cache_path = cache_dir / name;
        if (std::filesystem::exists(cache_path)) return feat::read_feature_cache(cache_path);
        auto feats = feat::assemble_features(audio::read_wav(wav));
        feat::write_feature_cache(feats, cache_path);
        round_through_float32(feats);  // hits and misses feed identical values
        return feats;
    }
    return feat::assemble_features(audio::read_wav(wav));
}

namespace {

std::vector<LoadedScene> load_scenes(const std::filesystem::path& manifest,
                                     const std::vector<scene::SceneRecord>& records, int jobs) {
    std::vector<LoadedScene> scenes(records.size());
    parallel_for(static_cast<int>(records.size()), jobs, [&](int i) {
        scenes[i].record = records[i];
        scenes[i].features = load_scene_features(manifest, records[i]);
        if (scenes[i].features.frames != records[i].activity.size())
            throw ShapeError("training data: feature/annotation frame mismatch in " +
                             records[i].scene_id);
    });
    return scenes;
}

void standardize_in_place(feat::FeatureTensor& f, const feat::StandardizationStats& stats) {
    for (int m = 0; m < feat::kNumMaps; ++m) {
        const double mu = stats.mean[m];
        const double inv = 1.0 / stats.stddev[m];
        double* d = &f.data[static_cast<std::size_t>(m) * f.frames * f.bins];
        for (std::size_t i = 0; i < f.frames * f.bins; ++i) d[i] = (d[i] - mu) * inv;
    }
}

int gcc_pair_index(int a, int b) {
    for (int p = 0; p < 6; ++p)
        if (feat::kGccPairs[p][0] == a && feat::kGccPairs[p][1] == b) return p;
    throw DomainError("gcc_pair_index: bad pair");
}

// One fixed-length window of a scene's (standardized) features under a
// channel-swap permutation, applied in the feature domain: log-mel maps
// permute with the channels; a reversed GCC pair flips its lag axis.
feat::FeatureTensor window_features(const feat::FeatureTensor& scene_feats, std::size_t begin,
                                    int window, const std::array<int, 4>& perm) {
    feat::FeatureTensor out;
    out.frames = static_cast<std::size_t>(window);
    out.bins = scene_feats.bins;
    out.data.assign(static_cast<std::size_t>(feat::kNumMaps) * out.frames * out.bins, 0.0);

    const std::size_t avail =
        scene_feats.frames > begin ? std::min<std::size_t>(window, scene_feats.frames - begin) : 0;
    const int L = static_cast<int>(out.bins);
    for (int m = 0; m < feat::kNumMaps; ++m) {
        int src_map;
        bool flip = false;
        if (m < 4) {
            src_map = perm[m];
        } else {
            const int a = perm[feat::kGccPairs[m - 4][0]];
            const int b = perm[feat::kGccPairs[m - 4][1]];
            if (a < b) {
                src_map = 4 + gcc_pair_index(a, b);
            } else {
                src_map = 4 + gcc_pair_index(b, a);
                flip = true;
            }
        }
        for (std::size_t t = 0; t < avail; ++t) {
            const double* src =
                &scene_feats.data[(static_cast<std::size_t>(src_map) * scene_feats.frames +
                                   begin + t) * scene_feats.bins];
            double* dst = &out.data[(static_cast<std::size_t>(m) * out.frames + t) * out.bins];
            if (!flip) {
                std::copy(src, src + L, dst);
            } else {
                dst[0] = src[0];  // edge lag has no mirror image; physically empty
                for (int k = 1; k < L; ++k) dst[k] = src[L - k];
            }
        }
    }
    return out;
}

struct Window {
    int scene = 0;
    int variant = 0;  // index into channel_swap_permutations()
    std::size_t begin = 0;
};

struct WindowLabels {
    std::vector<double> y;
    std::vector<std::uint8_t> d;
};

WindowLabels window_labels(const scene::SceneRecord& record, std::size_t begin, int window) {
    WindowLabels lab;
    lab.y.assign(window, 0.0);
    lab.d.assign(window, 0);
    for (int t = 0; t < window; ++t) {
        const std::size_t f = begin + static_cast<std::size_t>(t);
        if (f < record.activity.size()) {
            lab.d[t] = record.activity[f];
            lab.y[t] = record.distance[f];
        }
    }
    return lab;
}

struct EvalPass {
    double loss_sum = 0.0;       // sum of per-frame Eq-1 terms
    std::size_t frames = 0;      // N_val * window_frames
    double abs_err_sum = 0.0;    // masked, real frames only
    std::size_t active = 0;
    std::vector<std::uint8_t> truth;
    std::vector<double> pred_d;
};

EvalPass evaluate_split(const net::CRNNParams& params, const std::vector<LoadedScene>& scenes,
                        const std::vector<Window>& windows,
                        const std::array<std::array<int, 4>, 8>& perms, int window_frames,
                        const loss::RegressorKind& kind, bool include_regressor, int jobs) {
    struct ItemResult {
        double loss_sum = 0.0;
        double abs_err_sum = 0.0;
        std::size_t active = 0;
        std::vector<std::uint8_t> truth;
        std::vector<double> pred_d;
    };
    std::vector<ItemResult> results(windows.size());
    parallel_for(static_cast<int>(windows.size()), jobs, [&](int i) {
        const auto& w = windows[i];
        const auto& sc = scenes[w.scene];
        const auto feats = window_features(sc.features, w.begin, window_frames, perms[w.variant]);
        const auto lab = window_labels(sc.record, w.begin, window_frames);
        const auto out = net::crnn_forward(params, feats);
        ItemResult r;
        for (int t = 0; t < window_frames; ++t) {
            if (include_regressor && lab.d[t])
                r.loss_sum += loss::regressor(kind, lab.y[t], out.y_hat[t]);
            r.loss_sum += loss::bce(static_cast<double>(lab.d[t]), out.d_hat[t]);
            const std::size_t f = w.begin + static_cast<std::size_t>(t);
            if (f < sc.record.activity.size()) {  // real frames only for metrics
                r.truth.push_back(lab.d[t]);
                r.pred_d.push_back(out.d_hat[t]);
                if (lab.d[t]) {
                    r.abs_err_sum += std::abs(out.y_hat[t] - lab.y[t]);
                    ++r.active;
                }
            }
        }
        results[i] = std::move(r);
    });

    EvalPass pass;
    pass.frames = windows.size() * static_cast<std::size_t>(window_frames);
    for (const auto& r : results) {
        pass.loss_sum += r.loss_sum;
        pass.abs_err_sum += r.abs_err_sum;
        pass.active += r.active;
        pass.truth.insert(pass.truth.end(), r.truth.begin(), r.truth.end());
        pass.pred_d.insert(pass.pred_d.end(), r.pred_d.begin(), r.pred_d.end());
    }
    return pass;
}

TrainResult run_training(const std::filesystem::path& manifest, const TrainConfig& config,
                         const std::filesystem::path& out_dir, int jobs, bool detector_mode) {
    config.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("training: cannot create " + out_dir.string() + ": " + ec.message());
    const auto records = scene::load_manifest(manifest);

    std::vector<scene::SceneRecord> train_records, val_records;
    for (const auto& r : records) {
        if (r.split == "train") train_records.push_back(r);
        else if (r.split == "val") val_records.push_back(r);
    }
    if (train_records.empty()) throw ConfigError("training: manifest has no train split");
    if (val_records.empty()) {
        // No explicit validation split: peel off 15% of the training scenes,
        // chosen deterministically from the seed.
        std::vector<std::size_t> idx(train_records.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        Rng rng(derive_seed(config.seed, 0x7a11));
        rng.shuffle(idx.begin(), idx.end());
        const std::size_t n_val =
            std::max<std::size_t>(1, static_cast<std::size_t>(0.15 * train_records.size()));
        std::vector<bool> is_val(train_records.size(), false);
        for (std::size_t i = 0; i < n_val && i < idx.size(); ++i) is_val[idx[i]] = true;
        std::vector<scene::SceneRecord> kept;
        for (std::size_t i = 0; i < train_records.size(); ++i)
            (is_val[i] ? val_records : kept).push_back(train_records[i]);
        train_records = std::move(kept);
        if (train_records.empty()) throw ConfigError("training: all scenes went to validation");
    }

    auto train_scenes = load_scenes(manifest, train_records, jobs);
    auto val_scenes = load_scenes(manifest, val_records, jobs);

    std::vector<feat::FeatureTensor> train_feats;
    train_feats.reserve(train_scenes.size());
    for (const auto& s : train_scenes) train_feats.push_back(s.features);
    const auto stats = compute_standardization(train_feats);
    train_feats.clear();
    for (auto& s : train_scenes) standardize_in_place(s.features, stats);
    for (auto& s : val_scenes) standardize_in_place(s.features, stats);

    net::CRNNParams params = config.init_checkpoint
                                 ? net::load_checkpoint(*config.init_checkpoint, config.model)
                                 : net::CRNNParams::init(config.model, config.seed);

    const auto perms = channel_swap_permutations();
    const int W = config.window_frames;
    auto windows_of = [&](const std::vector<LoadedScene>& scenes, bool augment) {
        std::vector<Window> out;
        for (std::size_t s = 0; s < scenes.size(); ++s) {
            const std::size_t frames = scenes[s].features.frames;
            const std::size_t n_chunks = (frames + W - 1) / static_cast<std::size_t>(W);
            const int n_variants = augment ? 8 : 1;
            for (int v = 0; v < n_variants; ++v)
                for (std::size_t c = 0; c < n_chunks; ++c)
                    out.push_back({static_cast<int>(s), v, c * static_cast<std::size_t>(W)});
        }
        return out;
    };
    auto train_windows = windows_of(train_scenes, config.augment);
    const auto val_windows = windows_of(val_scenes, false);
    if (train_windows.empty() || val_windows.empty())
        throw ConfigError("training: empty train or validation window set");

    AdamState adam = AdamState::for_params(params);
    TrainLog log;
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    net::CRNNParams best_params = params;

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(config.seed, 0x10000u + static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(train_windows.begin(), train_windows.end());

        double epoch_loss_sum = 0.0;
        std::size_t epoch_frames = 0;
        for (std::size_t start = 0; start < train_windows.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t n_items =
                std::min<std::size_t>(config.batch_size, train_windows.size() - start);
            const double inv_nt = 1.0 / (static_cast<double>(n_items) * W);

            std::vector<std::vector<net::Tensor>> item_grads(n_items);
            std::vector<double> item_sums(n_items, 0.0);
            parallel_for(static_cast<int>(n_items), jobs, [&](int i) {
                const auto& w = train_windows[start + static_cast<std::size_t>(i)];
                const auto& sc = train_scenes[w.scene];
                const auto feats =
                    window_features(sc.features, w.begin, W, perms[w.variant]);
                const auto lab = window_labels(sc.record, w.begin, W);

                Rng dropout_rng(derive_seed(
                    config.seed, 0x40000000u + static_cast<std::uint64_t>(epoch) * 1000003u +
                                     start + static_cast<std::uint64_t>(i)));
                auto graph = net::build_crnn_graph(
                    params, feats, config.model.dropout_rate > 0.0 ? &dropout_rng : nullptr);
                auto terms = graph.tape.eq1_terms(graph.y_hat, graph.d_hat, lab.y, lab.d,
                                                  config.regressor, !detector_mode);
                auto scaled = graph.tape.scale(terms, inv_nt);
                graph.tape.backward(scaled);

                item_sums[i] = terms->value[0];
                auto& grads = item_grads[i];
                grads.resize(params.count());
                for (auto& [name, node] : graph.params) {
                    // pair by registry index so the reduction below cannot
                    // misalign even if the graph registered leaves differently
                    std::size_t p = params.count();
                    for (std::size_t q = 0; q < params.count(); ++q)
                        if (params.name(q) == name) p = q;
                    if (p == params.count())
                        throw StateError("training: graph parameter not in registry: " + name);
                    grads[p] = node->grad.size() == node->value.size()
                                   ? node->grad
                                   : net::Tensor(node->value.shape());
                }
            });

            // fixed-order reduction keeps gradients independent of jobs
            std::vector<net::Tensor> grads;
            grads.reserve(params.count());
            for (std::size_t p = 0; p < params.count(); ++p) {
                net::Tensor acc(params.tensor(p).shape());
                for (std::size_t i = 0; i < n_items; ++i) {
                    const auto& g = item_grads[i][p];
                    if (g.size() != acc.size())
                        throw ShapeError("training: gradient shape mismatch in reduction");
                    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += g[k];
                }
                grads.push_back(std::move(acc));
            }
            adam_step(params, grads, adam, config.learning_rate);

            for (double s : item_sums) epoch_loss_sum += s;
            epoch_frames += n_items * static_cast<std::size_t>(W);
        }

        const auto val = evaluate_split(params, val_scenes, val_windows, perms, W,
                                        config.regressor, !detector_mode, jobs);
        const double train_loss = epoch_loss_sum / static_cast<double>(epoch_frames);
        const double val_loss = val.loss_sum / static_cast<double>(val.frames);
        const double val_metric =
            detector_mode ? detector_f1(val.truth, val.pred_d)
                          : (val.active ? val.abs_err_sum / static_cast<double>(val.active) : 0.0);

        EpochRecord rec{epoch, train_loss, val_loss, val_metric, false};
        if (val_loss < best_val) {
            best_val = val_loss;
            best_epoch = epoch;
            best_params = params;
            rec.best = true;
        }
        log.epochs.push_back(rec);
        std::cout << (detector_mode ? "[detector]" : "[distance]") << " epoch " << epoch
                  << " train_loss " << train_loss << " val_loss " << val_loss << " val_metric "
                  << val_metric << (rec.best ? " *" : "") << "\n";

        if (epoch - best_epoch >= config.patience_epochs) {
            log.stopping_reason = "patience";
            break;
        }
    }
    if (log.stopping_reason.empty()) log.stopping_reason = "max_epochs";

    params = best_params;  // restore best-epoch weights

    const std::string base = detector_mode ? "detector" : "model";
    TrainResult result;
    result.checkpoint_path = out_dir / (base + ".erck");
    result.stats_path = out_dir / (base + ".stats.json");
    net::save_checkpoint(params, result.checkpoint_path);
    stats.save_json(result.stats_path);
    log.save_csv(out_dir / (base + "_trainlog.csv"));
    result.log = std::move(log);
    result.stats = stats;
    result.best_val_loss = best_val;

    const auto final_val = evaluate_split(params, val_scenes, val_windows, perms, W,
                                          config.regressor, !detector_mode, jobs);
    result.final_metric =
        detector_mode
            ? detector_f1(final_val.truth, final_val.pred_d)
            : (final_val.active ? final_val.abs_err_sum / static_cast<double>(final_val.active)
                                : 0.0);
    return result;
}

}  // namespace

TrainResult train_detector(const std::filesystem::path& manifest, const TrainConfig& config,
                           const std::filesystem::path& out_dir, int jobs) {
    return run_training(manifest, config, out_dir, jobs, true);
}

TrainResult train_distance(const std::filesystem::path& manifest, const TrainConfig& config,
                           const std::filesystem::path& out_dir, int jobs) {
    return run_training(manifest, config, out_dir, jobs, false);
}

}  // namespace echorange::train
