#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "echorange/errors.hpp"
#include "echorange/eval.hpp"
#include "echorange/hash.hpp"
#include "echorange/parallel.hpp"
#include "echorange/scene.hpp"
#include "echorange/train.hpp"

namespace fs = std::filesystem;
using namespace echorange;

namespace {

// Refuse to clobber a non-empty output directory unless --force was given.
void claim_out_dir(const fs::path& out, bool force) {
    if (fs::exists(out) && fs::is_directory(out) && !fs::is_empty(out) && !force)
        throw ConfigError("output directory " + out.string() +
                          " is not empty (use --force to overwrite)");
    fs::create_directories(out);
}

std::uint64_t file_digest(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    return fnv1a64(bytes.data(), bytes.size());
}

std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

int run_synth(const fs::path& config_path, const fs::path& out, std::uint64_t seed_override,
              bool has_seed, int jobs, bool force) {
    auto config = scene::DatasetConfig::from_json_file(config_path);
    claim_out_dir(out, force);
    const std::uint64_t seed = has_seed ? seed_override : config.seed;
    const auto manifest = scene::make_dataset(config, seed, out, jobs);
    std::cout << "manifest: " << manifest.string() << "\n";
    std::cout << "manifest_digest: " << hex64(file_digest(manifest)) << "\n";
    return 0;
}

int run_train(const fs::path& manifest, const fs::path& out, const std::string& config_path,
              bool detector_only, const std::string& regressor, const std::string& init,
              std::uint64_t seed_override, bool has_seed, int epochs, int patience, int batch,
              bool augment, int jobs, bool force) {
    train::TrainConfig config;
    if (!config_path.empty()) config = train::TrainConfig::from_json_file(config_path);
    if (!regressor.empty()) config.regressor = loss::RegressorKind::parse(regressor);
    if (!init.empty()) config.init_checkpoint = fs::path(init);
    if (has_seed) config.seed = seed_override;
    if (epochs > 0) config.max_epochs = epochs;
    if (patience > 0) config.patience_epochs = patience;
    if (batch > 0) config.batch_size = batch;
    if (augment) config.augment = true;
    config.validate();
    claim_out_dir(out, force);

    if (config.init_checkpoint)
        std::cout << "initializing from " << config.init_checkpoint->string() << "\n";
    const auto result = detector_only ? train::train_detector(manifest, config, out, jobs)
                                      : train::train_distance(manifest, config, out, jobs);
    std::cout << "checkpoint: " << result.checkpoint_path.string() << "\n";
    std::cout << "best_val_loss: " << result.best_val_loss << "\n";
    std::cout << (detector_only ? "val_f1: " : "val_mae: ") << result.final_metric << "\n";
    std::cout << "stopping: " << result.log.stopping_reason << "\n";
    return 0;
}

struct SceneEval {
    std::vector<eval::ErrorPair> pairs;
    eval::Trace trace;
};

// Inference over one split; returns per-scene error pairs and traces.
std::vector<SceneEval> infer_split(const fs::path& manifest,
                                   const std::vector<scene::SceneRecord>& records,
                                   const net::CRNNParams& params,
                                   const feat::StandardizationStats& stats, int jobs) {
    std::vector<SceneEval> out(records.size());
    parallel_for(static_cast<int>(records.size()), jobs, [&](int i) {
        const auto& rec = records[i];
        auto feats = train::load_scene_features(manifest, rec);
        for (int m = 0; m < feat::kNumMaps; ++m) {
            const double mu = stats.mean[m];
            const double inv = 1.0 / stats.stddev[m];
            double* d = &feats.data[static_cast<std::size_t>(m) * feats.frames * feats.bins];
            for (std::size_t k = 0; k < feats.frames * feats.bins; ++k) d[k] = (d[k] - mu) * inv;
        }
        const auto output = net::crnn_forward(params, feats);
        const auto ann = rec.annotation();
        out[i].pairs = eval::frame_errors(output.y_hat, ann);
        out[i].trace.scene_id = rec.scene_id;
        for (std::size_t t = 0; t < output.y_hat.size(); ++t)
            out[i].trace.samples.push_back({t, (static_cast<double>(t) + 0.5) / rec.frame_rate,
                                            rec.distance[t], output.y_hat[t],
                                            static_cast<int>(rec.activity[t]), output.d_hat[t]});
    });
    return out;
}

int run_eval(const fs::path& manifest_path, const fs::path& out, const std::string& checkpoint,
             const std::string& ablate, const std::string& stats_path,
             const std::string& experiment, const std::string& split, double bin_width,
             int n_traces, int jobs, bool force) {
    claim_out_dir(out, force);
    const auto records = scene::load_manifest(manifest_path);
    std::vector<scene::SceneRecord> test_records, train_records;
    for (const auto& r : records) {
        if (r.split == split) test_records.push_back(r);
        if (r.split == "train") train_records.push_back(r);
    }
    if (test_records.empty())
        throw ConfigError("eval: manifest has no scenes in split '" + split + "'");

    // name=checkpoint rows; a bare --checkpoint is a single-row ablation
    std::vector<std::pair<std::string, fs::path>> runs;
    if (!ablate.empty()) {
        std::stringstream ss(ablate);
        std::string item;
        while (std::getline(ss, item, ',')) {
            const auto sep = item.find('=');
            if (sep == std::string::npos)
                throw ConfigError("eval: --ablate expects name=checkpoint pairs");
            runs.emplace_back(item.substr(0, sep), fs::path(item.substr(sep + 1)));
        }
    } else {
        if (checkpoint.empty()) throw ConfigError("eval: need --checkpoint or --ablate");
        runs.emplace_back(experiment.empty() ? "model" : experiment, fs::path(checkpoint));
    }

    const double baseline = eval::avg_pred_baseline(train_records);
    std::vector<double> baseline_errors;
    for (const auto& r : test_records)
        for (std::size_t t = 0; t < r.activity.size(); ++t)
            if (r.activity[t]) baseline_errors.push_back(std::abs(baseline - r.distance[t]));
    const auto baseline_summary = eval::summarize(baseline_errors);

    std::vector<eval::SummaryRow> rows;
    const net::CRNNConfig model_config;  // defaults; digest guards mismatches
    for (const auto& [name, ckpt] : runs) {
        const auto params = net::load_checkpoint(ckpt, model_config);
        fs::path sp = stats_path.empty() ? fs::path(ckpt).replace_extension(".stats.json")
                                         : fs::path(stats_path);
        const auto stats = feat::StandardizationStats::load_json(sp);

        const auto evals = infer_split(manifest_path, test_records, params, stats, jobs);
        std::vector<eval::ErrorPair> pairs;
        std::vector<eval::Trace> traces;
        for (std::size_t i = 0; i < evals.size(); ++i) {
            pairs.insert(pairs.end(), evals[i].pairs.begin(), evals[i].pairs.end());
            if (static_cast<int>(traces.size()) < n_traces) traces.push_back(evals[i].trace);
        }
        std::vector<double> errs;
        errs.reserve(pairs.size());
        for (const auto& p : pairs) errs.push_back(p.abs_err);

        eval::SummaryRow row{name, "", eval::summarize(errs)};
        rows.push_back(row);

        const auto curve = eval::binned_error_curve(pairs, bin_width);
        const fs::path run_dir = runs.size() == 1 ? out : out / name;
        eval::emit_report({row, {"avg_pred", "", baseline_summary}}, curve, traces, run_dir);
    }

    rows.push_back({"avg_pred", "", baseline_summary});
    if (runs.size() > 1) {
        // combined table across the ablation
        eval::ErrorCurve empty_curve;
        empty_curve.bins.push_back({0.0, bin_width, 0.0, 0, std::nullopt});
        std::ofstream combined(out / "summary.csv", std::ios::binary);
        combined << "experiment,regressor,mean,median,std,n\n";
        for (const auto& r : rows) {
            char buf[160];
            std::snprintf(buf, sizeof(buf), "%s,%s,%.9g,%.9g,%.9g,%zu\n", r.experiment.c_str(),
                          r.regressor.c_str(), r.summary.mean_abs_err, r.summary.median_abs_err,
                          r.summary.std_abs_err, r.summary.n_frames);
            combined << buf;
        }
    }

    std::cout << "experiment        mean    median  std     n\n";
    for (const auto& r : rows) {
        std::printf("%-16s  %.4f  %.4f  %.4f  %zu\n", r.experiment.c_str(),
                    r.summary.mean_abs_err, r.summary.median_abs_err, r.summary.std_abs_err,
                    r.summary.n_frames);
    }
    return 0;
}

int run_report(const std::string& inputs, const fs::path& out, bool force) {
    claim_out_dir(out, force);
    std::vector<fs::path> dirs;
    std::stringstream ss(inputs);
    std::string item;
    while (std::getline(ss, item, ',')) dirs.emplace_back(item);
    if (dirs.empty()) throw ConfigError("report: --inputs must list at least one eval directory");

    std::vector<eval::SummaryRow> rows;
    std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>> series;
    for (const auto& dir : dirs) {
        for (auto& r : eval::read_summary_csv(dir / "summary.csv")) {
            if (r.experiment == "avg_pred" && !rows.empty()) continue;  // keep one baseline row
            rows.push_back(r);
        }
        const auto curve = eval::read_curve_csv(dir / "curve.csv");
        std::vector<std::pair<double, double>> pts;
        for (const auto& b : curve.bins)
            if (b.count > 0) pts.push_back({0.5 * (b.lo + b.hi), b.mean_err});
        series.push_back({dir.filename().string(), pts});
    }

    std::ofstream combined(out / "summary.csv", std::ios::binary);
    combined << "experiment,regressor,mean,median,std,n\n";
    for (const auto& r : rows) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%s,%s,%.9g,%.9g,%.9g,%zu\n", r.experiment.c_str(),
                      r.regressor.c_str(), r.summary.mean_abs_err, r.summary.median_abs_err,
                      r.summary.std_abs_err, r.summary.n_frames);
        combined << buf;
    }

    // one combined curve figure, one polyline per input
    std::ofstream svg(out / "curves.svg", std::ios::binary);
    svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 400\">\n"
        << "<rect width=\"800\" height=\"400\" fill=\"white\"/>\n";
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const auto& [name, pts] : series)
        for (const auto& [x, y] : pts) {
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    if (x1 <= x0) x1 = x0 + 1.0;
    if (y1 <= y0) y1 = y0 + 1.0;
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
    int ci = 0;
    double legend_y = 50.0;
    for (const auto& [name, pts] : series) {
        svg << "<polyline fill=\"none\" stroke=\"" << colors[ci % 5]
            << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [x, y] : pts)
            svg << 50.0 + (x - x0) / (x1 - x0) * 700.0 << ","
                << 350.0 - (y - y0) / (y1 - y0) * 300.0 << " ";
        svg << "\"/>\n<text x=\"600\" y=\"" << legend_y << "\" fill=\"" << colors[ci % 5] << "\">"
            << name << "</text>\n";
        legend_y += 16.0;
        ++ci;
    }
    svg << "</svg>\n";
    std::cout << "combined report in " << out.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"echorange: sound-source distance estimation toolkit"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand

    std::uint64_t seed = 0;
    int jobs = static_cast<int>(std::thread::hardware_concurrency());
    if (jobs < 1) jobs = 1;
    bool force = false, verbose = false;
    app.add_option("--seed", seed, "Seed override");
    app.add_option("--jobs", jobs, "Worker threads");
    app.add_flag("--force", force, "Overwrite non-empty output directories");
    app.add_flag("--verbose", verbose, "Chatty progress output");

    auto* synth = app.add_subcommand("synth", "Render a synthetic dataset");
    std::string synth_config, synth_out;
    synth->add_option("--config", synth_config, "Dataset config JSON")->required();
    synth->add_option("--out", synth_out, "Output directory")->required();

    auto* trainc = app.add_subcommand("train", "Train the detector or the full model");
    std::string train_manifest, train_out, train_config, train_regressor, train_init;
    bool detector_only = false, augment = false;
    int epochs = 0, patience = 0, batch = 0;
    trainc->add_option("--manifest", train_manifest, "Dataset manifest")->required();
    trainc->add_option("--out", train_out, "Output directory")->required();
    trainc->add_option("--config", train_config, "Train config JSON");
    trainc->add_option("--regressor", train_regressor, "ae|se|ape|spe|tape:<delta>");
    trainc->add_option("--init", train_init, "Initial checkpoint");
    trainc->add_option("--epochs", epochs, "Max epochs override");
    trainc->add_option("--patience", patience, "Early-stopping patience override");
    trainc->add_option("--batch", batch, "Batch size override");
    trainc->add_flag("--detector-only", detector_only, "Detector pre-training (BCE only)");
    trainc->add_flag("--augment", augment, "Channel-swap augmentation x8");

    auto* evalc = app.add_subcommand("eval", "Evaluate checkpoints on a manifest split");
    std::string eval_manifest, eval_out, eval_ckpt, eval_ablate, eval_stats, eval_exp;
    std::string eval_split = "test";
    double bin_width = 0.25;
    int n_traces = 2;
    evalc->add_option("--manifest", eval_manifest, "Dataset manifest")->required();
    evalc->add_option("--out", eval_out, "Output directory")->required();
    evalc->add_option("--checkpoint", eval_ckpt, "Model checkpoint");
    evalc->add_option("--ablate", eval_ablate, "name=ckpt[,name=ckpt...] ablation table");
    evalc->add_option("--stats", eval_stats, "Standardization stats JSON");
    evalc->add_option("--experiment", eval_exp, "Row label for the summary");
    evalc->add_option("--split", eval_split, "Manifest split to evaluate");
    evalc->add_option("--bin-width", bin_width, "Error-curve bin width in meters");
    evalc->add_option("--traces", n_traces, "Number of trace CSVs to emit");

    auto* report = app.add_subcommand("report", "Combine eval outputs into one table/figure");
    std::string report_inputs, report_out;
    report->add_option("--inputs", report_inputs, "Comma-separated eval directories")->required();
    report->add_option("--out", report_out, "Output directory")->required();

    CLI11_PARSE(app, argc, argv);
    const bool has_seed = app.count("--seed") > 0;
    if (verbose) {
        std::cerr << "jobs: " << jobs << "\n";
        if (has_seed) std::cerr << "seed override: " << seed << "\n";
        if (const char* cache = std::getenv("ECHORANGE_CACHE"))
            std::cerr << "feature cache: " << cache << "\n";
    }

    try {
        if (synth->parsed())
            return run_synth(synth_config, synth_out, seed, has_seed, jobs, force);
        if (trainc->parsed())
            return run_train(train_manifest, train_out, train_config, detector_only,
                             train_regressor, train_init, seed, has_seed, epochs, patience, batch,
                             augment, jobs, force);
        if (evalc->parsed())
            return run_eval(eval_manifest, eval_out, eval_ckpt, eval_ablate, eval_stats, eval_exp,
                            eval_split, bin_width, n_traces, jobs, force);
        if (report->parsed()) return run_report(report_inputs, report_out, force);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const IncompatibleError& e) {
        std::cerr << "incompatible: " << e.what() << "\n";
        return 4;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
