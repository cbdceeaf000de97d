#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "lesionmap/acceptance.hpp"
#include "lesionmap/data/phantom.hpp"
#include "lesionmap/data/preprocess.hpp"
#include "lesionmap/eval/evaluate.hpp"
#include "lesionmap/train.hpp"

namespace lesionmap::cli {

namespace fs = std::filesystem;

inline void write_text_file(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::trunc | std::ios::binary);
    if (!out) throw IoError("cannot write '" + p.string() + "'");
    out << s;
}

// Output directories are never silently overwritten.
inline void prepare_dir(const fs::path& dir, bool force) {
    std::error_code ec;
    if (fs::exists(dir) && !fs::is_empty(dir, ec) && !force)
        throw ContractError("output directory '" + dir.string() +
                            "' already exists; pass --force to overwrite");
    fs::create_directories(dir);
}

inline void prepare_file(const fs::path& p, bool force) {
    if (fs::exists(p) && !force)
        throw ContractError("output file '" + p.string() +
                            "' already exists; pass --force to overwrite");
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// The resolved configuration, defaults included, goes next to the outputs.
inline void echo_config(const CLI::App& cmd, const fs::path& target) {
    write_text_file(target, cmd.config_to_str(true, false));
}

// Flat key=value config merged into a subcommand's options. Values given on
// the command line win; keys that match no option are an error.
inline void apply_config_file(CLI::App* sc, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("config file not found: '" + path + "'");
    std::string line;
    int ln = 0;
    while (std::getline(in, line)) {
        ++ln;
        std::string t = CLI::detail::trim_copy(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ContractError("config '" + path + "' line " + std::to_string(ln) +
                                ": expected key=value");
        const std::string key = CLI::detail::trim_copy(t.substr(0, eq));
        std::string value = CLI::detail::trim_copy(t.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);
        CLI::Option* op = key == "config" ? nullptr : sc->get_option_no_throw("--" + key);
        if (!op)
            throw ContractError("config '" + path + "': unknown key '" + key + "'");
        if (op->count() == 0) op->add_result(value);
    }
}

// ---------------------------------------------------------------------------
// fold file: a frozen, auditable assignment keyed by image id

inline void save_fold_file(const fs::path& path, const DatasetManifest& m,
                           const FoldAssignment& fa, std::uint64_t seed) {
    nlohmann::json j;
    j["fold_count"] = fa.fold_count;
    j["seed"] = seed;
    nlohmann::json fmap = nlohmann::json::object();
    for (std::size_t i = 0; i < m.samples.size(); ++i)
        fmap[m.samples[i].image_id] = fa.sample_fold[i];
    j["fold_of"] = fmap;
    write_text_file(path, j.dump(2) + "\n");
}

inline FoldAssignment load_fold_file(const fs::path& path, const DatasetManifest& m) {
    std::ifstream in(path);
    if (!in) throw IoError("fold file not found: '" + path.string() + "'");
    nlohmann::json j = nlohmann::json::parse(in);
    FoldAssignment fa;
    fa.fold_count = j.at("fold_count").get<int>();
    const auto& fmap = j.at("fold_of");
    fa.sample_fold.assign(m.samples.size(), -1);
    for (std::size_t i = 0; i < m.samples.size(); ++i) {
        const auto& s = m.samples[i];
        const auto it = fmap.find(s.image_id);
        if (it == fmap.end())
            throw ContractError("fold file does not cover image '" + s.image_id + "'");
        const int f = it->get<int>();
        if (f < 0 || f >= fa.fold_count)
            throw ContractError("fold file: fold index out of range for image '" +
                                s.image_id + "'");
        fa.sample_fold[i] = f;
        const auto [pit, inserted] = fa.patient_fold.emplace(s.patient_id, f);
        if (!inserted && pit->second != f)
            throw ContractError("fold file splits patient '" + s.patient_id +
                                "' across folds");
    }
    return fa;
}

inline void preprocess_all(DatasetManifest& m, int target_width) {
    for (auto& s : m.samples) preprocess_sample(s, m, target_width);
}

// ---------------------------------------------------------------------------
// metric and curve serialization

inline nlohmann::json metric_entry(const std::string& task,
                                   const std::optional<std::string>& lesion,
                                   const TaskMetric& t) {
    nlohmann::json e;
    e["task"] = task;
    e["lesion"] = lesion ? nlohmann::json(*lesion) : nlohmann::json();
    e["per_fold"] = t.auc.per_fold;
    if (t.auc.per_fold.size() == 1) {
        // single-model evaluation: no fold spread to report
        e["mean"] = t.auc.per_fold[0];
        e["std"] = nullptr;
    } else if (t.defined) {
        e["mean"] = t.auc.mean;
        e["std"] = t.auc.stddev;
    } else {
        e["mean"] = nullptr;
        e["std"] = nullptr;
    }
    return e;
}

inline void write_curve_csv(const fs::path& p, const RocCurve& c) {
    std::ostringstream os;
    os << "# auc=" << std::setprecision(17) << c.auc << "\n";
    os << "fpr,tpr\n";
    for (const auto& [fpr, tpr] : c.points) os << fpr << "," << tpr << "\n";
    write_text_file(p, os.str());
}

struct CurveFile {
    std::string label;
    double auc = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::pair<double, double>> points;
};

inline CurveFile read_curve_csv(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("curve file not found: '" + p.string() + "'");
    CurveFile c;
    c.label = p.stem().string();
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto eq = line.find("auc=");
            if (eq != std::string::npos) c.auc = std::stod(line.substr(eq + 4));
            continue;
        }
        if (line.rfind("fpr", 0) == 0) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw ContractError("curve file '" + p.string() + "': malformed line '" +
                                line + "'");
        c.points.emplace_back(std::stod(line.substr(0, comma)),
                              std::stod(line.substr(comma + 1)));
    }
    if (c.points.empty())
        throw ContractError("curve file '" + p.string() + "' holds no points");
    return c;
}

// ---------------------------------------------------------------------------
// map export

inline const std::vector<cv::Vec3b>& map_palette() {
    static const std::vector<cv::Vec3b> p = {
        {0, 0, 255},   {0, 255, 255}, {255, 0, 0},   {0, 255, 0},
        {255, 0, 255}, {255, 255, 0}, {128, 0, 255}, {255, 128, 0}};
    return p;
}

inline void write_map_png(const fs::path& p, const nn::FeatureMap<float>& probs,
                          int channel) {
    cv::Mat img(probs.h, probs.w, CV_16UC1);
    for (int y = 0; y < probs.h; ++y)
        for (int x = 0; x < probs.w; ++x) {
            const float v = std::clamp(probs.at(y, x, channel), 0.0f, 1.0f);
            img.at<std::uint16_t>(y, x) =
                static_cast<std::uint16_t>(std::lround(v * 65535.0));
        }
    if (!cv::imwrite(p.string(), img))
        throw IoError("cannot write map '" + p.string() + "'");
}

// Heat overlay: each pixel takes the color of its strongest lesion map,
// blended in proportion to that probability.
inline cv::Mat render_overlay(const cv::Mat& bgr, const nn::FeatureMap<float>& probs) {
    cv::Mat out = bgr.clone();
    const auto& palette = map_palette();
    const int cell = bgr.rows / probs.h;
    for (int y = 0; y < bgr.rows; ++y) {
        auto* row = out.ptr<cv::Vec3b>(y);
        const int my = std::min(y / cell, probs.h - 1);
        for (int x = 0; x < bgr.cols; ++x) {
            const int mx = std::min(x / cell, probs.w - 1);
            float best = 0;
            int arg = 0;
            for (int c = 0; c < probs.channels(); ++c) {
                const float v = probs.at(my, mx, c);
                if (v > best) {
                    best = v;
                    arg = c;
                }
            }
            if (best <= 0.5f) continue;
            const cv::Vec3b tint = palette[static_cast<std::size_t>(arg) % palette.size()];
            const float a = 0.6f * best;
            for (int k = 0; k < 3; ++k)
                row[x][k] = cv::saturate_cast<std::uint8_t>(
                    (1 - a) * row[x][k] + a * tint[k]);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// ROC plotting

inline void plot_roc_curves(const std::vector<CurveFile>& curves, const fs::path& out,
                            const std::string& title, int size) {
    const int margin = 70;
    const int W = size + 2 * margin, H = size + 2 * margin;
    cv::Mat img(H, W, CV_8UC3, cv::Scalar(255, 255, 255));
    const auto px = [&](double fpr) { return margin + static_cast<int>(fpr * size); };
    const auto py = [&](double tpr) {
        return margin + size - static_cast<int>(tpr * size);
    };

    for (int i = 0; i <= 10; ++i) {
        const double v = i / 10.0;
        cv::line(img, {px(v), py(0)}, {px(v), py(0) + 4}, {0, 0, 0}, 1);
        cv::line(img, {px(0), py(v)}, {px(0) - 4, py(v)}, {0, 0, 0}, 1);
        if (i % 2 == 0) {
            char buf[8];
            std::snprintf(buf, sizeof(buf), "%.1f", v);
            cv::putText(img, buf, {px(v) - 12, py(0) + 20}, cv::FONT_HERSHEY_SIMPLEX,
                        0.4, {0, 0, 0}, 1, cv::LINE_AA);
            cv::putText(img, buf, {px(0) - 38, py(v) + 4}, cv::FONT_HERSHEY_SIMPLEX,
                        0.4, {0, 0, 0}, 1, cv::LINE_AA);
        }
    }
    cv::rectangle(img, {px(0), py(1)}, {px(1), py(0)}, {0, 0, 0}, 1);
    for (int i = 0; i < size; i += 12)
        cv::line(img, {px(0) + i, py(0) - i},
                 {px(0) + std::min(i + 6, size), py(0) - std::min(i + 6, size)},
                 {160, 160, 160}, 1, cv::LINE_AA);

    cv::putText(img, "False positive rate", {margin + size / 2 - 70, H - 20},
                cv::FONT_HERSHEY_SIMPLEX, 0.5, {0, 0, 0}, 1, cv::LINE_AA);
    cv::putText(img, "True positive rate", {14, margin - 14}, cv::FONT_HERSHEY_SIMPLEX,
                0.5, {0, 0, 0}, 1, cv::LINE_AA);
    if (!title.empty())
        cv::putText(img, title, {margin, margin - 14}, cv::FONT_HERSHEY_SIMPLEX, 0.6,
                    {0, 0, 0}, 1, cv::LINE_AA);

    const std::vector<cv::Scalar> colors = {{180, 60, 30},  {30, 120, 220},
                                            {40, 160, 40},  {150, 40, 150},
                                            {20, 170, 200}, {120, 120, 20}};
    for (std::size_t ci = 0; ci < curves.size(); ++ci) {
        const auto& c = curves[ci];
        const cv::Scalar color = colors[ci % colors.size()];
        for (std::size_t i = 1; i < c.points.size(); ++i)
            cv::line(img, {px(c.points[i - 1].first), py(c.points[i - 1].second)},
                     {px(c.points[i].first), py(c.points[i].second)}, color, 2,
                     cv::LINE_AA);
        char label[160];
        if (std::isnan(c.auc))
            std::snprintf(label, sizeof(label), "%s", c.label.c_str());
        else
            std::snprintf(label, sizeof(label), "%s (AUC=%.4f)", c.label.c_str(),
                          c.auc);
        const int ly = py(0) - 16 - 18 * static_cast<int>(curves.size() - 1 - ci);
        cv::line(img, {px(1) - 210, ly - 4}, {px(1) - 185, ly - 4}, color, 2);
        cv::putText(img, label, {px(1) - 178, ly}, cv::FONT_HERSHEY_SIMPLEX, 0.42,
                    {0, 0, 0}, 1, cv::LINE_AA);
    }

    if (!cv::imwrite(out.string(), img))
        throw IoError("cannot write plot '" + out.string() + "'");
}

// ---------------------------------------------------------------------------
// command bodies

struct CommonManifestArgs {
    std::string manifest_path;
    std::string dataset_name;

    DatasetManifest load() const {
        ManifestOptions opts;
        opts.name = dataset_name;
        return load_manifest(manifest_path, opts);
    }
};

inline int cmd_phantom(const PhantomConfig& cfg, bool force, const CLI::App& sc) {
    prepare_dir(cfg.out_dir, force);
    const DatasetManifest m = generate_phantom_dataset(cfg);
    echo_config(sc, cfg.out_dir / "config_used.cfg");
    int positives = 0;
    for (const auto& s : m.samples) positives += s.diagnosis;
    nlohmann::json summary = {{"manifest", (cfg.out_dir / "manifest.csv").string()},
                              {"images", m.samples.size()},
                              {"positives", positives},
                              {"lesions", m.schema->lesions}};
    std::cout << summary.dump() << "\n";
    return 0;
}

inline int cmd_folds(const CommonManifestArgs& margs, int k, std::uint64_t seed,
                     const fs::path& out, bool force, const CLI::App& sc) {
    prepare_file(out, force);
    const DatasetManifest m = margs.load();
    const FoldAssignment fa = make_folds(m, k, seed);
    save_fold_file(out, m, fa, seed);
    echo_config(sc, fs::path(out.string() + ".cfg"));
    std::cout << nlohmann::json({{"fold_file", out.string()},
                                 {"fold_count", fa.fold_count},
                                 {"images", m.samples.size()}})
                     .dump()
              << "\n";
    return 0;
}

inline int cmd_train(TrainConfig tc, const CommonManifestArgs& margs,
                     const fs::path& fold_file, const fs::path& out, bool force,
                     const CLI::App& sc) {
    prepare_dir(out, force);
    echo_config(sc, out / "config_used.cfg");
    DatasetManifest m = margs.load();
    const FoldAssignment fa = load_fold_file(fold_file, m);
    preprocess_all(m, tc.target_width);

    std::ofstream steps(out / "steps.jsonl", std::ios::trunc);
    const StepSink sink = [&](const StepRecord& r) {
        nlohmann::json j = {{"step", r.step},
                            {"epoch", r.epoch},
                            {"loss", r.loss},
                            {"loss_diag", r.loss_diag}};
        if (r.loss_lesion) j["loss_lesion"] = *r.loss_lesion;
        steps << j.dump() << "\n";
    };

    TrainResult result = train(tc, m, fa, sink);
    save_checkpoint(result.checkpoint, out / "checkpoint.ck");

    std::ostringstream epochs;
    for (const auto& e : result.epoch_log) {
        nlohmann::json j = {{"epoch", e.epoch},
                            {"loss", e.loss},
                            {"loss_diag", e.loss_diag},
                            {"steps", e.steps}};
        if (e.loss_lesion) j["loss_lesion"] = *e.loss_lesion;
        epochs << j.dump() << "\n";
    }
    write_text_file(out / "epochs.jsonl", epochs.str());

    std::cout << nlohmann::json(
                     {{"checkpoint", (out / "checkpoint.ck").string()},
                      {"epochs", tc.epochs},
                      {"final_loss", result.epoch_log.back().loss}})
                     .dump()
              << "\n";
    return 0;
}

inline int cmd_finetune(TrainConfig tc, const fs::path& source,
                        const CommonManifestArgs& margs, const fs::path& fold_file,
                        const fs::path& out, bool force, const CLI::App& sc) {
    prepare_dir(out, force);
    echo_config(sc, out / "config_used.cfg");
    const Checkpoint src = load_checkpoint(source);
    tc.variant = src.variant;
    DatasetManifest m = margs.load();
    const FoldAssignment fa = load_fold_file(fold_file, m);
    preprocess_all(m, tc.target_width);

    std::ofstream steps(out / "steps.jsonl", std::ios::trunc);
    const StepSink sink = [&](const StepRecord& r) {
        nlohmann::json j = {{"step", r.step},
                            {"epoch", r.epoch},
                            {"loss", r.loss},
                            {"loss_diag", r.loss_diag}};
        if (r.loss_lesion) j["loss_lesion"] = *r.loss_lesion;
        steps << j.dump() << "\n";
    };

    TrainResult result = fine_tune(src, tc, m, fa, sink);
    save_checkpoint(result.checkpoint, out / "checkpoint.ck");
    std::cout << nlohmann::json(
                     {{"checkpoint", (out / "checkpoint.ck").string()},
                      {"fine_tuned_from", source.string()},
                      {"final_loss", result.epoch_log.back().loss}})
                     .dump()
              << "\n";
    return 0;
}

struct EvalArgs {
    std::vector<std::string> checkpoints;
    std::string fold_file;
    std::vector<std::string> tasks;  // empty: every task the variant supports
    std::string mapping = "auto";
    int width = 0;  // 0: the width recorded in the first checkpoint
    int roi_threshold = 20;
    bool dump_maps = false;
};

inline int cmd_eval(const EvalArgs& args, const CommonManifestArgs& margs,
                    const fs::path& out, bool force, const CLI::App& sc) {
    prepare_dir(out, force);
    echo_config(sc, out / "config_used.cfg");

    std::vector<Checkpoint> cks;
    std::vector<Network<float>> nets;
    for (const auto& p : args.checkpoints) {
        cks.push_back(load_checkpoint(p));
        nets.push_back(network_from_checkpoint(cks.back()));
    }
    std::vector<Network<float>*> ptrs;
    for (auto& n : nets) ptrs.push_back(&n);

    int width = args.width;
    if (width == 0) {
        if (!cks[0].config.contains("target_width"))
            throw ContractError(
                "eval: --width not given and the checkpoint records no training width");
        width = cks[0].config["target_width"].get<int>();
    }

    DatasetManifest m = margs.load();
    std::optional<FoldAssignment> fa;
    if (!args.fold_file.empty()) {
        fa = load_fold_file(args.fold_file, m);
        if (static_cast<int>(nets.size()) != fa->fold_count)
            throw ContractError("eval: got " + std::to_string(nets.size()) +
                                " checkpoints for " + std::to_string(fa->fold_count) +
                                " folds");
    } else if (nets.size() != 1) {
        throw ContractError("eval: multiple checkpoints need a fold file");
    }
    preprocess_all(m, width);

    EvalConfig ec;
    ec.split = fa ? EvalSplit::kFoldTest : EvalSplit::kAll;
    ec.roi_threshold = args.roi_threshold;
    ec.store_maps = args.dump_maps;
    if (args.tasks.empty()) {
        const bool al = nets[0].is_al();
        ec.tasks = {true, al, al, al};
    } else {
        ec.tasks = {false, false, false, false};
        for (const auto& t : args.tasks) {
            if (t == "diagnosis")
                ec.tasks.diagnosis = true;
            else if (t == "lesions")
                ec.tasks.lesions = true;
            else if (t == "segmentation")
                ec.tasks.segmentation = true;
            else if (t == "pointing")
                ec.tasks.pointing = true;
            else
                throw ContractError("eval: unknown task '" + t + "'");
        }
    }
    if (args.mapping == "auto") {
        const bool lesion_tasks =
            ec.tasks.lesions || ec.tasks.segmentation || ec.tasks.pointing;
        if (lesion_tasks && nets[0].is_al() && m.schema &&
            !(nets[0].schema().lesions == m.schema->lesions)) {
            const MappingPair pair = resolve_mappings(nets[0].schema(), *m.schema);
            ec.prediction_mapping = pair.prediction;
            ec.gt_mapping = pair.gt;
        }
    } else if (args.mapping != "none") {
        throw ContractError("eval: --mapping must be 'auto' or 'none'");
    }

    const EvalReport rep = evaluate_run(ptrs, m, fa ? &*fa : nullptr, ec);

    nlohmann::json metrics;
    metrics["dataset"] = m.name;
    metrics["metrics"] = nlohmann::json::array();
    const fs::path curves_dir = out / "curves";
    fs::create_directories(curves_dir);
    const auto emit = [&](const std::string& task,
                          const std::optional<std::string>& lesion,
                          const TaskMetric& t) {
        metrics["metrics"].push_back(metric_entry(task, lesion, t));
        const std::string stem =
            "roc_" + task + (lesion ? "_" + *lesion : std::string());
        for (std::size_t f = 0; f < t.fold_curves.size(); ++f)
            write_curve_csv(curves_dir / (stem + "_fold" + std::to_string(f) + ".csv"),
                            t.fold_curves[f]);
        if (!t.fold_curves.empty())
            write_curve_csv(curves_dir / (stem + "_merged.csv"), t.merged);
    };
    if (rep.diagnosis) emit("diagnosis", std::nullopt, *rep.diagnosis);
    for (std::size_t l = 0; l < rep.lesion_id.size(); ++l)
        emit("lesions", rep.lesion_names[l], rep.lesion_id[l]);
    for (std::size_t l = 0; l < rep.segmentation.size(); ++l)
        emit("segmentation", rep.lesion_names[l], rep.segmentation[l]);
    if (ec.tasks.pointing && rep.pointing.total > 0) {
        metrics["pointing"] = {{"hits", rep.pointing.hits},
                               {"total", rep.pointing.total},
                               {"rate", rep.pointing.rate()},
                               {"per_fold", rep.pointing_per_fold}};
    }
    if (!rep.warnings.empty()) metrics["warnings"] = rep.warnings;

    fs::path maps_dir = out / "maps";
    if (args.dump_maps) fs::create_directories(maps_dir);
    std::ostringstream preds;
    for (const auto& r : rep.predictions) {
        nlohmann::json j = {{"image_id", r.image_id},
                            {"fold", r.fold},
                            {"diagnosis_prob", r.diagnosis_prob}};
        if (!r.lesion_probs.empty()) j["lesion_probs"] = r.lesion_probs;
        if (args.dump_maps && r.prob_maps) {
            std::string safe = r.image_id;
            for (auto& ch : safe)
                if (ch == '/' || ch == '\\') ch = '_';
            nlohmann::json paths = nlohmann::json::array();
            for (int c = 0; c < r.prob_maps->channels(); ++c) {
                const fs::path mp =
                    maps_dir / (safe + "_" + rep.lesion_names[static_cast<std::size_t>(c)] +
                                ".png");
                write_map_png(mp, *r.prob_maps, c);
                paths.push_back(mp.string());
            }
            j["map_path"] = paths;
        }
        preds << j.dump() << "\n";
    }
    write_text_file(out / "predictions.jsonl", preds.str());
    write_text_file(out / "metrics.json", metrics.dump(2) + "\n");
    std::cout << metrics.dump() << "\n";
    return 0;
}

struct ExportMapsArgs {
    std::string checkpoint;
    std::vector<std::string> images;
    int width = 0;
};

inline int cmd_export_maps(const ExportMapsArgs& args, const fs::path& out, bool force,
                           const CLI::App& sc) {
    const Checkpoint ck = load_checkpoint(args.checkpoint);
    Network<float> net = network_from_checkpoint(ck);
    if (!net.is_al())
        throw ContractError("export-maps: variant provides no lesion outputs");
    int width = args.width;
    if (width == 0) {
        if (!ck.config.contains("target_width"))
            throw ContractError(
                "export-maps: --width not given and the checkpoint records no training "
                "width");
        width = ck.config["target_width"].get<int>();
    }
    prepare_dir(out, force);
    echo_config(sc, out / "config_used.cfg");

    for (const auto& ip : args.images) {
        const cv::Mat raw = read_image_bgr(ip);
        const PreprocessResult pre = resize_to_width(raw, width);
        Prediction<float> pred = net.forward(to_input_tensor<float>(pre.image));
        const nn::FeatureMap<float> probs = export_probability_maps(*pred.maps);
        const std::string stem = fs::path(ip).stem().string();

        nlohmann::json sidecar;
        sidecar["image"] = ip;
        sidecar["diagnosis_prob"] = pred.diagnosis_prob;
        sidecar["map_height"] = probs.h;
        sidecar["map_width"] = probs.w;
        sidecar["lesions"] = nlohmann::json::array();
        for (int c = 0; c < probs.channels(); ++c) {
            const std::string name = net.schema().lesions[static_cast<std::size_t>(c)];
            const fs::path mp = out / (stem + "_" + name + ".png");
            write_map_png(mp, probs, c);
            sidecar["lesions"].push_back({{"name", name},
                                          {"prob", pred.lesion_probs(c)},
                                          {"map", mp.string()}});
        }
        const cv::Mat overlay = render_overlay(pre.image, probs);
        const fs::path op = out / (stem + "_overlay.png");
        if (!cv::imwrite(op.string(), overlay))
            throw IoError("cannot write overlay '" + op.string() + "'");
        sidecar["overlay"] = op.string();
        write_text_file(out / (stem + ".json"), sidecar.dump(2) + "\n");
        std::cout << sidecar.dump() << "\n";
    }
    return 0;
}

inline int cmd_plot_roc(const std::vector<std::string>& curve_paths, const fs::path& out,
                        const std::string& title, int size, bool force) {
    prepare_file(out, force);
    std::vector<CurveFile> curves;
    for (const auto& p : curve_paths) curves.push_back(read_curve_csv(p));
    plot_roc_curves(curves, out, title, size);
    std::cout << nlohmann::json({{"plot", out.string()}, {"curves", curves.size()}}).dump()
              << "\n";
    return 0;
}

inline int cmd_accept(const AcceptanceConfig& cfg, bool force, const CLI::App& sc) {
    prepare_dir(cfg.work_dir, force);
    echo_config(sc, cfg.work_dir / "config_used.cfg");
    const AcceptanceReport rep = run_acceptance(cfg);
    write_text_file(cfg.work_dir / "report.json", rep.to_json().dump(2) + "\n");
    write_text_file(cfg.work_dir / "report.txt", rep.to_text());
    std::cout << rep.to_text();
    return rep.all_pass() ? 0 : 2;
}

// ---------------------------------------------------------------------------

inline int run_cli(int argc, char** argv) {
    CLI::App app{"weakly supervised lesion-map AMD classification toolkit"};
    app.require_subcommand(1);
    int exit_code = 0;
    std::string active;

    const auto add_config = [](CLI::App* sc) {
        sc->add_option_function<std::string>(
            "--config", [sc](const std::string& p) { apply_config_file(sc, p); },
            "flat key=value config file");
    };

    // phantom
    auto phantom_cfg = std::make_shared<PhantomConfig>();
    auto phantom_force = std::make_shared<bool>(false);
    auto phantom_out = std::make_shared<std::string>();
    {
        auto* sc = app.add_subcommand("phantom", "generate the synthetic fundus dataset");
        add_config(sc);
        sc->add_option("--out", *phantom_out, "output directory")->required();
        sc->add_option("--count", phantom_cfg->image_count, "number of images")
            ->capture_default_str();
        sc->add_option("--size", phantom_cfg->image_size, "square image size (multiple of 16)")
            ->capture_default_str();
        sc->add_option("--lesions", phantom_cfg->lesion_count, "lesion types (1-8)")
            ->capture_default_str();
        sc->add_option("--positive-fraction", phantom_cfg->positive_fraction,
                       "fraction of positive-diagnosis images")
            ->capture_default_str();
        sc->add_option("--active-prob", phantom_cfg->lesion_active_prob,
                       "per-lesion activation probability in positives")
            ->capture_default_str();
        sc->add_option("--blob-min", phantom_cfg->blob_radius_min, "min blob radius")
            ->capture_default_str();
        sc->add_option("--blob-max", phantom_cfg->blob_radius_max, "max blob radius")
            ->capture_default_str();
        sc->add_option("--seed", phantom_cfg->seed, "rng seed")->capture_default_str();
        sc->add_flag("--force", *phantom_force, "overwrite an existing output directory");
        sc->callback([&, sc] {
            active = "phantom";
            phantom_cfg->out_dir = *phantom_out;
            exit_code = cmd_phantom(*phantom_cfg, *phantom_force, *sc);
        });
    }

    // folds
    auto folds_args = std::make_shared<std::tuple<CommonManifestArgs, int, std::uint64_t,
                                                  std::string, bool>>();
    {
        auto& [margs, k, seed, out, force] = *folds_args;
        k = 4;
        seed = 1;
        force = false;
        auto* sc = app.add_subcommand("folds", "build a patient-grouped stratified fold file");
        add_config(sc);
        sc->add_option("--manifest", margs.manifest_path, "dataset manifest CSV")->required();
        sc->add_option("--dataset-name", margs.dataset_name,
                       "dataset name (default: manifest file stem)");
        sc->add_option("--folds", k, "fold count")->capture_default_str();
        sc->add_option("--seed", seed, "rng seed")->capture_default_str();
        sc->add_option("--out", out, "fold file path")->required();
        sc->add_flag("--force", force, "overwrite an existing fold file");
        sc->callback([&, sc] {
            active = "folds";
            auto& [margs2, k2, seed2, out2, force2] = *folds_args;
            exit_code = cmd_folds(margs2, k2, seed2, out2, force2, *sc);
        });
    }

    // shared train-like option block
    struct TrainCliArgs {
        TrainConfig tc;
        CommonManifestArgs margs;
        std::string fold_file;
        std::string out;
        std::string variant = "al-max";
        std::string trunk = "reference";
        std::string init = "random";
        std::string init_path;
        std::string source;  // finetune only
        bool no_augment = false;
        bool force = false;
    };
    const auto add_train_options = [](CLI::App* sc, TrainCliArgs& a, bool finetune) {
        sc->add_option("--manifest", a.margs.manifest_path, "dataset manifest CSV")
            ->required();
        sc->add_option("--dataset-name", a.margs.dataset_name,
                       "dataset name (default: manifest file stem)");
        sc->add_option("--fold-file", a.fold_file, "fold file from 'folds'")->required();
        sc->add_option("--fold", a.tc.fold, "held-out fold index")->capture_default_str();
        sc->add_option("--out", a.out, "run directory")->required();
        sc->add_option("--lr", a.tc.learning_rate, "Adam step size")->capture_default_str();
        sc->add_option("--epochs", a.tc.epochs, "training epochs")->capture_default_str();
        sc->add_option("--batch", a.tc.batch_size, "batch size")->capture_default_str();
        sc->add_option("--seed", a.tc.seed, "rng seed")->capture_default_str();
        sc->add_option("--width", a.tc.target_width, "working image width (multiple of 16)")
            ->capture_default_str();
        sc->add_flag("--no-augment", a.no_augment, "disable training-time augmentation");
        sc->add_flag("--force", a.force, "overwrite an existing run directory");
        if (!finetune) {
            sc->add_option("--variant", a.variant, "model variant")
                ->check(CLI::IsMember({"al-max", "al-fc", "a-only"}))
                ->capture_default_str();
            sc->add_option("--trunk", a.trunk, "trunk width preset")
                ->check(CLI::IsMember({"reference", "reduced"}))
                ->capture_default_str();
            sc->add_option("--baseline-hidden", a.tc.baseline_hidden,
                           "hidden units of the a-only classifier")
                ->capture_default_str();
            sc->add_option("--init", a.init, "weight initialization source")
                ->check(CLI::IsMember({"random", "pretrained-trunk", "checkpoint"}))
                ->capture_default_str();
            sc->add_option("--init-path", a.init_path,
                           "checkpoint path for non-random initialization");
        }
    };
    const auto finish_train_config = [](TrainCliArgs& a, bool finetune) {
        a.tc.augment.enabled = !a.no_augment;
        if (!finetune) {
            a.tc.variant = variant_from_name(a.variant);
            a.tc.trunk = a.trunk == "reduced" ? TrunkConfig::reduced()
                                              : TrunkConfig::reference();
            a.tc.init = init_source_from_name(a.init);
            a.tc.init_path = a.init_path;
        }
    };

    auto train_args = std::make_shared<TrainCliArgs>();
    {
        auto* sc = app.add_subcommand("train", "train one variant on one fold");
        add_config(sc);
        add_train_options(sc, *train_args, false);
        sc->callback([&, sc] {
            active = "train";
            finish_train_config(*train_args, false);
            exit_code = cmd_train(train_args->tc, train_args->margs, train_args->fold_file,
                                  train_args->out, train_args->force, *sc);
        });
    }

    auto ft_args = std::make_shared<TrainCliArgs>();
    ft_args->tc.epochs = 15;
    {
        auto* sc = app.add_subcommand("finetune",
                                      "fine-tune a checkpoint on another dataset");
        add_config(sc);
        sc->add_option("--source", ft_args->source, "source checkpoint")->required();
        add_train_options(sc, *ft_args, true);
        sc->callback([&, sc] {
            active = "finetune";
            finish_train_config(*ft_args, true);
            exit_code = cmd_finetune(ft_args->tc, ft_args->source, ft_args->margs,
                                     ft_args->fold_file, ft_args->out, ft_args->force, *sc);
        });
    }

    // eval
    auto eval_args = std::make_shared<EvalArgs>();
    auto eval_margs = std::make_shared<CommonManifestArgs>();
    auto eval_out = std::make_shared<std::string>();
    auto eval_force = std::make_shared<bool>(false);
    {
        auto* sc = app.add_subcommand("eval", "evaluate checkpoints on a dataset");
        add_config(sc);
        sc->add_option("--checkpoint", eval_args->checkpoints,
                       "checkpoint file (repeat once per fold)")
            ->required();
        sc->add_option("--manifest", eval_margs->manifest_path, "dataset manifest CSV")
            ->required();
        sc->add_option("--dataset-name", eval_margs->dataset_name,
                       "dataset name (default: manifest file stem)");
        sc->add_option("--fold-file", eval_args->fold_file,
                       "fold file; omit to score every image with one checkpoint");
        sc->add_option("--task", eval_args->tasks,
                       "tasks to run (default: all the variant supports)")
            ->check(CLI::IsMember({"diagnosis", "lesions", "segmentation", "pointing"}));
        sc->add_option("--mapping", eval_args->mapping,
                       "cross-schema mapping: auto or none")
            ->check(CLI::IsMember({"auto", "none"}))
            ->capture_default_str();
        sc->add_option("--width", eval_args->width,
                       "working image width (default: from the checkpoint)")
            ->capture_default_str();
        sc->add_option("--roi-threshold", eval_args->roi_threshold,
                       "fundus-disc mask threshold")
            ->capture_default_str();
        sc->add_flag("--dump-maps", eval_args->dump_maps,
                     "write per-image probability map PNGs");
        sc->add_option("--out", *eval_out, "output directory")->required();
        sc->add_flag("--force", *eval_force, "overwrite an existing output directory");
        sc->callback([&, sc] {
            active = "eval";
            exit_code = cmd_eval(*eval_args, *eval_margs, *eval_out, *eval_force, *sc);
        });
    }

    // export-maps
    auto em_args = std::make_shared<ExportMapsArgs>();
    auto em_out = std::make_shared<std::string>();
    auto em_force = std::make_shared<bool>(false);
    {
        auto* sc = app.add_subcommand("export-maps",
                                      "write per-lesion probability maps for images");
        add_config(sc);
        sc->add_option("--checkpoint", em_args->checkpoint, "checkpoint file")->required();
        sc->add_option("--image", em_args->images, "input image (repeatable)")->required();
        sc->add_option("--width", em_args->width,
                       "working image width (default: from the checkpoint)")
            ->capture_default_str();
        sc->add_option("--out", *em_out, "output directory")->required();
        sc->add_flag("--force", *em_force, "overwrite an existing output directory");
        sc->callback([&, sc] {
            active = "export-maps";
            exit_code = cmd_export_maps(*em_args, *em_out, *em_force, *sc);
        });
    }

    // plot-roc
    auto plot_curves = std::make_shared<std::vector<std::string>>();
    auto plot_out = std::make_shared<std::string>();
    auto plot_title = std::make_shared<std::string>();
    auto plot_size = std::make_shared<int>(560);
    auto plot_force = std::make_shared<bool>(false);
    {
        auto* sc = app.add_subcommand("plot-roc", "draw mean ROC curves from curve CSVs");
        sc->add_option("--curve", *plot_curves, "curve CSV (repeatable)")->required();
        sc->add_option("--out", *plot_out, "output PNG")->required();
        sc->add_option("--title", *plot_title, "plot title");
        sc->add_option("--size", *plot_size, "plot area size in pixels")
            ->capture_default_str();
        sc->add_flag("--force", *plot_force, "overwrite an existing plot");
        sc->callback([&] {
            active = "plot-roc";
            exit_code = cmd_plot_roc(*plot_curves, *plot_out, *plot_title, *plot_size,
                                     *plot_force);
        });
    }

    // accept
    auto acc_cfg = std::make_shared<AcceptanceConfig>();
    auto acc_out = std::make_shared<std::string>();
    auto acc_force = std::make_shared<bool>(false);
    {
        auto* sc = app.add_subcommand("accept",
                                      "run the desk-scale verification suite");
        add_config(sc);
        sc->add_option("--out", *acc_out, "work directory")->required();
        sc->add_option("--seed", acc_cfg->seed, "rng seed")->capture_default_str();
        sc->add_option("--images", acc_cfg->image_count, "phantom image count")
            ->capture_default_str();
        sc->add_option("--epochs", acc_cfg->epochs, "training epochs per model")
            ->capture_default_str();
        sc->add_flag("--force", *acc_force, "overwrite an existing work directory");
        sc->callback([&, sc] {
            active = "accept";
            acc_cfg->work_dir = *acc_out;
            exit_code = cmd_accept(*acc_cfg, *acc_force, *sc);
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() != 0)
            std::cerr << nlohmann::json({{"command", active.empty() ? "parse" : active},
                                         {"error", e.what()}})
                             .dump()
                      << "\n";
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << nlohmann::json({{"command", active.empty() ? "parse" : active},
                                     {"error", e.what()}})
                         .dump()
                  << "\n";
        return 1;
    }
    return exit_code;
}

}  // namespace lesionmap::cli
