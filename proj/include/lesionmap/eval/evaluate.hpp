#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "lesionmap/data/folds.hpp"
#include "lesionmap/data/image_io.hpp"
#include "lesionmap/data/manifest.hpp"
#include "lesionmap/eval/roc.hpp"
#include "lesionmap/nn/network.hpp"

namespace lesionmap {

// Block-max reduction to the activation-map grid: an output cell is
// foreground iff any pixel of its block is.
inline cv::Mat downscale_gt(const cv::Mat& gt, int factor = 16) {
    if (gt.empty() || gt.type() != CV_8UC1)
        throw ContractError("downscale_gt: expected an 8-bit single-channel mask");
    if (factor < 1 || gt.rows % factor != 0 || gt.cols % factor != 0)
        throw ContractError("downscale_gt: mask dims must be multiples of the factor");
    cv::Mat out = cv::Mat::zeros(gt.rows / factor, gt.cols / factor, CV_8UC1);
    for (int y = 0; y < gt.rows; ++y) {
        const uchar* row = gt.ptr<uchar>(y);
        for (int x = 0; x < gt.cols; ++x)
            if (row[x] > 0) out.at<uchar>(y / factor, x / factor) = 255;
    }
    return out;
}

// Per-target lists of source channel indices: one entry for a direct pair,
// several for a pooled rule.
inline std::vector<std::vector<int>> mapping_source_indices(const SchemaMapping& m) {
    std::vector<std::vector<int>> out(static_cast<std::size_t>(m.target.size()));
    for (const auto& [s, t] : m.direct)
        out[static_cast<std::size_t>(m.target.index_of(t))].push_back(m.source.index_of(s));
    for (const auto& [t, srcs] : m.pooled)
        for (const auto& s : srcs)
            out[static_cast<std::size_t>(m.target.index_of(t))].push_back(
                m.source.index_of(s));
    return out;
}

inline std::vector<double> map_predictions_cross_schema(const std::vector<double>& probs,
                                                        const SchemaMapping& mapping) {
    if (static_cast<int>(probs.size()) != mapping.source.size())
        throw ContractError("cross-schema mapping: probability vector length " +
                            std::to_string(probs.size()) + " does not match source schema '" +
                            mapping.source.name + "'");
    const auto groups = mapping_source_indices(mapping);
    std::vector<double> out;
    out.reserve(groups.size());
    for (const auto& g : groups) {
        double best = -std::numeric_limits<double>::infinity();
        for (int si : g) best = std::max(best, probs[static_cast<std::size_t>(si)]);
        out.push_back(best);
    }
    return out;
}

inline std::vector<int> map_gt_cross_schema(const std::vector<int>& flags,
                                            const SchemaMapping& mapping) {
    if (static_cast<int>(flags.size()) != mapping.source.size())
        throw ContractError("cross-schema mapping: flag vector length " +
                            std::to_string(flags.size()) + " does not match source schema '" +
                            mapping.source.name + "'");
    const auto groups = mapping_source_indices(mapping);
    std::vector<int> out;
    out.reserve(groups.size());
    for (const auto& g : groups) {
        int v = 0;
        for (int si : g) v = std::max(v, flags[static_cast<std::size_t>(si)]);
        out.push_back(v);
    }
    return out;
}

// Cellwise max over each target's source channels.
template <class T>
nn::FeatureMap<T> map_stack_cross_schema(const nn::FeatureMap<T>& src,
                                         const SchemaMapping& mapping) {
    if (src.channels() != mapping.source.size())
        throw ContractError("cross-schema mapping: map stack has " +
                            std::to_string(src.channels()) +
                            " channels, source schema '" + mapping.source.name + "' has " +
                            std::to_string(mapping.source.size()));
    const auto groups = mapping_source_indices(mapping);
    nn::FeatureMap<T> out(src.h, src.w, static_cast<int>(groups.size()));
    for (std::size_t t = 0; t < groups.size(); ++t) {
        auto col = out.data.col(static_cast<Eigen::Index>(t));
        col = src.data.col(groups[t][0]);
        for (std::size_t j = 1; j < groups[t].size(); ++j)
            col = col.cwiseMax(src.data.col(groups[t][static_cast<std::size_t>(j)]));
    }
    return out;
}

// One image's contribution to the segmentation task: probability map cells,
// downscaled gt cells, and the cells that count (inside the ROI).
struct SegmentationUnit {
    std::string image_id;
    nn::FeatureMap<float> prob_maps;  // target schema channels
    std::vector<cv::Mat> gt_cells;    // per target lesion; empty = no annotation
    cv::Mat roi_cells;                // 0/255, map grid
};

// Pools (cell score, cell label) pairs of every qualifying image into one
// scored set. Qualifying: the image carries a nonempty annotation for the
// lesion. Cells outside the ROI are not evaluable tissue and are skipped.
inline ScoredSet segmentation_scored_set(const std::vector<SegmentationUnit>& units,
                                         int lesion) {
    ScoredSet set;
    int qualifying = 0;
    for (const auto& u : units) {
        const auto& gt = u.gt_cells[static_cast<std::size_t>(lesion)];
        if (gt.empty() || cv::countNonZero(gt) == 0) continue;
        ++qualifying;
        if (gt.rows != u.prob_maps.h || gt.cols != u.prob_maps.w)
            throw ContractError("segmentation: gt grid does not match the map grid");
        for (int y = 0; y < gt.rows; ++y)
            for (int x = 0; x < gt.cols; ++x) {
                if (u.roi_cells.at<uchar>(y, x) == 0) continue;
                set.units.push_back(
                    {static_cast<double>(u.prob_maps.at(y, x, lesion)),
                     gt.at<uchar>(y, x) > 0 ? 1 : 0,
                     u.image_id + ":" + std::to_string(y) + "," + std::to_string(x)});
            }
    }
    if (qualifying == 0)
        throw ContractError("segmentation: no qualifying images for lesion index " +
                            std::to_string(lesion));
    return set;
}

inline RocCurve eval_segmentation(const std::vector<SegmentationUnit>& units, int lesion) {
    return roc_curve(segmentation_scored_set(units, lesion));
}

struct PointingResult {
    int hits = 0;
    int total = 0;
    double rate() const {
        if (total == 0) throw ContractError("pointing game: no positives");
        return static_cast<double>(hits) / total;
    }
};

// Hit iff the map's argmax cell lies within one cell (Chebyshev) of the
// downscaled ground truth.
inline PointingResult pointing_game(const std::vector<SegmentationUnit>& units) {
    PointingResult r;
    for (const auto& u : units) {
        for (int l = 0; l < u.prob_maps.channels(); ++l) {
            const auto& gt = u.gt_cells[static_cast<std::size_t>(l)];
            if (gt.empty() || cv::countNonZero(gt) == 0) continue;
            int by = 0, bx = 0;
            float best = -std::numeric_limits<float>::infinity();
            for (int y = 0; y < u.prob_maps.h; ++y)
                for (int x = 0; x < u.prob_maps.w; ++x)
                    if (u.prob_maps.at(y, x, l) > best) {
                        best = u.prob_maps.at(y, x, l);
                        by = y;
                        bx = x;
                    }
            bool hit = false;
            for (int y = std::max(0, by - 1); y <= std::min(gt.rows - 1, by + 1) && !hit; ++y)
                for (int x = std::max(0, bx - 1); x <= std::min(gt.cols - 1, bx + 1); ++x)
                    if (gt.at<uchar>(y, x) > 0) {
                        hit = true;
                        break;
                    }
            ++r.total;
            r.hits += hit ? 1 : 0;
        }
    }
    if (r.total == 0) throw ContractError("pointing game: no positives");
    return r;
}

enum class EvalSplit { kFoldTest, kAll };

struct EvalTasks {
    bool diagnosis = true;
    bool lesions = true;
    bool segmentation = true;
    bool pointing = false;
};

struct EvalConfig {
    EvalSplit split = EvalSplit::kFoldTest;
    EvalTasks tasks;
    std::optional<SchemaMapping> prediction_mapping;  // model schema -> eval schema
    std::optional<SchemaMapping> gt_mapping;          // data schema -> eval schema
    int roi_threshold = 20;
    bool store_maps = false;
};

struct PredictionRecord {
    std::string image_id;
    int fold = 0;
    int diagnosis_label = 0;
    double diagnosis_prob = 0;
    std::vector<double> lesion_probs;  // eval schema order
    std::vector<int> lesion_labels;
    std::optional<nn::FeatureMap<float>> prob_maps;
};

struct TaskMetric {
    std::string name;  // "diagnosis" or the lesion name
    FoldedMetric auc;
    std::vector<RocCurve> fold_curves;
    RocCurve merged;
    bool defined = true;  // false when fewer than 2 folds had a computable AUC
};

struct EvalReport {
    std::vector<std::string> lesion_names;  // eval schema order
    std::optional<TaskMetric> diagnosis;
    std::vector<TaskMetric> lesion_id;
    std::vector<TaskMetric> segmentation;
    std::vector<double> pointing_per_fold;
    PointingResult pointing;
    std::vector<PredictionRecord> predictions;
    std::vector<std::string> warnings;
};

namespace detail {

inline TaskMetric fold_task_metric(const std::string& name,
                                   const std::vector<std::optional<RocCurve>>& per_fold,
                                   std::vector<std::string>& warnings) {
    TaskMetric t;
    t.name = name;
    std::vector<RocCurve> defined;
    for (std::size_t f = 0; f < per_fold.size(); ++f) {
        if (per_fold[f]) {
            t.auc.per_fold.push_back(per_fold[f]->auc);
            defined.push_back(*per_fold[f]);
            t.fold_curves.push_back(*per_fold[f]);
        } else {
            warnings.push_back("task '" + name + "': fold " + std::to_string(f) +
                               " has no computable AUC");
        }
    }
    if (t.auc.per_fold.size() < 2) {
        t.defined = false;
        t.auc.mean = std::numeric_limits<double>::quiet_NaN();
        t.auc.stddev = std::numeric_limits<double>::quiet_NaN();
    } else {
        t.auc = folded_auc(t.auc.per_fold);
    }
    if (!defined.empty()) t.merged = merge_fold_curves(defined);
    return t;
}

}  // namespace detail

// Scores every fold's model on its share of the manifest and folds the
// results. kFoldTest scores each model on its own held-out fold; kAll scores
// each model on the whole set (the cross-dataset protocol). Samples must
// arrive preprocessed (pixels and gt maps loaded, dims multiples of 16).
inline EvalReport evaluate_run(std::vector<Network<float>*> fold_nets,
                               const DatasetManifest& manifest,
                               const FoldAssignment* folds, const EvalConfig& cfg) {
    if (fold_nets.empty()) throw ContractError("evaluate_run: no models");
    for (auto* n : fold_nets)
        if (!n) throw ContractError("evaluate_run: null model");
    if (cfg.split == EvalSplit::kFoldTest) {
        if (!folds) throw ContractError("evaluate_run: fold-test split needs folds");
        if (static_cast<int>(fold_nets.size()) != folds->fold_count)
            throw ContractError("evaluate_run: model count does not match fold count");
    }
    const bool wants_lesions = cfg.tasks.lesions || cfg.tasks.segmentation ||
                               cfg.tasks.pointing;
    if (wants_lesions && !fold_nets[0]->is_al())
        throw ContractError("evaluate_run: variant provides no lesion outputs");

    // eval schema: mapped target, or the shared native schema
    const LesionSchema* model_schema = &fold_nets[0]->schema();
    LesionSchema eval_schema =
        cfg.prediction_mapping ? cfg.prediction_mapping->target : *model_schema;
    if (cfg.prediction_mapping &&
        !(cfg.prediction_mapping->source == *model_schema))
        throw ContractError("evaluate_run: prediction mapping source schema mismatch");
    if (wants_lesions || cfg.tasks.lesions) {
        if (!manifest.schema)
            throw ContractError("evaluate_run: manifest has no lesion labels");
        if (cfg.gt_mapping) {
            if (!(cfg.gt_mapping->source == *manifest.schema))
                throw ContractError("evaluate_run: gt mapping source schema mismatch");
            if (!(cfg.gt_mapping->target.lesions == eval_schema.lesions))
                throw ContractError(
                    "evaluate_run: gt mapping target does not match the eval schema");
        } else if (!(manifest.schema->lesions == eval_schema.lesions)) {
            throw ContractError("evaluate_run: schema mismatch between model ('" +
                                model_schema->name + "') and manifest ('" +
                                manifest.schema->name +
                                "') and no cross-schema mapping supplied");
        }
    }

    EvalReport rep;
    rep.lesion_names = eval_schema.lesions;
    const int n_lesions = eval_schema.size();
    const int fold_count = static_cast<int>(fold_nets.size());

    std::vector<std::optional<RocCurve>> diag_folds(
        static_cast<std::size_t>(fold_count));
    std::vector<std::vector<std::optional<RocCurve>>> lesion_folds(
        static_cast<std::size_t>(n_lesions),
        std::vector<std::optional<RocCurve>>(static_cast<std::size_t>(fold_count)));
    std::vector<std::vector<std::optional<RocCurve>>> seg_folds(
        static_cast<std::size_t>(n_lesions),
        std::vector<std::optional<RocCurve>>(static_cast<std::size_t>(fold_count)));

    const auto gt_groups = cfg.gt_mapping
                               ? mapping_source_indices(*cfg.gt_mapping)
                               : std::vector<std::vector<int>>();

    for (int f = 0; f < fold_count; ++f) {
        std::vector<int> indices;
        if (cfg.split == EvalSplit::kFoldTest) {
            indices = folds->test_indices(f);
        } else {
            indices.resize(manifest.samples.size());
            for (std::size_t i = 0; i < indices.size(); ++i)
                indices[i] = static_cast<int>(i);
        }

        ScoredSet diag_set;
        std::vector<ScoredSet> lesion_sets(static_cast<std::size_t>(n_lesions));
        std::vector<SegmentationUnit> seg_units;

        for (int idx : indices) {
            const ImageSample& s = manifest.samples[static_cast<std::size_t>(idx)];
            if (s.pixels.empty())
                throw ContractError("evaluate_run: sample '" + s.image_id +
                                    "' is not preprocessed");
            auto input = to_input_tensor<float>(s.pixels);
            Prediction<float> pred = fold_nets[static_cast<std::size_t>(f)]->forward(input);

            PredictionRecord rec;
            rec.image_id = s.image_id;
            rec.fold = f;
            rec.diagnosis_label = s.diagnosis;
            rec.diagnosis_prob = pred.diagnosis_prob;

            if (cfg.tasks.diagnosis)
                diag_set.units.push_back({rec.diagnosis_prob, s.diagnosis, s.image_id});

            if (wants_lesions) {
                std::vector<double> probs(static_cast<std::size_t>(pred.lesion_probs.cols()));
                for (int i = 0; i < pred.lesion_probs.cols(); ++i)
                    probs[static_cast<std::size_t>(i)] = pred.lesion_probs(i);
                rec.lesion_probs = cfg.prediction_mapping
                                       ? map_predictions_cross_schema(probs,
                                                                     *cfg.prediction_mapping)
                                       : probs;
                rec.lesion_labels = cfg.gt_mapping
                                        ? map_gt_cross_schema(s.lesion_flags, *cfg.gt_mapping)
                                        : s.lesion_flags;
                if (cfg.tasks.lesions)
                    for (int l = 0; l < n_lesions; ++l)
                        lesion_sets[static_cast<std::size_t>(l)].units.push_back(
                            {rec.lesion_probs[static_cast<std::size_t>(l)],
                             rec.lesion_labels[static_cast<std::size_t>(l)], s.image_id});

                if (cfg.tasks.segmentation || cfg.tasks.pointing) {
                    nn::FeatureMap<float> probs_stack = export_probability_maps(*pred.maps);
                    SegmentationUnit unit;
                    unit.image_id = s.image_id;
                    unit.prob_maps = cfg.prediction_mapping
                                         ? map_stack_cross_schema(probs_stack,
                                                                  *cfg.prediction_mapping)
                                         : std::move(probs_stack);
                    unit.roi_cells = downscale_gt(roi_mask(s.pixels, cfg.roi_threshold));
                    unit.gt_cells.resize(static_cast<std::size_t>(n_lesions));
                    for (int l = 0; l < n_lesions; ++l) {
                        std::vector<int> sources;
                        if (cfg.gt_mapping)
                            sources = gt_groups[static_cast<std::size_t>(l)];
                        else
                            sources = {l};
                        cv::Mat pooled;
                        for (int si : sources) {
                            const auto& gm = s.gt_maps[static_cast<std::size_t>(si)];
                            if (gm.empty()) continue;
                            cv::Mat cells = downscale_gt(gm);
                            if (pooled.empty())
                                pooled = cells;
                            else
                                pooled = cv::max(pooled, cells);
                        }
                        unit.gt_cells[static_cast<std::size_t>(l)] = pooled;
                    }
                    if (cfg.store_maps) rec.prob_maps = unit.prob_maps;
                    seg_units.push_back(std::move(unit));
                }
            }
            rep.predictions.push_back(std::move(rec));
        }

        if (cfg.tasks.diagnosis) {
            try {
                diag_folds[static_cast<std::size_t>(f)] = roc_curve(diag_set);
            } catch (const ContractError&) {
            }
        }
        if (cfg.tasks.lesions)
            for (int l = 0; l < n_lesions; ++l) {
                try {
                    lesion_folds[static_cast<std::size_t>(l)][static_cast<std::size_t>(f)] =
                        roc_curve(lesion_sets[static_cast<std::size_t>(l)]);
                } catch (const ContractError&) {
                }
            }
        if (cfg.tasks.segmentation)
            for (int l = 0; l < n_lesions; ++l) {
                try {
                    seg_folds[static_cast<std::size_t>(l)][static_cast<std::size_t>(f)] =
                        eval_segmentation(seg_units, l);
                } catch (const ContractError&) {
                }
            }
        if (cfg.tasks.pointing) {
            try {
                PointingResult pr = pointing_game(seg_units);
                rep.pointing.hits += pr.hits;
                rep.pointing.total += pr.total;
                rep.pointing_per_fold.push_back(pr.rate());
            } catch (const ContractError&) {
                rep.warnings.push_back("pointing game: fold " + std::to_string(f) +
                                       " has no positives");
            }
        }
    }

    if (cfg.tasks.diagnosis)
        rep.diagnosis = detail::fold_task_metric("diagnosis", diag_folds, rep.warnings);
    if (cfg.tasks.lesions)
        for (int l = 0; l < n_lesions; ++l)
            rep.lesion_id.push_back(detail::fold_task_metric(
                eval_schema.lesions[static_cast<std::size_t>(l)],
                lesion_folds[static_cast<std::size_t>(l)], rep.warnings));
    if (cfg.tasks.segmentation)
        for (int l = 0; l < n_lesions; ++l)
            rep.segmentation.push_back(detail::fold_task_metric(
                eval_schema.lesions[static_cast<std::size_t>(l)],
                seg_folds[static_cast<std::size_t>(l)], rep.warnings));
    return rep;
}

// Resolves the builtin mapping pair for a (model schema, data schema)
// combination, or nothing when they already agree.
struct MappingPair {
    std::optional<SchemaMapping> prediction;
    std::optional<SchemaMapping> gt;
};

inline MappingPair resolve_mappings(const LesionSchema& model, const LesionSchema& data) {
    MappingPair p;
    if (model.lesions == data.lesions) return p;
    if (model.name == "amdlesions" && data.name == "adam") {
        p.prediction = builtin::amdlesions_to_adam_eval();
        p.gt = builtin::adam_gt_to_eval();
        return p;
    }
    throw ContractError("no cross-schema mapping between '" + model.name + "' and '" +
                        data.name + "'");
}

}  // namespace lesionmap
