#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lesionmap/checkpoint.hpp"
#include "lesionmap/data/augment.hpp"
#include "lesionmap/data/folds.hpp"
#include "lesionmap/data/image_io.hpp"
#include "lesionmap/data/manifest.hpp"
#include "lesionmap/losses.hpp"
#include "lesionmap/nn/adam.hpp"
#include "lesionmap/nn/init.hpp"
#include "lesionmap/nn/network.hpp"

namespace lesionmap {

struct TrainConfig {
    ModelVariant variant = ModelVariant::kAlMax;
    double learning_rate = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int epochs = 100;
    int batch_size = 8;
    std::uint64_t seed = 1;
    int fold = 0;
    InitSource init = InitSource::kRandom;
    std::filesystem::path init_path;  // pretrained trunk / source checkpoint
    TrunkConfig trunk = TrunkConfig::reference();
    int target_width = 720;
    int baseline_hidden = 64;
    AugmentConfig augment;

    void validate() const {
        if (learning_rate <= 0) throw ContractError("train config: alpha must be positive");
        if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1)
            throw ContractError("train config: decay rates must lie in (0,1)");
        if (epochs < 1) throw ContractError("train config: epochs must be at least 1");
        if (batch_size < 1) throw ContractError("train config: batch size must be positive");
        if (target_width <= 0 || target_width % 16 != 0)
            throw ContractError("train config: target width must be a positive multiple of 16");
        trunk.validate();
        augment.validate();
        if (init != InitSource::kRandom && init_path.empty())
            throw ContractError("train config: init source '" + init_source_name(init) +
                                "' needs a path");
    }

    nlohmann::json to_json() const {
        return {{"variant", variant_name(variant)},
                {"learning_rate", learning_rate},
                {"beta1", beta1},
                {"beta2", beta2},
                {"adam_eps", adam_eps},
                {"epochs", epochs},
                {"batch_size", batch_size},
                {"seed", seed},
                {"fold", fold},
                {"init", init_source_name(init)},
                {"trunk_widths", trunk.block_widths},
                {"target_width", target_width},
                {"baseline_hidden", baseline_hidden},
                {"augment_enabled", augment.enabled}};
    }
};

struct StepRecord {
    long step = 0;  // optimizer step, global
    int epoch = 0;
    double loss = 0;
    double loss_diag = 0;
    std::optional<double> loss_lesion;
    double lr = 0;
};

struct EpochRecord {
    int epoch = 0;
    double loss = 0;
    double loss_diag = 0;
    std::optional<double> loss_lesion;
    long steps = 0;
};

using StepSink = std::function<void(const StepRecord&)>;

struct TrainResult {
    Network<float> net;
    Checkpoint checkpoint;
    std::vector<EpochRecord> epoch_log;
};

namespace detail {

// Shared epoch/batch loop: augment, forward, loss, accumulate, Adam step.
// Gradients are summed over the batch and scaled by 1/batch at the step, so
// the update follows the batch-mean loss.
inline TrainResult run_training(Network<float>&& net_in, const TrainConfig& cfg,
                                const DatasetManifest& manifest,
                                const std::vector<int>& train_idx, bool use_lesion_loss,
                                const nlohmann::json& config_snapshot,
                                const StepSink& sink) {
    if (train_idx.empty()) throw ContractError("train: empty training split");
    for (int idx : train_idx)
        if (manifest.samples[static_cast<std::size_t>(idx)].pixels.empty())
            throw ContractError("train: sample '" +
                                manifest.samples[static_cast<std::size_t>(idx)].image_id +
                                "' is not preprocessed");

    TrainResult result{std::move(net_in), Checkpoint{}, {}};
    Network<float>& net = result.net;
    Adam<float> adam({cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps});
    auto params = net.params();

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<int> order = train_idx;
        Rng order_rng(derive_seed(cfg.seed, "order", static_cast<std::uint64_t>(epoch)));
        fisher_yates_shuffle(order, order_rng);

        double ep_loss = 0, ep_diag = 0, ep_lesion = 0;
        long ep_steps = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const int batch_n = static_cast<int>(end - start);
            net.zero_grads();
            double b_loss = 0, b_diag = 0, b_lesion = 0;
            std::string batch_ids;
            for (std::size_t i = start; i < end; ++i) {
                const ImageSample& s =
                    manifest.samples[static_cast<std::size_t>(order[i])];
                if (!batch_ids.empty()) batch_ids += ", ";
                batch_ids += s.image_id;
                const AugmentParams ap =
                    sample_augment_params(cfg.augment, cfg.seed, epoch, s.image_id);
                const cv::Mat img = apply_augment(s.pixels, ap);
                const auto input = to_input_tensor<float>(img);
                Prediction<float> pred = net.forward(input);

                double total;
                LossGrad<float> g;
                if (use_lesion_loss) {
                    const LossValue<float> lv =
                        combined_loss(pred, s.diagnosis, s.lesion_flags);
                    total = lv.total;
                    b_diag += lv.diagnostic;
                    b_lesion += lv.lesion;
                    g = combined_loss_grad(pred, s.diagnosis, s.lesion_flags);
                } else {
                    const float lv = baseline_loss(pred, s.diagnosis);
                    total = lv;
                    b_diag += lv;
                    g = baseline_loss_grad(pred, s.diagnosis);
                }
                b_loss += total;
                if (!std::isfinite(total))
                    throw ContractError(
                        "training aborted: non-finite loss at epoch " +
                        std::to_string(epoch) + ", batch starting at step " +
                        std::to_string(adam.step_count() + 1) + " (images: " + batch_ids +
                        ")");
                net.backward(g.dlesion_logits, g.ddiag_logit);
            }
            adam.step(params, 1.0 / batch_n);

            StepRecord rec;
            rec.step = adam.step_count();
            rec.epoch = epoch;
            rec.loss = b_loss / batch_n;
            rec.loss_diag = b_diag / batch_n;
            if (use_lesion_loss) rec.loss_lesion = b_lesion / batch_n;
            rec.lr = cfg.learning_rate;
            if (sink) sink(rec);

            ep_loss += rec.loss;
            ep_diag += rec.loss_diag;
            ep_lesion += use_lesion_loss ? *rec.loss_lesion : 0;
            ++ep_steps;
        }

        EpochRecord er;
        er.epoch = epoch;
        er.loss = ep_loss / static_cast<double>(ep_steps);
        er.loss_diag = ep_diag / static_cast<double>(ep_steps);
        if (use_lesion_loss) er.loss_lesion = ep_lesion / static_cast<double>(ep_steps);
        er.steps = ep_steps;
        result.epoch_log.push_back(er);
    }

    result.checkpoint =
        checkpoint_from_network(net, config_snapshot, cfg.epochs, &adam);
    return result;
}

inline Network<float> build_network(const TrainConfig& cfg, const LesionSchema& schema) {
    const int baseline_size =
        cfg.variant == ModelVariant::kAOnly ? cfg.target_width : 0;
    return Network<float>(cfg.variant, schema, cfg.trunk, baseline_size,
                          cfg.baseline_hidden);
}

}  // namespace detail

// Trains one fold's model from the configured initialization. The A+L
// variants optimize the combined loss when the manifest carries lesion
// labels; the baseline always optimizes the diagnostic loss alone. Samples
// must arrive preprocessed.
inline TrainResult train(const TrainConfig& cfg, const DatasetManifest& manifest,
                         const FoldAssignment& folds, const StepSink& sink = {}) {
    cfg.validate();
    if (cfg.fold < 0 || cfg.fold >= folds.fold_count)
        throw ContractError("train: fold index out of range");
    LesionSchema schema = manifest.schema
                              ? *manifest.schema
                              : LesionSchema{manifest.name, {"lesion"}};
    if (!manifest.schema && cfg.variant != ModelVariant::kAOnly)
        throw ContractError("train: the lesion-map variants need lesion labels");

    Network<float> net = detail::build_network(cfg, schema);
    switch (cfg.init) {
        case InitSource::kRandom:
            init_random(net, cfg.seed);
            break;
        case InitSource::kPretrainedTrunk: {
            init_random(net, cfg.seed);
            const Checkpoint src = load_checkpoint(cfg.init_path);
            load_trunk_tensors(net, src);
            break;
        }
        case InitSource::kCheckpoint: {
            const Checkpoint src = load_checkpoint(cfg.init_path);
            net = network_from_checkpoint(src);
            break;
        }
    }

    const bool use_lesion_loss = net.is_al() && manifest.schema.has_value();
    return detail::run_training(std::move(net), cfg, manifest, folds.train_indices(cfg.fold),
                                use_lesion_loss, cfg.to_json(), sink);
}

// Continues a trained model on a new dataset. When the target manifest lacks
// lesion labels or uses a different vocabulary, only the diagnostic loss is
// optimized; the lesion head stays as trained. Optimizer state starts fresh.
inline TrainResult fine_tune(const Checkpoint& source, const TrainConfig& cfg,
                             const DatasetManifest& manifest, const FoldAssignment& folds,
                             const StepSink& sink = {}) {
    cfg.validate();
    if (cfg.fold < 0 || cfg.fold >= folds.fold_count)
        throw ContractError("fine_tune: fold index out of range");
    Network<float> net = network_from_checkpoint(source);
    const bool schemas_match =
        manifest.schema && manifest.schema->lesions == net.schema().lesions;
    const bool use_lesion_loss = net.is_al() && schemas_match;

    nlohmann::json snapshot = cfg.to_json();
    snapshot["fine_tuned_from"] = checkpoint_digest(source);
    snapshot["source_epoch"] = source.epoch;
    return detail::run_training(std::move(net), cfg, manifest, folds.train_indices(cfg.fold),
                                use_lesion_loss, snapshot, sink);
}

}  // namespace lesionmap
