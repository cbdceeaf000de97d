#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <vector>

#include <opencv2/imgproc.hpp>

#include "lesionmap/train.hpp"
#include "test_util.hpp"

using namespace lesionmap;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

// 8 preprocessed 32x32 samples, 4 patients, two lesions. Positives carry a
// bright disk so the classes are separable.
DatasetManifest toy_manifest() {
    DatasetManifest m;
    m.name = "toy";
    m.schema = LesionSchema{"toy", {"l0", "l1"}};
    for (int i = 0; i < 8; ++i) {
        ImageSample s;
        s.image_id = "img" + std::to_string(i);
        s.image_path = s.image_id + ".png";
        s.patient_id = "p" + std::to_string(i / 2);
        s.diagnosis = (i / 2) % 2;
        s.pixels = cv::Mat(32, 32, CV_8UC3, cv::Scalar(25, 30, 35));
        if (s.diagnosis == 1)
            cv::circle(s.pixels, {12 + i, 16}, 7, cv::Scalar(90, 160, 230), -1);
        s.lesion_flags = {s.diagnosis, s.diagnosis == 1 && i % 2 == 0 ? 1 : 0};
        s.gt_map_paths = {"", ""};
        s.gt_maps = {cv::Mat(), cv::Mat()};
        m.samples.push_back(s);
    }
    return m;
}

TrainConfig toy_config() {
    TrainConfig cfg;
    cfg.variant = ModelVariant::kAlMax;
    cfg.trunk = TrunkConfig::reduced();
    cfg.target_width = 32;
    cfg.learning_rate = 1e-4;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.seed = 11;
    cfg.augment.enabled = false;
    return cfg;
}

}  // namespace

TEST_CASE("train runs the configured epochs and logs every step") {
    const auto m = toy_manifest();
    const auto folds = make_folds(m, 2, 5);
    auto cfg = toy_config();

    std::vector<StepRecord> steps;
    const auto res = train(cfg, m, folds, [&](const StepRecord& r) { steps.push_back(r); });

    REQUIRE(res.epoch_log.size() == 3);
    // 4 training samples, batch 4: one step per epoch
    REQUIRE(steps.size() == 3);
    for (std::size_t i = 0; i < steps.size(); ++i) {
        REQUIRE(steps[i].step == static_cast<long>(i + 1));
        REQUIRE(steps[i].epoch == static_cast<int>(i + 1));
        REQUIRE(std::isfinite(steps[i].loss));
        REQUIRE(steps[i].loss_lesion.has_value());
        REQUIRE_THAT(steps[i].lr, WithinAbs(cfg.learning_rate, 0.0));
        // parts are accumulated as floats, so additivity holds to float precision
        REQUIRE_THAT(steps[i].loss, WithinAbs(steps[i].loss_diag + *steps[i].loss_lesion,
                                              1e-6));
    }
    for (const auto& e : res.epoch_log) {
        REQUIRE(e.steps == 1);
        REQUIRE(e.loss_lesion.has_value());
    }
    REQUIRE_THAT(res.epoch_log[0].loss, WithinAbs(steps[0].loss, 1e-12));

    REQUIRE(res.checkpoint.epoch == 3);
    REQUIRE(res.checkpoint.optimizer_step == 3);
    REQUIRE(res.checkpoint.variant == ModelVariant::kAlMax);
    REQUIRE(res.checkpoint.config.at("epochs").get<int>() == 3);
    REQUIRE(res.checkpoint.config.at("variant").get<std::string>() == "al-max");
    REQUIRE(res.checkpoint.config.at("seed").get<std::uint64_t>() == 11);
}

TEST_CASE("a short last batch still counts as one step") {
    const auto m = toy_manifest();
    const auto folds = make_folds(m, 2, 5);
    auto cfg = toy_config();
    cfg.epochs = 1;
    cfg.batch_size = 3;  // 4 samples: batches of 3 and 1

    std::vector<StepRecord> steps;
    const auto res = train(cfg, m, folds, [&](const StepRecord& r) { steps.push_back(r); });
    REQUIRE(steps.size() == 2);
    REQUIRE(res.epoch_log[0].steps == 2);
    REQUIRE(res.checkpoint.optimizer_step == 2);
    const double mean = (steps[0].loss + steps[1].loss) / 2.0;
    REQUIRE_THAT(res.epoch_log[0].loss, WithinAbs(mean, 1e-12));
}

TEST_CASE("training is deterministic in the seed") {
    const auto m = toy_manifest();
    const auto folds = make_folds(m, 2, 5);
    auto cfg = toy_config();
    cfg.augment.enabled = true;  // augmentation is seeded too

    const auto a = train(cfg, m, folds);
    const auto b = train(cfg, m, folds);
    REQUIRE(checkpoint_digest(a.checkpoint) == checkpoint_digest(b.checkpoint));
    REQUIRE(a.epoch_log.size() == b.epoch_log.size());
    for (std::size_t i = 0; i < a.epoch_log.size(); ++i)
        REQUIRE(a.epoch_log[i].loss == b.epoch_log[i].loss);

    cfg.seed = 12;
    const auto c = train(cfg, m, folds);
    REQUIRE(checkpoint_digest(a.checkpoint) != checkpoint_digest(c.checkpoint));
}

TEST_CASE("the baseline trains on the diagnosis alone") {
    const auto m = toy_manifest();
    const auto folds = make_folds(m, 2, 5);
    auto cfg = toy_config();
    cfg.variant = ModelVariant::kAOnly;

    const auto res = train(cfg, m, folds);
    REQUIRE(res.checkpoint.variant == ModelVariant::kAOnly);
    REQUIRE(res.checkpoint.baseline_input_size == 32);
    for (const auto& e : res.epoch_log) REQUIRE(!e.loss_lesion.has_value());

    // and runs without any lesion labels at all
    auto plain = m;
    plain.schema.reset();
    for (auto& s : plain.samples) s.lesion_flags.clear();
    const auto folds2 = make_folds(plain, 2, 5);
    REQUIRE_NOTHROW(train(cfg, plain, folds2));

    auto al = toy_config();
    REQUIRE_THROWS_WITH(train(al, plain, folds2),
                        ContainsSubstring("lesion-map variants need lesion labels"));
}

TEST_CASE("train rejects bad configs and inputs") {
    const auto m = toy_manifest();
    const auto folds = make_folds(m, 2, 5);
    auto cfg = toy_config();

    cfg.fold = 2;
    REQUIRE_THROWS_WITH(train(cfg, m, folds), ContainsSubstring("fold index out of range"));
    cfg.fold = -1;
    REQUIRE_THROWS_AS(train(cfg, m, folds), ContractError);
    cfg.fold = 0;

    auto bad = cfg;
    bad.epochs = 0;
    REQUIRE_THROWS_WITH(train(bad, m, folds), ContainsSubstring("epochs must be at least 1"));
    bad = cfg;
    bad.batch_size = 0;
    REQUIRE_THROWS_WITH(train(bad, m, folds), ContainsSubstring("batch size must be positive"));
    bad = cfg;
    bad.learning_rate = 0;
    REQUIRE_THROWS_WITH(train(bad, m, folds), ContainsSubstring("alpha must be positive"));
    bad = cfg;
    bad.target_width = 30;
    REQUIRE_THROWS_WITH(train(bad, m, folds),
                        ContainsSubstring("positive multiple of 16"));
    bad = cfg;
    bad.init = InitSource::kCheckpoint;
    REQUIRE_THROWS_WITH(train(bad, m, folds), ContainsSubstring("needs a path"));

    // a sample of the training split without pixels is refused
    auto raw = m;
    const int victim_fold = folds.sample_fold[0];
    raw.samples[0].pixels = cv::Mat();
    cfg.fold = 1 - victim_fold;  // sample 0 lands in this fold's training split
    REQUIRE_THROWS_WITH(train(cfg, raw, folds), ContainsSubstring("not preprocessed"));
}

TEST_CASE("the loss falls on a separable toy set") {
    const auto m = toy_manifest();
    const auto folds = make_folds(m, 2, 5);
    auto cfg = toy_config();
    cfg.learning_rate = 5e-3;
    cfg.epochs = 20;
    cfg.batch_size = 2;

    const auto res = train(cfg, m, folds);
    REQUIRE(res.epoch_log.size() == 20);
    const auto mean3 = [&](std::size_t from) {
        return (res.epoch_log[from].loss + res.epoch_log[from + 1].loss +
                res.epoch_log[from + 2].loss) /
               3.0;
    };
    const double front = mean3(0);
    const double back = mean3(17);
    INFO("front " << front << " back " << back);
    REQUIRE(back < front);
    REQUIRE(back < front - 0.05);
}

TEST_CASE("checkpoint and pretrained-trunk initialization feed new runs") {
    const auto m = toy_manifest();
    const auto folds = make_folds(m, 2, 5);
    auto cfg = toy_config();
    cfg.epochs = 2;

    const auto src = train(cfg, m, folds);
    testutil::ScratchDir dir("train_init");
    const auto path = dir.path() / "src.lmck";
    save_checkpoint(src.checkpoint, path);

    auto from_cp = toy_config();
    from_cp.epochs = 1;
    from_cp.init = InitSource::kCheckpoint;
    from_cp.init_path = path;
    const auto cont = train(from_cp, m, folds);
    REQUIRE(cont.checkpoint.variant == ModelVariant::kAlMax);
    REQUIRE(cont.checkpoint.optimizer_step == 1);  // optimizer starts fresh

    auto warm = toy_config();
    warm.epochs = 1;
    warm.init = InitSource::kPretrainedTrunk;
    warm.init_path = path;
    REQUIRE_NOTHROW(train(warm, m, folds));
}

TEST_CASE("fine-tuning continues a checkpoint with fresh optimizer state") {
    const auto m = toy_manifest();
    const auto folds = make_folds(m, 2, 5);
    auto cfg = toy_config();
    cfg.epochs = 2;
    const auto src = train(cfg, m, folds);

    auto ft_cfg = toy_config();
    ft_cfg.epochs = 2;
    ft_cfg.seed = 99;
    const auto ft = fine_tune(src.checkpoint, ft_cfg, m, folds);
    REQUIRE(ft.epoch_log.size() == 2);
    for (const auto& e : ft.epoch_log) REQUIRE(e.loss_lesion.has_value());
    REQUIRE(ft.checkpoint.optimizer_step == 2);
    REQUIRE(ft.checkpoint.config.at("fine_tuned_from").get<std::string>() ==
            checkpoint_digest(src.checkpoint));
    REQUIRE(ft.checkpoint.config.at("source_epoch").get<int>() == 2);

    // a label-free target set drops to the diagnostic loss
    auto plain = m;
    plain.schema.reset();
    for (auto& s : plain.samples) s.lesion_flags.clear();
    const auto folds2 = make_folds(plain, 2, 5);
    const auto diag_only = fine_tune(src.checkpoint, ft_cfg, plain, folds2);
    for (const auto& e : diag_only.epoch_log) REQUIRE(!e.loss_lesion.has_value());

    // so does a vocabulary mismatch
    auto renamed = m;
    renamed.schema = LesionSchema{"renamed", {"a", "b", "c"}};
    for (auto& s : renamed.samples) s.lesion_flags = {0, 0, 0};
    const auto folds3 = make_folds(renamed, 2, 5);
    const auto mismatched = fine_tune(src.checkpoint, ft_cfg, renamed, folds3);
    for (const auto& e : mismatched.epoch_log) REQUIRE(!e.loss_lesion.has_value());

    auto bad = ft_cfg;
    bad.fold = 5;
    REQUIRE_THROWS_WITH(fine_tune(src.checkpoint, bad, m, folds),
                        ContainsSubstring("fold index out of range"));
}
