#include <catch2/catch_amalgamated.hpp>

#include <vector>

#include "lesionmap/checkpoint.hpp"
#include "lesionmap/nn/init.hpp"
#include "test_util.hpp"

using namespace lesionmap;
using Catch::Matchers::ContainsSubstring;

namespace {

LesionSchema toy_schema(int n) {
    LesionSchema s;
    s.name = "toy";
    for (int i = 0; i < n; ++i) s.lesions.push_back("l" + std::to_string(i));
    return s;
}

Network<float> fresh_net(ModelVariant v, std::uint64_t seed) {
    Network<float> net(v, toy_schema(3), TrunkConfig::reduced(),
                       v == ModelVariant::kAOnly ? 64 : 0, 32);
    init_random(net, seed);
    return net;
}

}  // namespace

TEST_CASE("checkpoint round-trips weights, config and architecture") {
    testutil::ScratchDir dir("ck");
    auto net = fresh_net(ModelVariant::kAlFc, 5);

    nlohmann::json config = {{"target_width", 48}, {"learning_rate", 1e-4}};
    Checkpoint ck = checkpoint_from_network(net, config, 17);
    const auto file = dir.path() / "model.ck";
    save_checkpoint(ck, file);

    const Checkpoint back = load_checkpoint(file);
    REQUIRE(back.version == kCheckpointVersion);
    REQUIRE(back.variant == ModelVariant::kAlFc);
    REQUIRE(back.schema.name == "toy");
    REQUIRE(back.schema.lesions == std::vector<std::string>{"l0", "l1", "l2"});
    REQUIRE(back.trunk.block_widths == TrunkConfig::reduced().block_widths);
    REQUIRE(back.epoch == 17);
    REQUIRE(back.config.at("target_width").get<int>() == 48);
    REQUIRE(checkpoint_digest(back) == checkpoint_digest(ck));

    Network<float> restored = network_from_checkpoint(back);
    auto pa = net.params();
    auto pb = restored.params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        REQUIRE(pa[i].name == pb[i].name);
        REQUIRE(*pa[i].value == *pb[i].value);  // bitwise
    }

    // identical forward responses
    nn::FeatureMap<float> img(48, 48, 3);
    Rng rng(3);
    testutil::fill_uniform(img, rng, -1.0, 1.0);
    const auto p1 = net.forward(img);
    const auto p2 = restored.forward(img);
    REQUIRE(p1.diagnosis_prob == p2.diagnosis_prob);
    REQUIRE((p1.lesion_probs - p2.lesion_probs).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("checkpoint preserves the baseline geometry") {
    testutil::ScratchDir dir("ck_base");
    auto net = fresh_net(ModelVariant::kAOnly, 9);
    Checkpoint ck = checkpoint_from_network(net, nlohmann::json::object(), 1);
    REQUIRE(ck.baseline_input_size == 64);
    REQUIRE(ck.baseline_hidden == 32);
    const auto file = dir.path() / "base.ck";
    save_checkpoint(ck, file);
    const Checkpoint back = load_checkpoint(file);
    REQUIRE(back.baseline_input_size == 64);
    REQUIRE(back.baseline_hidden == 32);
    Network<float> restored = network_from_checkpoint(back);
    REQUIRE(restored.baseline_input_size() == 64);
    REQUIRE(restored.baseline_hidden() == 32);

    nn::FeatureMap<float> img(64, 64, 3);
    Rng rng(11);
    testutil::fill_uniform(img, rng, -1.0, 1.0);
    REQUIRE(net.forward(img).diagnosis_prob == restored.forward(img).diagnosis_prob);
}

TEST_CASE("checkpoint carries optimizer state") {
    testutil::ScratchDir dir("ck_opt");
    auto net = fresh_net(ModelVariant::kAlMax, 21);

    AdamConfig acfg;
    acfg.alpha = 1e-4;
    Adam<float> opt(acfg);
    nn::FeatureMap<float> img(48, 48, 3);
    Rng rng(23);
    testutil::fill_uniform(img, rng, -1.0, 1.0);
    for (int step = 0; step < 3; ++step) {
        net.zero_grads();
        (void)net.forward(img);
        nn::Vec<float> dl(3);
        dl << 0.1f, -0.2f, 0.3f;
        net.backward(dl, 0.5f);
        opt.step(net.params(), 1.0);
    }

    Checkpoint ck = checkpoint_from_network(net, nlohmann::json::object(), 3, &opt);
    REQUIRE(ck.optimizer_step == 3);
    REQUIRE(ck.optimizer_state.count("adam.m.head.weight") == 1);
    REQUIRE(ck.optimizer_state.count("adam.v.head.weight") == 1);

    const auto file = dir.path() / "opt.ck";
    save_checkpoint(ck, file);
    const Checkpoint back = load_checkpoint(file);
    REQUIRE(back.optimizer_step == 3);
    REQUIRE(back.optimizer_state.size() == ck.optimizer_state.size());
    const auto& m = back.optimizer_state.at("adam.m.head.weight");
    REQUIRE(m.data == ck.optimizer_state.at("adam.m.head.weight").data);
}

TEST_CASE("corrupted payloads are rejected") {
    testutil::ScratchDir dir("ck_bad");
    auto net = fresh_net(ModelVariant::kAlMax, 31);
    const auto file = dir.path() / "model.ck";
    save_checkpoint(checkpoint_from_network(net, nlohmann::json::object(), 1), file);

    auto bytes = testutil::read_bytes(file);
    bytes[bytes.size() - 5] ^= 0x40;  // flip a bit deep in the payload
    const auto bad = dir.path() / "bad.ck";
    testutil::write_bytes(bad, bytes);
    REQUIRE_THROWS_WITH(load_checkpoint(bad),
                        ContainsSubstring("digest mismatch: file is corrupted"));
}

TEST_CASE("foreign files and versions are rejected") {
    testutil::ScratchDir dir("ck_foreign");
    const auto not_ck = dir.path() / "file.ck";
    testutil::write_text(not_ck, "this is not a checkpoint at all");
    REQUIRE_THROWS_WITH(load_checkpoint(not_ck),
                        ContainsSubstring("is not a checkpoint file"));

    REQUIRE_THROWS_AS(load_checkpoint(dir.path() / "absent.ck"), IoError);

    auto net = fresh_net(ModelVariant::kAlMax, 3);
    const auto file = dir.path() / "model.ck";
    save_checkpoint(checkpoint_from_network(net, nlohmann::json::object(), 1), file);
    auto bytes = testutil::read_bytes(file);
    bytes[4] = 99;  // version field follows the 4-byte magic
    const auto versioned = dir.path() / "ver.ck";
    testutil::write_bytes(versioned, bytes);
    REQUIRE_THROWS_WITH(load_checkpoint(versioned),
                        ContainsSubstring("unsupported checkpoint version 99"));

    // truncation inside the payload
    auto short_bytes = testutil::read_bytes(file);
    short_bytes.resize(short_bytes.size() - 64);
    const auto trunc = dir.path() / "trunc.ck";
    testutil::write_bytes(trunc, short_bytes);
    REQUIRE_THROWS_WITH(load_checkpoint(trunc),
                        ContainsSubstring("truncated checkpoint payload"));
}

TEST_CASE("restoring a checkpoint into the wrong shape fails loudly") {
    auto net = fresh_net(ModelVariant::kAlMax, 7);
    Checkpoint ck = checkpoint_from_network(net, nlohmann::json::object(), 1);

    Checkpoint missing = ck;
    missing.tensors.erase("head.weight");
    REQUIRE_THROWS_WITH(network_from_checkpoint(missing),
                        ContainsSubstring("missing tensor 'head.weight'"));

    Checkpoint reshaped = ck;
    reshaped.tensors.at("head.weight").cols = 7;
    REQUIRE_THROWS_WITH(network_from_checkpoint(reshaped),
                        ContainsSubstring("shape mismatch"));
}

TEST_CASE("pretrained trunk loading touches only trunk tensors") {
    auto donor = fresh_net(ModelVariant::kAlMax, 41);
    Checkpoint ck = checkpoint_from_network(donor, nlohmann::json::object(), 1);

    auto target = fresh_net(ModelVariant::kAlFc, 43);
    // remember the head and aggregator before the trunk transplant
    nn::Mat<float> head_before = *target.head()->params()[0].value;
    nn::Mat<float> agg_before = *target.fc_aggregator()->params()[0].value;

    load_trunk_tensors(target, ck);

    for (auto& p : target.params()) {
        if (p.name.rfind("trunk.", 0) == 0) {
            const auto& blob = ck.tensors.at(p.name);
            nn::Mat<float> donor_value(blob.rows, blob.cols);
            std::memcpy(donor_value.data(), blob.data.data(),
                        sizeof(float) * blob.data.size());
            REQUIRE(*p.value == donor_value);
        }
    }
    REQUIRE(*target.head()->params()[0].value == head_before);
    REQUIRE(*target.fc_aggregator()->params()[0].value == agg_before);
}

TEST_CASE("checkpoint digest is sensitive to any weight change") {
    auto net = fresh_net(ModelVariant::kAlMax, 51);
    Checkpoint a = checkpoint_from_network(net, nlohmann::json::object(), 1);
    Checkpoint b = a;
    REQUIRE(checkpoint_digest(a) == checkpoint_digest(b));
    b.tensors.at("head.bias").data[0] += 1e-3f;
    REQUIRE(checkpoint_digest(a) != checkpoint_digest(b));
}
