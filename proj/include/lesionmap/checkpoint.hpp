#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lesionmap/nn/adam.hpp"
#include "lesionmap/nn/network.hpp"

namespace lesionmap {

inline constexpr int kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'L', 'M', 'C', 'K'};

struct TensorBlob {
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    std::vector<float> data;
};

// Versioned snapshot of a trained model: architecture, schema, parameter
// tensors, optimizer state and a config echo, guarded by a payload digest.
struct Checkpoint {
    int version = kCheckpointVersion;
    ModelVariant variant = ModelVariant::kAlMax;
    LesionSchema schema;
    TrunkConfig trunk;
    int baseline_input_size = 0;
    int baseline_hidden = 64;
    int epoch = 0;
    long optimizer_step = 0;
    nlohmann::json config = nlohmann::json::object();
    std::map<std::string, TensorBlob> tensors;
    std::map<std::string, TensorBlob> optimizer_state;  // adam.m.* / adam.v.*
};

namespace detail {

inline TensorBlob blob_from(const nn::Mat<float>& m) {
    TensorBlob b;
    b.rows = m.rows();
    b.cols = m.cols();
    b.data.assign(m.data(), m.data() + m.size());
    return b;
}

inline void blob_to(const TensorBlob& b, nn::Mat<float>& m) {
    if (m.rows() != b.rows || m.cols() != b.cols)
        throw ContractError("checkpoint: tensor shape mismatch (" +
                            std::to_string(b.rows) + "x" + std::to_string(b.cols) +
                            " vs " + std::to_string(m.rows()) + "x" +
                            std::to_string(m.cols()) + ")");
    std::memcpy(m.data(), b.data.data(), sizeof(float) * b.data.size());
}

}  // namespace detail

inline Checkpoint checkpoint_from_network(Network<float>& net,
                                          const nlohmann::json& config,
                                          int epoch,
                                          const Adam<float>* opt = nullptr) {
    Checkpoint ck;
    ck.variant = net.variant();
    ck.schema = net.schema();
    ck.trunk = net.trunk_config();
    ck.baseline_input_size = net.baseline_input_size();
    ck.baseline_hidden = net.baseline_hidden();
    ck.epoch = epoch;
    ck.config = config;
    for (auto& p : net.params()) ck.tensors[p.name] = detail::blob_from(*p.value);
    if (opt) {
        ck.optimizer_step = opt->step_count();
        for (const auto& [name, m] : opt->moment1())
            ck.optimizer_state["adam.m." + name] = detail::blob_from(m);
        for (const auto& [name, v] : opt->moment2())
            ck.optimizer_state["adam.v." + name] = detail::blob_from(v);
    }
    return ck;
}

inline Network<float> network_from_checkpoint(const Checkpoint& ck) {
    Network<float> net(ck.variant, ck.schema, ck.trunk, ck.baseline_input_size,
                       ck.baseline_hidden);
    for (auto& p : net.params()) {
        const auto it = ck.tensors.find(p.name);
        if (it == ck.tensors.end())
            throw ContractError("checkpoint: missing tensor '" + p.name + "'");
        detail::blob_to(it->second, *p.value);
    }
    return net;
}

// Copies only trunk.* tensors; used for the pretrained-trunk init source.
inline void load_trunk_tensors(Network<float>& net, const Checkpoint& ck) {
    for (auto& p : net.params()) {
        if (p.name.rfind("trunk.", 0) != 0) continue;
        const auto it = ck.tensors.find(p.name);
        if (it == ck.tensors.end())
            throw ContractError("pretrained trunk: missing tensor '" + p.name + "'");
        detail::blob_to(it->second, *p.value);
    }
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    // payload: all tensors in directory order, little-endian float32
    std::vector<std::pair<std::string, const TensorBlob*>> order;
    for (const auto& [name, blob] : ck.tensors) order.emplace_back("t:" + name, &blob);
    for (const auto& [name, blob] : ck.optimizer_state)
        order.emplace_back("o:" + name, &blob);

    nlohmann::json dir = nlohmann::json::array();
    std::uint64_t offset = 0;
    std::uint64_t digest = kFnvOffset;
    for (const auto& [name, blob] : order) {
        dir.push_back({{"name", name},
                       {"rows", blob->rows},
                       {"cols", blob->cols},
                       {"offset", offset},
                       {"count", blob->data.size()}});
        offset += blob->data.size() * sizeof(float);
        digest = fnv1a64(blob->data.data(), blob->data.size() * sizeof(float), digest);
    }

    nlohmann::json header_json = {
        {"version", ck.version},
        {"variant", variant_name(ck.variant)},
        {"schema", {{"name", ck.schema.name}, {"lesions", ck.schema.lesions}}},
        {"trunk_widths", ck.trunk.block_widths},
        {"baseline_input_size", ck.baseline_input_size},
        {"baseline_hidden", ck.baseline_hidden},
        {"epoch", ck.epoch},
        {"optimizer_step", ck.optimizer_step},
        {"config", ck.config},
        {"tensors", dir},
        {"payload_digest", to_hex(digest)},
    };
    const std::string header = header_json.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
    out.write(kCheckpointMagic, 4);
    const std::uint32_t ver = static_cast<std::uint32_t>(ck.version);
    out.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
    const std::uint64_t hlen = header.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& [name, blob] : order)
        out.write(reinterpret_cast<const char*>(blob->data.data()),
                  static_cast<std::streamsize>(blob->data.size() * sizeof(float)));
    if (!out) throw IoError("short write on checkpoint '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw IoError("'" + path.string() + "' is not a checkpoint file");
    std::uint32_t ver = 0;
    in.read(reinterpret_cast<char*>(&ver), sizeof(ver));
    if (ver != kCheckpointVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(ver) +
                      " (supported: " + std::to_string(kCheckpointVersion) + ")");
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string header(hlen, '\0');
    in.read(header.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw IoError("truncated checkpoint header");
    nlohmann::json h = nlohmann::json::parse(header);

    Checkpoint ck;
    ck.version = h.at("version").get<int>();
    ck.variant = variant_from_name(h.at("variant").get<std::string>());
    ck.schema.name = h.at("schema").at("name").get<std::string>();
    ck.schema.lesions = h.at("schema").at("lesions").get<std::vector<std::string>>();
    ck.trunk.block_widths = h.at("trunk_widths").get<std::vector<int>>();
    ck.baseline_input_size = h.at("baseline_input_size").get<int>();
    ck.baseline_hidden = h.at("baseline_hidden").get<int>();
    ck.epoch = h.at("epoch").get<int>();
    ck.optimizer_step = h.at("optimizer_step").get<long>();
    ck.config = h.at("config");

    std::uint64_t digest = kFnvOffset;
    for (const auto& entry : h.at("tensors")) {
        TensorBlob blob;
        blob.rows = entry.at("rows").get<Eigen::Index>();
        blob.cols = entry.at("cols").get<Eigen::Index>();
        blob.data.resize(entry.at("count").get<std::size_t>());
        in.read(reinterpret_cast<char*>(blob.data.data()),
                static_cast<std::streamsize>(blob.data.size() * sizeof(float)));
        if (!in) throw IoError("truncated checkpoint payload");
        digest = fnv1a64(blob.data.data(), blob.data.size() * sizeof(float), digest);
        const std::string name = entry.at("name").get<std::string>();
        if (name.rfind("t:", 0) == 0)
            ck.tensors[name.substr(2)] = std::move(blob);
        else if (name.rfind("o:", 0) == 0)
            ck.optimizer_state[name.substr(2)] = std::move(blob);
        else
            throw IoError("checkpoint: malformed tensor entry '" + name + "'");
    }
    const std::string want = h.at("payload_digest").get<std::string>();
    if (to_hex(digest) != want)
        throw IoError("checkpoint digest mismatch: file is corrupted");
    return ck;
}

// Digest of the parameter payload alone; used to reference weight artifacts.
inline std::string checkpoint_digest(const Checkpoint& ck) {
    std::uint64_t digest = kFnvOffset;
    for (const auto& [name, blob] : ck.tensors) {
        digest = fnv1a64(name, digest);
        digest = fnv1a64(blob.data.data(), blob.data.size() * sizeof(float), digest);
    }
    return to_hex(digest);
}

}  // namespace lesionmap
