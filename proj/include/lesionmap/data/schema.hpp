#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "lesionmap/common.hpp"

namespace lesionmap {

// Ordered lesion vocabulary of one dataset. The order is fixed and defines
// the channel order of activation maps, label vectors and checkpoints.
struct LesionSchema {
    std::string name;
    std::vector<std::string> lesions;

    int size() const { return static_cast<int>(lesions.size()); }

    int index_of(const std::string& lesion) const {
        for (std::size_t i = 0; i < lesions.size(); ++i)
            if (lesions[i] == lesion) return static_cast<int>(i);
        return -1;
    }

    bool operator==(const LesionSchema& o) const {
        return name == o.name && lesions == o.lesions;
    }

    void validate() const {
        if (lesions.empty())
            throw ContractError("schema '" + name + "': needs at least one lesion");
        std::set<std::string> seen;
        for (const auto& l : lesions)
            if (!seen.insert(l).second)
                throw ContractError("schema '" + name + "': duplicate lesion '" + l + "'");
    }
};

// Cross-schema label mapping: direct pairs copy a single source class to a
// target class; pooled rules combine several source classes into one target
// class by maximum (OR on binary ground truth).
struct SchemaMapping {
    LesionSchema source;
    LesionSchema target;
    std::vector<std::pair<std::string, std::string>> direct;  // (source, target)
    std::vector<std::pair<std::string, std::vector<std::string>>> pooled;  // target <- sources

    void validate() const {
        source.validate();
        target.validate();
        std::map<std::string, int> target_cover;
        std::map<std::string, int> source_use;
        for (const auto& [s, t] : direct) {
            if (source.index_of(s) < 0)
                throw ContractError("mapping: unknown source lesion '" + s + "'");
            if (target.index_of(t) < 0)
                throw ContractError("mapping: unknown target lesion '" + t + "'");
            target_cover[t]++;
            source_use[s]++;
        }
        for (const auto& [t, srcs] : pooled) {
            if (target.index_of(t) < 0)
                throw ContractError("mapping: unknown pooled target '" + t + "'");
            if (srcs.empty())
                throw ContractError("mapping: pooled rule for '" + t + "' has no sources");
            target_cover[t]++;
            for (const auto& s : srcs) {
                if (source.index_of(s) < 0)
                    throw ContractError("mapping: unknown pooled source '" + s + "'");
                source_use[s]++;
            }
        }
        for (const auto& t : target.lesions) {
            const auto it = target_cover.find(t);
            if (it == target_cover.end())
                throw ContractError("mapping: target lesion '" + t + "' not covered");
            if (it->second > 1)
                throw ContractError("mapping: target lesion '" + t + "' covered twice");
        }
        for (const auto& [s, n] : source_use)
            if (n > 1)
                throw ContractError("mapping: source lesion '" + s + "' used twice");
    }
};

namespace builtin {

// The 9-category grouping used for the primary training dataset.
inline LesionSchema amdlesions_schema() {
    return {"amdlesions",
            {"atrophy", "drusen", "exudates", "fibrosis", "hemorrhage",
             "pm", "pa", "ped", "others"}};
}

// Lesion classes of the ADAM challenge annotations.
inline LesionSchema adam_schema() {
    return {"adam", {"drusen", "exudates", "hemorrhage", "scar", "others"}};
}

// Common evaluation vocabulary when scoring amdlesions-trained models on
// adam labels: the three shared classes plus a pooled 'others' group.
inline LesionSchema adam_eval_schema() {
    return {"adam-eval", {"drusen", "exudates", "hemorrhage", "others"}};
}

// Prediction-side mapping: model outputs in the amdlesions vocabulary are
// reduced to the evaluation vocabulary; everything without a direct ADAM
// counterpart pools into 'others' by maximum.
inline SchemaMapping amdlesions_to_adam_eval() {
    SchemaMapping m;
    m.source = amdlesions_schema();
    m.target = adam_eval_schema();
    m.direct = {{"drusen", "drusen"}, {"exudates", "exudates"}, {"hemorrhage", "hemorrhage"}};
    m.pooled = {{"others", {"fibrosis", "atrophy", "pm", "pa", "ped", "others"}}};
    m.validate();
    return m;
}

// Ground-truth-side mapping: adam's native labels reduced to the same
// evaluation vocabulary; scar folds into 'others'.
inline SchemaMapping adam_gt_to_eval() {
    SchemaMapping m;
    m.source = adam_schema();
    m.target = adam_eval_schema();
    m.direct = {{"drusen", "drusen"}, {"exudates", "exudates"}, {"hemorrhage", "hemorrhage"}};
    m.pooled = {{"others", {"scar", "others"}}};
    m.validate();
    return m;
}

}  // namespace builtin

}  // namespace lesionmap
