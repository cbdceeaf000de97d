#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <string>
#include <vector>

#include "lesionmap/common.hpp"
#include "lesionmap/data/manifest.hpp"

namespace lesionmap {

struct FoldAssignment {
    int fold_count = 0;
    std::vector<int> sample_fold;                 // parallel to manifest samples
    std::map<std::string, int> patient_fold;

    std::vector<int> test_indices(int fold) const {
        std::vector<int> out;
        for (std::size_t i = 0; i < sample_fold.size(); ++i)
            if (sample_fold[i] == fold) out.push_back(static_cast<int>(i));
        return out;
    }

    std::vector<int> train_indices(int fold) const {
        std::vector<int> out;
        for (std::size_t i = 0; i < sample_fold.size(); ++i)
            if (sample_fold[i] != fold) out.push_back(static_cast<int>(i));
        return out;
    }
};

// Patient-grouped stratified assignment: all images of a patient land in one
// fold, and each fold's class balance tracks the overall one. Patients are
// classed positive when any of their images is; groups are placed largest
// first into the fold currently holding the fewest samples of that class
// (ties broken by total fold size, then fold index).
inline FoldAssignment make_folds(const DatasetManifest& m, int fold_count, std::uint64_t seed) {
    if (fold_count < 2) throw ContractError("make_folds: need at least 2 folds");
    if (m.samples.empty()) throw ContractError("make_folds: empty manifest");

    struct Group {
        std::string patient;
        std::vector<int> samples;
        int cls = 0;
    };
    std::map<std::string, Group> by_patient;
    for (std::size_t i = 0; i < m.samples.size(); ++i) {
        auto& g = by_patient[m.samples[i].patient_id];
        g.patient = m.samples[i].patient_id;
        g.samples.push_back(static_cast<int>(i));
        if (m.samples[i].diagnosis == 1) g.cls = 1;
    }
    if (static_cast<int>(by_patient.size()) < fold_count)
        throw ContractError("make_folds: fewer patients (" +
                            std::to_string(by_patient.size()) + ") than folds (" +
                            std::to_string(fold_count) + ")");

    std::vector<Group> groups;
    groups.reserve(by_patient.size());
    for (auto& [_, g] : by_patient) groups.push_back(std::move(g));

    // shuffle before the stable size sort so equal-sized groups land in a
    // seed-dependent order
    Rng rng(derive_seed(seed, "folds"));
    fisher_yates_shuffle(groups, rng);
    std::stable_sort(groups.begin(), groups.end(), [](const Group& a, const Group& b) {
        return a.samples.size() > b.samples.size();
    });

    FoldAssignment fa;
    fa.fold_count = fold_count;
    fa.sample_fold.assign(m.samples.size(), -1);
    std::vector<std::array<int, 2>> class_counts(static_cast<std::size_t>(fold_count),
                                                 {0, 0});
    std::vector<int> totals(static_cast<std::size_t>(fold_count), 0);
    for (const auto& g : groups) {
        int best = 0;
        for (int f = 1; f < fold_count; ++f) {
            const auto& cb = class_counts[static_cast<std::size_t>(best)];
            const auto& cf = class_counts[static_cast<std::size_t>(f)];
            const int nb = cb[static_cast<std::size_t>(g.cls)];
            const int nf = cf[static_cast<std::size_t>(g.cls)];
            if (nf < nb || (nf == nb && totals[static_cast<std::size_t>(f)] <
                                            totals[static_cast<std::size_t>(best)]))
                best = f;
        }
        fa.patient_fold[g.patient] = best;
        for (int idx : g.samples) fa.sample_fold[static_cast<std::size_t>(idx)] = best;
        class_counts[static_cast<std::size_t>(best)][static_cast<std::size_t>(g.cls)] +=
            static_cast<int>(g.samples.size());
        totals[static_cast<std::size_t>(best)] += static_cast<int>(g.samples.size());
    }
    return fa;
}

}  // namespace lesionmap
