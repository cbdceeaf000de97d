#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "lesionmap/common.hpp"

namespace lesionmap {

struct ScoredUnit {
    double score = 0;
    int label = 0;  // 0 or 1
    std::string id;
};

// Units are images for the identification tasks and map cells for the
// segmentation task.
struct ScoredSet {
    std::vector<ScoredUnit> units;

    int positives() const {
        int n = 0;
        for (const auto& u : units) n += u.label;
        return n;
    }
    int negatives() const { return static_cast<int>(units.size()) - positives(); }
};

struct RocCurve {
    std::vector<std::pair<double, double>> points;  // (FPR, TPR)
    double auc = 0;
};

inline double trapezoid_area(const std::vector<std::pair<double, double>>& pts) {
    double a = 0;
    for (std::size_t i = 1; i < pts.size(); ++i)
        a += (pts[i].first - pts[i - 1].first) * (pts[i].second + pts[i - 1].second) / 2.0;
    return a;
}

// Threshold sweep over the distinct scores, descending, with tied scores
// moving across the threshold together.
inline RocCurve roc_curve(const ScoredSet& set) {
    const int pos = set.positives(), neg = set.negatives();
    if (pos == 0 || neg == 0)
        throw ContractError("roc_curve: AUC undefined for a single-class set");

    std::vector<const ScoredUnit*> order;
    order.reserve(set.units.size());
    for (const auto& u : set.units) order.push_back(&u);
    std::stable_sort(order.begin(), order.end(),
                     [](const ScoredUnit* a, const ScoredUnit* b) {
                         return a->score > b->score;
                     });

    RocCurve c;
    c.points.emplace_back(0.0, 0.0);
    int tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double s = order[i]->score;
        while (i < order.size() && order[i]->score == s) {
            if (order[i]->label == 1)
                ++tp;
            else
                ++fp;
            ++i;
        }
        c.points.emplace_back(static_cast<double>(fp) / neg, static_cast<double>(tp) / pos);
    }
    if (c.points.back() != std::make_pair(1.0, 1.0)) c.points.emplace_back(1.0, 1.0);
    c.auc = trapezoid_area(c.points);
    return c;
}

// Union of the folds' operating points, for plotting a single mean curve.
// Reported AUCs always come from the per-fold values, not from this curve.
inline RocCurve merge_fold_curves(const std::vector<RocCurve>& curves) {
    if (curves.empty()) throw ContractError("merge_fold_curves: no curves");
    RocCurve out;
    for (const auto& c : curves)
        out.points.insert(out.points.end(), c.points.begin(), c.points.end());
    std::sort(out.points.begin(), out.points.end());
    out.points.erase(std::unique(out.points.begin(), out.points.end()), out.points.end());
    out.auc = trapezoid_area(out.points);
    return out;
}

struct FoldedMetric {
    std::vector<double> per_fold;
    double mean = 0;
    double stddev = 0;
};

inline FoldedMetric folded_auc(const std::vector<double>& per_fold) {
    if (per_fold.size() < 2)
        throw ContractError("folded_auc: need at least 2 fold values");
    FoldedMetric m;
    m.per_fold = per_fold;
    m.mean = std::accumulate(per_fold.begin(), per_fold.end(), 0.0) /
             static_cast<double>(per_fold.size());
    double ss = 0;
    for (double v : per_fold) ss += (v - m.mean) * (v - m.mean);
    m.stddev = std::sqrt(ss / static_cast<double>(per_fold.size() - 1));
    return m;
}

struct TTestResult {
    double t = 0;
    double p = 1;
};

// Two-sample pooled-variance Student's t, two-tailed.
inline TTestResult t_test_two_tailed(const std::vector<double>& a,
                                     const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2)
        throw ContractError("t_test: each group needs at least 2 values");
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / na;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / nb;
    double ssa = 0, ssb = 0;
    for (double v : a) ssa += (v - ma) * (v - ma);
    for (double v : b) ssb += (v - mb) * (v - mb);
    const double df = na + nb - 2;
    const double sp2 = (ssa + ssb) / df;
    TTestResult r;
    if (sp2 == 0) {
        r.t = ma == mb ? 0 : std::numeric_limits<double>::infinity();
        r.p = ma == mb ? 1 : 0;
        return r;
    }
    r.t = (ma - mb) / std::sqrt(sp2 * (1 / na + 1 / nb));
    const boost::math::students_t dist(df);
    r.p = 2 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
    return r;
}

}  // namespace lesionmap
