#pragma once

#include <string>
#include <vector>

#include "tabfair/classify.hpp"
#include "tabfair/contrastive.hpp"
#include "tabfair/data.hpp"

namespace tabfair {

// A rate whose denominator may be empty. Undefined rates are carried
// explicitly — never imputed as zero — and excluded from gap averages.
struct Rate {
    double value = 0;
    bool defined = false;
};

// Confusion-matrix rates for one protected group, all on the [0, 1] scale.
struct GroupMetrics {
    int group = 0;
    long long n = 0;
    long long tp = 0, fp = 0, tn = 0, fn = 0;
    Rate tpr;         // tp / (tp + fn)
    Rate fpr;         // fp / (fp + tn)
    Rate acceptance;  // (tp + fp) / n
    Rate ppv;         // tp / (tp + fp)
    Rate npv;         // tn / (tn + fn)
    Rate accuracy;    // (tp + tn) / n
};

// One metric aggregated across groups: the mean absolute pairwise difference
// over the C(k, 2) group pairs. Pairs with an undefined side are skipped and
// counted so callers can see how much of the comparison survived.
struct Gap {
    double value = 0;
    bool defined = false;
    int pairs_used = 0;
    int pairs_excluded = 0;
};

struct GapSummary {
    Gap tpr, fpr, acceptance, ppv, npv;
};

// `n_groups` fixes the group universe (so a subset that lost a group still
// reports it, undefined); pass 0 to derive it as max(groups) + 1.
std::vector<GroupMetrics> group_metrics(const std::vector<int>& preds,
                                        const std::vector<int>& labels,
                                        const std::vector<int>& groups,
                                        int n_groups = 0);

GapSummary gap_summary(const std::vector<GroupMetrics>& per_group);

// Signed two-group difference, metric(group 0) - metric(group 1). Only
// meaningful for binary protected attributes; part of the report layer.
struct SignedGaps {
    Rate tpr, fpr, acceptance, ppv, npv;
};
SignedGaps signed_gaps(const std::vector<GroupMetrics>& per_group);

// TPR gap + FPR gap on the core [0, 1] scale; NaN when either is undefined.
// This is the bias measure the two-step parameter selection minimizes.
double equalized_odds_bias(const std::vector<int>& preds,
                           const std::vector<int>& labels,
                           const std::vector<int>& groups);

// One-vs-rest gaps per class for multiclass targets, plus the unweighted
// mean over classes that are present and defined.
struct ClassGaps {
    int cls = 0;
    bool present = false;  // false when no record carries this label
    GapSummary gaps;
};
struct MulticlassGaps {
    std::vector<ClassGaps> per_class;
    Gap mean_tpr, mean_fpr, mean_acceptance, mean_ppv, mean_npv;
    std::vector<int> absent_classes;
};
MulticlassGaps multiclass_gaps(const std::vector<int>& preds,
                               const std::vector<int>& labels,
                               const std::vector<int>& groups,
                               int n_classes = 0, int n_groups = 0);

// Rejection learning via contrastive agreement: a record is covered iff the
// model predicts the same label for it and for every one of its contrastives
// (a record with no contrastives is trivially covered). Fairness metrics are
// then reported on the covered subset only.
struct ConsistencyResult {
    double coverage = 0;
    long long n_covered = 0;
    std::vector<bool> covered;
    std::vector<GroupMetrics> metrics;  // covered subset, full group universe
    GapSummary gaps;
    Rate accuracy;  // on the covered subset
};
ConsistencyResult consistency_evaluate(const LogRegModel& model, const Dataset& test,
                                       const ContrastiveSet& cs);

// Report layer: rates and gaps leave here as percentages (x100). The core
// structs above always stay on [0, 1].
std::string fairness_report_json(const std::vector<GroupMetrics>& per_group,
                                 const GapSummary& gaps, const FeatureSchema& schema,
                                 bool include_signed = false);
std::string fairness_report_csv(const std::vector<GroupMetrics>& per_group,
                                const GapSummary& gaps, const FeatureSchema& schema);

}  // namespace tabfair
