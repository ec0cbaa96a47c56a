#include "tabfair/fairness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace tabfair {

namespace {

Rate make_rate(long long num, long long den) {
    Rate r;
    if (den > 0) {
        r.value = static_cast<double>(num) / static_cast<double>(den);
        r.defined = true;
    }
    return r;
}

Gap pairwise_gap(const std::vector<GroupMetrics>& per_group, Rate GroupMetrics::*field) {
    Gap g;
    double sum = 0;
    for (std::size_t i = 0; i < per_group.size(); ++i) {
        for (std::size_t j = i + 1; j < per_group.size(); ++j) {
            const Rate& a = per_group[i].*field;
            const Rate& b = per_group[j].*field;
            if (a.defined && b.defined) {
                sum += std::abs(a.value - b.value);
                ++g.pairs_used;
            } else {
                ++g.pairs_excluded;
            }
        }
    }
    if (g.pairs_used > 0) {
        g.value = sum / g.pairs_used;
        g.defined = true;
    }
    return g;
}

// Mean over defined per-class gaps; absent classes never reach this.
Gap mean_gap(const std::vector<ClassGaps>& per_class, Gap GapSummary::*field) {
    Gap out;
    double sum = 0;
    for (const ClassGaps& c : per_class) {
        if (!c.present) continue;
        const Gap& g = c.gaps.*field;
        if (g.defined) {
            sum += g.value;
            ++out.pairs_used;
        } else {
            ++out.pairs_excluded;
        }
    }
    if (out.pairs_used > 0) {
        out.value = sum / out.pairs_used;
        out.defined = true;
    }
    return out;
}

nlohmann::json rate_json(const Rate& r) {
    if (!r.defined) return nullptr;
    return r.value * 100.0;
}

nlohmann::json gap_json(const Gap& g) {
    nlohmann::json j;
    j["value"] = g.defined ? nlohmann::json(g.value * 100.0) : nlohmann::json(nullptr);
    j["pairs_used"] = g.pairs_used;
    j["pairs_excluded"] = g.pairs_excluded;
    return j;
}

std::string rate_csv(const Rate& r) {
    return r.defined ? format_double(r.value * 100.0) : std::string();
}

}  // namespace

std::vector<GroupMetrics> group_metrics(const std::vector<int>& preds,
                                        const std::vector<int>& labels,
                                        const std::vector<int>& groups,
                                        int n_groups) {
    require(preds.size() == labels.size() && preds.size() == groups.size(),
            "fairness: preds/labels/groups lengths differ");
    if (n_groups == 0)
        for (int g : groups) n_groups = std::max(n_groups, g + 1);
    require(n_groups > 0, "fairness: no groups");

    std::vector<GroupMetrics> out(n_groups);
    for (int g = 0; g < n_groups; ++g) out[g].group = g;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        require(preds[i] == 0 || preds[i] == 1, "fairness: predictions must be 0/1");
        require(labels[i] == 0 || labels[i] == 1, "fairness: labels must be 0/1");
        require(groups[i] >= 0 && groups[i] < n_groups,
                "fairness: group index out of range");
        GroupMetrics& m = out[groups[i]];
        ++m.n;
        if (labels[i] == 1)
            ++(preds[i] == 1 ? m.tp : m.fn);
        else
            ++(preds[i] == 1 ? m.fp : m.tn);
    }
    for (GroupMetrics& m : out) {
        m.tpr = make_rate(m.tp, m.tp + m.fn);
        m.fpr = make_rate(m.fp, m.fp + m.tn);
        m.acceptance = make_rate(m.tp + m.fp, m.n);
        m.ppv = make_rate(m.tp, m.tp + m.fp);
        m.npv = make_rate(m.tn, m.tn + m.fn);
        m.accuracy = make_rate(m.tp + m.tn, m.n);
    }
    return out;
}

GapSummary gap_summary(const std::vector<GroupMetrics>& per_group) {
    require(per_group.size() >= 2, "fairness: gaps need at least two groups");
    GapSummary s;
    s.tpr = pairwise_gap(per_group, &GroupMetrics::tpr);
    s.fpr = pairwise_gap(per_group, &GroupMetrics::fpr);
    s.acceptance = pairwise_gap(per_group, &GroupMetrics::acceptance);
    s.ppv = pairwise_gap(per_group, &GroupMetrics::ppv);
    s.npv = pairwise_gap(per_group, &GroupMetrics::npv);
    return s;
}

SignedGaps signed_gaps(const std::vector<GroupMetrics>& per_group) {
    require(per_group.size() == 2, "fairness: signed gaps are two-group only");
    SignedGaps s;
    const auto diff = [&](Rate GroupMetrics::*field) {
        const Rate& a = per_group[0].*field;
        const Rate& b = per_group[1].*field;
        Rate r;
        if (a.defined && b.defined) {
            r.value = a.value - b.value;
            r.defined = true;
        }
        return r;
    };
    s.tpr = diff(&GroupMetrics::tpr);
    s.fpr = diff(&GroupMetrics::fpr);
    s.acceptance = diff(&GroupMetrics::acceptance);
    s.ppv = diff(&GroupMetrics::ppv);
    s.npv = diff(&GroupMetrics::npv);
    return s;
}

double equalized_odds_bias(const std::vector<int>& preds,
                           const std::vector<int>& labels,
                           const std::vector<int>& groups) {
    int n_groups = 0;
    for (int g : groups) n_groups = std::max(n_groups, g + 1);
    if (n_groups < 2) return std::numeric_limits<double>::quiet_NaN();
    const GapSummary s = gap_summary(group_metrics(preds, labels, groups, n_groups));
    if (!s.tpr.defined || !s.fpr.defined)
        return std::numeric_limits<double>::quiet_NaN();
    return s.tpr.value + s.fpr.value;
}

MulticlassGaps multiclass_gaps(const std::vector<int>& preds,
                               const std::vector<int>& labels,
                               const std::vector<int>& groups,
                               int n_classes, int n_groups) {
    require(preds.size() == labels.size() && preds.size() == groups.size(),
            "fairness: preds/labels/groups lengths differ");
    if (n_classes == 0) {
        for (int c : labels) n_classes = std::max(n_classes, c + 1);
        for (int c : preds) n_classes = std::max(n_classes, c + 1);
    }
    require(n_classes >= 2, "fairness: need at least two classes");

    MulticlassGaps out;
    for (int c = 0; c < n_classes; ++c) {
        ClassGaps cg;
        cg.cls = c;
        std::vector<int> pb(preds.size()), lb(labels.size());
        long long present = 0;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            pb[i] = preds[i] == c;
            lb[i] = labels[i] == c;
            present += lb[i];
        }
        cg.present = present > 0;
        if (cg.present)
            cg.gaps = gap_summary(group_metrics(pb, lb, groups, n_groups));
        else
            out.absent_classes.push_back(c);
        out.per_class.push_back(cg);
    }
    out.mean_tpr = mean_gap(out.per_class, &GapSummary::tpr);
    out.mean_fpr = mean_gap(out.per_class, &GapSummary::fpr);
    out.mean_acceptance = mean_gap(out.per_class, &GapSummary::acceptance);
    out.mean_ppv = mean_gap(out.per_class, &GapSummary::ppv);
    out.mean_npv = mean_gap(out.per_class, &GapSummary::npv);
    return out;
}

ConsistencyResult consistency_evaluate(const LogRegModel& model, const Dataset& test,
                                       const ContrastiveSet& cs) {
    require(cs.schema_hash == test.schema.hash(),
            "consistency: contrastive set was built against a different schema");
    const int n = test.n();
    const int d = test.dims();
    const std::vector<int> base_preds = predict(model, test.X);

    ConsistencyResult res;
    res.covered.assign(n, true);
    if (!cs.items.empty()) {
        Tensor Xbar(static_cast<int>(cs.items.size()), d);
        for (std::size_t i = 0; i < cs.items.size(); ++i) {
            const ContrastiveExample& ce = cs.items[i];
            require(ce.source_index >= 0 && ce.source_index < n,
                    "consistency: contrastive source index out of range");
            require(static_cast<int>(ce.x_bar.size()) == d,
                    "consistency: contrastive width does not match the schema");
            std::copy(ce.x_bar.begin(), ce.x_bar.end(), &Xbar.at(static_cast<int>(i), 0));
        }
        const std::vector<int> bar_preds = predict(model, Xbar);
        for (std::size_t i = 0; i < cs.items.size(); ++i)
            if (bar_preds[i] != base_preds[cs.items[i].source_index])
                res.covered[cs.items[i].source_index] = false;
    }

    std::vector<int> preds, labels, groups;
    for (int i = 0; i < n; ++i) {
        if (!res.covered[i]) continue;
        preds.push_back(base_preds[i]);
        labels.push_back(test.y[i]);
        groups.push_back(test.s[i]);
    }
    res.n_covered = static_cast<long long>(preds.size());
    res.coverage = n > 0 ? static_cast<double>(res.n_covered) / n : 0.0;
    const int n_groups = static_cast<int>(test.schema.protected_values.size());
    res.metrics = group_metrics(preds, labels, groups, n_groups);
    res.gaps = gap_summary(res.metrics);
    long long hit = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i];
    res.accuracy = res.n_covered > 0
                       ? Rate{static_cast<double>(hit) / res.n_covered, true}
                       : Rate{};
    return res;
}

std::string fairness_report_json(const std::vector<GroupMetrics>& per_group,
                                 const GapSummary& gaps, const FeatureSchema& schema,
                                 bool include_signed) {
    nlohmann::json j;
    j["protected"] = schema.protected_name;
    j["scale"] = "percent";
    nlohmann::json groups = nlohmann::json::array();
    for (const GroupMetrics& m : per_group) {
        nlohmann::json g;
        g["group"] = m.group < static_cast<int>(schema.protected_values.size())
                         ? schema.protected_values[m.group]
                         : std::to_string(m.group);
        g["n"] = m.n;
        g["tpr"] = rate_json(m.tpr);
        g["fpr"] = rate_json(m.fpr);
        g["acceptance"] = rate_json(m.acceptance);
        g["ppv"] = rate_json(m.ppv);
        g["npv"] = rate_json(m.npv);
        g["accuracy"] = rate_json(m.accuracy);
        groups.push_back(g);
    }
    j["groups"] = groups;
    j["gaps"]["tpr"] = gap_json(gaps.tpr);
    j["gaps"]["fpr"] = gap_json(gaps.fpr);
    j["gaps"]["acceptance"] = gap_json(gaps.acceptance);
    j["gaps"]["ppv"] = gap_json(gaps.ppv);
    j["gaps"]["npv"] = gap_json(gaps.npv);
    if (include_signed && per_group.size() == 2) {
        const SignedGaps s = signed_gaps(per_group);
        j["signed_gaps"]["tpr"] = rate_json(s.tpr);
        j["signed_gaps"]["fpr"] = rate_json(s.fpr);
        j["signed_gaps"]["acceptance"] = rate_json(s.acceptance);
        j["signed_gaps"]["ppv"] = rate_json(s.ppv);
        j["signed_gaps"]["npv"] = rate_json(s.npv);
    }
    return j.dump(2);
}

std::string fairness_report_csv(const std::vector<GroupMetrics>& per_group,
                                const GapSummary& gaps, const FeatureSchema& schema) {
    std::ostringstream out;
    out << "group,n,tpr,fpr,acceptance,ppv,npv,accuracy\n";
    for (const GroupMetrics& m : per_group) {
        const std::string name = m.group < static_cast<int>(schema.protected_values.size())
                                     ? schema.protected_values[m.group]
                                     : std::to_string(m.group);
        out << name << "," << m.n << "," << rate_csv(m.tpr) << "," << rate_csv(m.fpr)
            << "," << rate_csv(m.acceptance) << "," << rate_csv(m.ppv) << ","
            << rate_csv(m.npv) << "," << rate_csv(m.accuracy) << "\n";
    }
    const auto gap_cell = [](const Gap& g) {
        return g.defined ? format_double(g.value * 100.0) : std::string();
    };
    out << "gap,," << gap_cell(gaps.tpr) << "," << gap_cell(gaps.fpr) << ","
        << gap_cell(gaps.acceptance) << "," << gap_cell(gaps.ppv) << ","
        << gap_cell(gaps.npv) << ",\n";
    return out.str();
}

}  // namespace tabfair
