#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tabfair/contrastive.hpp"
#include "tabfair/data.hpp"

namespace tabfair {

// L2-regularized weighted logistic regression. The objective is
//   (sum_i w_i * nll_i) / (sum_i w_i) + (1 / reg_param) * ||w||^2 / 2
// with the bias unregularized, so reg_param acts as an inverse penalty
// strength (larger = weaker regularization) and uniform weight rescaling
// cannot move the optimum.
struct LogRegModel {
    std::vector<double> w;
    double b = 0.0;
    double reg_param = 1.0;
    bool converged = true;
    int iters = 0;
    std::vector<double> objective_history;  // one value per accepted iterate

    std::uint64_t schema_hash = 0;
    std::uint64_t provenance_hash = 0;  // dataset the model was fitted on
    std::uint64_t seed = 0;

    std::string to_json() const;
    static LogRegModel from_json(const std::string& text);
};

// Fits to gradient norm < tol or the iteration cap (quasi-Newton descent with
// a backtracking line search; the objective never increases between
// iterates). Empty `sample_weights` means all-ones.
LogRegModel fit(const Tensor& X, const std::vector<int>& y,
                const std::vector<double>& sample_weights, double reg_param,
                std::uint64_t seed, double tol = 1e-6, int max_iters = 10000);

std::vector<double> predict_proba(const LogRegModel& m, const Tensor& X);
// label = proba >= 0.5 (the tie at exactly 0.5 goes to the positive class)
std::vector<int> predict(const LogRegModel& m, const Tensor& X);

// Validation-fold bias measure: lower is fairer. Returns NaN when undefined
// (e.g. a single-class fold); such folds are excluded and flagged.
using BiasMetric = std::function<double(const std::vector<int>& preds,
                                        const std::vector<int>& labels,
                                        const std::vector<int>& groups)>;

struct CvCandidate {
    double reg_param = 0;
    double cv_accuracy = 0;
    double cv_bias = 0;
    int bias_folds_defined = 0;  // < folds when some fold's bias was undefined
};

struct CvSelection {
    std::vector<CvCandidate> candidates;  // sorted by accuracy, best first
    std::vector<double> shortlisted;      // the 3 highest-accuracy values
    double chosen = 0;
    bool any_fold_flagged = false;
};

// The paper's two-step rule: mean CV accuracy ranks the grid, the three best
// candidates are kept, and the one with the lowest mean CV bias wins.
// Deterministic per seed and invariant to grid ordering.
CvSelection select_two_step(const Dataset& ds, const std::vector<double>& sample_weights,
                            const std::vector<double>& grid, BiasMetric bias_metric,
                            int folds, std::uint64_t seed);

// The paper's CV grid for Adult.
const std::vector<double>& default_grid();

// Fair Reweighing baseline: w(s, y) = P(s) * P(y) / P(s, y) per record. The
// weighted joint then factorizes, so weighted base rates agree across groups.
std::vector<double> reweighing_weights(const Dataset& ds);

// The union of originals and contrastives (labels inherited, s kept for
// group bookkeeping only — it is never a feature).
Dataset augment_with_contrastives(const Dataset& train, const ContrastiveSet& cs);

// Algorithm "learning with contrastive examples": two-step selection and the
// final fit both run on the augmented dataset.
LogRegModel train_with_contrastives(const Dataset& train, const ContrastiveSet& cs,
                                    const std::vector<double>& grid, int folds,
                                    std::uint64_t seed);

}  // namespace tabfair
