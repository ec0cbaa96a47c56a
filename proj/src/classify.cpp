#include "tabfair/classify.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "json.hpp"
#include "tabfair/fairness.hpp"

namespace tabfair {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using Vec = Eigen::VectorXd;

double stable_sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow; nll of a logit z against label 1 is
// softplus(-z), against label 0 softplus(z).
double softplus(double z) {
    if (z > 0) return z + std::log1p(std::exp(-z));
    return std::log1p(std::exp(z));
}

// Objective and gradient share the margin vector z = X w + b.
struct Problem {
    CMap X;
    Vec y;   // 0/1 as doubles
    Vec wgt; // normalized to sum 1
    double inv_reg;

    Problem(const Tensor& Xt, const std::vector<int>& yv,
            const std::vector<double>& weights, double reg_param)
        : X(Xt.v.data(), Xt.rows, Xt.cols),
          y(Xt.rows),
          wgt(Xt.rows),
          inv_reg(1.0 / reg_param) {
        require(reg_param > 0, "classify: reg_param must be positive");
        require(static_cast<int>(yv.size()) == Xt.rows,
                "classify: label count does not match row count");
        require(weights.empty() || static_cast<int>(weights.size()) == Xt.rows,
                "classify: weight count does not match row count");
        double total = 0;
        for (int i = 0; i < Xt.rows; ++i) {
            require(yv[i] == 0 || yv[i] == 1, "classify: labels must be 0/1");
            y[i] = yv[i];
            const double wi = weights.empty() ? 1.0 : weights[i];
            require(wi > 0, "classify: sample weights must be positive");
            wgt[i] = wi;
            total += wi;
        }
        wgt /= total;
    }

    int dims() const { return static_cast<int>(X.cols()); }

    // x = [w; b]
    double value(const Vec& x) const {
        const Vec z = X * x.head(dims()) + Vec::Constant(X.rows(), x[dims()]);
        double nll = 0;
        for (int i = 0; i < z.size(); ++i)
            nll += wgt[i] * softplus(y[i] > 0.5 ? -z[i] : z[i]);
        return nll + 0.5 * inv_reg * x.head(dims()).squaredNorm();
    }

    double value_and_grad(const Vec& x, Vec& g) const {
        const Vec z = X * x.head(dims()) + Vec::Constant(X.rows(), x[dims()]);
        double nll = 0;
        Vec r(z.size());  // wgt * (sigmoid(z) - y)
        for (int i = 0; i < z.size(); ++i) {
            nll += wgt[i] * softplus(y[i] > 0.5 ? -z[i] : z[i]);
            r[i] = wgt[i] * (stable_sigmoid(z[i]) - y[i]);
        }
        g.resize(dims() + 1);
        g.head(dims()) = X.transpose() * r + inv_reg * x.head(dims());
        g[dims()] = r.sum();
        return nll + 0.5 * inv_reg * x.head(dims()).squaredNorm();
    }
};

// Limited-memory quasi-Newton descent with a backtracking (Armijo) line
// search. First-order information only; the objective is convex so the
// gradient-norm stopping rule identifies the unique optimum.
struct Lbfgs {
    static constexpr int kMemory = 10;
    std::deque<Vec> s_hist, y_hist;
    std::deque<double> rho;

    void push(const Vec& s, const Vec& y) {
        const double sy = s.dot(y);
        if (sy <= 1e-12 * s.norm() * y.norm()) return;  // curvature too flat
        s_hist.push_back(s);
        y_hist.push_back(y);
        rho.push_back(1.0 / sy);
        if (static_cast<int>(s_hist.size()) > kMemory) {
            s_hist.pop_front();
            y_hist.pop_front();
            rho.pop_front();
        }
    }

    Vec direction(const Vec& g) const {
        Vec q = g;
        const int m = static_cast<int>(s_hist.size());
        std::vector<double> alpha(m);
        for (int i = m - 1; i >= 0; --i) {
            alpha[i] = rho[i] * s_hist[i].dot(q);
            q -= alpha[i] * y_hist[i];
        }
        if (m > 0) q *= s_hist[m - 1].dot(y_hist[m - 1]) / y_hist[m - 1].squaredNorm();
        for (int i = 0; i < m; ++i) {
            const double beta = rho[i] * y_hist[i].dot(q);
            q += (alpha[i] - beta) * s_hist[i];
        }
        return -q;
    }
};

double fold_accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
    int hit = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i];
    return static_cast<double>(hit) / static_cast<double>(preds.size());
}

}  // namespace

LogRegModel fit(const Tensor& X, const std::vector<int>& y,
                const std::vector<double>& sample_weights, double reg_param,
                std::uint64_t seed, double tol, int max_iters) {
    require(X.rows > 0, "classify: cannot fit on an empty dataset");
    const Problem prob(X, y, sample_weights, reg_param);
    const int d = prob.dims();

    Vec x = Vec::Zero(d + 1);
    Vec g(d + 1), g_new(d + 1);
    double f = prob.value_and_grad(x, g);

    LogRegModel m;
    m.reg_param = reg_param;
    m.seed = seed;
    m.objective_history.push_back(f);

    Lbfgs mem;
    int it = 0;
    for (; it < max_iters && g.norm() >= tol; ++it) {
        Vec dir = mem.direction(g);
        double slope = g.dot(dir);
        if (!(slope < 0)) {  // not a descent direction: fall back to steepest
            dir = -g;
            slope = g.dot(dir);
        }
        // Backtracking: accept the first step with sufficient decrease.
        double t = 1.0;
        double f_new = f;
        Vec x_new = x;
        bool accepted = false;
        for (int half = 0; half < 60; ++half) {
            x_new = x + t * dir;
            f_new = prob.value(x_new);
            if (f_new <= f + 1e-4 * t * slope) {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) break;  // step underflowed: stationary to roundoff
        f_new = prob.value_and_grad(x_new, g_new);
        mem.push(x_new - x, g_new - g);
        x = x_new;
        g = g_new;
        f = f_new;
        m.objective_history.push_back(f);
    }

    m.w.assign(x.data(), x.data() + d);
    m.b = x[d];
    m.iters = it;
    m.converged = g.norm() < tol;
    return m;
}

std::vector<double> predict_proba(const LogRegModel& m, const Tensor& X) {
    require(X.cols == static_cast<int>(m.w.size()),
            "classify: feature count does not match the model");
    const CMap Xm(X.v.data(), X.rows, X.cols);
    const Eigen::Map<const Vec> w(m.w.data(), m.w.size());
    const Vec z = Xm * w + Vec::Constant(X.rows, m.b);
    std::vector<double> p(X.rows);
    for (int i = 0; i < X.rows; ++i) p[i] = stable_sigmoid(z[i]);
    return p;
}

std::vector<int> predict(const LogRegModel& m, const Tensor& X) {
    const std::vector<double> p = predict_proba(m, X);
    std::vector<int> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] >= 0.5 ? 1 : 0;
    return out;
}

const std::vector<double>& default_grid() {
    static const std::vector<double> g = {500, 100, 50, 10, 5, 1, 0.5, 0.1, 0.05, 0.01};
    return g;
}

CvSelection select_two_step(const Dataset& ds, const std::vector<double>& sample_weights,
                            const std::vector<double>& grid, BiasMetric bias_metric,
                            int folds, std::uint64_t seed) {
    require(!grid.empty(), "classify: empty parameter grid");
    require(folds >= 2, "classify: need at least 2 folds");
    require(ds.n() >= folds, "classify: fewer records than folds");
    if (!bias_metric) bias_metric = equalized_odds_bias;

    const int n = ds.n();
    const int d = ds.dims();

    // Deterministic fold assignment shared by every grid value.
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    std::vector<int> fold_of(n);
    for (int i = 0; i < n; ++i) fold_of[order[i]] = i % folds;

    CvSelection sel;
    for (const double reg : grid) {
        CvCandidate cand;
        cand.reg_param = reg;
        double acc_sum = 0, bias_sum = 0;
        int bias_defined = 0;
        for (int f = 0; f < folds; ++f) {
            std::vector<int> tr, va;
            for (int i = 0; i < n; ++i) (fold_of[i] == f ? va : tr).push_back(i);
            Tensor Xtr(static_cast<int>(tr.size()), d), Xva(static_cast<int>(va.size()), d);
            std::vector<int> ytr(tr.size()), yva(va.size()), sva(va.size());
            std::vector<double> wtr;
            if (!sample_weights.empty()) wtr.resize(tr.size());
            for (std::size_t i = 0; i < tr.size(); ++i) {
                std::copy_n(&ds.X.at(tr[i], 0), d, &Xtr.at(static_cast<int>(i), 0));
                ytr[i] = ds.y[tr[i]];
                if (!wtr.empty()) wtr[i] = sample_weights[tr[i]];
            }
            for (std::size_t i = 0; i < va.size(); ++i) {
                std::copy_n(&ds.X.at(va[i], 0), d, &Xva.at(static_cast<int>(i), 0));
                yva[i] = ds.y[va[i]];
                sva[i] = ds.s[va[i]];
            }
            // Selection only needs the relative ranking of grid values, so the
            // fold fits use a looser gradient target than the final model.
            const LogRegModel fold_model = fit(Xtr, ytr, wtr, reg, seed, 1e-4, 2000);
            const std::vector<int> preds = predict(fold_model, Xva);
            acc_sum += fold_accuracy(preds, yva);
            const double bias = bias_metric(preds, yva, sva);
            if (std::isfinite(bias)) {
                bias_sum += bias;
                ++bias_defined;
            }
        }
        cand.cv_accuracy = acc_sum / folds;
        cand.bias_folds_defined = bias_defined;
        cand.cv_bias = bias_defined > 0 ? bias_sum / bias_defined
                                        : std::numeric_limits<double>::infinity();
        if (bias_defined < folds) sel.any_fold_flagged = true;
        sel.candidates.push_back(cand);
    }

    // Rank by accuracy; exact ties prefer the weaker penalty so the outcome
    // does not depend on the order the grid was supplied in.
    std::sort(sel.candidates.begin(), sel.candidates.end(),
              [](const CvCandidate& a, const CvCandidate& b) {
                  if (a.cv_accuracy != b.cv_accuracy) return a.cv_accuracy > b.cv_accuracy;
                  return a.reg_param > b.reg_param;
              });
    const int keep = std::min<int>(3, static_cast<int>(sel.candidates.size()));
    const CvCandidate* best = &sel.candidates[0];
    for (int i = 0; i < keep; ++i) {
        const CvCandidate& c = sel.candidates[i];
        sel.shortlisted.push_back(c.reg_param);
        const bool better =
            c.cv_bias < best->cv_bias ||
            (c.cv_bias == best->cv_bias && c.cv_accuracy > best->cv_accuracy) ||
            (c.cv_bias == best->cv_bias && c.cv_accuracy == best->cv_accuracy &&
             c.reg_param > best->reg_param);
        if (better) best = &c;
    }
    sel.chosen = best->reg_param;
    return sel;
}

std::vector<double> reweighing_weights(const Dataset& ds) {
    const int n = ds.n();
    require(n > 0, "reweighing: empty dataset");
    int n_groups = 0;
    for (const int si : ds.s) n_groups = std::max(n_groups, si + 1);

    std::vector<std::array<long long, 2>> cell(n_groups, {0, 0});
    long long n_pos = 0;
    for (int i = 0; i < n; ++i) {
        ++cell[ds.s[i]][ds.y[i]];
        n_pos += ds.y[i];
    }
    for (int s = 0; s < n_groups; ++s)
        for (int yv = 0; yv < 2; ++yv)
            require(cell[s][yv] > 0,
                    "reweighing: empty cell (" + ds.schema.protected_name + "=" +
                        ds.schema.protected_values[s] + ", y=" + std::to_string(yv) +
                        "); weights are undefined");

    std::vector<double> w(n);
    for (int i = 0; i < n; ++i) {
        const long long ns = cell[ds.s[i]][0] + cell[ds.s[i]][1];
        const long long ny = ds.y[i] == 1 ? n_pos : n - n_pos;
        w[i] = (static_cast<double>(ns) * static_cast<double>(ny)) /
               (static_cast<double>(n) * static_cast<double>(cell[ds.s[i]][ds.y[i]]));
    }
    return w;
}

Dataset augment_with_contrastives(const Dataset& train, const ContrastiveSet& cs) {
    require(cs.schema_hash == train.schema.hash(),
            "augment: contrastive set was built against a different schema");
    const int n = train.n();
    const int d = train.dims();
    Dataset out;
    out.schema = train.schema;
    out.provenance = train.provenance;  // derived purely from the train split
    out.X = Tensor(n + static_cast<int>(cs.items.size()), d);
    std::copy(train.X.v.begin(), train.X.v.end(), out.X.v.begin());
    out.y = train.y;
    out.s = train.s;
    for (const ContrastiveExample& ce : cs.items) {
        require(ce.source_index >= 0 && ce.source_index < n,
                "augment: contrastive source index out of range");
        require(static_cast<int>(ce.x_bar.size()) == d,
                "augment: contrastive width does not match the schema");
        require(ce.inherited_y == train.y[ce.source_index],
                "augment: contrastive label does not match its source record");
        const int row = static_cast<int>(out.y.size());
        std::copy(ce.x_bar.begin(), ce.x_bar.end(), &out.X.at(row, 0));
        out.y.push_back(ce.inherited_y);
        out.s.push_back(ce.target_s);
    }
    return out;
}

LogRegModel train_with_contrastives(const Dataset& train, const ContrastiveSet& cs,
                                    const std::vector<double>& grid, int folds,
                                    std::uint64_t seed) {
    const Dataset aug = augment_with_contrastives(train, cs);
    const CvSelection sel = select_two_step(aug, {}, grid, {}, folds, seed);
    LogRegModel m = fit(aug.X, aug.y, {}, sel.chosen, seed);
    m.schema_hash = aug.schema.hash();
    m.provenance_hash = aug.provenance.hash();
    return m;
}

std::string LogRegModel::to_json() const {
    nlohmann::json j;
    j["version"] = 1;
    j["schema_hash"] = schema_hash;
    j["provenance_hash"] = provenance_hash;
    j["weights"] = w;
    j["bias"] = b;
    j["reg_param"] = reg_param;
    j["seed"] = seed;
    j["converged"] = converged;
    j["iters"] = iters;
    return j.dump(2);
}

LogRegModel LogRegModel::from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    require(j.at("version").get<int>() == 1, "model: unsupported version");
    LogRegModel m;
    m.schema_hash = j.at("schema_hash").get<std::uint64_t>();
    m.provenance_hash = j.at("provenance_hash").get<std::uint64_t>();
    m.w = j.at("weights").get<std::vector<double>>();
    m.b = j.at("bias").get<double>();
    m.reg_param = j.at("reg_param").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.converged = j.at("converged").get<bool>();
    m.iters = j.at("iters").get<int>();
    return m;
}

}  // namespace tabfair
