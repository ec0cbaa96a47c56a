#pragma once

#include <cmath>
#include <vector>

#include "tabfair/tensor.hpp"

namespace tabfair {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. One instance owns the first/second moment
// accumulators for a fixed list of parameter tensors; step() updates the
// parameters in place.
class Adam {
public:
    Adam(AdamConfig cfg, const std::vector<Tensor>& params) : cfg_(cfg) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (auto& p : params) {
            m_.emplace_back(p.rows, p.cols);
            v_.emplace_back(p.rows, p.cols);
        }
    }

    void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads) {
        require(params.size() == m_.size() && grads.size() == m_.size(),
                "adam: parameter/gradient count changed");
        ++t_;
        double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            require(params[i].same_shape(m_[i]) && grads[i].same_shape(m_[i]),
                    "adam: tensor shape changed");
            double* p = params[i].v.data();
            const double* g = grads[i].v.data();
            double* m = m_[i].v.data();
            double* v = v_[i].v.data();
            for (std::size_t j = 0; j < params[i].size(); ++j) {
                m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
                v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
                p[j] -= cfg_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
            }
        }
    }

    long long steps_taken() const { return t_; }

private:
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    long long t_ = 0;
};

}  // namespace tabfair
