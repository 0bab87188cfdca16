#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include <json.hpp>

#include "mocha/error.hpp"
#include "mocha/numerics/tensor.hpp"
#include "mocha/student/params.hpp"

namespace mocha {

struct AdamConfig {
    double step = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const {
        require(step > 0.0 && beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && epsilon > 0.0,
                ErrorKind::InvalidConfig, "invalid optimizer hyperparameters");
    }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AdamConfig, step, beta1, beta2, epsilon)

/// Adaptive moment estimation with bias correction, one instance per ParamStore.
class Adam {
public:
    Adam() = default;
    explicit Adam(AdamConfig cfg) : cfg_(cfg) { cfg_.validate(); }

    void step(ParamStore& params, const std::vector<Tensor>& grads) {
        require(grads.size() == params.size(), ErrorKind::DimensionMismatch, "one gradient per parameter expected");
        if (m_.empty()) {
            for (std::size_t i = 0; i < params.size(); ++i) {
                m_.emplace_back(params[i].shape());
                v_.emplace_back(params[i].shape());
            }
        }
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor& p = params[i];
            const Tensor& g = grads[i];
            require(g.shape() == p.shape(), ErrorKind::ShapeMismatch, "gradient shape mismatch for " + params.name(i));
            for (std::size_t k = 0; k < p.size(); ++k) {
                m_[i][k] = cfg_.beta1 * m_[i][k] + (1.0 - cfg_.beta1) * g[k];
                v_[i][k] = cfg_.beta2 * v_[i][k] + (1.0 - cfg_.beta2) * g[k] * g[k];
                p[k] -= cfg_.step * (m_[i][k] / c1) / (std::sqrt(v_[i][k] / c2) + cfg_.epsilon);
            }
        }
    }

    long steps() const noexcept { return t_; }

private:
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    long t_ = 0;
};

} // namespace mocha
