#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "hetseg/errors.hpp"
#include "hetseg/network.hpp"
#include "hetseg/tensor.hpp"

namespace hetseg {

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

inline void validate(const AdamConfig& cfg) {
    if (!(cfg.lr > 0.0f)) throw ConfigError("Adam lr must be > 0");
    if (cfg.beta1 < 0.0f || cfg.beta1 >= 1.0f || cfg.beta2 < 0.0f || cfg.beta2 >= 1.0f)
        throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(cfg.eps > 0.0f)) throw ConfigError("Adam eps must be > 0");
}

/// Adam with bias correction. Moment state is float32 and is not part of
/// model checkpoints.
class Adam {
  public:
    Adam(const std::vector<ParamRef>& params, const AdamConfig& config) : cfg_(config) {
        validate(cfg_);
        for (const auto& p : params) {
            m_.emplace_back(p.value->shape());
            v_.emplace_back(p.value->shape());
        }
    }

    void step(const std::vector<ParamRef>& params) {
        if (params.size() != m_.size()) throw ConfigError("Adam sees a different parameter list");
        ++t_;
        const float c1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(t_));
        const float c2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(t_));
        for (std::size_t j = 0; j < params.size(); ++j) {
            Tensor& value = *params[j].value;
            const Tensor& grad = *params[j].grad;
            Tensor& m = m_[j];
            Tensor& v = v_[j];
            const std::int64_t n = value.numel();
            for (std::int64_t i = 0; i < n; ++i) {
                const float g = grad[i];
                m[i] = cfg_.beta1 * m[i] + (1.0f - cfg_.beta1) * g;
                v[i] = cfg_.beta2 * v[i] + (1.0f - cfg_.beta2) * g * g;
                const float mhat = m[i] / c1;
                const float vhat = v[i] / c2;
                value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

    std::int64_t steps() const { return t_; }

  private:
    AdamConfig cfg_;
    std::int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace hetseg
