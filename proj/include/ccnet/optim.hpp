#pragma once

#include "ccnet/autograd.hpp"
#include "ccnet/params.hpp"

#include <functional>
#include <stdexcept>
#include <string>

namespace ccnet {

struct LionConfig {
    double lr = 3e-4;
    double weight_decay = 0.05;
    double beta1 = 0.95;
    double beta2 = 0.98;
};

// One Lion update on a single tensor:
//   c = beta1*m + (1-beta1)*g
//   w <- w - lr*(sign(c) + wd*w)
//   m <- beta2*m + (1-beta2)*g
// with sign(0) = 0. Returns false and leaves everything untouched when g is
// not finite.
bool lion_step(Tensor& param, const Tensor& grad, Tensor& momentum, const LionConfig& config);

// Momentum for a whole ParamSet.
class LionState {
public:
    LionState() = default;
    LionState(const ParamSet& params, LionConfig config);

    const LionConfig& config() const { return config_; }
    LionConfig& config() { return config_; }
    const ParamSet& momentum() const { return momentum_; }

    // Applies lion_step to every tensor. A non-finite gradient anywhere
    // rejects the whole step and returns false.
    bool step(ParamSet& params, const ParamSet& grads);

private:
    LionConfig config_;
    ParamSet momentum_;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    Index worst_index = 0;
    Index coordinates = 0;
};

class GradCheckError : public std::runtime_error {
public:
    GradCheckError(const std::string& param, Index index)
        : std::runtime_error("non-finite loss while probing " + param + "[" + std::to_string(index) + "]"),
          param(param),
          index(index) {}
    std::string param;
    Index index;
};

using ScalarFunction = std::function<Var(Tape&, const ParamVars&)>;

// Max over coordinates of |analytic - central| / max(1, |analytic|, |central|).
GradCheckResult grad_check(const ScalarFunction& f, const ParamSet& params, double eps = 1e-5);

}  // namespace ccnet
