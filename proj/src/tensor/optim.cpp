#include "ccnet/optim.hpp"

#include <algorithm>
#include <cmath>

namespace ccnet {

namespace {

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

bool lion_step(Tensor& param, const Tensor& grad, Tensor& momentum, const LionConfig& config) {
    if (param.shape() != grad.shape() || param.shape() != momentum.shape()) {
        throw std::invalid_argument("lion_step: shape mismatch " + to_string(param.shape()) + " vs " +
                                    to_string(grad.shape()));
    }
    if (!grad.all_finite()) return false;
    for (Index i = 0; i < param.numel(); ++i) {
        const double c = config.beta1 * momentum[i] + (1.0 - config.beta1) * grad[i];
        param[i] = param[i] - config.lr * (sign(c) + config.weight_decay * param[i]);
        momentum[i] = config.beta2 * momentum[i] + (1.0 - config.beta2) * grad[i];
    }
    return true;
}

LionState::LionState(const ParamSet& params, LionConfig config) : config_(config), momentum_(params.zeros_like()) {}

bool LionState::step(ParamSet& params, const ParamSet& grads) {
    if (!params.same_layout(grads) || !params.same_layout(momentum_)) {
        throw std::invalid_argument("LionState::step: parameter layout mismatch");
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!grads.tensor(i).all_finite()) return false;
    }
    for (std::size_t i = 0; i < params.size(); ++i) lion_step(params.tensor(i), grads.tensor(i), momentum_.tensor(i), config_);
    return true;
}

GradCheckResult grad_check(const ScalarFunction& f, const ParamSet& params, double eps) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-3]");

    ParamSet analytic;
    {
        Tape tape;
        ParamVars vars(tape, params, true);
        Var loss = f(tape, vars);
        tape.backward(loss);
        analytic = vars.gradients();
    }

    auto evaluate = [&](const ParamSet& probe) {
        Tape tape;
        ParamVars vars(tape, probe, false);
        return f(tape, vars).value()[0];
    };

    GradCheckResult result;
    ParamSet probe = params;
    for (std::size_t p = 0; p < params.size(); ++p) {
        const std::string& name = params.names()[p];
        Tensor& t = probe.tensor(p);
        for (Index i = 0; i < t.numel(); ++i) {
            const double original = t[i];
            t[i] = original + eps;
            const double plus = evaluate(probe);
            t[i] = original - eps;
            const double minus = evaluate(probe);
            t[i] = original;
            if (!std::isfinite(plus) || !std::isfinite(minus)) throw GradCheckError(name, i);
            const double numeric = (plus - minus) / (2.0 * eps);
            const double exact = analytic.tensor(p)[i];
            const double err =
                std::abs(exact - numeric) / std::max({1.0, std::abs(exact), std::abs(numeric)});
            ++result.coordinates;
            if (err > result.max_rel_error || result.worst_param.empty()) {
                if (err >= result.max_rel_error) {
                    result.max_rel_error = err;
                    result.worst_param = name;
                    result.worst_index = i;
                }
            }
        }
    }
    return result;
}

}  // namespace ccnet
