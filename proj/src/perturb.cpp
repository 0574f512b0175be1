#include "vaalab/perturb.hpp"

#include <cmath>

#include "vaalab/errors.hpp"

namespace vaalab {

double Curriculum::lambda() const {
    if (total_steps <= 0) throw ConfigError("curriculum total_steps must be positive");
    if (current_step < 0 || current_step > total_steps) {
        throw ConfigError("curriculum current_step out of range");
    }
    const double frac = static_cast<double>(current_step) / static_cast<double>(total_steps);
    if (shape == CurriculumShape::linear) return frac;
    return frac < step_at ? 0.0 : 1.0;
}

ParamVector sam_epsilon(const ParamVector& gradient, const PerturbConfig& cfg) {
    if (!(cfg.alpha > 0.0)) throw ConfigError("perturbation alpha must be positive");
    double norm_sq = 0.0;
    for (double g : gradient.values) {
        if (!std::isfinite(g)) throw NumericError("non-finite gradient entry");
        norm_sq += g * g;
    }
    const double norm = std::sqrt(norm_sq);
    ParamVector eps;
    eps.layout_id = gradient.layout_id;
    eps.values.assign(gradient.values.size(), 0.0);
    if (norm < cfg.grad_norm_tol) return eps;  // degenerate gradient
    const double scale = cfg.alpha / norm;
    for (std::size_t i = 0; i < gradient.values.size(); ++i) {
        eps.values[i] = scale * gradient.values[i];
    }
    return eps;
}

namespace {

ParamVector shifted(const ParamVector& params, const ParamVector& eps) {
    ParamVector out = params;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += eps.values[i];
    return out;
}

}  // namespace

SurrogateResult surrogate_value_and_grad(const ModelSpec& spec, const ParamVector& params,
                                         const Batch& batch, const PerturbConfig& cfg,
                                         double lambda, CurriculumMode mode, Rng& rng, Exec exec) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw DomainError("lambda must lie in [0, 1]");
    }

    SurrogateResult res;
    if (lambda == 0.0) {  // both modes: plain loss, one backward pass
        auto [loss, g] = loss_and_grad(spec, params, batch, exec);
        res.value = loss;
        res.plain_loss = loss;
        res.gradient = std::move(g);
        res.backward_passes = 1;
        return res;
    }

    if (mode == CurriculumMode::interp) {
        auto [loss0, g0] = loss_and_grad(spec, params, batch, exec);
        const ParamVector eps = sam_epsilon(g0, cfg);
        const ParamVector theta_adv = shifted(params, eps);
        auto [loss1, g1] = loss_and_grad(spec, theta_adv, batch, exec);
        res.value = (1.0 - lambda) * loss0 + lambda * loss1;
        res.plain_loss = loss0;
        res.gradient = std::move(g0);
        for (std::size_t i = 0; i < res.gradient.values.size(); ++i) {
            res.gradient.values[i] =
                (1.0 - lambda) * res.gradient.values[i] + lambda * g1.values[i];
        }
        res.backward_passes = 2;
        res.perturbed = true;
        return res;
    }

    // prob mode. Skip the draw at the endpoints so a lambda == 0 schedule
    // consumes the same rng stream as a plain training loop.
    const bool perturb = lambda >= 1.0 ? true : rng.uniform() < lambda;
    auto [loss0, g0] = loss_and_grad(spec, params, batch, exec);
    res.plain_loss = loss0;
    if (!perturb) {
        res.value = loss0;
        res.gradient = std::move(g0);
        res.backward_passes = 1;
        return res;
    }
    const ParamVector eps = sam_epsilon(g0, cfg);
    const ParamVector theta_adv = shifted(params, eps);
    auto [loss1, g1] = loss_and_grad(spec, theta_adv, batch, exec);
    res.value = loss1;
    res.gradient = std::move(g1);
    res.backward_passes = 2;
    res.perturbed = true;
    return res;
}

}  // namespace vaalab
