#pragma once

#include "vaalab/model.hpp"
#include "vaalab/rng.hpp"

// Group-wise sharpness-aware perturbation and the robust surrogate
// objective. The perturbation is the first-order worst-case weight shift
// alpha * g / |g|; the surrogate trades the plain loss against the loss at
// the shifted point under a lambda schedule that ramps from 0 to 1.

namespace vaalab {

struct PerturbConfig {
    double alpha = 0.05;          // perturbation magnitude
    double grad_norm_tol = 1e-12;  // below this the perturbation is zero
};

enum class CurriculumMode {
    interp,  // value and gradient blend plain and perturbed terms by lambda
    prob     // perturb the whole step with probability lambda
};
enum class CurriculumShape { linear, step };

struct Curriculum {
    CurriculumMode mode = CurriculumMode::prob;
    CurriculumShape shape = CurriculumShape::linear;
    long long total_steps = 1;
    long long current_step = 0;
    double step_at = 0.5;  // step shape: lambda jumps 0 -> 1 at this fraction

    // In [0, 1], non-decreasing in current_step.
    double lambda() const;
    void advance() { ++current_step; }
};

// alpha * gradient / |gradient|; the zero vector when |gradient| is tiny.
ParamVector sam_epsilon(const ParamVector& gradient, const PerturbConfig& cfg);

struct SurrogateResult {
    double value = 0.0;       // the objective estimate fed to the sampler
    double plain_loss = 0.0;  // loss at the unperturbed point
    ParamVector gradient;     // descent direction for the model update
    int backward_passes = 0;
    bool perturbed = false;
};

// interp: value = (1-lambda) l(theta) + lambda l(theta+eps), gradient
// likewise with eps held constant; 2 backward passes when lambda > 0.
// prob: with probability lambda evaluate at theta+eps (2 passes), else the
// plain loss (1 pass). rng is consumed only when 0 < lambda < 1.
SurrogateResult surrogate_value_and_grad(const ModelSpec& spec, const ParamVector& params,
                                         const Batch& batch, const PerturbConfig& cfg,
                                         double lambda, CurriculumMode mode, Rng& rng,
                                         Exec exec = Exec::parallel);

}  // namespace vaalab
