#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vaalab/rng.hpp"

// The adversarial group sampler: a probability vector on the simplex stored
// as log-space weights, updated multiplicatively. The bandit update
// (exp3_update) raises the drawn group's weight by eta_q times its
// importance-weighted objective; mirror_ascent_full is the full-information
// variant that touches every arm.
//
// An optional exploration floor mixes the softmax with the uniform
// distribution, q = (1 - m*floor) * softmax(w) + floor, bounding the
// importance weights. floor = 0 recovers the plain multiplicative update.

namespace vaalab {

struct GroupDraw {
    int index;
    double prob;  // q entry the draw was made with; feeds the reward
};

struct RewardObservation {
    int group_index;
    double raw_objective;  // batch estimate of the group objective
    double sampling_prob;  // q at selection time
};

class SamplerState {
  public:
    static SamplerState uniform(int num_groups, double eta_q = 0.1, double q_floor = 1e-3);

    std::vector<double> current_q() const;
    GroupDraw sample_group(Rng& rng) const;

    // Bandit update: only the observed arm moves, scaled by 1/sampling_prob.
    void exp3_update(const RewardObservation& obs);

    // Full-information update: every arm moves by eta_q * f[i].
    void mirror_ascent_full(std::span<const double> f);

    int size() const { return static_cast<int>(log_weights_.size()); }
    double eta_q() const { return eta_q_; }
    double q_floor() const { return q_floor_; }
    long long step_count() const { return step_count_; }
    std::span<const double> log_weights() const { return log_weights_; }

  private:
    std::vector<double> log_weights_;
    double eta_q_ = 0.1;
    double q_floor_ = 0.0;
    long long step_count_ = 0;

    void renormalize();  // subtract max log weight
};

// sum q_i log(q_i / p_i) with 0*log(0) = 0; requires p_i > 0 wherever q_i > 0.
double kl_divergence(std::span<const double> q, std::span<const double> p);

}  // namespace vaalab
