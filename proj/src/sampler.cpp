#include "vaalab/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "vaalab/errors.hpp"

namespace vaalab {

SamplerState SamplerState::uniform(int num_groups, double eta_q, double q_floor) {
    if (num_groups < 1) throw ConfigError("sampler needs at least one group");
    if (!(eta_q >= 0.0)) throw ConfigError("eta_q must be non-negative");
    if (q_floor < 0.0 || (num_groups > 1 && q_floor >= 1.0 / num_groups)) {
        throw ConfigError("q_floor must lie in [0, 1/m)");
    }
    SamplerState s;
    s.log_weights_.assign(static_cast<std::size_t>(num_groups), 0.0);
    s.eta_q_ = eta_q;
    s.q_floor_ = q_floor;
    return s;
}

std::vector<double> SamplerState::current_q() const {
    const std::size_t m = log_weights_.size();
    std::vector<double> q(m);
    const double wmax = *std::max_element(log_weights_.begin(), log_weights_.end());
    double z = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        q[i] = std::exp(log_weights_[i] - wmax);
        z += q[i];
    }
    const double mix = 1.0 - static_cast<double>(m) * q_floor_;
    for (auto& v : q) v = mix * (v / z) + q_floor_;
    return q;
}

GroupDraw SamplerState::sample_group(Rng& rng) const {
    const std::vector<double> q = current_q();
    const int i = rng.categorical(q);
    return GroupDraw{i, q[static_cast<std::size_t>(i)]};
}

void SamplerState::exp3_update(const RewardObservation& obs) {
    if (obs.group_index < 0 || obs.group_index >= size()) {
        throw DomainError("reward observation names group " + std::to_string(obs.group_index) +
                          " of " + std::to_string(size()));
    }
    if (!(obs.sampling_prob > 0.0)) {
        throw DomainError("cannot importance-weight a reward with sampling_prob = 0");
    }
    if (q_floor_ > 0.0 && obs.sampling_prob < q_floor_) {
        throw DomainError("sampling_prob below the exploration floor");
    }
    if (!std::isfinite(obs.raw_objective)) {
        throw NumericError("non-finite reward for group " + std::to_string(obs.group_index));
    }
    const double reward = obs.raw_objective / obs.sampling_prob;
    log_weights_[static_cast<std::size_t>(obs.group_index)] += eta_q_ * reward;
    renormalize();
    ++step_count_;
}

void SamplerState::mirror_ascent_full(std::span<const double> f) {
    if (f.size() != log_weights_.size()) {
        throw DomainError("objective vector length does not match group count");
    }
    for (double v : f) {
        if (!std::isfinite(v)) throw NumericError("non-finite entry in objective vector");
    }
    for (std::size_t i = 0; i < f.size(); ++i) log_weights_[i] += eta_q_ * f[i];
    renormalize();
    ++step_count_;
}

void SamplerState::renormalize() {
    const double wmax = *std::max_element(log_weights_.begin(), log_weights_.end());
    for (auto& w : log_weights_) w -= wmax;
}

double kl_divergence(std::span<const double> q, std::span<const double> p) {
    if (q.size() != p.size()) throw DomainError("kl_divergence: length mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (q[i] == 0.0) continue;
        if (!(p[i] > 0.0)) {
            throw DomainError("kl_divergence: q has mass where p is zero (index " +
                              std::to_string(i) + ")");
        }
        kl += q[i] * std::log(q[i] / p[i]);
    }
    return kl;
}

}  // namespace vaalab
