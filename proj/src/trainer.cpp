#include "vaalab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include "vaalab/errors.hpp"
#include "vaalab/rng.hpp"
#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace vaalab {

std::string method_name(Method m) {
    switch (m) {
        case Method::vaa: return "vaa";
        case Method::erm: return "erm";
        case Method::vuln_only: return "vuln-only";
        case Method::invuln_only: return "invuln-only";
        case Method::importance: return "importance";
    }
    throw ConfigError("unknown method enum value");
}

Method method_from_name(const std::string& s) {
    if (s == "vaa") return Method::vaa;
    if (s == "erm") return Method::erm;
    if (s == "vuln-only") return Method::vuln_only;
    if (s == "invuln-only") return Method::invuln_only;
    if (s == "importance") return Method::importance;
    throw ConfigError("unknown method '" + s + "'");
}

void TrainerConfig::validate() const {
    if (!(eta_theta > 0.0)) throw ConfigError("eta_theta must be positive");
    if (!(eta_q >= 0.0)) throw ConfigError("eta_q must be non-negative");
    if (total_steps < 1) throw ConfigError("total_steps must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(perturb.alpha > 0.0)) throw ConfigError("perturb.alpha must be positive");
    if (q_floor < 0.0) throw ConfigError("q_floor must be non-negative");
    if (curriculum_step_at < 0.0 || curriculum_step_at > 1.0) {
        throw ConfigError("curriculum_step_at must be in [0,1]");
    }
}

void GroupedDataset::validate() const {
    if (groups.empty()) throw ConfigError("dataset has no groups");
    if (groups.size() != group_names.size()) {
        throw ConfigError("group_names does not match group count");
    }
    std::unordered_set<long long> seen;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        if (groups[g].empty()) {
            throw ConfigError("group '" + group_names[g] + "' is empty");
        }
        for (const Example& ex : groups[g]) {
            if (!seen.insert(ex.example_id).second) {
                throw ConfigError("example id " + std::to_string(ex.example_id) +
                                  " appears in more than one group");
            }
        }
    }
}

std::size_t GroupedDataset::total_examples() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.size();
    return n;
}

std::vector<Example> GroupedDataset::flattened() const {
    std::vector<Example> all;
    all.reserve(total_examples());
    for (const auto& g : groups) all.insert(all.end(), g.begin(), g.end());
    return all;
}

namespace detail {

std::pair<ParamVector, RunMetrics> train_core(const ModelSpec& spec, const ParamVector& init,
                                              const GroupedDataset& data, const TrainerConfig& cfg,
                                              std::vector<double> fixed_q,
                                              bool use_perturbation) {
    spec.validate();
    cfg.validate();
    data.validate();
    const int m = static_cast<int>(data.groups.size());
    const bool adaptive = fixed_q.empty();

    Rng rng(derive_seed(cfg.seed, "train"));
    ParamVector theta = init;
    SamplerState sampler = SamplerState::uniform(m, cfg.eta_q, adaptive ? cfg.q_floor : 0.0);
    Curriculum curriculum{cfg.curriculum_mode, cfg.curriculum_shape, cfg.total_steps, 0,
                          cfg.curriculum_step_at};

    RunMetrics metrics;
    metrics.steps.reserve(static_cast<std::size_t>(cfg.total_steps));
    long long total_bp = 0;

    Batch batch;
    batch.items.resize(static_cast<std::size_t>(cfg.batch_size));

    for (long long t = 1; t <= cfg.total_steps; ++t) {
        const std::vector<double> q = adaptive ? sampler.current_q() : fixed_q;
        const int gi = rng.categorical(q);
        const double prob = q[static_cast<std::size_t>(gi)];

        const auto& group = data.groups[static_cast<std::size_t>(gi)];
        for (int b = 0; b < cfg.batch_size; ++b) {
            batch.items[static_cast<std::size_t>(b)] = &group[rng.below(group.size())];
        }

        const double lambda = use_perturbation ? curriculum.lambda() : 0.0;
        SurrogateResult sres;
        try {
            sres = surrogate_value_and_grad(spec, theta, batch, cfg.perturb, lambda,
                                            cfg.curriculum_mode, rng, cfg.exec);
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " (training step " + std::to_string(t) +
                                   ")",
                               e.example_id, t);
        }

        const double raw_objective =
            cfg.reward_source == RewardSource::surrogate ? sres.value : sres.plain_loss;
        const double reward = raw_objective / prob;
        if (adaptive) sampler.exp3_update({gi, raw_objective, prob});

        double grad_norm_sq = 0.0;
        for (std::size_t j = 0; j < theta.values.size(); ++j) {
            const double g = sres.gradient.values[j];
            grad_norm_sq += g * g;
            theta.values[j] -= cfg.eta_theta * g;
        }
        total_bp += sres.backward_passes;

        metrics.steps.push_back({t, gi, q, sres.plain_loss, sres.value, lambda, reward,
                                 std::sqrt(grad_norm_sq), sres.backward_passes});
        curriculum.advance();
    }

    RunSummary& summary = metrics.summary;
    summary.method = method_name(cfg.method);
    summary.total_steps = cfg.total_steps;
    summary.total_backward_passes = total_bp;
    summary.final_q = adaptive ? sampler.current_q() : fixed_q;
    for (std::size_t g = 0; g < data.groups.size(); ++g) {
        const Batch full = Batch::of(data.groups[g]);
        summary.per_group_loss[data.group_names[g]] = forward_loss(spec, theta, full, cfg.exec);
        long long correct = 0;
        for (const Example& ex : data.groups[g]) {
            if (predict(spec, theta, ex.features) == ex.label) ++correct;
        }
        summary.per_group_accuracy[data.group_names[g]] =
            static_cast<double>(correct) / static_cast<double>(data.groups[g].size());
    }
    return {std::move(theta), std::move(metrics)};
}

}  // namespace detail

std::pair<ParamVector, RunMetrics> vaa_train(const ModelSpec& spec, const ParamVector& init,
                                             const GroupedDataset& data,
                                             const TrainerConfig& cfg) {
    if (cfg.method != Method::vaa) throw ConfigError("vaa_train requires method = vaa");
    data.validate();
    if (data.groups.size() < 2) {
        throw ConfigError("the adaptive sampler needs at least two groups");
    }
    return detail::train_core(spec, init, data, cfg, {}, true);
}

std::pair<ParamVector, RunMetrics> erm_train(const ModelSpec& spec, const ParamVector& init,
                                             std::span<const Example> data,
                                             const TrainerConfig& cfg) {
    if (cfg.method != Method::erm) throw ConfigError("erm_train requires method = erm");
    GroupedDataset flat;
    flat.groups.emplace_back(data.begin(), data.end());
    flat.group_names.emplace_back("all");
    return detail::train_core(spec, init, flat, cfg, {1.0}, false);
}

std::pair<ParamVector, RunMetrics> heuristic_train(const ModelSpec& spec, const ParamVector& init,
                                                   const GroupedDataset& data,
                                                   const TrainerConfig& cfg) {
    data.validate();
    std::vector<double> q(data.groups.size(), 0.0);
    auto one_hot_on = [&](const std::string& name) {
        for (std::size_t g = 0; g < data.group_names.size(); ++g) {
            if (data.group_names[g] == name) {
                q[g] = 1.0;
                return;
            }
        }
        throw ConfigError("dataset has no group named '" + name + "'");
    };
    switch (cfg.method) {
        case Method::vuln_only: one_hot_on("vulnerable"); break;
        case Method::invuln_only: one_hot_on("invulnerable"); break;
        case Method::importance: {
            if (data.groups.size() < 2) {
                throw ConfigError("importance sampling needs at least two groups");
            }
            double z = 0.0;
            for (std::size_t g = 0; g < data.groups.size(); ++g) {
                q[g] = 1.0 / static_cast<double>(data.groups[g].size());
                z += q[g];
            }
            for (auto& v : q) v /= z;
            break;
        }
        default: throw ConfigError("heuristic_train requires a fixed-sampler method");
    }
    return detail::train_core(spec, init, data, cfg, std::move(q), true);
}

EvalReport evaluate(const ModelSpec& spec, const ParamVector& params,
                    const GroupedDataset& testset, std::span<const Example> safety_subset,
                    Exec exec) {
    testset.validate();
    EvalReport report;

    long long correct_total = 0;
    std::size_t n_total = 0;
    for (std::size_t g = 0; g < testset.groups.size(); ++g) {
        const auto& group = testset.groups[g];
        const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(group.size());
        long long correct = 0;
#pragma omp parallel for schedule(static) reduction(+ : correct) if (exec == Exec::parallel)
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            if (predict(spec, params, group[static_cast<std::size_t>(i)].features) ==
                group[static_cast<std::size_t>(i)].label) {
                ++correct;
            }
        }
        report.per_group_accuracy[testset.group_names[g]] =
            static_cast<double>(correct) / static_cast<double>(group.size());
        report.per_group_loss[testset.group_names[g]] =
            forward_loss(spec, params, Batch::of(group), exec);
        correct_total += correct;
        n_total += group.size();
    }
    report.accuracy = static_cast<double>(correct_total) / static_cast<double>(n_total);

    long long harmful = 0;
    long long flagged = 0;
    const std::ptrdiff_t ns = static_cast<std::ptrdiff_t>(safety_subset.size());
#pragma omp parallel for schedule(static) reduction(+ : harmful, flagged) \
    if (exec == Exec::parallel)
    for (std::ptrdiff_t i = 0; i < ns; ++i) {
        const Example& ex = safety_subset[static_cast<std::size_t>(i)];
        if (!ex.safety_flag) continue;
        ++flagged;
        if (predict(spec, params, ex.features) != ex.label) ++harmful;
    }
    if (flagged > 0) {
        report.harm_analog = static_cast<double>(harmful) / static_cast<double>(flagged);
    }
    return report;
}

namespace {

nlohmann::json step_to_json(const StepRecord& r) {
    nlohmann::json j;
    j["step"] = r.step;
    j["group"] = r.group;
    j["q"] = r.q;
    j["loss"] = r.loss;
    j["surrogate"] = r.surrogate;
    j["lambda"] = r.lambda;
    j["reward"] = r.reward;
    j["grad_norm"] = r.grad_norm;
    j["backward_passes"] = r.backward_passes;
    return j;
}

}  // namespace

std::string summary_to_json(const RunSummary& s) {
    nlohmann::json j;
    j["method"] = s.method;
    j["total_steps"] = s.total_steps;
    j["total_backward_passes"] = s.total_backward_passes;
    j["final_q"] = s.final_q;
    j["per_group_loss"] = s.per_group_loss;
    j["per_group_accuracy"] = s.per_group_accuracy;
    return j.dump(2) + "\n";
}

std::string metrics_to_jsonl(const RunMetrics& metrics) {
    std::string out;
    for (const StepRecord& r : metrics.steps) {
        out += step_to_json(r).dump();
        out += '\n';
    }
    return out;
}

void write_metrics(const std::filesystem::path& jsonl_path,
                   const std::filesystem::path& summary_path, const RunMetrics& metrics) {
    {
        std::ofstream os(jsonl_path, std::ios::trunc);
        if (!os) throw IoError("cannot open metrics file: " + jsonl_path.string());
        os << metrics_to_jsonl(metrics);
        if (!os) throw IoError("write failed: " + jsonl_path.string());
    }
    {
        std::ofstream os(summary_path, std::ios::trunc);
        if (!os) throw IoError("cannot open summary file: " + summary_path.string());
        os << summary_to_json(metrics.summary);
        if (!os) throw IoError("write failed: " + summary_path.string());
    }
}

}  // namespace vaalab
