#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vaalab/model.hpp"
#include "vaalab/perturb.hpp"
#include "vaalab/sampler.hpp"

// Training loops. The adaptive method plays an EXP3 sampler against the
// model: each step draws a group, samples a batch from it, evaluates the
// robust surrogate, pays the sampler an importance-weighted reward and takes
// a gradient step. The baselines run the same loop with a fixed sampling
// distribution (uniform over the flattened data, one-hot on a named group,
// or inverse-frequency weights) and, for plain minibatch descent, with the
// perturbation disabled.

namespace vaalab {

enum class Method { vaa, erm, vuln_only, invuln_only, importance };
enum class RewardSource { surrogate, plain_loss };

std::string method_name(Method m);
Method method_from_name(const std::string& s);

struct TrainerConfig {
    Method method = Method::erm;
    double eta_theta = 1e-4;  // model step size
    double eta_q = 0.1;       // sampler step size
    long long total_steps = 1250;
    int batch_size = 8;
    PerturbConfig perturb;
    CurriculumMode curriculum_mode = CurriculumMode::prob;
    CurriculumShape curriculum_shape = CurriculumShape::linear;
    double curriculum_step_at = 0.5;
    double q_floor = 1e-3;
    std::uint64_t seed = 0;
    RewardSource reward_source = RewardSource::surrogate;
    Exec exec = Exec::parallel;

    void validate() const;
};

struct GroupedDataset {
    std::vector<std::vector<Example>> groups;
    std::vector<std::string> group_names;

    void validate() const;  // non-empty groups, matching names, disjoint ids
    std::size_t total_examples() const;
    std::vector<Example> flattened() const;
};

struct StepRecord {
    long long step;  // 1-based
    int group;
    std::vector<double> q;
    double loss;       // plain loss at the unperturbed point
    double surrogate;  // objective estimate fed to the sampler
    double lambda;
    double reward;
    double grad_norm;
    int backward_passes;
};

struct RunSummary {
    std::string method;
    long long total_steps = 0;
    long long total_backward_passes = 0;
    std::vector<double> final_q;
    std::map<std::string, double> per_group_loss;      // final train loss per group
    std::map<std::string, double> per_group_accuracy;  // final train accuracy per group
};

struct RunMetrics {
    std::vector<StepRecord> steps;
    RunSummary summary;
};

// Algorithm: adaptive sampler + surrogate objective. Requires >= 2 groups.
std::pair<ParamVector, RunMetrics> vaa_train(const ModelSpec& spec, const ParamVector& init,
                                             const GroupedDataset& data,
                                             const TrainerConfig& cfg);

// Plain minibatch gradient descent over the flattened data.
std::pair<ParamVector, RunMetrics> erm_train(const ModelSpec& spec, const ParamVector& init,
                                             std::span<const Example> data,
                                             const TrainerConfig& cfg);

// Fixed (non-adaptive) sampling distribution; perturbation still follows the
// curriculum. Methods: vuln_only, invuln_only (by group name), importance.
std::pair<ParamVector, RunMetrics> heuristic_train(const ModelSpec& spec, const ParamVector& init,
                                                   const GroupedDataset& data,
                                                   const TrainerConfig& cfg);

struct EvalReport {
    double accuracy = 0.0;
    std::optional<double> harm_analog;  // absent when the safety subset is empty
    std::map<std::string, double> per_group_loss;
    std::map<std::string, double> per_group_accuracy;
};

// accuracy and per-group stats over testset; harm_analog is the fraction of
// safety-flagged examples in safety_subset predicted off their safe label.
EvalReport evaluate(const ModelSpec& spec, const ParamVector& params,
                    const GroupedDataset& testset, std::span<const Example> safety_subset,
                    Exec exec = Exec::parallel);

// One JSON object per step, then one summary object; deterministic bytes.
std::string metrics_to_jsonl(const RunMetrics& metrics);
std::string summary_to_json(const RunSummary& summary);
void write_metrics(const std::filesystem::path& jsonl_path,
                   const std::filesystem::path& summary_path, const RunMetrics& metrics);

namespace detail {
// Shared loop behind the public entry points; fixed_q empty means adaptive.
std::pair<ParamVector, RunMetrics> train_core(const ModelSpec& spec, const ParamVector& init,
                                              const GroupedDataset& data, const TrainerConfig& cfg,
                                              std::vector<double> fixed_q, bool use_perturbation);
}  // namespace detail

}  // namespace vaalab
