#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vaalab/forgetlab.hpp"
#include "vaalab/model.hpp"
#include "vaalab/synthdata.hpp"
#include "vaalab/trainer.hpp"

// End-to-end experiment recipes on the synthetic benchmark: generate data,
// align with a chosen method, analyze forgetting on a proxy task, attack the
// aligned model, evaluate. The CLI adds file plumbing around these; the
// tests call them directly.

namespace vaalab::lab {

struct LabConfig {
    ModelSpec model;
    SynthConfig synth;
    TrainerConfig align;  // plain alignment and the base for fixed-sampler methods
    TrainerConfig hft;    // proxy / attack fine-tuning
    TrainerConfig vaa;    // adaptive alignment
    std::uint64_t seed = 1;
    long long analyze_eval_every = 25;  // harm-trace cadence during the proxy run
};

// The shipped benchmark configuration; seed selects the replicate.
LabConfig default_lab_config(std::uint64_t seed = 1);

long long steps_for_epochs(int epochs, std::size_t n_examples, int batch_size);

// Corpora. Each is deterministic in cfg.seed; eval sets use derived seeds.
LabeledCorpus alignment_corpus(const LabConfig& cfg);
LabeledCorpus alignment_eval_corpus(const LabConfig& cfg);
LabeledCorpus user_task(const LabConfig& cfg, double poison_rate);
LabeledCorpus proxy_task(const LabConfig& cfg, int variant = 0);

// Groups a corpus by its generator cluster tags.
GroupedDataset group_by_cluster(const LabeledCorpus& corpus);

// Alignment stage. erm ignores the partition; every other method needs one.
std::pair<ParamVector, RunMetrics> run_alignment(const LabConfig& cfg, Method method,
                                                 const LabeledCorpus& alignment,
                                                 const GroupPartition* partition);

struct AnalyzeResult {
    ForgettingRecord record;
    GroupPartition partition;
};

// Stage 1: proxy fine-tuning on the aligned model, harm tracing, split.
AnalyzeResult analyze(const LabConfig& cfg, const ParamVector& aligned_params,
                      const LabeledCorpus& alignment, int variant = 0);

// User fine-tuning stage: plain fine-tuning of the aligned model on the
// given task corpus for an epoch budget.
std::pair<ParamVector, RunMetrics> attack(const LabConfig& cfg, const ParamVector& aligned_params,
                                          const LabeledCorpus& task, int epochs,
                                          std::uint64_t sweep_index = 0);

struct LabEvalResult {
    std::optional<double> harm_analog;        // alignment eval set
    double finetune_accuracy = 0.0;           // benign user-task eval set
    std::map<std::string, double> per_group_loss;      // alignment eval, by cluster
    std::map<std::string, double> per_group_accuracy;  // alignment eval, by cluster
    double worst_group_loss = 0.0;
};

LabEvalResult evaluate_model(const LabConfig& cfg, const ParamVector& params,
                             const LabeledCorpus& user_corpus);

// Symmetric two-group dataset: the second group is the first one's feature
// pattern transplanted into disjoint coordinates, so both groups present
// exactly the same learning problem.
GroupedDataset mirror_benchmark(std::uint64_t seed, int per_class = 200, int input_dim = 16);

// Randomly reassigns a fraction of ids between the partition's two sides.
GroupPartition corrupt_partition(const GroupPartition& partition, double swap_fraction,
                                 std::uint64_t seed);

}  // namespace vaalab::lab
