#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "vaalab/model.hpp"
#include "vaalab/rng.hpp"
#include "vaalab/trainer.hpp"

// Forgetting analysis: fine-tune an aligned model on a proxy mixture, trace
// which alignment examples flip from safe to unsafe predictions, count the
// flips, split the data into vulnerable / invulnerable groups, and probe how
// sensitive each group's loss is to weight perturbations.

namespace vaalab {

// Per-example binary harm traces. Row i column t holds whether alignment
// example i produced an unsafe prediction at the t-th evaluation point;
// column 0 is the pre-fine-tuning baseline.
struct ForgettingRecord {
    std::vector<long long> example_ids;  // N rows
    std::vector<std::uint8_t> hs;        // N x cols, row-major
    std::size_t cols = 0;
    std::vector<long long> eval_steps;   // trainer step of each column, eval_steps[0] = 0
    std::string provenance;              // JSON: proxy seed, steps, eval cadence

    std::uint8_t at(std::size_t row, std::size_t col) const { return hs[row * cols + col]; }
};

struct GroupPartition {
    std::vector<long long> vulnerable_ids;
    std::vector<long long> invulnerable_ids;
    std::map<long long, int> forgot_nums;
    std::string source;  // provenance JSON carried over from the record
};

struct ForgetSets {
    std::vector<std::set<long long>> sets;
    long long n_total = 0;
};

// Fine-tunes aligned_params on finetune_data (plain minibatch descent) and
// records the harm indicator of every alignment example each eval_every
// steps, plus a final column when total_steps is not a multiple.
ForgettingRecord simulate_hft(const ModelSpec& spec, const ParamVector& aligned_params,
                              std::span<const Example> finetune_data,
                              std::span<const Example> alignment_data,
                              const TrainerConfig& hft_cfg, long long eval_every,
                              Exec exec = Exec::parallel);

// Number of evaluation points where the example scored worse than its
// pre-fine-tuning baseline.
int forgot_num(const ForgettingRecord& record, long long example_id);

// Threshold-0 split: forgotten at least once -> vulnerable.
GroupPartition partition(const ForgettingRecord& record);

std::vector<long long> forgotten_ids(const ForgettingRecord& record);

// |A_1 ∩ ... ∩ A_k| / N.
double common_forgot(const ForgetSets& sets);
// |A_1 ∩ ... ∩ A_k| / min_j |A_j|; absent when some A_j is empty.
std::optional<double> common_forgot_ratio(const ForgetSets& sets);

enum class ProbeMode { random, gradient };

struct LandscapeCurve {
    std::string group;
    std::vector<double> magnitudes;
    std::vector<double> mean_delta;
    std::vector<double> std_delta;
};

// Mean loss change per group when the weights move distance a along sampled
// unit directions (or along the group's own gradient direction).
std::vector<LandscapeCurve> landscape_probe(const ModelSpec& spec, const ParamVector& params,
                                            const GroupedDataset& data_by_group,
                                            std::span<const double> magnitudes,
                                            int directions_per_magnitude, ProbeMode mode, Rng& rng,
                                            Exec exec = Exec::parallel);

// Artifact formats.
void write_forgetting_csv(const std::filesystem::path& path, const ForgettingRecord& record);
std::string forgetting_summary_json(const ForgettingRecord& record);
void write_partition(const std::filesystem::path& path, const GroupPartition& partition);
GroupPartition read_partition(const std::filesystem::path& path);

// Splits a corpus into the partition's vulnerable / invulnerable groups.
GroupedDataset group_by_partition(std::span<const Example> alignment_data,
                                  const GroupPartition& partition);

}  // namespace vaalab
