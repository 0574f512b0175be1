#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vaalab/model.hpp"

// Deterministic generators for the desk-scale benchmark family.
//
// The alignment task is one safe-labeled class in two Gaussian clusters: a
// large majority cluster far from the origin and a small minority cluster
// close to it, on partially overlapping directions. Under uniform sampling
// the minority's gradient mass is dominated by the majority's, so it
// accumulates a thinner safety margin and is the engineered vulnerable
// subset.
//
// The fine-tune task is a benign two-class problem in a seed-dependent
// subspace orthogonal to the alignment directions (each seed is a distinct
// task), mixed with a poison_rate fraction of harmful examples: inputs drawn
// near the alignment clusters but labeled with the unsafe class.

namespace vaalab {

inline constexpr const char* kGeneratorVersion = "vaalab-synth-1";

struct SynthConfig {
    std::uint64_t seed = 1;
    int input_dim = 16;
    int n_majority = 1800;
    int n_minority = 200;
    double majority_margin = 4.0;  // cluster center distance from the origin
    double minority_margin = 1.5;
    double noise_sigma = 0.3;
    double poison_rate = 0.10;
    int n_finetune = 1000;

    void validate() const;
};

struct LabeledCorpus {
    std::vector<Example> examples;
    std::vector<std::string> cluster;  // per-example cluster tag, parallel to examples
    SynthConfig config;
    std::string task;  // "alignment" or "finetune"
};

// Safe class index used by both tasks (alignment labels, harm evaluation).
inline constexpr int kSafeClass = 0;
inline constexpr int kUnsafeClass = 1;

LabeledCorpus gen_alignment_task(const SynthConfig& cfg);
LabeledCorpus gen_finetune_task(const SynthConfig& cfg);

// Line-oriented text format, one example per line: example_id, safety_flag,
// label, features (shortest round-trip decimals), cluster tag. The header
// line carries the format version, generator version and the SynthConfig.
void write_corpus(const std::filesystem::path& path, const LabeledCorpus& corpus);
LabeledCorpus read_corpus(const std::filesystem::path& path);

}  // namespace vaalab
