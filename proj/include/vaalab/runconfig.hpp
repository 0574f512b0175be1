#pragma once

#include <filesystem>
#include <string>

#include "vaalab/lab.hpp"
#include <json.hpp>

// The CLI's structured run configuration: one JSON document with sections
// model, synth, align, hft, vaa, paths and a global seed. Parsing is strict:
// unknown keys are rejected, values are validated up front, and the fully
// resolved document (defaults applied, epochs converted to steps) can be
// echoed back out.

namespace vaalab {

struct RunPaths {
    std::string corpus_dir = "corpora";
    std::string partition = "partition.json";
    std::string checkpoint_dir = "checkpoints";
    std::string metrics_dir = "metrics";
    std::string report_dir = "reports";
};

struct RunConfig {
    lab::LabConfig lab;
    RunPaths paths;

    // Resolved absolute locations, filled in by resolve_paths.
    std::filesystem::path out_root;
    std::filesystem::path corpus_dir() const { return out_root / paths.corpus_dir; }
    std::filesystem::path partition_path() const { return out_root / paths.partition; }
    std::filesystem::path checkpoint_dir() const { return out_root / paths.checkpoint_dir; }
    std::filesystem::path metrics_dir() const { return out_root / paths.metrics_dir; }
    std::filesystem::path report_dir() const { return out_root / paths.report_dir; }
};

RunConfig default_run_config();

// Strict parse; throws ConfigError on unknown keys or invalid values.
RunConfig parse_run_config(const std::filesystem::path& path);
RunConfig run_config_from_json(const nlohmann::json& j);

// Fully-resolved echo of the effective configuration.
nlohmann::json run_config_to_json(const RunConfig& cfg);

}  // namespace vaalab
