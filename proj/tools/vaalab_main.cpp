// vaalab command line: generate benchmark data, align a model, analyze
// forgetting, partition the alignment data, fine-tune (attack), evaluate,
// probe loss landscapes and compile report tables. Stages communicate
// through files; every stage echoes the fully resolved configuration it ran
// with into its output directory.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vaalab/errors.hpp"
#include "vaalab/forgetlab.hpp"
#include "vaalab/lab.hpp"
#include "vaalab/model.hpp"
#include "vaalab/rng.hpp"
#include "vaalab/runconfig.hpp"
#include "vaalab/synthdata.hpp"
#include "vaalab/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vaalab;

namespace {

struct ClobberError : std::runtime_error {
    explicit ClobberError(const std::string& msg) : std::runtime_error(msg) {}
};

struct GlobalOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    bool force = false;
    std::string out_dir = ".";
};

RunConfig load_config(const GlobalOpts& opts) {
    json j = json::object();
    if (!opts.config_path.empty()) {
        std::ifstream is(opts.config_path);
        if (!is) throw ConfigError("cannot open config file: " + opts.config_path);
        j = json::parse(is, nullptr, false);
        if (j.is_discarded()) {
            throw ConfigError("config file is not valid JSON: " + opts.config_path);
        }
    }
    if (opts.seed) j["seed"] = *opts.seed;
    RunConfig cfg = run_config_from_json(j);
    cfg.out_root = opts.out_dir;
    return cfg;
}

void refuse_clobber(const std::vector<fs::path>& outputs, bool force) {
    if (force) return;
    for (const auto& p : outputs) {
        if (fs::exists(p)) {
            throw ClobberError("output exists (use --force to overwrite): " + p.string());
        }
    }
}

void write_echo(const fs::path& dir, const std::string& command, const RunConfig& cfg,
                json extra = json::object()) {
    fs::create_directories(dir);
    json j;
    j["command"] = command;
    j["config"] = run_config_to_json(cfg);
    if (!extra.empty()) j["flags"] = extra;
    std::ofstream os(dir / (command + "_config.json"), std::ios::trunc);
    os << j.dump(2) << '\n';
    if (!os) throw IoError("cannot write config echo in " + dir.string());
}

LabeledCorpus require_corpus(const fs::path& path) {
    if (!fs::exists(path)) {
        throw ConfigError("missing corpus file " + path.string() + " (run 'vaalab gen' first)");
    }
    return read_corpus(path);
}

std::pair<ModelSpec, ParamVector> require_checkpoint(const fs::path& path,
                                                     const std::string& hint) {
    if (!fs::exists(path)) {
        throw ConfigError("missing checkpoint " + path.string() + " (run " + hint + " first)");
    }
    return load_checkpoint(path);
}

GroupPartition require_partition(const RunConfig& cfg) {
    if (!fs::exists(cfg.partition_path())) {
        throw ConfigError("missing partition " + cfg.partition_path().string() +
                          " (run 'vaalab analyze' first)");
    }
    return read_partition(cfg.partition_path());
}

std::string double_tag(double v) {
    std::string s = std::to_string(v);
    s.erase(s.find_last_not_of('0') + 1);
    if (!s.empty() && s.back() == '.') s.pop_back();
    std::replace(s.begin(), s.end(), '.', '_');
    return s;
}

json eval_to_json(const lab::LabEvalResult& ev) {
    json j;
    if (ev.harm_analog) {
        j["harm_analog"] = *ev.harm_analog;
    } else {
        j["harm_analog"] = nullptr;
    }
    j["finetune_accuracy"] = ev.finetune_accuracy;
    j["per_group_loss"] = ev.per_group_loss;
    j["per_group_accuracy"] = ev.per_group_accuracy;
    j["worst_group_loss"] = ev.worst_group_loss;
    return j;
}

// ---------------------------------------------------------------------------

int cmd_gen(const GlobalOpts& opts) {
    RunConfig cfg = load_config(opts);
    const fs::path dir = cfg.corpus_dir();
    const fs::path align_path = dir / "alignment.corpus";
    const fs::path ft_path = dir / "finetune.corpus";
    refuse_clobber({align_path, ft_path}, opts.force);
    fs::create_directories(dir);
    write_corpus(align_path, lab::alignment_corpus(cfg.lab));
    write_corpus(ft_path, lab::user_task(cfg.lab, cfg.lab.synth.poison_rate));
    write_echo(dir, "gen", cfg);
    std::cout << "wrote " << align_path.string() << " and " << ft_path.string() << "\n";
    return 0;
}

int cmd_align(const GlobalOpts& opts, const std::string& method_str) {
    RunConfig cfg = load_config(opts);
    const Method method = method_from_name(method_str);
    const std::string tag = "align_" + method_name(method);
    const fs::path ckpt = cfg.checkpoint_dir() / (tag + ".ckpt");
    const fs::path jsonl = cfg.metrics_dir() / (tag + ".jsonl");
    const fs::path summary = cfg.metrics_dir() / (tag + ".summary.json");
    refuse_clobber({ckpt, jsonl, summary}, opts.force);

    const LabeledCorpus alignment = require_corpus(cfg.corpus_dir() / "alignment.corpus");
    GroupPartition part;
    const GroupPartition* part_ptr = nullptr;
    if (method != Method::erm) {
        part = require_partition(cfg);
        part_ptr = &part;
    }
    auto [params, metrics] = lab::run_alignment(cfg.lab, method, alignment, part_ptr);

    fs::create_directories(cfg.checkpoint_dir());
    fs::create_directories(cfg.metrics_dir());
    save_checkpoint(ckpt, cfg.lab.model, params);
    write_metrics(jsonl, summary, metrics);
    write_echo(cfg.checkpoint_dir(), "align", cfg, json{{"method", method_name(method)}});
    std::cout << "aligned with " << method_name(method) << ": " << ckpt.string() << "\n";
    return 0;
}

int cmd_analyze(const GlobalOpts& opts, long long steps_override, int variant) {
    RunConfig cfg = load_config(opts);
    const fs::path csv = cfg.report_dir() / "forgetting.csv";
    const fs::path summary = cfg.report_dir() / "forgetting_summary.json";
    refuse_clobber({csv, summary, cfg.partition_path()}, opts.force);

    const LabeledCorpus alignment = require_corpus(cfg.corpus_dir() / "alignment.corpus");
    auto [spec, aligned] = require_checkpoint(cfg.checkpoint_dir() / "align_erm.ckpt",
                                              "'vaalab align --method erm'");
    if (spec.layout_id() != cfg.lab.model.layout_id()) {
        throw ConfigError("checkpoint model does not match the configured model");
    }
    lab::LabConfig lc = cfg.lab;
    if (steps_override >= 0) lc.hft.total_steps = steps_override;
    const lab::AnalyzeResult result = lab::analyze(lc, aligned, alignment, variant);

    fs::create_directories(cfg.report_dir());
    fs::create_directories(cfg.partition_path().parent_path().empty()
                               ? cfg.out_root
                               : cfg.partition_path().parent_path());
    write_forgetting_csv(csv, result.record);
    {
        std::ofstream os(summary, std::ios::trunc);
        os << forgetting_summary_json(result.record);
        if (!os) throw IoError("write failed: " + summary.string());
    }
    write_partition(cfg.partition_path(), result.partition);
    write_echo(cfg.report_dir(), "analyze", cfg,
               json{{"variant", variant}, {"steps_override", steps_override}});
    if (result.partition.vulnerable_ids.empty()) {
        std::cerr << "warning: no example was forgotten; the vulnerable group is empty\n";
    }
    std::cout << "partition: " << result.partition.vulnerable_ids.size() << " vulnerable / "
              << result.partition.invulnerable_ids.size() << " invulnerable -> "
              << cfg.partition_path().string() << "\n";
    return 0;
}

int cmd_attack(const GlobalOpts& opts, const std::string& method_str, std::vector<double> p_list,
               std::vector<int> epoch_list) {
    RunConfig cfg = load_config(opts);
    const Method method = method_from_name(method_str);
    if (p_list.empty()) p_list = {0.0, 0.10, 0.20};
    if (epoch_list.empty()) epoch_list = {5};

    const fs::path report_path =
        cfg.report_dir() / ("attack_" + method_name(method) + ".json");
    std::vector<fs::path> outputs{report_path};
    auto tag_of = [&](double p, int e) {
        return "attack_" + method_name(method) + "_p" + double_tag(p) + "_e" + std::to_string(e);
    };
    for (double p : p_list) {
        for (int e : epoch_list) {
            outputs.push_back(cfg.checkpoint_dir() / (tag_of(p, e) + ".ckpt"));
        }
    }
    refuse_clobber(outputs, opts.force);

    auto [spec, aligned] = require_checkpoint(
        cfg.checkpoint_dir() / ("align_" + method_name(method) + ".ckpt"),
        "'vaalab align --method " + method_name(method) + "'");
    if (spec.layout_id() != cfg.lab.model.layout_id()) {
        throw ConfigError("checkpoint model does not match the configured model");
    }
    const LabeledCorpus base_task = require_corpus(cfg.corpus_dir() / "finetune.corpus");

    fs::create_directories(cfg.checkpoint_dir());
    fs::create_directories(cfg.metrics_dir());
    fs::create_directories(cfg.report_dir());

    json rows = json::array();
    std::uint64_t sweep_index = 0;
    for (double p : p_list) {
        for (int e : epoch_list) {
            const LabeledCorpus task = p == base_task.config.poison_rate
                                           ? base_task
                                           : lab::user_task(cfg.lab, p);
            auto [params, metrics] = lab::attack(cfg.lab, aligned, task, e, sweep_index);
            const std::string tag = tag_of(p, e);
            save_checkpoint(cfg.checkpoint_dir() / (tag + ".ckpt"), cfg.lab.model, params);
            write_metrics(cfg.metrics_dir() / (tag + ".jsonl"),
                          cfg.metrics_dir() / (tag + ".summary.json"), metrics);
            const lab::LabEvalResult ev = lab::evaluate_model(cfg.lab, params, task);
            json row = eval_to_json(ev);
            row["p"] = p;
            row["epochs"] = e;
            rows.push_back(row);
            ++sweep_index;
        }
    }
    {
        std::ofstream os(report_path, std::ios::trunc);
        os << rows.dump(2) << '\n';
        if (!os) throw IoError("write failed: " + report_path.string());
    }
    write_echo(cfg.report_dir(), "attack", cfg,
               json{{"method", method_name(method)},
                    {"p_list", p_list},
                    {"epoch_list", epoch_list}});
    std::cout << "attack sweep written to " << report_path.string() << "\n";
    return 0;
}

int cmd_eval(const GlobalOpts& opts, const std::string& checkpoint_name) {
    RunConfig cfg = load_config(opts);
    const fs::path ckpt = cfg.checkpoint_dir() / (checkpoint_name + ".ckpt");
    const fs::path out = cfg.report_dir() / ("eval_" + checkpoint_name + ".json");
    refuse_clobber({out}, opts.force);

    auto [spec, params] = require_checkpoint(ckpt, "the producing stage");
    if (spec.layout_id() != cfg.lab.model.layout_id()) {
        throw ConfigError("checkpoint model does not match the configured model");
    }
    const LabeledCorpus task = require_corpus(cfg.corpus_dir() / "finetune.corpus");
    const lab::LabEvalResult ev = lab::evaluate_model(cfg.lab, params, task);

    fs::create_directories(cfg.report_dir());
    json j = eval_to_json(ev);
    j["checkpoint"] = checkpoint_name;
    std::ofstream os(out, std::ios::trunc);
    os << j.dump(2) << '\n';
    if (!os) throw IoError("write failed: " + out.string());
    write_echo(cfg.report_dir(), "eval", cfg, json{{"checkpoint", checkpoint_name}});
    std::cout << "eval written to " << out.string() << "\n";
    return 0;
}

int cmd_landscape(const GlobalOpts& opts, const std::string& checkpoint_name,
                  std::vector<double> magnitudes, int directions, const std::string& mode_str) {
    RunConfig cfg = load_config(opts);
    if (magnitudes.empty()) magnitudes = {0.0, 0.05, 0.1, 0.2, 0.4, 0.8};
    std::sort(magnitudes.begin(), magnitudes.end());
    const ProbeMode mode = [&] {
        if (mode_str == "random") return ProbeMode::random;
        if (mode_str == "gradient") return ProbeMode::gradient;
        throw ConfigError("--probe-mode must be 'random' or 'gradient'");
    }();

    auto [spec, params] =
        require_checkpoint(cfg.checkpoint_dir() / (checkpoint_name + ".ckpt"),
                           "the producing stage");
    if (spec.layout_id() != cfg.lab.model.layout_id()) {
        throw ConfigError("checkpoint model does not match the configured model");
    }
    const LabeledCorpus alignment = require_corpus(cfg.corpus_dir() / "alignment.corpus");
    const GroupPartition part = require_partition(cfg);
    const GroupedDataset groups = group_by_partition(alignment.examples, part);

    std::vector<fs::path> outputs;
    for (const auto& name : groups.group_names) {
        outputs.push_back(cfg.report_dir() / ("landscape_" + name + ".csv"));
    }
    refuse_clobber(outputs, opts.force);

    Rng rng(derive_seed(cfg.lab.seed, "landscape"));
    const auto curves =
        landscape_probe(cfg.lab.model, params, groups, magnitudes, directions, mode, rng);

    fs::create_directories(cfg.report_dir());
    for (std::size_t g = 0; g < curves.size(); ++g) {
        std::ofstream os(outputs[g], std::ios::trunc);
        os << "magnitude,mean_delta,std_delta\n";
        for (std::size_t i = 0; i < curves[g].magnitudes.size(); ++i) {
            os << curves[g].magnitudes[i] << ',' << curves[g].mean_delta[i] << ','
               << curves[g].std_delta[i] << '\n';
        }
        if (!os) throw IoError("write failed: " + outputs[g].string());
    }
    write_echo(cfg.report_dir(), "landscape", cfg,
               json{{"checkpoint", checkpoint_name},
                    {"magnitudes", magnitudes},
                    {"directions", directions},
                    {"probe_mode", mode_str}});
    std::cout << "landscape curves written to " << cfg.report_dir().string() << "\n";
    return 0;
}

int cmd_report(const GlobalOpts& opts, int epochs) {
    RunConfig cfg = load_config(opts);
    const fs::path csv_path = cfg.report_dir() / "report.csv";
    const fs::path json_path = cfg.report_dir() / "report.json";
    refuse_clobber({csv_path, json_path}, opts.force);

    const LabeledCorpus alignment = require_corpus(cfg.corpus_dir() / "alignment.corpus");
    const LabeledCorpus task = require_corpus(cfg.corpus_dir() / "finetune.corpus");
    const GroupPartition part = require_partition(cfg);

    const std::vector<Method> methods = {Method::erm, Method::vaa, Method::vuln_only,
                                         Method::invuln_only, Method::importance};
    json rows = json::array();
    std::string csv = "method,harm_analog,finetune_accuracy,worst_group_loss\n";
    std::uint64_t sweep_index = 0;
    for (Method m : methods) {
        auto [aligned, align_metrics] = lab::run_alignment(cfg.lab, m, alignment, &part);
        auto [attacked, attack_metrics] =
            lab::attack(cfg.lab, aligned, task, epochs, sweep_index++);
        const lab::LabEvalResult ev = lab::evaluate_model(cfg.lab, attacked, task);
        json row = eval_to_json(ev);
        row["method"] = method_name(m);
        rows.push_back(row);
        csv += method_name(m) + ",";
        csv += (ev.harm_analog ? std::to_string(*ev.harm_analog) : std::string("nan")) + ",";
        csv += std::to_string(ev.finetune_accuracy) + ",";
        csv += std::to_string(ev.worst_group_loss) + "\n";
    }
    fs::create_directories(cfg.report_dir());
    {
        std::ofstream os(csv_path, std::ios::trunc);
        os << csv;
        if (!os) throw IoError("write failed: " + csv_path.string());
    }
    {
        std::ofstream os(json_path, std::ios::trunc);
        os << rows.dump(2) << '\n';
        if (!os) throw IoError("write failed: " + json_path.string());
    }
    write_echo(cfg.report_dir(), "report", cfg, json{{"epochs", epochs}});
    std::cout << "report written to " << csv_path.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vulnerability-aware alignment lab"};
    app.require_subcommand(1);

    GlobalOpts opts;
    app.add_option("--config", opts.config_path, "JSON run configuration");
    std::uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "override the config seed");
    app.add_flag("--force", opts.force, "overwrite existing outputs");
    app.add_option("--out", opts.out_dir, "output root directory")->default_val(".");

    auto* gen = app.add_subcommand("gen", "generate benchmark corpora");

    std::string align_method = "erm";
    auto* align = app.add_subcommand("align", "train the alignment-stage model");
    align->add_option("--method", align_method,
                      "vaa | erm | vuln-only | invuln-only | importance");

    long long analyze_steps = -1;
    int analyze_variant = 0;
    auto* analyze = app.add_subcommand("analyze", "simulate proxy fine-tuning and partition");
    analyze->add_option("--steps", analyze_steps, "override proxy fine-tuning steps");
    analyze->add_option("--variant", analyze_variant, "proxy task variant index");

    std::string attack_method = "erm";
    std::vector<double> p_list;
    std::vector<int> epoch_list;
    auto* attack = app.add_subcommand("attack", "fine-tune an aligned checkpoint");
    attack->add_option("--method", attack_method, "which aligned checkpoint to attack");
    attack->add_option("--p-list", p_list, "poison rates to sweep");
    attack->add_option("--epochs-list", epoch_list, "epoch budgets to sweep");

    std::string eval_checkpoint = "align_erm";
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--checkpoint", eval_checkpoint, "checkpoint name (without .ckpt)");

    std::string landscape_checkpoint = "align_erm";
    std::vector<double> magnitudes;
    int directions = 32;
    std::string probe_mode = "random";
    auto* landscape = app.add_subcommand("landscape", "probe per-group loss landscapes");
    landscape->add_option("--checkpoint", landscape_checkpoint, "checkpoint name");
    landscape->add_option("--magnitudes", magnitudes, "perturbation magnitudes");
    landscape->add_option("--directions", directions, "directions per magnitude");
    landscape->add_option("--probe-mode", probe_mode, "random | gradient");

    int report_epochs = 5;
    auto* report = app.add_subcommand("report", "align+attack+eval every method");
    report->add_option("--epochs", report_epochs, "attack epochs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "vaalab: error=config: " << e.what() << "\n";
        return 2;
    }
    if (seed_opt->count() > 0) opts.seed = seed_value;

    try {
        if (gen->parsed()) return cmd_gen(opts);
        if (align->parsed()) return cmd_align(opts, align_method);
        if (analyze->parsed()) return cmd_analyze(opts, analyze_steps, analyze_variant);
        if (attack->parsed()) return cmd_attack(opts, attack_method, p_list, epoch_list);
        if (eval->parsed()) return cmd_eval(opts, eval_checkpoint);
        if (landscape->parsed()) {
            return cmd_landscape(opts, landscape_checkpoint, magnitudes, directions, probe_mode);
        }
        if (report->parsed()) return cmd_report(opts, report_epochs);
    } catch (const ClobberError& e) {
        std::cerr << "vaalab: error=clobber: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "vaalab: error=numeric: " << e.what() << "\n";
        return 4;
    } catch (const ConfigError& e) {
        std::cerr << "vaalab: error=config: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "vaalab: error=config: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "vaalab: error=config: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "vaalab: error=internal: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
