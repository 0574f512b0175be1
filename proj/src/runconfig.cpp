#include "vaalab/runconfig.hpp"

#include <fstream>
#include <set>

#include "vaalab/errors.hpp"
#include "vaalab/rng.hpp"

namespace vaalab {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::set<std::string>& allowed,
                const std::string& section) {
    if (!obj.is_object()) throw ConfigError("section '" + section + "' must be a JSON object");
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (!allowed.count(key)) {
            throw ConfigError("unknown key '" + key + "' in section '" + section + "'");
        }
    }
}

template <typename T>
void maybe(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

ModelSpec parse_model(const json& j) {
    check_keys(j, {"kind", "input_dim", "hidden_dim", "num_classes", "activation"}, "model");
    ModelSpec spec;
    spec.input_dim = 16;
    spec.num_classes = 2;
    if (j.contains("kind")) {
        const std::string kind = j.at("kind").get<std::string>();
        if (kind == "linear-softmax") {
            spec.kind = ModelKind::linear_softmax;
        } else if (kind == "mlp-1hidden") {
            spec.kind = ModelKind::mlp1;
        } else {
            throw ConfigError("model.kind must be 'linear-softmax' or 'mlp-1hidden'");
        }
    }
    maybe(j, "input_dim", spec.input_dim);
    maybe(j, "hidden_dim", spec.hidden_dim);
    maybe(j, "num_classes", spec.num_classes);
    if (j.contains("activation")) {
        const std::string act = j.at("activation").get<std::string>();
        if (act == "tanh") {
            spec.activation = Activation::tanh;
        } else if (act == "relu") {
            spec.activation = Activation::relu;
        } else {
            throw ConfigError("model.activation must be 'tanh' or 'relu'");
        }
    }
    spec.validate();
    return spec;
}

void parse_synth(const json& j, SynthConfig& synth) {
    check_keys(j,
               {"input_dim", "n_majority", "n_minority", "majority_margin", "minority_margin",
                "noise_sigma", "poison_rate", "n_finetune"},
               "synth");
    maybe(j, "input_dim", synth.input_dim);
    maybe(j, "n_majority", synth.n_majority);
    maybe(j, "n_minority", synth.n_minority);
    maybe(j, "majority_margin", synth.majority_margin);
    maybe(j, "minority_margin", synth.minority_margin);
    maybe(j, "noise_sigma", synth.noise_sigma);
    maybe(j, "poison_rate", synth.poison_rate);
    maybe(j, "n_finetune", synth.n_finetune);
}

struct StepsSpec {
    long long total_steps = -1;
    int epochs = -1;
};

StepsSpec parse_steps(const json& j, const std::string& section) {
    StepsSpec s;
    if (j.contains("total_steps") && j.contains("epochs")) {
        throw ConfigError("section '" + section + "' sets both total_steps and epochs");
    }
    if (j.contains("total_steps")) s.total_steps = j.at("total_steps").get<long long>();
    if (j.contains("epochs")) s.epochs = j.at("epochs").get<int>();
    return s;
}

long long resolve_steps(const StepsSpec& s, std::size_t n_examples, int batch_size,
                        int default_epochs) {
    if (s.total_steps >= 0) return s.total_steps;
    const int epochs = s.epochs >= 0 ? s.epochs : default_epochs;
    return lab::steps_for_epochs(epochs, n_examples, batch_size);
}

CurriculumMode parse_curriculum_mode(const std::string& s) {
    if (s == "interp") return CurriculumMode::interp;
    if (s == "prob") return CurriculumMode::prob;
    throw ConfigError("curriculum.mode must be 'interp' or 'prob'");
}

CurriculumShape parse_curriculum_shape(const std::string& s) {
    if (s == "linear") return CurriculumShape::linear;
    if (s == "step") return CurriculumShape::step;
    throw ConfigError("curriculum.shape must be 'linear' or 'step'");
}

}  // namespace

RunConfig default_run_config() {
    RunConfig cfg;
    cfg.lab = lab::default_lab_config(1);
    cfg.out_root = ".";
    return cfg;
}

RunConfig run_config_from_json(const json& j) {
    check_keys(j, {"seed", "model", "synth", "align", "hft", "vaa", "paths",
                   "analyze_eval_every"},
               "(top level)");

    std::uint64_t seed = 1;
    maybe(j, "seed", seed);
    RunConfig cfg;
    cfg.lab = lab::default_lab_config(seed);
    cfg.out_root = ".";
    lab::LabConfig& lc = cfg.lab;

    if (j.contains("model")) lc.model = parse_model(j.at("model"));
    lc.synth.input_dim = lc.model.input_dim;
    if (j.contains("synth")) parse_synth(j.at("synth"), lc.synth);
    if (lc.synth.input_dim != lc.model.input_dim) {
        throw ConfigError("synth.input_dim must match model.input_dim");
    }
    lc.synth.validate();

    const std::size_t n_align =
        static_cast<std::size_t>(lc.synth.n_majority + lc.synth.n_minority);
    const std::size_t n_ft = static_cast<std::size_t>(lc.synth.n_finetune);

    StepsSpec align_steps, hft_steps, vaa_steps;
    if (j.contains("align")) {
        const json& a = j.at("align");
        check_keys(a, {"eta_theta", "total_steps", "epochs", "batch_size"}, "align");
        maybe(a, "eta_theta", lc.align.eta_theta);
        maybe(a, "batch_size", lc.align.batch_size);
        align_steps = parse_steps(a, "align");
    }
    if (j.contains("hft")) {
        const json& h = j.at("hft");
        check_keys(h, {"eta_theta", "total_steps", "epochs", "batch_size"}, "hft");
        maybe(h, "eta_theta", lc.hft.eta_theta);
        maybe(h, "batch_size", lc.hft.batch_size);
        hft_steps = parse_steps(h, "hft");
    }
    if (j.contains("vaa")) {
        const json& v = j.at("vaa");
        check_keys(v,
                   {"eta_theta", "eta_q", "total_steps", "epochs", "batch_size", "q_floor",
                    "reward_source", "perturb", "curriculum"},
                   "vaa");
        maybe(v, "eta_theta", lc.vaa.eta_theta);
        maybe(v, "eta_q", lc.vaa.eta_q);
        maybe(v, "batch_size", lc.vaa.batch_size);
        maybe(v, "q_floor", lc.vaa.q_floor);
        if (v.contains("reward_source")) {
            const std::string rs = v.at("reward_source").get<std::string>();
            if (rs == "surrogate") {
                lc.vaa.reward_source = RewardSource::surrogate;
            } else if (rs == "plain-loss") {
                lc.vaa.reward_source = RewardSource::plain_loss;
            } else {
                throw ConfigError("vaa.reward_source must be 'surrogate' or 'plain-loss'");
            }
        }
        if (v.contains("perturb")) {
            const json& p = v.at("perturb");
            check_keys(p, {"alpha", "grad_norm_tol"}, "vaa.perturb");
            maybe(p, "alpha", lc.vaa.perturb.alpha);
            maybe(p, "grad_norm_tol", lc.vaa.perturb.grad_norm_tol);
        }
        if (v.contains("curriculum")) {
            const json& c = v.at("curriculum");
            check_keys(c, {"mode", "shape", "step_at"}, "vaa.curriculum");
            if (c.contains("mode")) {
                lc.vaa.curriculum_mode = parse_curriculum_mode(c.at("mode").get<std::string>());
            }
            if (c.contains("shape")) {
                lc.vaa.curriculum_shape =
                    parse_curriculum_shape(c.at("shape").get<std::string>());
            }
            maybe(c, "step_at", lc.vaa.curriculum_step_at);
        }
        vaa_steps = parse_steps(v, "vaa");
    }

    lc.align.total_steps = resolve_steps(align_steps, n_align, lc.align.batch_size, 5);
    lc.hft.total_steps = resolve_steps(hft_steps, n_ft, lc.hft.batch_size, 5);
    lc.vaa.total_steps = resolve_steps(vaa_steps, n_align, lc.vaa.batch_size, 5);
    lc.align.validate();
    lc.vaa.validate();

    lc.analyze_eval_every =
        static_cast<long long>((n_ft + static_cast<std::size_t>(lc.hft.batch_size) - 1) /
                               static_cast<std::size_t>(lc.hft.batch_size));
    if (j.contains("analyze_eval_every")) {
        lc.analyze_eval_every = j.at("analyze_eval_every").get<long long>();
    }
    if (lc.analyze_eval_every < 1) throw ConfigError("analyze_eval_every must be at least 1");

    if (j.contains("paths")) {
        const json& p = j.at("paths");
        check_keys(p, {"corpus_dir", "partition", "checkpoint_dir", "metrics_dir", "report_dir"},
                   "paths");
        maybe(p, "corpus_dir", cfg.paths.corpus_dir);
        maybe(p, "partition", cfg.paths.partition);
        maybe(p, "checkpoint_dir", cfg.paths.checkpoint_dir);
        maybe(p, "metrics_dir", cfg.paths.metrics_dir);
        maybe(p, "report_dir", cfg.paths.report_dir);
    }
    return cfg;
}

RunConfig parse_run_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path.string());
    json j = json::parse(is, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file is not valid JSON: " + path.string());
    return run_config_from_json(j);
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
    const lab::LabConfig& lc = cfg.lab;
    json j;
    j["seed"] = lc.seed;
    json model;
    model["kind"] = lc.model.kind == ModelKind::linear_softmax ? "linear-softmax" : "mlp-1hidden";
    model["input_dim"] = lc.model.input_dim;
    model["num_classes"] = lc.model.num_classes;
    if (lc.model.kind == ModelKind::mlp1) {
        model["hidden_dim"] = lc.model.hidden_dim;
        model["activation"] = lc.model.activation == Activation::tanh ? "tanh" : "relu";
    }
    j["model"] = model;

    json synth;
    synth["input_dim"] = lc.synth.input_dim;
    synth["n_majority"] = lc.synth.n_majority;
    synth["n_minority"] = lc.synth.n_minority;
    synth["majority_margin"] = lc.synth.majority_margin;
    synth["minority_margin"] = lc.synth.minority_margin;
    synth["noise_sigma"] = lc.synth.noise_sigma;
    synth["poison_rate"] = lc.synth.poison_rate;
    synth["n_finetune"] = lc.synth.n_finetune;
    j["synth"] = synth;

    auto trainer_json = [](const TrainerConfig& t) {
        json out;
        out["eta_theta"] = t.eta_theta;
        out["total_steps"] = t.total_steps;
        out["batch_size"] = t.batch_size;
        return out;
    };
    j["align"] = trainer_json(lc.align);
    j["hft"] = trainer_json(lc.hft);

    json vaa = trainer_json(lc.vaa);
    vaa["eta_q"] = lc.vaa.eta_q;
    vaa["q_floor"] = lc.vaa.q_floor;
    vaa["reward_source"] =
        lc.vaa.reward_source == RewardSource::surrogate ? "surrogate" : "plain-loss";
    vaa["perturb"] = {{"alpha", lc.vaa.perturb.alpha},
                      {"grad_norm_tol", lc.vaa.perturb.grad_norm_tol}};
    vaa["curriculum"] = {
        {"mode", lc.vaa.curriculum_mode == CurriculumMode::prob ? "prob" : "interp"},
        {"shape", lc.vaa.curriculum_shape == CurriculumShape::linear ? "linear" : "step"},
        {"step_at", lc.vaa.curriculum_step_at}};
    j["vaa"] = vaa;

    j["analyze_eval_every"] = lc.analyze_eval_every;

    json paths;
    paths["corpus_dir"] = cfg.paths.corpus_dir;
    paths["partition"] = cfg.paths.partition;
    paths["checkpoint_dir"] = cfg.paths.checkpoint_dir;
    paths["metrics_dir"] = cfg.paths.metrics_dir;
    paths["report_dir"] = cfg.paths.report_dir;
    j["paths"] = paths;
    return j;
}

}  // namespace vaalab
