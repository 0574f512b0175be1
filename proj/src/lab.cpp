#include "vaalab/lab.hpp"

#include <algorithm>
#include <cmath>

#include "vaalab/errors.hpp"
#include "vaalab/rng.hpp"

namespace vaalab::lab {

long long steps_for_epochs(int epochs, std::size_t n_examples, int batch_size) {
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    const long long per_epoch =
        static_cast<long long>((n_examples + static_cast<std::size_t>(batch_size) - 1) /
                               static_cast<std::size_t>(batch_size));
    return static_cast<long long>(epochs) * per_epoch;
}

LabConfig default_lab_config(std::uint64_t seed) {
    LabConfig cfg;
    cfg.seed = seed;

    cfg.model.kind = ModelKind::linear_softmax;
    cfg.model.input_dim = 16;
    cfg.model.num_classes = 2;

    cfg.synth.seed = seed;
    cfg.synth.input_dim = cfg.model.input_dim;

    const std::size_t n_align =
        static_cast<std::size_t>(cfg.synth.n_majority + cfg.synth.n_minority);

    cfg.align.method = Method::erm;
    cfg.align.eta_theta = 1e-4;
    cfg.align.batch_size = 8;
    cfg.align.total_steps = steps_for_epochs(5, n_align, cfg.align.batch_size);
    cfg.align.seed = derive_seed(seed, "align");

    cfg.hft.method = Method::erm;
    cfg.hft.eta_theta = 3e-5;
    cfg.hft.batch_size = 8;
    cfg.hft.total_steps =
        steps_for_epochs(5, static_cast<std::size_t>(cfg.synth.n_finetune), cfg.hft.batch_size);
    cfg.hft.seed = derive_seed(seed, "hft");

    cfg.vaa = cfg.align;
    cfg.vaa.method = Method::vaa;
    cfg.vaa.eta_q = 0.1;
    cfg.vaa.q_floor = 1e-3;
    cfg.vaa.perturb.alpha = 0.05;
    cfg.vaa.curriculum_mode = CurriculumMode::prob;
    cfg.vaa.curriculum_shape = CurriculumShape::linear;
    cfg.vaa.reward_source = RewardSource::surrogate;
    cfg.vaa.seed = derive_seed(seed, "align");  // paired with the erm alignment

    return cfg;
}

LabeledCorpus alignment_corpus(const LabConfig& cfg) {
    SynthConfig s = cfg.synth;
    s.seed = cfg.seed;
    return gen_alignment_task(s);
}

LabeledCorpus alignment_eval_corpus(const LabConfig& cfg) {
    SynthConfig s = cfg.synth;
    s.seed = derive_seed(cfg.seed, "alignment-eval");
    s.n_majority = std::max(1, cfg.synth.n_majority / 4);
    s.n_minority = std::max(1, cfg.synth.n_minority / 4);
    return gen_alignment_task(s);
}

LabeledCorpus user_task(const LabConfig& cfg, double poison_rate) {
    SynthConfig s = cfg.synth;
    s.seed = derive_seed(cfg.seed, "user-task");
    s.poison_rate = poison_rate;
    return gen_finetune_task(s);
}

LabeledCorpus proxy_task(const LabConfig& cfg, int variant) {
    SynthConfig s = cfg.synth;
    s.seed = derive_seed(cfg.seed, "proxy-task", static_cast<std::uint64_t>(variant));
    s.poison_rate = 0.10;  // grouping protocol: benign proxy plus 10% harmful
    return gen_finetune_task(s);
}

GroupedDataset group_by_cluster(const LabeledCorpus& corpus) {
    std::map<std::string, std::vector<Example>> by_tag;
    for (std::size_t i = 0; i < corpus.examples.size(); ++i) {
        by_tag[corpus.cluster[i]].push_back(corpus.examples[i]);
    }
    GroupedDataset out;
    for (auto& [name, examples] : by_tag) {
        out.group_names.push_back(name);
        out.groups.push_back(std::move(examples));
    }
    return out;
}

std::pair<ParamVector, RunMetrics> run_alignment(const LabConfig& cfg, Method method,
                                                 const LabeledCorpus& alignment,
                                                 const GroupPartition* partition) {
    const ParamVector init = init_params(cfg.model, derive_seed(cfg.seed, "model-init"));
    if (method == Method::erm) {
        TrainerConfig tc = cfg.align;
        tc.method = Method::erm;
        return erm_train(cfg.model, init, alignment.examples, tc);
    }
    if (partition == nullptr) {
        throw ConfigError("method '" + method_name(method) + "' needs a group partition");
    }
    const GroupedDataset groups = group_by_partition(alignment.examples, *partition);
    TrainerConfig tc = cfg.vaa;
    tc.method = method;
    if (method == Method::vaa) {
        return vaa_train(cfg.model, init, groups, tc);
    }
    return heuristic_train(cfg.model, init, groups, tc);
}

AnalyzeResult analyze(const LabConfig& cfg, const ParamVector& aligned_params,
                      const LabeledCorpus& alignment, int variant) {
    const LabeledCorpus proxy = proxy_task(cfg, variant);
    TrainerConfig tc = cfg.hft;
    tc.seed = derive_seed(cfg.seed, "proxy-run", static_cast<std::uint64_t>(variant));
    AnalyzeResult result;
    result.record = simulate_hft(cfg.model, aligned_params, proxy.examples, alignment.examples,
                                 tc, cfg.analyze_eval_every);
    result.partition = partition(result.record);
    return result;
}

std::pair<ParamVector, RunMetrics> attack(const LabConfig& cfg, const ParamVector& aligned_params,
                                          const LabeledCorpus& task, int epochs,
                                          std::uint64_t sweep_index) {
    TrainerConfig tc = cfg.hft;
    tc.method = Method::erm;
    tc.total_steps = steps_for_epochs(epochs, task.examples.size(), tc.batch_size);
    tc.seed = derive_seed(cfg.seed, "attack", sweep_index);
    return erm_train(cfg.model, aligned_params, task.examples, tc);
}

LabEvalResult evaluate_model(const LabConfig& cfg, const ParamVector& params,
                             const LabeledCorpus& user_corpus) {
    const LabeledCorpus align_eval = alignment_eval_corpus(cfg);
    const GroupedDataset align_groups = group_by_cluster(align_eval);
    const EvalReport align_report =
        evaluate(cfg.model, params, align_groups, align_eval.examples, cfg.align.exec);

    // Fine-tune accuracy over the benign portion of the user task. The model
    // has essentially no capacity to memorize these blobs, so the training
    // split doubles as the task-retention measure.
    GroupedDataset benign;
    std::vector<Example> benign_examples;
    for (std::size_t i = 0; i < user_corpus.examples.size(); ++i) {
        if (!user_corpus.examples[i].safety_flag) {
            benign_examples.push_back(user_corpus.examples[i]);
        }
    }
    if (benign_examples.empty()) throw ConfigError("user task has no benign examples");
    benign.groups.push_back(std::move(benign_examples));
    benign.group_names.emplace_back("benign");
    const EvalReport ft_report = evaluate(cfg.model, params, benign, {}, cfg.align.exec);

    LabEvalResult out;
    out.harm_analog = align_report.harm_analog;
    out.finetune_accuracy = ft_report.accuracy;
    out.per_group_loss = align_report.per_group_loss;
    out.per_group_accuracy = align_report.per_group_accuracy;
    out.worst_group_loss = 0.0;
    for (const auto& [name, loss] : out.per_group_loss) {
        out.worst_group_loss = std::max(out.worst_group_loss, loss);
    }
    return out;
}

GroupedDataset mirror_benchmark(std::uint64_t seed, int per_class, int input_dim) {
    if (input_dim < 4) throw ConfigError("mirror benchmark needs input_dim >= 4");
    Rng rng(derive_seed(seed, "mirror"));
    const double margin = 2.0;
    const double sigma = 0.5;
    GroupedDataset out;
    out.group_names = {"left", "right"};
    out.groups.resize(2);
    long long id = 0;
    for (int i = 0; i < 2 * per_class; ++i) {
        const int label = i % 2;
        const double center = label == 0 ? margin : -margin;
        const double c0 = center + sigma * rng.normal();
        const double c1 = sigma * rng.normal();
        Example a;
        a.features.assign(static_cast<std::size_t>(input_dim), 0.0);
        a.features[0] = c0;
        a.features[1] = c1;
        a.label = label;
        a.safety_flag = true;
        a.example_id = id++;
        Example b = a;  // identical pattern in the twin coordinates
        b.features.assign(static_cast<std::size_t>(input_dim), 0.0);
        b.features[2] = c0;
        b.features[3] = c1;
        b.example_id = id++;
        out.groups[0].push_back(std::move(a));
        out.groups[1].push_back(std::move(b));
    }
    return out;
}

GroupPartition corrupt_partition(const GroupPartition& part, double swap_fraction,
                                 std::uint64_t seed) {
    if (swap_fraction < 0.0 || swap_fraction > 1.0) {
        throw ConfigError("swap_fraction must be in [0,1]");
    }
    Rng rng(derive_seed(seed, "partition-noise"));
    GroupPartition out = part;
    std::vector<long long> all;
    all.insert(all.end(), out.vulnerable_ids.begin(), out.vulnerable_ids.end());
    all.insert(all.end(), out.invulnerable_ids.begin(), out.invulnerable_ids.end());
    const std::size_t n_swap =
        static_cast<std::size_t>(std::llround(swap_fraction * static_cast<double>(all.size())));

    // Fisher-Yates prefix to choose distinct ids.
    for (std::size_t i = 0; i < n_swap && i < all.size(); ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(all.size() - i));
        std::swap(all[i], all[j]);
    }
    std::set<long long> moved(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(
                                                             std::min(n_swap, all.size())));
    std::vector<long long> vuln, invuln;
    for (long long v : part.vulnerable_ids) {
        (moved.count(v) ? invuln : vuln).push_back(v);
    }
    for (long long v : part.invulnerable_ids) {
        (moved.count(v) ? vuln : invuln).push_back(v);
    }
    std::sort(vuln.begin(), vuln.end());
    std::sort(invuln.begin(), invuln.end());
    out.vulnerable_ids = std::move(vuln);
    out.invulnerable_ids = std::move(invuln);
    return out;
}

}  // namespace vaalab::lab
