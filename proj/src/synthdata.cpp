#include "vaalab/synthdata.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vaalab/errors.hpp"
#include "vaalab/rng.hpp"
#include <json.hpp>

namespace vaalab {

namespace {

// Alignment cluster directions: the minority shares half its direction with
// the majority, so majority updates help it only partially.
constexpr double kMinorOverlap = 0.5;
// Unsafe-labeled benign cluster leakage into the alignment subspace; this is
// what makes purely benign fine-tuning erode safety margins a little.
constexpr double kBenignLeak = 0.15;

std::vector<double> gaussian_point(Rng& rng, std::span<const double> center, double sigma,
                                   int dim) {
    std::vector<double> x(static_cast<std::size_t>(dim));
    for (int j = 0; j < dim; ++j) {
        const double mu = j < static_cast<int>(center.size()) ? center[j] : 0.0;
        x[static_cast<std::size_t>(j)] = mu + sigma * rng.normal();
    }
    return x;
}

std::vector<double> majority_center(const SynthConfig& cfg) {
    std::vector<double> c(static_cast<std::size_t>(cfg.input_dim), 0.0);
    c[0] = cfg.majority_margin;
    return c;
}

std::vector<double> minority_center(const SynthConfig& cfg) {
    std::vector<double> c(static_cast<std::size_t>(cfg.input_dim), 0.0);
    c[0] = cfg.minority_margin * kMinorOverlap;
    c[1] = cfg.minority_margin * std::sqrt(1.0 - kMinorOverlap * kMinorOverlap);
    return c;
}

// Two orthonormal axes confined to coordinates [2, dim), drawn from the rng.
// Stays clear of the alignment directions e0/e1.
std::pair<std::vector<double>, std::vector<double>> benign_axes(Rng& rng, int dim) {
    const int lo = 2;
    auto draw = [&]() {
        std::vector<double> v(static_cast<std::size_t>(dim), 0.0);
        for (int j = lo; j < dim; ++j) v[static_cast<std::size_t>(j)] = rng.normal();
        return v;
    };
    auto norm = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x * x;
        return std::sqrt(s);
    };
    std::vector<double> a1 = draw();
    double n1 = norm(a1);
    while (n1 < 1e-9) {
        a1 = draw();
        n1 = norm(a1);
    }
    for (auto& x : a1) x /= n1;

    std::vector<double> a2 = draw();
    double dot = 0.0;
    for (std::size_t j = 0; j < a2.size(); ++j) dot += a2[j] * a1[j];
    for (std::size_t j = 0; j < a2.size(); ++j) a2[j] -= dot * a1[j];
    double n2 = norm(a2);
    while (n2 < 1e-9) {
        a2 = draw();
        dot = 0.0;
        for (std::size_t j = 0; j < a2.size(); ++j) dot += a2[j] * a1[j];
        for (std::size_t j = 0; j < a2.size(); ++j) a2[j] -= dot * a1[j];
        n2 = norm(a2);
    }
    for (auto& x : a2) x /= n2;
    return {std::move(a1), std::move(a2)};
}

nlohmann::json config_to_json(const SynthConfig& cfg) {
    nlohmann::json j;
    j["seed"] = cfg.seed;
    j["input_dim"] = cfg.input_dim;
    j["n_majority"] = cfg.n_majority;
    j["n_minority"] = cfg.n_minority;
    j["majority_margin"] = cfg.majority_margin;
    j["minority_margin"] = cfg.minority_margin;
    j["noise_sigma"] = cfg.noise_sigma;
    j["poison_rate"] = cfg.poison_rate;
    j["n_finetune"] = cfg.n_finetune;
    return j;
}

SynthConfig config_from_json(const nlohmann::json& j) {
    SynthConfig cfg;
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.input_dim = j.at("input_dim").get<int>();
    cfg.n_majority = j.at("n_majority").get<int>();
    cfg.n_minority = j.at("n_minority").get<int>();
    cfg.majority_margin = j.at("majority_margin").get<double>();
    cfg.minority_margin = j.at("minority_margin").get<double>();
    cfg.noise_sigma = j.at("noise_sigma").get<double>();
    cfg.poison_rate = j.at("poison_rate").get<double>();
    cfg.n_finetune = j.at("n_finetune").get<int>();
    return cfg;
}

std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc{}) throw IoError("double formatting failed");
    return std::string(buf, ptr);
}

}  // namespace

void SynthConfig::validate() const {
    if (input_dim < 4) throw ConfigError("input_dim must be at least 4");
    if (n_majority <= 0 || n_minority <= 0) throw ConfigError("cluster counts must be positive");
    if (!(majority_margin > 0.0) || !(minority_margin > 0.0)) {
        throw ConfigError("margins must be positive");
    }
    if (!(minority_margin < majority_margin)) {
        throw ConfigError("minority_margin must be smaller than majority_margin");
    }
    if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be non-negative");
    if (poison_rate < 0.0 || poison_rate > 1.0) throw ConfigError("poison_rate must be in [0,1]");
    if (n_finetune <= 0) throw ConfigError("n_finetune must be positive");
}

LabeledCorpus gen_alignment_task(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, "alignment-task"));
    LabeledCorpus corpus;
    corpus.config = cfg;
    corpus.task = "alignment";
    corpus.examples.reserve(static_cast<std::size_t>(cfg.n_majority + cfg.n_minority));

    const auto maj = majority_center(cfg);
    const auto min = minority_center(cfg);
    long long id = 0;
    for (int i = 0; i < cfg.n_majority; ++i) {
        corpus.examples.push_back(
            {gaussian_point(rng, maj, cfg.noise_sigma, cfg.input_dim), kSafeClass, true, id++});
        corpus.cluster.emplace_back("majority");
    }
    for (int i = 0; i < cfg.n_minority; ++i) {
        corpus.examples.push_back(
            {gaussian_point(rng, min, cfg.noise_sigma, cfg.input_dim), kSafeClass, true, id++});
        corpus.cluster.emplace_back("minority");
    }
    return corpus;
}

LabeledCorpus gen_finetune_task(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, "finetune-task"));
    LabeledCorpus corpus;
    corpus.config = cfg;
    corpus.task = "finetune";

    const int n_harmful = static_cast<int>(std::llround(cfg.poison_rate * cfg.n_finetune));
    const int n_benign = cfg.n_finetune - n_harmful;
    const int n_a = n_benign / 2;
    const int n_b = n_benign - n_a;

    auto [a1, a2] = benign_axes(rng, cfg.input_dim);
    const double scale = cfg.majority_margin;
    std::vector<double> center_a(a1);
    for (auto& x : center_a) x *= scale;
    // The unsafe-labeled cluster leans slightly into the alignment subspace.
    std::vector<double> center_b(static_cast<std::size_t>(cfg.input_dim), 0.0);
    const double keep = std::sqrt(1.0 - 2.0 * kBenignLeak * kBenignLeak);
    for (std::size_t j = 0; j < center_b.size(); ++j) center_b[j] = keep * a2[j];
    center_b[0] += kBenignLeak;
    center_b[1] += kBenignLeak;
    for (auto& x : center_b) x *= scale;

    long long id = 0;
    for (int i = 0; i < n_a; ++i) {
        corpus.examples.push_back(
            {gaussian_point(rng, center_a, cfg.noise_sigma, cfg.input_dim), kSafeClass, false,
             id++});
        corpus.cluster.emplace_back("benign_a");
    }
    for (int i = 0; i < n_b; ++i) {
        corpus.examples.push_back(
            {gaussian_point(rng, center_b, cfg.noise_sigma, cfg.input_dim), kUnsafeClass, false,
             id++});
        corpus.cluster.emplace_back("benign_b");
    }
    // Harmful examples alternate between the two alignment clusters and pair
    // safety-relevant inputs with the unsafe label.
    const auto maj = majority_center(cfg);
    const auto min = minority_center(cfg);
    for (int i = 0; i < n_harmful; ++i) {
        const auto& center = (i % 2 == 0) ? min : maj;
        corpus.examples.push_back(
            {gaussian_point(rng, center, cfg.noise_sigma, cfg.input_dim), kUnsafeClass, true,
             id++});
        corpus.cluster.emplace_back("harmful");
    }
    return corpus;
}

void write_corpus(const std::filesystem::path& path, const LabeledCorpus& corpus) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open corpus for writing: " + path.string());
    nlohmann::json header;
    header["generator"] = kGeneratorVersion;
    header["task"] = corpus.task;
    header["config"] = config_to_json(corpus.config);
    os << "vaalab-corpus 1 " << header.dump() << '\n';
    for (std::size_t i = 0; i < corpus.examples.size(); ++i) {
        const Example& ex = corpus.examples[i];
        os << ex.example_id << ' ' << (ex.safety_flag ? 1 : 0) << ' ' << ex.label;
        for (double f : ex.features) os << ' ' << format_double(f);
        os << ' ' << corpus.cluster[i] << '\n';
    }
    if (!os) throw IoError("write failed: " + path.string());
}

LabeledCorpus read_corpus(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open corpus: " + path.string());
    std::string line;
    if (!std::getline(is, line)) throw ParseError("corpus is empty", 1);

    std::istringstream head(line);
    std::string tag;
    int version = 0;
    head >> tag >> version;
    if (tag != "vaalab-corpus") throw ParseError("not a corpus file (bad header tag)", 1);
    if (version != 1) {
        throw ParseError("incompatible corpus version " + std::to_string(version), 1);
    }
    std::string json_part;
    std::getline(head, json_part);
    nlohmann::json header = nlohmann::json::parse(json_part, nullptr, false);
    if (header.is_discarded()) throw ParseError("corpus header JSON is malformed", 1);

    LabeledCorpus corpus;
    corpus.task = header.at("task").get<std::string>();
    corpus.config = config_from_json(header.at("config"));
    const int dim = corpus.config.input_dim;

    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        Example ex;
        int flag = 0;
        if (!(ls >> ex.example_id >> flag >> ex.label)) {
            throw ParseError("malformed example prefix", line_no);
        }
        ex.safety_flag = flag != 0;
        ex.features.resize(static_cast<std::size_t>(dim));
        for (int j = 0; j < dim; ++j) {
            std::string tok;
            if (!(ls >> tok)) throw ParseError("truncated feature list", line_no);
            double v = 0.0;
            auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
            if (ec != std::errc{} || ptr != tok.data() + tok.size()) {
                throw ParseError("bad feature value '" + tok + "'", line_no);
            }
            ex.features[static_cast<std::size_t>(j)] = v;
        }
        std::string cluster;
        if (!(ls >> cluster)) throw ParseError("missing cluster tag", line_no);
        corpus.examples.push_back(std::move(ex));
        corpus.cluster.push_back(std::move(cluster));
    }
    return corpus;
}

}  // namespace vaalab
