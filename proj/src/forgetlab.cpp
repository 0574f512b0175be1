#include "vaalab/forgetlab.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include "vaalab/errors.hpp"
#include <json.hpp>

namespace vaalab {

namespace {

void record_hs_column(const ModelSpec& spec, const ParamVector& params,
                      std::span<const Example> alignment_data, std::vector<std::uint8_t>& column,
                      Exec exec) {
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(alignment_data.size());
#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const Example& ex = alignment_data[static_cast<std::size_t>(i)];
        column[static_cast<std::size_t>(i)] =
            predict(spec, params, ex.features) != ex.label ? 1 : 0;
    }
}

}  // namespace

ForgettingRecord simulate_hft(const ModelSpec& spec, const ParamVector& aligned_params,
                              std::span<const Example> finetune_data,
                              std::span<const Example> alignment_data,
                              const TrainerConfig& hft_cfg, long long eval_every, Exec exec) {
    spec.validate();
    // total_steps = 0 is allowed here (baseline column only), so the trainer
    // config is checked field by field.
    if (!(hft_cfg.eta_theta > 0.0)) throw ConfigError("eta_theta must be positive");
    if (hft_cfg.batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (hft_cfg.total_steps < 0) throw ConfigError("total_steps must be non-negative");
    if (eval_every < 1) throw ConfigError("eval_every must be at least 1");
    if (alignment_data.empty()) throw ConfigError("alignment_data is empty");
    if (finetune_data.empty() && hft_cfg.total_steps > 0) {
        throw ConfigError("finetune_data is empty");
    }

    const long long total = hft_cfg.total_steps;
    std::vector<long long> eval_steps{0};
    for (long long s = eval_every; s <= total; s += eval_every) eval_steps.push_back(s);
    if (eval_steps.back() != total) eval_steps.push_back(total);

    ForgettingRecord record;
    record.cols = eval_steps.size();
    record.eval_steps = eval_steps;
    record.example_ids.reserve(alignment_data.size());
    for (const Example& ex : alignment_data) record.example_ids.push_back(ex.example_id);
    record.hs.assign(alignment_data.size() * record.cols, 0);

    nlohmann::json prov;
    prov["proxy_seed"] = hft_cfg.seed;
    prov["steps"] = total;
    prov["eval_every"] = eval_every;
    record.provenance = prov.dump();

    std::vector<std::uint8_t> column(alignment_data.size(), 0);
    auto store_column = [&](std::size_t col) {
        for (std::size_t i = 0; i < alignment_data.size(); ++i) {
            record.hs[i * record.cols + col] = column[i];
        }
    };

    ParamVector theta = aligned_params;
    record_hs_column(spec, theta, alignment_data, column, exec);
    store_column(0);

    if (total == 0) return record;  // degenerate: baseline only

    Rng rng(derive_seed(hft_cfg.seed, "hft"));
    Batch batch;
    batch.items.resize(static_cast<std::size_t>(hft_cfg.batch_size));
    std::size_t next_col = 1;
    for (long long t = 1; t <= total; ++t) {
        for (int b = 0; b < hft_cfg.batch_size; ++b) {
            batch.items[static_cast<std::size_t>(b)] =
                &finetune_data[rng.below(finetune_data.size())];
        }
        ParamVector g;
        try {
            g = grad(spec, theta, batch, exec);
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " (fine-tuning step " + std::to_string(t) +
                                   ")",
                               e.example_id, t);
        }
        for (std::size_t j = 0; j < theta.values.size(); ++j) {
            theta.values[j] -= hft_cfg.eta_theta * g.values[j];
        }
        if (next_col < eval_steps.size() && t == eval_steps[next_col]) {
            record_hs_column(spec, theta, alignment_data, column, exec);
            store_column(next_col);
            ++next_col;
        }
    }
    return record;
}

int forgot_num(const ForgettingRecord& record, long long example_id) {
    auto it = std::find(record.example_ids.begin(), record.example_ids.end(), example_id);
    if (it == record.example_ids.end()) {
        throw DomainError("unknown example id " + std::to_string(example_id));
    }
    const std::size_t row = static_cast<std::size_t>(it - record.example_ids.begin());
    const std::uint8_t baseline = record.at(row, 0);
    int count = 0;
    for (std::size_t t = 1; t < record.cols; ++t) {
        if (record.at(row, t) > baseline) ++count;
    }
    return count;
}

GroupPartition partition(const ForgettingRecord& record) {
    GroupPartition part;
    part.source = record.provenance;
    for (std::size_t row = 0; row < record.example_ids.size(); ++row) {
        const std::uint8_t baseline = record.at(row, 0);
        int count = 0;
        for (std::size_t t = 1; t < record.cols; ++t) {
            if (record.at(row, t) > baseline) ++count;
        }
        const long long id = record.example_ids[row];
        part.forgot_nums[id] = count;
        (count > 0 ? part.vulnerable_ids : part.invulnerable_ids).push_back(id);
    }
    std::sort(part.vulnerable_ids.begin(), part.vulnerable_ids.end());
    std::sort(part.invulnerable_ids.begin(), part.invulnerable_ids.end());
    return part;
}

std::vector<long long> forgotten_ids(const ForgettingRecord& record) {
    return partition(record).vulnerable_ids;
}

namespace {

std::set<long long> intersect_all(const ForgetSets& sets) {
    if (sets.sets.empty()) throw DomainError("no forgetting sets given");
    std::set<long long> common = sets.sets.front();
    for (std::size_t j = 1; j < sets.sets.size(); ++j) {
        std::set<long long> next;
        std::set_intersection(common.begin(), common.end(), sets.sets[j].begin(),
                              sets.sets[j].end(), std::inserter(next, next.begin()));
        common = std::move(next);
    }
    return common;
}

}  // namespace

double common_forgot(const ForgetSets& sets) {
    if (sets.n_total <= 0) throw DomainError("alignment set size must be positive");
    return static_cast<double>(intersect_all(sets).size()) / static_cast<double>(sets.n_total);
}

std::optional<double> common_forgot_ratio(const ForgetSets& sets) {
    if (sets.sets.empty()) throw DomainError("no forgetting sets given");
    std::size_t smallest = sets.sets.front().size();
    for (const auto& s : sets.sets) smallest = std::min(smallest, s.size());
    if (smallest == 0) return std::nullopt;
    return static_cast<double>(intersect_all(sets).size()) / static_cast<double>(smallest);
}

std::vector<LandscapeCurve> landscape_probe(const ModelSpec& spec, const ParamVector& params,
                                            const GroupedDataset& data_by_group,
                                            std::span<const double> magnitudes,
                                            int directions_per_magnitude, ProbeMode mode, Rng& rng,
                                            Exec exec) {
    spec.validate();
    data_by_group.validate();
    if (magnitudes.empty()) throw ConfigError("no probe magnitudes given");
    for (std::size_t i = 0; i < magnitudes.size(); ++i) {
        if (magnitudes[i] < 0.0) throw ConfigError("probe magnitudes must be non-negative");
        if (i > 0 && magnitudes[i] < magnitudes[i - 1]) {
            throw ConfigError("probe magnitudes must be sorted ascending");
        }
    }
    if (mode == ProbeMode::random && directions_per_magnitude < 1) {
        throw ConfigError("directions_per_magnitude must be at least 1");
    }
    const std::size_t n_params = params.values.size();
    const std::size_t n_mag = magnitudes.size();

    std::vector<LandscapeCurve> curves;
    for (std::size_t g = 0; g < data_by_group.groups.size(); ++g) {
        const Batch full = Batch::of(data_by_group.groups[g]);
        const double base = forward_loss(spec, params, full, exec);

        std::size_t n_dirs = mode == ProbeMode::random
                                 ? static_cast<std::size_t>(directions_per_magnitude)
                                 : 1;
        // Directions are drawn (or derived) up front so the evaluation loop
        // can run in parallel without touching the rng.
        std::vector<double> dirs(n_mag * n_dirs * n_params);
        if (mode == ProbeMode::random) {
            for (std::size_t k = 0; k < n_mag * n_dirs; ++k) {
                double* d = dirs.data() + k * n_params;
                double norm_sq = 0.0;
                for (std::size_t j = 0; j < n_params; ++j) {
                    d[j] = rng.normal();
                    norm_sq += d[j] * d[j];
                }
                const double inv = 1.0 / std::sqrt(norm_sq);
                for (std::size_t j = 0; j < n_params; ++j) d[j] *= inv;
            }
        } else {
            const ParamVector gvec = grad(spec, params, full, exec);
            double norm_sq = 0.0;
            for (double v : gvec.values) norm_sq += v * v;
            const double inv = norm_sq > 0.0 ? 1.0 / std::sqrt(norm_sq) : 0.0;
            for (std::size_t mi = 0; mi < n_mag; ++mi) {
                double* d = dirs.data() + mi * n_params;
                for (std::size_t j = 0; j < n_params; ++j) d[j] = inv * gvec.values[j];
            }
        }

        std::vector<double> delta(n_mag * n_dirs, 0.0);
        const std::ptrdiff_t tasks = static_cast<std::ptrdiff_t>(n_mag * n_dirs);
#pragma omp parallel if (exec == Exec::parallel)
        {
            ParamVector shifted = params;
#pragma omp for schedule(static)
            for (std::ptrdiff_t k = 0; k < tasks; ++k) {
                const std::size_t mi = static_cast<std::size_t>(k) / n_dirs;
                const double* d = dirs.data() + static_cast<std::size_t>(k) * n_params;
                const double a = magnitudes[mi];
                for (std::size_t j = 0; j < n_params; ++j) {
                    shifted.values[j] = params.values[j] + a * d[j];
                }
                delta[static_cast<std::size_t>(k)] =
                    forward_loss(spec, shifted, full, Exec::serial) - base;
            }
        }

        LandscapeCurve curve;
        curve.group = data_by_group.group_names[g];
        curve.magnitudes.assign(magnitudes.begin(), magnitudes.end());
        curve.mean_delta.resize(n_mag);
        curve.std_delta.resize(n_mag);
        for (std::size_t mi = 0; mi < n_mag; ++mi) {
            double mean = 0.0;
            for (std::size_t di = 0; di < n_dirs; ++di) mean += delta[mi * n_dirs + di];
            mean /= static_cast<double>(n_dirs);
            double var = 0.0;
            for (std::size_t di = 0; di < n_dirs; ++di) {
                const double dev = delta[mi * n_dirs + di] - mean;
                var += dev * dev;
            }
            curve.mean_delta[mi] = mean;
            curve.std_delta[mi] =
                n_dirs > 1 ? std::sqrt(var / static_cast<double>(n_dirs - 1)) : 0.0;
        }
        curves.push_back(std::move(curve));
    }
    return curves;
}

// ---------------------------------------------------------------------------
// artifacts

void write_forgetting_csv(const std::filesystem::path& path, const ForgettingRecord& record) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open csv for writing: " + path.string());
    os << "example_id";
    for (std::size_t t = 0; t < record.cols; ++t) os << ",hs_" << t;
    os << ",forgot_num\n";
    for (std::size_t row = 0; row < record.example_ids.size(); ++row) {
        os << record.example_ids[row];
        const std::uint8_t baseline = record.at(row, 0);
        int count = 0;
        for (std::size_t t = 0; t < record.cols; ++t) {
            os << ',' << static_cast<int>(record.at(row, t));
            if (t > 0 && record.at(row, t) > baseline) ++count;
        }
        os << ',' << count << '\n';
    }
    if (!os) throw IoError("write failed: " + path.string());
}

std::string forgetting_summary_json(const ForgettingRecord& record) {
    const GroupPartition part = partition(record);
    long long forgot_total = 0;
    for (const auto& [id, n] : part.forgot_nums) forgot_total += n;
    nlohmann::json j;
    j["n_examples"] = record.example_ids.size();
    j["n_eval_points"] = record.cols;
    j["eval_steps"] = record.eval_steps;
    j["n_vulnerable"] = part.vulnerable_ids.size();
    j["n_invulnerable"] = part.invulnerable_ids.size();
    j["forgetting_rate"] = record.example_ids.empty()
                               ? 0.0
                               : static_cast<double>(part.vulnerable_ids.size()) /
                                     static_cast<double>(record.example_ids.size());
    j["mean_forgot_num"] = record.example_ids.empty()
                               ? 0.0
                               : static_cast<double>(forgot_total) /
                                     static_cast<double>(record.example_ids.size());
    j["provenance"] = nlohmann::json::parse(record.provenance);
    return j.dump(2) + "\n";
}

void write_partition(const std::filesystem::path& path, const GroupPartition& part) {
    nlohmann::json j;
    j["vulnerable"] = part.vulnerable_ids;
    j["invulnerable"] = part.invulnerable_ids;
    nlohmann::json nums = nlohmann::json::object();
    for (const auto& [id, n] : part.forgot_nums) nums[std::to_string(id)] = n;
    j["forgot_nums"] = nums;
    j["source"] = part.source.empty() ? nlohmann::json::object()
                                      : nlohmann::json::parse(part.source);
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open partition for writing: " + path.string());
    os << j.dump(2) << '\n';
    if (!os) throw IoError("write failed: " + path.string());
}

GroupPartition read_partition(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open partition: " + path.string());
    nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
    if (j.is_discarded()) throw ParseError("partition file is not valid JSON");
    GroupPartition part;
    try {
        part.vulnerable_ids = j.at("vulnerable").get<std::vector<long long>>();
        part.invulnerable_ids = j.at("invulnerable").get<std::vector<long long>>();
        for (const auto& [key, value] : j.at("forgot_nums").items()) {
            part.forgot_nums[std::stoll(key)] = value.get<int>();
        }
        part.source = j.at("source").dump();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("partition file missing fields: ") + e.what());
    }
    return part;
}

GroupedDataset group_by_partition(std::span<const Example> alignment_data,
                                  const GroupPartition& part) {
    std::unordered_set<long long> vulnerable(part.vulnerable_ids.begin(),
                                             part.vulnerable_ids.end());
    std::unordered_set<long long> invulnerable(part.invulnerable_ids.begin(),
                                               part.invulnerable_ids.end());
    GroupedDataset out;
    std::vector<Example> vuln, invuln;
    for (const Example& ex : alignment_data) {
        if (vulnerable.count(ex.example_id)) {
            vuln.push_back(ex);
        } else if (invulnerable.count(ex.example_id)) {
            invuln.push_back(ex);
        } else {
            throw ConfigError("example id " + std::to_string(ex.example_id) +
                              " is missing from the partition");
        }
    }
    if (!vuln.empty()) {
        out.groups.push_back(std::move(vuln));
        out.group_names.emplace_back("vulnerable");
    }
    if (!invuln.empty()) {
        out.groups.push_back(std::move(invuln));
        out.group_names.emplace_back("invulnerable");
    }
    return out;
}

}  // namespace vaalab
