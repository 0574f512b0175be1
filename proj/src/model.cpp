#include "vaalab/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "vaalab/rng.hpp"
#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace vaalab {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

// Block width for the ordered parallel reduction. Fixed independently of the
// thread count so sums associate the same way on every machine.
constexpr std::size_t kBlock = 64;

std::string kind_name(ModelKind k) {
    return k == ModelKind::linear_softmax ? "linear-softmax" : "mlp-1hidden";
}

std::string activation_name(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

void check_params(const ModelSpec& spec, const ParamVector& params) {
    if (static_cast<int>(params.values.size()) != spec.param_count()) {
        throw LayoutError("parameter vector has " + std::to_string(params.values.size()) +
                          " entries, layout " + spec.layout_id() + " needs " +
                          std::to_string(spec.param_count()));
    }
    if (!params.layout_id.empty() && params.layout_id != spec.layout_id()) {
        throw LayoutError("parameter layout '" + params.layout_id + "' does not match spec '" +
                          spec.layout_id() + "'");
    }
}

void check_batch(const ModelSpec& spec, const Batch& batch) {
    if (batch.items.empty()) throw LayoutError("batch is empty");
    for (const Example* ex : batch.items) {
        if (static_cast<int>(ex->features.size()) != spec.input_dim) {
            throw LayoutError("example " + std::to_string(ex->example_id) + " has " +
                              std::to_string(ex->features.size()) + " features, expected " +
                              std::to_string(spec.input_dim));
        }
        if (ex->label < 0 || ex->label >= spec.num_classes) {
            throw LayoutError("example " + std::to_string(ex->example_id) +
                              " label out of range");
        }
    }
}

// log(sum exp(z)) with max subtraction; fills probs with softmax(z).
double log_sum_exp(std::span<const double> z, std::span<double> probs) {
    double zmax = z[0];
    for (double v : z) zmax = std::max(zmax, v);
    double sum = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) {
        probs[k] = std::exp(z[k] - zmax);
        sum += probs[k];
    }
    for (auto& p : probs) p /= sum;
    return zmax + std::log(sum);
}

void logits_linear(const ModelSpec& spec, std::span<const double> p,
                   std::span<const double> x, std::span<double> z) {
    const int d = spec.input_dim;
    const int k = spec.num_classes;
    const double* bias = p.data() + static_cast<std::size_t>(k) * d;
    for (int c = 0; c < k; ++c) {
        const double* row = p.data() + static_cast<std::size_t>(c) * d;
        double acc = bias[c];
        for (int j = 0; j < d; ++j) acc += row[j] * x[j];
        z[c] = acc;
    }
}

struct Mlp1Offsets {
    std::size_t w1, b1, w2, b2;
};

Mlp1Offsets mlp1_offsets(const ModelSpec& spec) {
    const std::size_t hd = static_cast<std::size_t>(spec.hidden_dim) * spec.input_dim;
    const std::size_t h = spec.hidden_dim;
    const std::size_t kh = static_cast<std::size_t>(spec.num_classes) * spec.hidden_dim;
    return {0, hd, hd + h, hd + h + kh};
}

void forward_mlp1(const ModelSpec& spec, std::span<const double> p, std::span<const double> x,
                  std::span<double> pre, std::span<double> hidden, std::span<double> z) {
    const auto off = mlp1_offsets(spec);
    const int d = spec.input_dim;
    const int h = spec.hidden_dim;
    const int k = spec.num_classes;
    for (int i = 0; i < h; ++i) {
        const double* row = p.data() + off.w1 + static_cast<std::size_t>(i) * d;
        double acc = p[off.b1 + i];
        for (int j = 0; j < d; ++j) acc += row[j] * x[j];
        pre[i] = acc;
        hidden[i] = spec.activation == Activation::tanh ? std::tanh(acc) : std::max(0.0, acc);
    }
    for (int c = 0; c < k; ++c) {
        const double* row = p.data() + off.w2 + static_cast<std::size_t>(c) * h;
        double acc = p[off.b2 + c];
        for (int i = 0; i < h; ++i) acc += row[i] * hidden[i];
        z[c] = acc;
    }
}

[[noreturn]] void throw_non_finite(long long example_id) {
    throw NumericError("non-finite loss while evaluating example " + std::to_string(example_id),
                       example_id);
}

}  // namespace

void ModelSpec::validate() const {
    if (input_dim <= 0) throw ConfigError("input_dim must be positive");
    if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
    if (kind == ModelKind::mlp1 && hidden_dim <= 0) {
        throw ConfigError("hidden_dim must be positive for mlp-1hidden");
    }
}

int ModelSpec::param_count() const {
    if (kind == ModelKind::linear_softmax) return num_classes * input_dim + num_classes;
    return hidden_dim * input_dim + hidden_dim + num_classes * hidden_dim + num_classes;
}

std::string ModelSpec::layout_id() const {
    std::string id = kind_name(kind) + ":d" + std::to_string(input_dim);
    if (kind == ModelKind::mlp1) {
        id += ":h" + std::to_string(hidden_dim);
    }
    id += ":k" + std::to_string(num_classes);
    if (kind == ModelKind::mlp1) {
        id += ":" + activation_name(activation);
    }
    return id;
}

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(derive_seed(seed, "init"));
    ParamVector p;
    p.layout_id = spec.layout_id();
    p.values.resize(spec.param_count());
    for (auto& v : p.values) v = rng.uniform(-0.1, 0.1);
    return p;
}

ParamVector zero_params(const ModelSpec& spec) {
    spec.validate();
    return ParamVector{std::vector<double>(spec.param_count(), 0.0), spec.layout_id()};
}

namespace detail {

void Workspace::resize(const ModelSpec& spec) {
    if (spec.kind == ModelKind::mlp1) {
        pre.resize(spec.hidden_dim);
        hidden.resize(spec.hidden_dim);
    }
    probs.resize(spec.num_classes);
    logits.resize(spec.num_classes);
}

double example_loss(const ModelSpec& spec, std::span<const double> p, const Example& ex,
                    Workspace& ws) {
    std::span<double> z(ws.logits);
    if (spec.kind == ModelKind::linear_softmax) {
        logits_linear(spec, p, ex.features, z);
    } else {
        forward_mlp1(spec, p, ex.features, ws.pre, ws.hidden, z);
    }
    const double lse = log_sum_exp(z, ws.probs);
    const double loss = lse - z[ex.label];
    if (!std::isfinite(loss)) throw_non_finite(ex.example_id);
    return loss;
}

double example_loss_grad(const ModelSpec& spec, std::span<const double> p, const Example& ex,
                         Workspace& ws, std::span<double> g) {
    std::span<double> z(ws.logits);
    const int d = spec.input_dim;
    const int k = spec.num_classes;
    const auto& x = ex.features;

    if (spec.kind == ModelKind::linear_softmax) {
        logits_linear(spec, p, ex.features, z);
        const double lse = log_sum_exp(z, ws.probs);
        const double loss = lse - z[ex.label];
        if (!std::isfinite(loss)) throw_non_finite(ex.example_id);
        double* gw = g.data();
        double* gb = g.data() + static_cast<std::size_t>(k) * d;
        for (int c = 0; c < k; ++c) {
            const double dz = ws.probs[c] - (c == ex.label ? 1.0 : 0.0);
            double* row = gw + static_cast<std::size_t>(c) * d;
            for (int j = 0; j < d; ++j) row[j] += dz * x[j];
            gb[c] += dz;
        }
        return loss;
    }

    const int h = spec.hidden_dim;
    const auto off = mlp1_offsets(spec);
    forward_mlp1(spec, p, ex.features, ws.pre, ws.hidden, z);
    const double lse = log_sum_exp(z, ws.probs);
    const double loss = lse - z[ex.label];
    if (!std::isfinite(loss)) throw_non_finite(ex.example_id);

    for (int c = 0; c < k; ++c) {
        const double dz = ws.probs[c] - (c == ex.label ? 1.0 : 0.0);
        double* row = g.data() + off.w2 + static_cast<std::size_t>(c) * h;
        for (int i = 0; i < h; ++i) row[i] += dz * ws.hidden[i];
        g[off.b2 + c] += dz;
    }
    for (int i = 0; i < h; ++i) {
        double dh = 0.0;
        for (int c = 0; c < k; ++c) {
            const double dz = ws.probs[c] - (c == ex.label ? 1.0 : 0.0);
            dh += dz * p[off.w2 + static_cast<std::size_t>(c) * h + i];
        }
        const double da = spec.activation == Activation::tanh
                              ? dh * (1.0 - ws.hidden[i] * ws.hidden[i])
                              : (ws.pre[i] > 0.0 ? dh : 0.0);
        double* row = g.data() + off.w1 + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) row[j] += da * x[j];
        g[off.b1 + i] += da;
    }
    return loss;
}

}  // namespace detail

namespace {

// Shared batch driver. Serial mode walks examples in order; parallel mode
// accumulates fixed blocks concurrently and reduces them in block order.
// want_grad selects between pure forward and forward+backward.
std::pair<double, std::vector<double>> batch_reduce(const ModelSpec& spec,
                                                    const ParamVector& params, const Batch& batch,
                                                    bool want_grad, Exec exec) {
    check_params(spec, params);
    check_batch(spec, batch);
    const std::size_t n = batch.size();
    const std::size_t n_params = want_grad ? params.values.size() : 0;
    std::span<const double> p(params.values);

    if (exec == Exec::serial) {
        detail::Workspace ws;
        ws.resize(spec);
        double loss_sum = 0.0;
        std::vector<double> grad_sum(n_params, 0.0);
        for (const Example* ex : batch.items) {
            loss_sum += want_grad ? detail::example_loss_grad(spec, p, *ex, ws, grad_sum)
                                  : detail::example_loss(spec, p, *ex, ws);
        }
        for (auto& g : grad_sum) g /= static_cast<double>(n);
        return {loss_sum / static_cast<double>(n), std::move(grad_sum)};
    }

    const std::size_t n_blocks = (n + kBlock - 1) / kBlock;
    std::vector<double> block_loss(n_blocks, 0.0);
    std::vector<double> block_grad(n_blocks * n_params, 0.0);
    std::vector<long long> failed(n_blocks, -1);

#pragma omp parallel
    {
        detail::Workspace ws;
        ws.resize(spec);
#pragma omp for schedule(static)
        for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(n_blocks); ++b) {
            const std::size_t lo = static_cast<std::size_t>(b) * kBlock;
            const std::size_t hi = std::min(lo + kBlock, n);
            std::span<double> g(block_grad.data() + static_cast<std::size_t>(b) * n_params,
                                n_params);
            double s = 0.0;
            for (std::size_t i = lo; i < hi; ++i) {
                const Example* ex = batch.items[i];
                try {
                    s += want_grad ? detail::example_loss_grad(spec, p, *ex, ws, g)
                                   : detail::example_loss(spec, p, *ex, ws);
                } catch (const NumericError&) {
                    failed[b] = ex->example_id;
                    break;
                }
            }
            block_loss[b] = s;
        }
    }

    for (std::size_t b = 0; b < n_blocks; ++b) {
        if (failed[b] >= 0) throw_non_finite(failed[b]);
    }

    double loss_sum = 0.0;
    for (double s : block_loss) loss_sum += s;
    std::vector<double> grad_sum(n_params, 0.0);
    for (std::size_t b = 0; b < n_blocks; ++b) {
        const double* g = block_grad.data() + b * n_params;
        for (std::size_t j = 0; j < n_params; ++j) grad_sum[j] += g[j];
    }
    for (auto& g : grad_sum) g /= static_cast<double>(n);
    return {loss_sum / static_cast<double>(n), std::move(grad_sum)};
}

}  // namespace

double forward_loss(const ModelSpec& spec, const ParamVector& params, const Batch& batch,
                    Exec exec) {
    return batch_reduce(spec, params, batch, false, exec).first;
}

ParamVector grad(const ModelSpec& spec, const ParamVector& params, const Batch& batch, Exec exec) {
    auto [loss, g] = batch_reduce(spec, params, batch, true, exec);
    (void)loss;
    return ParamVector{std::move(g), spec.layout_id()};
}

std::pair<double, ParamVector> loss_and_grad(const ModelSpec& spec, const ParamVector& params,
                                             const Batch& batch, Exec exec) {
    auto [loss, g] = batch_reduce(spec, params, batch, true, exec);
    return {loss, ParamVector{std::move(g), spec.layout_id()}};
}

int predict(const ModelSpec& spec, const ParamVector& params, std::span<const double> features) {
    check_params(spec, params);
    if (static_cast<int>(features.size()) != spec.input_dim) {
        throw LayoutError("feature vector has " + std::to_string(features.size()) +
                          " entries, expected " + std::to_string(spec.input_dim));
    }
    detail::Workspace ws;
    ws.resize(spec);
    std::span<double> z(ws.logits);
    if (spec.kind == ModelKind::linear_softmax) {
        logits_linear(spec, std::span<const double>(params.values), features, z);
    } else {
        forward_mlp1(spec, std::span<const double>(params.values), features, ws.pre, ws.hidden, z);
    }
    int best = 0;
    for (int c = 1; c < spec.num_classes; ++c) {
        if (z[c] > z[best]) best = c;
    }
    return best;
}

ParamVector finite_diff_grad(const ModelSpec& spec, const ParamVector& params, const Batch& batch,
                             double h, Exec exec) {
    if (!(h > 0.0)) throw DomainError("finite difference step must be positive");
    check_params(spec, params);
    check_batch(spec, batch);
    const std::size_t n_params = params.values.size();
    std::vector<double> out(n_params, 0.0);
    const double n = static_cast<double>(batch.size());

#pragma omp parallel if (exec == Exec::parallel)
    {
        std::vector<double> p = params.values;  // private copy per thread
        detail::Workspace ws;
        ws.resize(spec);
        auto batch_loss = [&]() {
            double s = 0.0;
            for (const Example* ex : batch.items) {
                s += detail::example_loss(spec, std::span<const double>(p), *ex, ws);
            }
            return s / n;
        };
#pragma omp for schedule(static)
        for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(n_params); ++j) {
            const double orig = p[j];
            p[j] = orig + h;
            const double up = batch_loss();
            p[j] = orig - h;
            const double down = batch_loss();
            p[j] = orig;
            out[j] = (up - down) / (2.0 * h);
        }
    }
    return ParamVector{std::move(out), spec.layout_id()};
}

// ---------------------------------------------------------------------------
// checkpoint io

namespace {

ModelKind kind_from_name(const std::string& s) {
    if (s == "linear-softmax") return ModelKind::linear_softmax;
    if (s == "mlp-1hidden") return ModelKind::mlp1;
    throw ParseError("unknown model kind '" + s + "'");
}

Activation activation_from_name(const std::string& s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    throw ParseError("unknown activation '" + s + "'");
}

void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw ParseError("checkpoint truncated while reading length field");
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelSpec& spec,
                     const ParamVector& params) {
    spec.validate();
    check_params(spec, params);
    nlohmann::json header;
    header["kind"] = kind_name(spec.kind);
    header["input_dim"] = spec.input_dim;
    header["num_classes"] = spec.num_classes;
    if (spec.kind == ModelKind::mlp1) {
        header["hidden_dim"] = spec.hidden_dim;
        header["activation"] = activation_name(spec.activation);
    }
    header["layout_id"] = spec.layout_id();
    const std::string header_str = header.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());
    os.write("VAA1", 4);
    write_u32(os, static_cast<std::uint32_t>(header_str.size()));
    os.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    write_u32(os, static_cast<std::uint32_t>(params.values.size()));
    os.write(reinterpret_cast<const char*>(params.values.data()),
             static_cast<std::streamsize>(params.values.size() * sizeof(double)));
    if (!os) throw IoError("write failed: " + path.string());
}

std::pair<ModelSpec, ParamVector> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "VAA1", 4) != 0) {
        throw ParseError("bad checkpoint magic in " + path.string());
    }
    const std::uint32_t header_len = read_u32(is);
    std::string header_str(header_len, '\0');
    is.read(header_str.data(), header_len);
    if (!is) throw ParseError("checkpoint truncated while reading header");

    nlohmann::json header = nlohmann::json::parse(header_str, nullptr, false);
    if (header.is_discarded()) throw ParseError("checkpoint header is not valid JSON");

    ModelSpec spec;
    spec.kind = kind_from_name(header.at("kind").get<std::string>());
    spec.input_dim = header.at("input_dim").get<int>();
    spec.num_classes = header.at("num_classes").get<int>();
    if (spec.kind == ModelKind::mlp1) {
        spec.hidden_dim = header.at("hidden_dim").get<int>();
        spec.activation = activation_from_name(header.at("activation").get<std::string>());
    }
    spec.validate();
    const std::string layout = header.at("layout_id").get<std::string>();
    if (layout != spec.layout_id()) {
        throw ParseError("checkpoint layout_id '" + layout + "' does not match spec fields");
    }

    const std::uint32_t count = read_u32(is);
    if (static_cast<int>(count) != spec.param_count()) {
        throw ParseError("checkpoint parameter count does not match layout");
    }
    ParamVector params;
    params.layout_id = layout;
    params.values.resize(count);
    is.read(reinterpret_cast<char*>(params.values.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!is) throw ParseError("checkpoint truncated while reading parameters");
    return {spec, std::move(params)};
}

}  // namespace vaalab
