#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vaalab/errors.hpp"

// Small differentiable models with hand-derived gradients: a linear softmax
// classifier and a one-hidden-layer MLP. All arithmetic is in 64-bit reals;
// every gradient is checkable against central finite differences.
//
// The batch kernels exist in two interchangeable flavours selected by Exec:
// a serial reference and an OpenMP version. Both accumulate per-example
// contributions over fixed-size index blocks and reduce the blocks in index
// order, so results are bit-identical across thread counts.

namespace vaalab {

enum class ModelKind { linear_softmax, mlp1 };
enum class Activation { tanh, relu };

enum class Exec { serial, parallel };

struct ModelSpec {
    ModelKind kind = ModelKind::linear_softmax;
    int input_dim = 1;
    int hidden_dim = 0;  // mlp1 only
    int num_classes = 2;
    Activation activation = Activation::tanh;  // mlp1 only

    void validate() const;
    int param_count() const;
    std::string layout_id() const;
};

// Flat parameter vector. Layout is row-major weights then biases, layer by
// layer: linear_softmax = W[K x D], b[K]; mlp1 = W1[H x D], b1[H],
// W2[K x H], b2[K].
struct ParamVector {
    std::vector<double> values;
    std::string layout_id;
};

struct Example {
    std::vector<double> features;
    int label = 0;
    bool safety_flag = false;
    long long example_id = 0;
};

// Non-owning view of the examples selected for one step.
struct Batch {
    std::vector<const Example*> items;

    static Batch of(std::span<const Example> examples) {
        Batch b;
        b.items.reserve(examples.size());
        for (const auto& e : examples) b.items.push_back(&e);
        return b;
    }
    std::size_t size() const { return items.size(); }
};

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed);  // uniform [-0.1, 0.1]
ParamVector zero_params(const ModelSpec& spec);                      // analytic test point

// Mean cross-entropy over the batch (log-sum-exp with max subtraction).
double forward_loss(const ModelSpec& spec, const ParamVector& params, const Batch& batch,
                    Exec exec = Exec::parallel);

// Exact analytic gradient of forward_loss w.r.t. params, same layout.
ParamVector grad(const ModelSpec& spec, const ParamVector& params, const Batch& batch,
                 Exec exec = Exec::parallel);

// Both at once; backpropagation shares the forward pass.
std::pair<double, ParamVector> loss_and_grad(const ModelSpec& spec, const ParamVector& params,
                                             const Batch& batch, Exec exec = Exec::parallel);

// Argmax of the logits; ties break to the lowest class index.
int predict(const ModelSpec& spec, const ParamVector& params, std::span<const double> features);

// Central-difference gradient estimate, the test oracle for grad().
ParamVector finite_diff_grad(const ModelSpec& spec, const ParamVector& params, const Batch& batch,
                             double h = 1e-5, Exec exec = Exec::parallel);

// Checkpoint file: magic "VAA1", u32-le JSON header length, UTF-8 JSON
// header (spec fields + layout_id), u32-le parameter count, raw little-
// endian IEEE-754 doubles. Round-trips bit-exactly.
void save_checkpoint(const std::filesystem::path& path, const ModelSpec& spec,
                     const ParamVector& params);
std::pair<ModelSpec, ParamVector> load_checkpoint(const std::filesystem::path& path);

namespace detail {
// Scratch buffers so per-example kernels never allocate in the hot loop.
struct Workspace {
    std::vector<double> pre;     // hidden pre-activations
    std::vector<double> hidden;  // hidden activations
    std::vector<double> logits;  // class scores
    std::vector<double> probs;   // class probabilities
    void resize(const ModelSpec& spec);
};

double example_loss(const ModelSpec& spec, std::span<const double> p, const Example& ex,
                    Workspace& ws);
// Returns the example loss and adds its gradient into grad_accum.
double example_loss_grad(const ModelSpec& spec, std::span<const double> p, const Example& ex,
                         Workspace& ws, std::span<double> grad_accum);
}  // namespace detail

}  // namespace vaalab
