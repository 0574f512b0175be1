// Times the serial reference kernels against their OpenMP counterparts on
// eval-sized workloads and checks that both paths agree.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <vector>

#include "vaalab/forgetlab.hpp"
#include "vaalab/model.hpp"
#include "vaalab/rng.hpp"
#include "vaalab/trainer.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace vaalab;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::vector<Example> make_examples(const ModelSpec& spec, int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Example> xs(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Example& ex = xs[static_cast<std::size_t>(i)];
        ex.features.resize(static_cast<std::size_t>(spec.input_dim));
        for (auto& f : ex.features) f = rng.normal();
        ex.label = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.num_classes)));
        ex.example_id = i;
    }
    return xs;
}

struct Timing {
    double serial_ms;
    double parallel_ms;
};

template <typename F>
double time_best_of(int reps, F&& fn) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = Clock::now();
        fn();
        best = std::min(best, ms_since(t0));
    }
    return best;
}

void report(const char* name, const Timing& t) {
    std::printf("%-28s %10.2f ms %10.2f ms %8.2fx\n", name, t.serial_ms, t.parallel_ms,
                t.serial_ms / t.parallel_ms);
}

}  // namespace

int main() {
    ModelSpec spec;
    spec.kind = ModelKind::mlp1;
    spec.input_dim = 64;
    spec.hidden_dim = 128;
    spec.num_classes = 8;
    const ParamVector params = init_params(spec, 7);
    const std::vector<Example> data = make_examples(spec, 8192, 11);
    const Batch batch = Batch::of(data);

#ifdef _OPENMP
    std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
    std::printf("built without openmp; both columns run serially\n");
#endif
    std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "openmp", "speedup");

    // Agreement first: the parallel path must reproduce the serial one.
    const double ls = forward_loss(spec, params, batch, Exec::serial);
    const double lp = forward_loss(spec, params, batch, Exec::parallel);
    const ParamVector gs = grad(spec, params, batch, Exec::serial);
    const ParamVector gp = grad(spec, params, batch, Exec::parallel);
    double max_rel = std::fabs(ls - lp) / (std::fabs(ls) + 1e-300);
    for (std::size_t i = 0; i < gs.values.size(); ++i) {
        const double rel = std::fabs(gs.values[i] - gp.values[i]) /
                           (std::fabs(gs.values[i]) + std::fabs(gp.values[i]) + 1e-12);
        max_rel = std::max(max_rel, rel);
    }
    std::printf("serial/openmp agreement: max rel diff %.3e\n\n", max_rel);

    Timing t_loss{time_best_of(5, [&] { forward_loss(spec, params, batch, Exec::serial); }),
                  time_best_of(5, [&] { forward_loss(spec, params, batch, Exec::parallel); })};
    report("forward_loss (8192 ex)", t_loss);

    Timing t_grad{time_best_of(5, [&] { grad(spec, params, batch, Exec::serial); }),
                  time_best_of(5, [&] { grad(spec, params, batch, Exec::parallel); })};
    report("grad (8192 ex)", t_grad);

    ModelSpec small = spec;
    small.hidden_dim = 32;
    const ParamVector small_params = init_params(small, 3);
    const Batch fd_batch = Batch::of(std::span<const Example>(data.data(), 64));
    Timing t_fd{
        time_best_of(3, [&] { finite_diff_grad(small, small_params, fd_batch, 1e-5, Exec::serial); }),
        time_best_of(3,
                     [&] { finite_diff_grad(small, small_params, fd_batch, 1e-5, Exec::parallel); })};
    report("finite_diff_grad (64 ex)", t_fd);

    GroupedDataset testset;
    testset.groups.push_back(data);
    testset.group_names.emplace_back("all");
    Timing t_eval{
        time_best_of(3, [&] { evaluate(spec, params, testset, data, Exec::serial); }),
        time_best_of(3, [&] { evaluate(spec, params, testset, data, Exec::parallel); })};
    report("evaluate (8192 ex)", t_eval);

    const std::vector<double> magnitudes{0.0, 0.1, 0.2, 0.4};
    Timing t_land{time_best_of(1,
                               [&] {
                                   Rng rng(5);
                                   landscape_probe(spec, params, testset, magnitudes, 16,
                                                   ProbeMode::random, rng, Exec::serial);
                               }),
                  time_best_of(1, [&] {
                      Rng rng(5);
                      landscape_probe(spec, params, testset, magnitudes, 16, ProbeMode::random,
                                      rng, Exec::parallel);
                  })};
    report("landscape_probe (16 dirs)", t_land);
    return 0;
}
