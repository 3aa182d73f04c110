// Compares the serial reference kernels against the OpenMP paths, and a full
// desk-scale training epoch at 1 vs N threads. The parallel paths are
// bit-identical to the serial ones by construction; this tool reports the
// speed side of that trade.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#include "gruvar/cells.hpp"
#include "gruvar/data.hpp"
#include "gruvar/linalg.hpp"
#include "gruvar/parallel.hpp"
#include "gruvar/rng.hpp"
#include "gruvar/train.hpp"

using namespace gruvar;

namespace {

double now_seconds() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

template <typename Fn>
double time_op(Fn&& fn, int reps) {
    fn();  // warm up
    const double t0 = now_seconds();
    for (int i = 0; i < reps; ++i) fn();
    return (now_seconds() - t0) / reps;
}

void bench_matvec(std::size_t n, int reps) {
    Rng rng(42);
    Matrix a(n, n);
    for (double& v : a.data) v = rng.uniform(-1.0, 1.0);
    Vector x(n);
    for (double& v : x) v = rng.uniform(-1.0, 1.0);

    Vector ref;
    const double serial =
        time_op([&] { ref = matvec_serial(a, x); }, reps);
    Vector par;
    const double parallel = time_op([&] { par = matvec(a, x); }, reps);
    const bool identical = std::memcmp(ref.data(), par.data(), n * sizeof(double)) == 0;

    std::printf("matvec %5zux%-5zu serial %8.3f us  parallel %8.3f us  speedup %5.2fx  %s\n", n,
                n, serial * 1e6, parallel * 1e6, serial / parallel,
                identical ? "bit-identical" : "MISMATCH");
}

Dataset synthetic_rows(std::size_t count) {
    Dataset d;
    d.task = Task::MnistRow;
    Rng rng(7);
    d.images.resize(count);
    for (auto& img : d.images) {
        img.label = static_cast<int>(rng.uniform_index(10));
        img.pixels.resize(784);
        for (double& p : img.pixels) p = rng.uniform();
    }
    return d;
}

void bench_epoch(int threads_hi) {
    const Dataset data = synthetic_rows(512);
    TrainConfig cfg;
    cfg.variant = GateVariant::Full;
    cfg.hidden = 64;
    cfg.epochs = 1;
    cfg.seed = 7;
    cfg.dropout_rate = 0.2;

    auto run = [&](int threads) {
        set_max_threads(threads);
        Model model = make_model(cfg, 28, 10, std::nullopt);
        RmspropState opt = make_rmsprop_state(model);
        const double t0 = now_seconds();
        MetricsRecord rec = train_epoch(cfg, model, opt, data, 1, cfg.base_lr);
        const double dt = now_seconds() - t0;
        return std::make_pair(dt, rec.loss);
    };

    const auto [t1, loss1] = run(1);
    const auto [tn, lossn] = run(threads_hi);
    std::printf("train_epoch gru0 n=64 T=28 x512   1 thread %6.2f s  %d threads %6.2f s  "
                "speedup %4.2fx  %s\n",
                t1, threads_hi, tn, t1 / tn,
                loss1 == lossn ? "bit-identical loss" : "LOSS MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
    int threads = max_threads();
    if (argc > 1) threads = std::atoi(argv[1]);
    std::printf("benchmarking with up to %d threads\n", threads);

    set_max_threads(threads);
    for (std::size_t n : {128, 256, 512, 1024}) {
        bench_matvec(n, n <= 256 ? 2000 : 200);
    }
    bench_epoch(threads);
    return 0;
}
