#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <thread>

#include "adapterlab/bench.hpp"
#include "adapterlab/errors.hpp"

namespace adapterlab {

namespace {

template <typename T>
std::vector<T> axis(const std::vector<T>& values, const T& base) {
    return values.empty() ? std::vector<T>{base} : values;
}

MetricsRow error_row(const RunSpec& run, const std::string& dataset, const std::string& message) {
    MetricsRow row;
    row.run_id = run.run_id;
    row.dataset = dataset;
    row.regime = to_string(run.model.regime);
    row.rank = run.model.has_adapters() ? run.model.rank : 0;
    row.every_k = run.model.every_k;
    row.init = run.model.init.to_string();
    row.alpha = run.model.alpha;
    row.lr = run.train.base_lr;
    row.wd = run.train.weight_decay;
    row.seed = run.train.seed;
    row.split = "error";
    row.error = message.empty() ? "unknown error" : message;
    return row;
}

}  // namespace

std::size_t SweepSpec::cell_count() const {
    auto n = [](std::size_t s) { return std::max<std::size_t>(s, 1); };
    return n(regime.size()) * n(rank.size()) * n(every_k.size()) * n(init.size()) * n(alpha.size()) *
           n(lr.size()) * n(wd.size());
}

std::vector<RunSpec> expand_sweep(const SweepSpec& spec, const ModelConfig& base_model,
                                  const TrainConfig& base_train) {
    const auto regimes = axis(spec.regime, base_model.regime);
    const auto ranks = axis(spec.rank, base_model.rank);
    const auto ks = axis(spec.every_k, base_model.every_k);
    const auto inits = axis(spec.init, base_model.init);
    const auto alphas = axis(spec.alpha, base_model.alpha);
    const auto lrs = axis(spec.lr, base_train.base_lr);
    const auto wds = axis(spec.wd, base_train.weight_decay);
    const auto seeds = axis(spec.seeds, base_train.seed);

    std::vector<RunSpec> runs;
    for (Regime regime : regimes)
        for (std::size_t rank : ranks)
            for (std::size_t k : ks)
                for (const InitScheme& init : inits)
                    for (double alpha : alphas)
                        for (double lr : lrs)
                            for (double wd : wds)
                                for (std::uint64_t seed : seeds) {
                                    RunSpec r;
                                    r.index = runs.size();
                                    char id[32];
                                    std::snprintf(id, sizeof id, "run%04zu", r.index);
                                    r.run_id = id;
                                    r.model = base_model;
                                    r.model.regime = regime;
                                    r.model.rank = rank;
                                    r.model.every_k = k;
                                    r.model.init = init;
                                    r.model.alpha = alpha;
                                    r.train = base_train;
                                    r.train.base_lr = lr;
                                    r.train.weight_decay = wd;
                                    r.train.seed = seed;
                                    runs.push_back(std::move(r));
                                }
    return runs;
}

std::size_t sweep_threads_from_env() {
    const char* v = std::getenv("ADAPTERLAB_THREADS");
    if (!v || !*v) return 1;
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (*end != '\0' || n < 1) return 1;
    return static_cast<std::size_t>(n);
}

std::vector<MetricsRow> run_sweep(const SweepSpec& spec, const TransferTask& task, const ModelConfig& base_model,
                                  const TrainConfig& base_train, std::size_t threads) {
    const std::vector<RunSpec> runs = expand_sweep(spec, base_model, base_train);
    std::vector<std::vector<MetricsRow>> results(runs.size());
    std::atomic<std::size_t> next{0};

    auto worker = [&] {
        for (std::size_t i = next++; i < runs.size(); i = next++) {
            const RunSpec& run = runs[i];
            try {
                run.model.validate();
                run.train.validate();
                Rng rng = Rng(run.train.seed).derive("downstream");
                EncoderState st = make_downstream(task.backbone, run.model, rng);
                results[i] = train(std::move(st), task.target, run.train, {run.run_id, task.target.name}).rows;
            } catch (const std::exception& e) {
                results[i] = {error_row(run, task.target.name, e.what())};
            }
        }
    };

    const std::size_t n_threads = std::max<std::size_t>(1, std::min(threads, runs.size()));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    std::vector<MetricsRow> rows;
    for (auto& r : results) rows.insert(rows.end(), r.begin(), r.end());
    return rows;
}

}  // namespace adapterlab
