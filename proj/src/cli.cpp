#include "adapterlab/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <tuple>

#include "adapterlab/bench.hpp"
#include "adapterlab/config.hpp"
#include "adapterlab/errors.hpp"
#include "adapterlab/experiment.hpp"
#include "adapterlab/theory.hpp"

namespace adapterlab {

namespace {

namespace fs = std::filesystem;

struct CommonArgs {
    std::string config_path;
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* sub, CommonArgs& a) {
    sub->add_option("--config", a.config_path, "Experiment config file (key = value lines)");
    sub->add_option("--out", a.out_dir, "Output directory (created if absent)");
    sub->add_option("--seed", a.seed, "Seed override");
    sub->add_option("--override", a.overrides, "KEY=VALUE, repeatable")->allow_extra_args(false);
}

ExperimentConfig resolve_config(const CommonArgs& a) {
    ExperimentConfig cfg = a.config_path.empty() ? ExperimentConfig{} : load_config(a.config_path);
    for (const std::string& o : a.overrides) apply_override(cfg, o);
    if (a.seed) apply_setting(cfg, "seed", std::to_string(*a.seed));
    return cfg;
}

fs::path ensure_dir(const std::string& dir) {
    fs::path p(dir);
    fs::create_directories(p);
    return p;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string with_commas(std::uint64_t v) {
    std::string s = std::to_string(v);
    for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
    return s;
}

void print_summary(std::ostream& out, const Summary& s) {
    char line[256];
    std::snprintf(line, sizeof line, "%-14s %-14s %5s %3s %-18s %6s %9s %6s %5s  %-17s %9s %12s\n", "dataset",
                  "regime", "rank", "k", "init", "alpha", "lr", "wd", "seeds", "top1 mean+-std", "dHead",
                  "trainable");
    out << line;
    for (const SummaryRow& r : s.rows) {
        const std::string acc = fmt("%.2f", r.mean_top1) + " +- " + fmt("%.2f", r.std_top1);
        const std::string delta = r.delta_head ? fmt("%+.2f", *r.delta_head) : "-";
        std::snprintf(line, sizeof line, "%-14s %-14s %5llu %3llu %-18s %6g %9g %6g %5zu  %-17s %9s %12s\n",
                      r.dataset.c_str(), r.regime.c_str(), static_cast<unsigned long long>(r.rank),
                      static_cast<unsigned long long>(r.every_k), r.init.c_str(), r.alpha, r.lr, r.wd, r.n_seeds,
                      acc.c_str(), delta.c_str(), with_commas(r.trainable_params).c_str());
        out << line;
    }
    for (const std::string& w : s.warnings) out << "warning: " << w << '\n';
}

// Rank-sweep increments for each adapter configuration that was run at several ranks.
void print_rank_sweeps(std::ostream& out, std::ostream* csv, const Summary& s) {
    using Key = std::tuple<std::string, std::uint64_t, std::string, double, double, double>;
    std::map<Key, std::vector<const SummaryRow*>> groups;
    std::vector<Key> order;
    for (const SummaryRow& r : s.rows) {
        if (r.regime != "adapter_tune") continue;
        Key k{r.dataset, r.every_k, r.init, r.alpha, r.lr, r.wd};
        auto [it, fresh] = groups.try_emplace(k);
        if (fresh) order.push_back(k);
        it->second.push_back(&r);
    }
    if (csv) *csv << "dataset,every_k,init,alpha,lr,wd,rank,mean_top1,gain_vs_min_rank,increment\n";
    for (const Key& k : order) {
        auto rows = groups[k];
        std::sort(rows.begin(), rows.end(), [](auto* a, auto* b) { return a->rank < b->rank; });
        rows.erase(std::unique(rows.begin(), rows.end(), [](auto* a, auto* b) { return a->rank == b->rank; }),
                   rows.end());
        if (rows.size() < 2) continue;
        out << "\nrank sweep: " << std::get<0>(k) << " every_k=" << std::get<1>(k) << " init=" << std::get<2>(k)
            << " alpha=" << std::get<3>(k) << " lr=" << std::get<4>(k) << " wd=" << std::get<5>(k) << '\n';
        const double base = rows.front()->mean_top1;
        std::vector<std::pair<std::size_t, double>> curve;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const SummaryRow& r = *rows[i];
            const double inc = i ? r.mean_top1 - rows[i - 1]->mean_top1 : 0.0;
            out << "  r=" << r.rank << "  top1 " << fmt("%.2f", r.mean_top1) << " +- " << fmt("%.2f", r.std_top1)
                << "  gain vs r=" << rows.front()->rank << " " << fmt("%+.2f", r.mean_top1 - base) << '\n';
            if (csv)
                *csv << r.dataset << ',' << r.every_k << ',' << r.init << ',' << format_double(r.alpha) << ','
                     << format_double(r.lr) << ',' << format_double(r.wd) << ',' << r.rank << ','
                     << format_double(r.mean_top1) << ',' << format_double(r.mean_top1 - base) << ','
                     << format_double(inc) << '\n';
            curve.emplace_back(r.rank, r.mean_top1);
        }
        if (curve.size() >= 3) {
            const ElbowReport e = elbow_check(curve);
            out << "  elbow: " << (e.pass ? "pass" : "fail") << " (last increment " << fmt("%+.2f", e.last_increment)
                << " vs preceding total " << fmt("%+.2f", e.preceding_total) << "); last vs first increment: "
                << (e.pass_strict ? "pass" : "fail") << " (" << fmt("%+.2f", e.last_increment) << " vs "
                << fmt("%+.2f", e.first_increment) << ")\n";
        }
    }
}

int cmd_train(const CommonArgs& a, std::ostream& out) {
    const ExperimentConfig cfg = resolve_config(a);
    cfg.train.validate();
    const fs::path dir = ensure_dir(a.out_dir);
    const PreparedExperiment prep = prepare_experiment(cfg);
    if (!prep.pretrain_rows.empty()) write_metrics_csv((dir / "pretrain_metrics.csv").string(), prep.pretrain_rows);
    const TrainResult res = run_single(prep, prep.model, cfg.train);
    write_metrics_csv((dir / "metrics.csv").string(), res.rows);
    save_checkpoint(res.state, (dir / "final.ckpt").string());
    for (const MetricsRow& r : res.rows)
        if (r.epoch + 1 == cfg.train.epochs)
            out << r.split << ": loss " << fmt("%.4f", r.loss) << "  top1 " << fmt("%.2f", r.top1) << '\n';
    out << "trainable parameters: " << with_commas(total_trainable_count(prep.model)) << '\n';
    return 0;
}

int cmd_sweep(const CommonArgs& a, std::ostream& out, std::ostream& err) {
    const ExperimentConfig cfg = resolve_config(a);
    cfg.train.validate();
    const fs::path dir = ensure_dir(a.out_dir);
    const PreparedExperiment prep = prepare_experiment(cfg);
    const std::vector<MetricsRow> rows =
        run_sweep(cfg.sweep, prep.task, prep.model, cfg.train, sweep_threads_from_env());
    write_metrics_csv((dir / "metrics.csv").string(), rows);
    const bool has_val = prep.task.target.count(Split::Val) > 0;
    const Summary s = aggregate(rows, has_val ? "val" : "train");
    std::ofstream csv(dir / "summary.csv");
    write_summary_csv(csv, s);
    print_summary(out, s);
    print_rank_sweeps(out, nullptr, s);
    std::size_t failed = 0;
    for (const MetricsRow& r : rows) failed += r.split == "error";
    if (failed) {
        err << failed << " run(s) failed\n";
        return 1;
    }
    return 0;
}

int cmd_theory(const CommonArgs& a, std::ostream& out, std::ostream& err) {
    const ExperimentConfig cfg = resolve_config(a);
    const TheoryConfig& t = cfg.theory;
    if (t.ranks.empty()) throw PreconditionError("theory.ranks must not be empty");
    for (std::size_t r : t.ranks)
        if (r < 1 || r > t.d)
            throw PreconditionError("theory rank " + std::to_string(r) + " outside [1, " + std::to_string(t.d) + "]");
    if (!(t.b_norm > 0.0)) throw PreconditionError("theory.b_norm must be > 0");
    if (t.draws < 1) throw PreconditionError("theory.draws must be >= 1");
    Rng rng = Rng(cfg.seed).derive("theory");
    Rng shift_rng = rng.derive("shift");
    Rng mc_rng = rng.derive("monte_carlo");
    const ShiftMatrix shift = make_shift(t.d, t.c_decay, t.p_decay, shift_rng);
    const std::vector<MonteCarloResult> mc = verify_bound_monte_carlo_all_ranks(shift, t.b_norm, t.draws, mc_rng);
    const double total = shift.spectrum.total_energy();

    std::vector<std::pair<std::size_t, double>> curve;
    std::vector<std::size_t> ranks = t.ranks;
    std::sort(ranks.begin(), ranks.end());
    ranks.erase(std::unique(ranks.begin(), ranks.end()), ranks.end());
    for (std::size_t r : ranks) curve.emplace_back(r, 1.0 - shift.spectrum.tail_energy(r) / total);
    std::string verdict = "n/a";
    if (curve.size() >= 3) verdict = elbow_check(curve).pass ? "pass" : "fail";

    const fs::path dir = ensure_dir(a.out_dir);
    std::ofstream csv(dir / "theory.csv");
    csv << "rank,bound,empirical,constructive_error,tail_decay,elbow\n";
    std::vector<std::size_t> violated;
    for (std::size_t r : ranks) {
        const double tail = shift.spectrum.tail_energy(r);
        const double bound = t.b_norm * t.b_norm * tail;
        const Mat approx = adapter_linear_map(constructive_adapter(shift, r, 1.0));
        const double cerr = frobenius_norm_sq(sub(shift.delta, approx));
        const double td = tail_decay(r, t.c_decay, t.p_decay);
        const bool ok = mc[r].pass && std::abs(cerr - tail) <= 1e-9 * std::max(1.0, total);
        if (!ok) violated.push_back(r);
        csv << r << ',' << format_double(bound) << ',' << format_double(mc[r].empirical_mse) << ','
            << format_double(cerr) << ',' << format_double(td) << ',' << verdict << '\n';
        out << "r=" << r << "  bound " << fmt("%.6g", bound) << "  empirical " << fmt("%.6g", mc[r].empirical_mse)
            << "  constructive " << fmt("%.6g", cerr) << "  tail_decay " << fmt("%.6g", td)
            << (ok ? "" : "  VIOLATED") << '\n';
    }
    out << "elbow: " << verdict << '\n';
    if (!violated.empty()) {
        err << "bound assertion failed at rank(s):";
        for (std::size_t r : violated) err << ' ' << r;
        err << '\n';
        return 1;
    }
    return 0;
}

int cmd_params(const CommonArgs& a, std::ostream& out) {
    const ExperimentConfig cfg = resolve_config(a);
    const ModelConfig& m = cfg.model;
    m.validate();
    ModelConfig full = m;
    full.regime = Regime::FullFineTune;
    const std::uint64_t full_count = full_model_param_count(full);
    const std::size_t n_adapters = adapter_positions(m.layers, m.every_k).size();
    out << "geometry: d=" << m.d << " layers=" << m.layers << " rank=" << m.rank << " every_k=" << m.every_k
        << " classes=" << m.classes << " adapters=" << n_adapters << '\n';
    out << "per adapter (2rd + r + d): " << with_commas(adapter_param_count(m.rank, m.d)) << '\n';
    out << "full model (no adapters): " << with_commas(full_count) << "\n\n";
    char line[200];
    std::snprintf(line, sizeof line, "%-14s %12s %10s %12s %12s %9s\n", "regime", "adapters", "head", "formula",
                  "actual", "% of FT");
    out << line;
    for (Regime r : {Regime::HeadOnly, Regime::AdapterTune, Regime::FullFineTune}) {
        ModelConfig c = m;
        c.regime = r;
        const TrainableCount tc = trainable_count(c);
        const double pct = 100.0 * static_cast<double>(tc.actual) / static_cast<double>(full_count);
        std::snprintf(line, sizeof line, "%-14s %12s %10s %12s %12s %8.3f%%\n", to_string(r).c_str(),
                      with_commas(tc.adapters).c_str(), with_commas(tc.head).c_str(),
                      with_commas(tc.formula).c_str(), with_commas(tc.actual).c_str(), pct);
        out << line;
    }
    return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& split, const std::string& out_dir,
               std::ostream& out) {
    std::vector<MetricsRow> rows;
    for (const std::string& path : inputs) {
        std::vector<MetricsRow> r = read_metrics_csv(path);
        rows.insert(rows.end(), r.begin(), r.end());
    }
    const Summary s = aggregate(rows, split);
    print_summary(out, s);
    if (!out_dir.empty()) {
        const fs::path dir = ensure_dir(out_dir);
        std::ofstream summary(dir / "summary.csv");
        write_summary_csv(summary, s);
        std::ofstream inc(dir / "rank_sweep.csv");
        print_rank_sweeps(out, &inc, s);
    } else {
        print_rank_sweeps(out, nullptr, s);
    }
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Zero-initialized low-rank residual adapters on a miniature ViT", "adapterlab"};
    app.require_subcommand(1);

    CommonArgs train_args, sweep_args, theory_args, params_args;
    auto* train = app.add_subcommand("train", "Run one training job; writes metrics.csv and final.ckpt");
    add_common(train, train_args);
    auto* sweep = app.add_subcommand("sweep", "Run a sweep grid; writes metrics.csv and summary.csv");
    add_common(sweep, sweep_args);
    auto* theory = app.add_subcommand("theory", "Check the truncated-SVD bound; writes theory.csv");
    add_common(theory, theory_args);
    auto* params = app.add_subcommand("params", "Print the trainable-parameter budget");
    add_common(params, params_args);

    std::vector<std::string> report_inputs;
    std::string report_split = "val";
    std::string report_out;
    auto* report = app.add_subcommand("report", "Aggregate metrics CSVs");
    report->add_option("csv", report_inputs, "metrics.csv files")->required();
    report->add_option("--split", report_split, "Split to aggregate (train, val, test)");
    report->add_option("--out", report_out, "Write summary.csv and rank_sweep.csv here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*train) return cmd_train(train_args, out);
        if (*sweep) return cmd_sweep(sweep_args, out, err);
        if (*theory) return cmd_theory(theory_args, out, err);
        if (*params) return cmd_params(params_args, out);
        if (*report) return cmd_report(report_inputs, report_split, report_out, out);
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

}  // namespace adapterlab
