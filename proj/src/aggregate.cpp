#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <tuple>

#include "adapterlab/bench.hpp"

namespace adapterlab {

namespace {

// Everything that identifies a configuration except the seed.
using ConfigKey = std::tuple<std::string, std::string, std::uint64_t, std::uint64_t, std::string, double, double,
                             double>;

ConfigKey key_of(const MetricsRow& r) {
    return {r.dataset, r.regime, r.rank, r.every_k, r.init, r.alpha, r.lr, r.wd};
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
    double m = 0.0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    double v = 0.0;
    for (double x : xs) v += (x - m) * (x - m);
    return {m, std::sqrt(v / static_cast<double>(xs.size()))};
}

}  // namespace

Summary aggregate(const std::vector<MetricsRow>& rows, const std::string& split) {
    Summary out;

    // Final epoch of each run for the requested split.
    std::map<std::string, std::size_t> final_row;
    std::vector<std::string> run_order;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const MetricsRow& r = rows[i];
        if (r.split == "error") {
            out.warnings.push_back("run " + r.run_id + " failed: " + r.error);
            continue;
        }
        if (r.split != split) continue;
        auto [it, fresh] = final_row.emplace(r.run_id, i);
        if (fresh) run_order.push_back(r.run_id);
        else if (rows[it->second].epoch <= r.epoch) it->second = i;
    }

    struct Group {
        ConfigKey key;
        std::vector<double> top1, loss;
        std::vector<std::uint64_t> seeds;
        std::uint64_t trainable = 0;
    };
    std::vector<Group> groups;
    std::map<ConfigKey, std::size_t> index;
    for (const std::string& id : run_order) {
        const MetricsRow& r = rows[final_row[id]];
        const ConfigKey k = key_of(r);
        auto [it, fresh] = index.emplace(k, groups.size());
        if (fresh) groups.push_back({k, {}, {}, {}, r.trainable_params});
        Group& g = groups[it->second];
        g.top1.push_back(r.top1);
        g.loss.push_back(r.loss);
        g.seeds.push_back(r.seed);
    }

    for (const Group& g : groups) {
        SummaryRow s;
        std::tie(s.dataset, s.regime, s.rank, s.every_k, s.init, s.alpha, s.lr, s.wd) = g.key;
        s.split = split;
        s.n_seeds = g.top1.size();
        std::tie(s.mean_top1, s.std_top1) = mean_std(g.top1);
        std::tie(s.mean_loss, s.std_loss) = mean_std(g.loss);
        s.trainable_params = g.trainable;
        if (s.n_seeds < 2)
            out.warnings.push_back("configuration " + s.regime + " rank=" + std::to_string(s.rank) +
                                   " has a single seed; std is 0");
        out.rows.push_back(std::move(s));
    }

    // Delta vs the head-only baseline with the same dataset, lr and wd (any lr/wd as fallback).
    std::vector<std::string> unbased;
    for (SummaryRow& s : out.rows) {
        const SummaryRow* exact = nullptr;
        const SummaryRow* loose = nullptr;
        for (const SummaryRow& b : out.rows) {
            if (b.regime != "head_only" || b.dataset != s.dataset) continue;
            if (!loose) loose = &b;
            if (b.lr == s.lr && b.wd == s.wd && !exact) exact = &b;
        }
        const SummaryRow* base = exact ? exact : loose;
        if (base) {
            s.delta_head = s.mean_top1 - base->mean_top1;
        } else if (std::find(unbased.begin(), unbased.end(), s.dataset) == unbased.end()) {
            unbased.push_back(s.dataset);
            out.warnings.push_back("no head_only baseline for dataset " + s.dataset + "; delta omitted");
        }
    }
    return out;
}

void write_summary_csv(std::ostream& out, const Summary& s) {
    out << "dataset,regime,rank,every_k,init,alpha,lr,wd,split,n_seeds,mean_top1,std_top1,mean_loss,std_loss,"
           "trainable_params,delta_head\n";
    for (const SummaryRow& r : s.rows) {
        out << r.dataset << ',' << r.regime << ',' << r.rank << ',' << r.every_k << ',' << r.init << ','
            << format_double(r.alpha) << ',' << format_double(r.lr) << ',' << format_double(r.wd) << ',' << r.split
            << ',' << r.n_seeds << ',' << format_double(r.mean_top1) << ',' << format_double(r.std_top1) << ','
            << format_double(r.mean_loss) << ',' << format_double(r.std_loss) << ',' << r.trainable_params << ','
            << (r.delta_head ? format_double(*r.delta_head) : std::string()) << '\n';
    }
}

}  // namespace adapterlab
