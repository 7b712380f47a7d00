#include "adapterlab/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "adapterlab/errors.hpp"

namespace adapterlab {

namespace {

using Setter = std::function<void(ExperimentConfig&, const std::string&, std::size_t)>;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    if (trim(v).empty()) return out;
    std::size_t start = 0;
    while (true) {
        const auto comma = v.find(',', start);
        out.push_back(trim(v.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v, std::size_t line) {
    std::size_t used = 0;
    unsigned long long x = 0;
    bool ok = !v.empty() && v[0] != '-';
    if (ok) {
        try {
            x = std::stoull(v, &used);
        } catch (const std::exception&) {
            ok = false;
        }
    }
    if (!ok || used != v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'", line);
    return x;
}

double to_real(const std::string& key, const std::string& v, std::size_t line) {
    std::size_t used = 0;
    double x = 0;
    bool ok = !v.empty();
    if (ok) {
        try {
            x = std::stod(v, &used);
        } catch (const std::exception&) {
            ok = false;
        }
    }
    if (!ok || used != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'", line);
    return x;
}

bool to_bool(const std::string& key, const std::string& v, std::size_t line) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'", line);
}

template <typename T, typename Conv>
std::vector<T> to_list(const std::string& key, const std::string& v, std::size_t line, Conv conv) {
    std::vector<T> out;
    for (const std::string& item : split_list(v)) out.push_back(conv(key, item, line));
    return out;
}

template <typename Fn>
auto wrap(const std::string& key, std::size_t line, Fn fn) {
    try {
        return fn();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(key + ": " + e.what(), line);
    }
}

#define AL_SIZE(field) [](ExperimentConfig& c, const std::string& v, std::size_t l) { c.field = to_u64(#field, v, l); }
#define AL_REAL(field) [](ExperimentConfig& c, const std::string& v, std::size_t l) { c.field = to_real(#field, v, l); }
#define AL_TEXT(field) [](ExperimentConfig& c, const std::string& v, std::size_t) { c.field = v; }

void add_train_keys(std::vector<std::pair<std::string, Setter>>& t, const std::string& prefix,
                    TrainConfig ExperimentConfig::*member) {
    auto sz = [member](std::size_t TrainConfig::*f) {
        return [member, f](ExperimentConfig& c, const std::string& v, std::size_t l) {
            (c.*member).*f = to_u64("train", v, l);
        };
    };
    auto re = [member](double TrainConfig::*f) {
        return [member, f](ExperimentConfig& c, const std::string& v, std::size_t l) {
            (c.*member).*f = to_real("train", v, l);
        };
    };
    t.emplace_back(prefix + "lr", re(&TrainConfig::base_lr));
    t.emplace_back(prefix + "weight_decay", re(&TrainConfig::weight_decay));
    t.emplace_back(prefix + "epochs", sz(&TrainConfig::epochs));
    t.emplace_back(prefix + "warmup_epochs", sz(&TrainConfig::warmup_epochs));
    t.emplace_back(prefix + "clip_norm", re(&TrainConfig::clip_norm));
    t.emplace_back(prefix + "batch_size", sz(&TrainConfig::batch_size));
    t.emplace_back(prefix + "seed", [member](ExperimentConfig& c, const std::string& v, std::size_t l) {
        (c.*member).seed = to_u64("seed", v, l);
    });
    t.emplace_back(prefix + "beta1", re(&TrainConfig::beta1));
    t.emplace_back(prefix + "beta2", re(&TrainConfig::beta2));
    t.emplace_back(prefix + "adam_eps", re(&TrainConfig::adam_eps));
}

const std::vector<std::pair<std::string, Setter>>& table() {
    static const std::vector<std::pair<std::string, Setter>> t = [] {
        std::vector<std::pair<std::string, Setter>> t;
        t.emplace_back("seed", [](ExperimentConfig& c, const std::string& v, std::size_t l) {
            c.seed = to_u64("seed", v, l);
            c.train.seed = c.seed;
        });
        t.emplace_back("model.input_dim", AL_SIZE(model.input_dim));
        t.emplace_back("model.d", AL_SIZE(model.d));
        t.emplace_back("model.layers", AL_SIZE(model.layers));
        t.emplace_back("model.heads", AL_SIZE(model.heads));
        t.emplace_back("model.n_tokens", AL_SIZE(model.n_tokens));
        t.emplace_back("model.mlp_ratio", AL_REAL(model.mlp_ratio));
        t.emplace_back("model.classes", AL_SIZE(model.classes));
        t.emplace_back("model.rank", AL_SIZE(model.rank));
        t.emplace_back("model.alpha", AL_REAL(model.alpha));
        t.emplace_back("model.every_k", AL_SIZE(model.every_k));
        t.emplace_back("model.init", [](ExperimentConfig& c, const std::string& v, std::size_t l) {
            c.model.init = wrap("model.init", l, [&] { return InitScheme::parse(v); });
        });
        t.emplace_back("model.regime", [](ExperimentConfig& c, const std::string& v, std::size_t l) {
            c.model.regime = wrap("model.regime", l, [&] { return parse_regime(v); });
        });
        add_train_keys(t, "train.", &ExperimentConfig::train);
        t.emplace_back("pretrain.enabled", [](ExperimentConfig& c, const std::string& v, std::size_t l) {
            c.pretrain_enabled = to_bool("pretrain.enabled", v, l);
        });
        add_train_keys(t, "pretrain.", &ExperimentConfig::pretrain);
        t.emplace_back("task.source", [](ExperimentConfig& c, const std::string& v, std::size_t l) {
            if (v != "planted" && v != "idx") throw ConfigError("task.source: expected planted or idx", l);
            c.task.source = v;
        });
        t.emplace_back("task.name", AL_TEXT(task.name));
        t.emplace_back("task.input_dim", AL_SIZE(task.input_dim));
        t.emplace_back("task.feature_dim", AL_SIZE(task.feature_dim));
        t.emplace_back("task.classes", AL_SIZE(task.classes));
        t.emplace_back("task.n_per_class", AL_SIZE(task.n_per_class));
        t.emplace_back("task.source_per_class", AL_SIZE(task.source_per_class));
        t.emplace_back("task.noise", AL_REAL(task.noise));
        t.emplace_back("task.c_decay", AL_REAL(task.c_decay));
        t.emplace_back("task.p_decay", AL_REAL(task.p_decay));
        t.emplace_back("task.seed", AL_SIZE(task.seed));
        t.emplace_back("task.images", AL_TEXT(task.images));
        t.emplace_back("task.labels", AL_TEXT(task.labels));
        t.emplace_back("task.train_fraction", AL_REAL(task.train_fraction));
        t.emplace_back("task.val_fraction", AL_REAL(task.val_fraction));
        t.emplace_back("task.test_fraction", AL_REAL(task.test_fraction));
        t.emplace_back("sweep.regime", [](ExperimentConfig& c, const std::string& v, std::size_t l) {
            c.sweep.regime = to_list<Regime>("sweep.regime", v, l, [](auto& k, auto& s, auto ln) {
                return wrap(k, ln, [&] { return parse_regime(s); });
            });
        });
        t.emplace_back("sweep.rank", [](ExperimentConfig& c, const std::string& v, std::size_t l) {
            c.sweep.rank = to_list<std::size_t>("sweep.rank", v, l, to_u64);
        });
        t.emplace_back("sweep.every_k", [](ExperimentConfig& c, const std::string& v, std::size_t l) {
            c.sweep.every_k = to_list<std::size_t>("sweep.every_k", v, l, to_u64);
        });
        t.emplace_back("sweep.init", [](ExperimentConfig& c, const std::string& v, std::size_t l) {
            c.sweep.init = to_list<InitScheme>("sweep.init", v, l, [](auto& k, auto& s, auto ln) {
                return wrap(k, ln, [&] { return InitScheme::parse(s); });
            });
        });
        t.emplace_back("sweep.alpha", [](ExperimentConfig& c, const std::string& v, std::size_t l) {
            c.sweep.alpha = to_list<double>("sweep.alpha", v, l, to_real);
        });
        t.emplace_back("sweep.lr", [](ExperimentConfig& c, const std::string& v, std::size_t l) {
            c.sweep.lr = to_list<double>("sweep.lr", v, l, to_real);
        });
        t.emplace_back("sweep.wd", [](ExperimentConfig& c, const std::string& v, std::size_t l) {
            c.sweep.wd = to_list<double>("sweep.wd", v, l, to_real);
        });
        t.emplace_back("sweep.seeds", [](ExperimentConfig& c, const std::string& v, std::size_t l) {
            c.sweep.seeds = to_list<std::uint64_t>("sweep.seeds", v, l, to_u64);
        });
        t.emplace_back("theory.d", AL_SIZE(theory.d));
        t.emplace_back("theory.c_decay", AL_REAL(theory.c_decay));
        t.emplace_back("theory.p_decay", AL_REAL(theory.p_decay));
        t.emplace_back("theory.b_norm", AL_REAL(theory.b_norm));
        t.emplace_back("theory.draws", AL_SIZE(theory.draws));
        t.emplace_back("theory.ranks", [](ExperimentConfig& c, const std::string& v, std::size_t l) {
            c.theory.ranks = to_list<std::size_t>("theory.ranks", v, l, to_u64);
        });
        return t;
    }();
    return t;
}

#undef AL_SIZE
#undef AL_REAL
#undef AL_TEXT

}  // namespace

ExperimentConfig::ExperimentConfig() {
    pretrain.epochs = 12;
    pretrain.warmup_epochs = 2;
    pretrain.base_lr = 1e-3;
    pretrain.seed = 2;
}

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& [name, fn] : table()) k.push_back(name);
        return k;
    }();
    return keys;
}

void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value, std::size_t line) {
    static const std::map<std::string, Setter> index = [] {
        std::map<std::string, Setter> m;
        for (const auto& [name, fn] : table()) m.emplace(name, fn);
        return m;
    }();
    auto it = index.find(key);
    if (it == index.end()) throw ConfigError("unknown key '" + key + "'", line);
    it->second(cfg, value, line);
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
    std::string key = trim(assignment.substr(0, eq));
    // Bare names resolve to train.<name>, then model.<name>.
    if (key.find('.') == std::string::npos && key != "seed") {
        const auto& keys = config_keys();
        for (const char* prefix : {"train.", "model."}) {
            if (std::find(keys.begin(), keys.end(), prefix + key) != keys.end()) {
                key = prefix + key;
                break;
            }
        }
    }
    apply_setting(cfg, key, trim(assignment.substr(eq + 1)));
}

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const auto hash = raw.find('#');
        const std::string s = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (s.empty()) continue;
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("expected key = value, got '" + s + "'", line);
        apply_setting(cfg, trim(s.substr(0, eq)), trim(s.substr(eq + 1)), line);
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

}  // namespace adapterlab
