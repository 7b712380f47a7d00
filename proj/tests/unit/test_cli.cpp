#include <doctest.h>

#include <fstream>
#include <sstream>

#include "adapterlab/bench.hpp"
#include "adapterlab/cli.hpp"
#include "support.hpp"

using namespace adapterlab;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code;
    std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
    args.insert(args.begin(), "adapterlab");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::vector<std::string> tiny_overrides() {
    return {"--override", "model.d=8",          "--override", "model.heads=2",        "--override",
            "model.layers=2", "--override",     "model.rank=2", "--override",         "model.n_tokens=5",
            "--override", "task.input_dim=8",   "--override", "task.feature_dim=8",   "--override",
            "task.classes=3", "--override",     "task.n_per_class=12", "--override",  "task.source_per_class=12",
            "--override", "pretrain.epochs=1",
            "--override", "pretrain.warmup_epochs=0", "--override", "epochs=1",       "--override",
            "warmup_epochs=0"};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("params on the tiny ViT geometry") {
    const CliResult r = cli({"params", "--override", "model.d=192", "--override", "model.layers=12", "--override",
                             "model.heads=3", "--override", "model.rank=16", "--override", "model.classes=10",
                             "--override", "model.input_dim=64"});
    CHECK(r.code == 0);
    CHECK(r.out.find("76,224") != std::string::npos);
    CHECK(r.out.find("78,144") != std::string::npos);
    CHECK(r.out.find("head_only") != std::string::npos);
    CHECK(r.out.find("full_finetune") != std::string::npos);
}

TEST_CASE("usage and configuration errors exit with 2") {
    CHECK(cli({"params", "--override", "model.rank=0"}).code == 2);
    const CliResult missing = cli({"train", "--config", "/nonexistent/x.cfg"});
    CHECK(missing.code == 2);
    CHECK(missing.err.find("/nonexistent/x.cfg") != std::string::npos);
    CHECK(cli({}).code == 2);
    CHECK(cli({"frobnicate"}).code == 2);
    CHECK(cli({"params", "--override", "model.bogus=1"}).code == 2);
    CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("theory subcommand") {
    const fs::path dir = test::temp_dir("cli_theory");
    const CliResult ok = cli({"theory", "--out", dir.string(), "--override", "theory.draws=2000", "--override",
                              "theory.d=16", "--override", "theory.ranks=1,2,4,8,16"});
    CHECK(ok.code == 0);
    const std::string csv = slurp(dir / "theory.csv");
    CHECK(csv.rfind("rank,bound,empirical,constructive_error,tail_decay,elbow\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
    CHECK(ok.out.find("elbow: pass") != std::string::npos);

    CHECK(cli({"theory", "--out", dir.string(), "--override", "theory.p_decay=0.4"}).code == 2);
    CHECK(cli({"theory", "--out", dir.string(), "--override", "theory.ranks=0"}).code == 2);

    const CliResult full = cli({"theory", "--out", dir.string(), "--override", "theory.d=8", "--override",
                                "theory.ranks=8", "--override", "theory.draws=100"});
    CHECK(full.code == 0);
    const std::string row = slurp(dir / "theory.csv").substr(std::string("rank,bound,empirical,constructive_error,tail_decay,elbow\n").size());
    CHECK(row.rfind("8,0,0,", 0) == 0);
}

TEST_CASE("report aggregates and rejects foreign schemas") {
    const fs::path dir = test::temp_dir("cli_report");
    MetricsRow r;
    r.run_id = "run0000";
    r.dataset = "toy";
    r.regime = "adapter_tune";
    r.rank = 8;
    r.split = "val";
    r.top1 = 91.25;
    write_metrics_csv((dir / "m.csv").string(), {r});
    const CliResult ok = cli({"report", (dir / "m.csv").string(), "--out", (dir / "rep").string()});
    CHECK(ok.code == 0);
    CHECK(ok.out.find("91.25 +- 0.00") != std::string::npos);
    CHECK(fs::exists(dir / "rep" / "summary.csv"));

    std::ofstream(dir / "bad.csv") << "run_id,top1\nrun0000,1\n";
    const CliResult bad = cli({"report", (dir / "m.csv").string(), (dir / "bad.csv").string()});
    CHECK(bad.code == 1);
    CHECK(bad.err.find("bad.csv") != std::string::npos);
}

TEST_CASE("tiny train and sweep end to end") {
    const fs::path dir = test::temp_dir("cli_train");
    std::vector<std::string> args = {"train", "--out", (dir / "train").string()};
    for (const auto& o : tiny_overrides()) args.push_back(o);
    const CliResult t = cli(args);
    CHECK_MESSAGE(t.code == 0, t.err);
    CHECK(fs::exists(dir / "train" / "metrics.csv"));
    CHECK(fs::exists(dir / "train" / "pretrain_metrics.csv"));
    const EncoderState st = load_checkpoint((dir / "train" / "final.ckpt").string());
    CHECK(st.config.rank == 2);
    const auto rows = read_metrics_csv((dir / "train" / "metrics.csv").string());
    CHECK(rows.size() == 2);

    // a second identical run gives the same metrics up to wall time
    const std::string first = slurp(dir / "train" / "metrics.csv");
    const CliResult t2 = cli(args);
    CHECK(t2.code == 0);
    CHECK(canonicalize_metrics_csv(slurp(dir / "train" / "metrics.csv")) == canonicalize_metrics_csv(first));

    args = {"sweep", "--out", (dir / "sweep").string(), "--override", "sweep.rank=1,2", "--override", "sweep.seeds=0,1"};
    for (const auto& o : tiny_overrides()) args.push_back(o);
    const CliResult s = cli(args);
    CHECK_MESSAGE(s.code == 0, s.err);
    const std::string summary = slurp(dir / "sweep" / "summary.csv");
    CHECK(std::count(summary.begin(), summary.end(), '\n') == 3);
}
