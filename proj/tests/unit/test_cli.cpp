#include "toy.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
    int status = -1;
    std::string output;
};

// Runs the CLI with stdout and stderr captured to a file inside `dir`.
Result run_cli(const fs::path& dir, const std::string& args) {
    const fs::path log = dir / "cli.log";
    const std::string cmd = std::string("\"") + SYLLO_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    Result r;
    const int raw = std::system(cmd.c_str());
    r.status = raw == -1 ? -1 : WEXITSTATUS(raw);
    std::ifstream in(log);
    std::ostringstream s;
    s << in.rdbuf();
    r.output = s.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

struct Fixture {
    toy::TempDir tmp{"syllo_cli"};
    fs::path model = tmp / "model";

    Fixture() { toy::build_text_toy(model); }

    std::string common(const std::string& out) const {
        return "--checkpoint \"" + model.string() + "\" --out \"" + (tmp / out).string() + "\" --jobs 2";
    }
};

} // namespace

TEST_CASE("cli commands run end to end on a toy checkpoint") {
    Fixture f;

    SUBCASE("gen") {
        const auto r = run_cli(f.tmp.path(), "gen " + f.common("gen") + " --n 6 --kind os");
        INFO(r.output);
        REQUIRE(r.status == 0);
        std::ifstream in(f.tmp / "gen/dataset.jsonl");
        int lines = 0;
        for (std::string line; std::getline(in, line);) {
            const auto j = json::parse(line);
            CHECK(j.contains("clean"));
            ++lines;
        }
        CHECK(lines == 6);
        CHECK(read_json(f.tmp / "gen/config.json")["kind"] == "os");
    }

    SUBCASE("eval") {
        const auto r = run_cli(f.tmp.path(), "eval " + f.common("eval") + " --n 8");
        INFO(r.output);
        REQUIRE(r.status == 0);
        const auto s = read_json(f.tmp / "eval/summary.json");
        CHECK(s["n"] == 8);
        CHECK(s["odds_ratio"].get<double>() == doctest::Approx(std::exp(s["ald"].get<double>())));
        CHECK(slurp(f.tmp / "eval/instances.csv").rfind("# schema: instances/v1\n", 0) == 0);
    }

    SUBCASE("invalid arguments fail without leaving outputs") {
        const auto r = run_cli(f.tmp.path(), "eval " + f.common("bad") + " --n 0");
        CHECK(r.status != 0);
        CHECK(r.output.find("n") != std::string::npos);
        CHECK_FALSE(fs::exists(f.tmp / "bad"));
        CHECK(run_cli(f.tmp.path(), "eval " + f.common("bad") + " --kind xx").status != 0);
        CHECK(run_cli(f.tmp.path(), "bogus").status != 0);
    }

    SUBCASE("patch") {
        const auto r = run_cli(f.tmp.path(), "patch " + f.common("patch") + " --n 4 --format csv --format json --format svg");
        INFO(r.output);
        REQUIRE(r.status == 0);
        for (const char* name : {"heads_direct.csv", "heads_direct_grid.csv", "heads_direct.json", "heads_direct.svg"})
            CHECK(fs::exists(f.tmp / "patch" / name));
        CHECK(read_json(f.tmp / "patch/heads_direct.json")["entries"].size() == 4);

        const auto mlp = run_cli(f.tmp.path(), "patch " + f.common("mlp") + " --n 4 --mode mlps-direct --without-attention");
        INFO(mlp.output);
        CHECK(mlp.status == 0);
        CHECK(fs::exists(f.tmp / "mlp/mlps_without_attn.csv"));

        const auto qkv = run_cli(f.tmp.path(), "patch " + f.common("qkv") + " --n 4 --mode qkv --receiver 1.1 --source corrupted");
        INFO(qkv.output);
        CHECK(qkv.status == 0);
        for (const char* name : {"qkv_q.csv", "qkv_k.csv", "qkv_v.csv"}) CHECK(fs::exists(f.tmp / "qkv" / name));

        CHECK(run_cli(f.tmp.path(), "patch " + f.common("noreceiver") + " --n 4 --mode qkv").status != 0);
        CHECK_FALSE(fs::exists(f.tmp / "noreceiver"));
    }

    SUBCASE("circuit: the full model is perfectly faithful") {
        const auto r = run_cli(f.tmp.path(), "circuit " + f.common("circ") + " --n 6 --circuit full --pairs true/false --pairs good/bad");
        INFO(r.output);
        REQUIRE(r.status == 0);
        const auto t = read_json(f.tmp / "circ/transfer.json");
        REQUIRE(t["columns"].size() == 2);
        for (const auto& col : t["columns"]) CHECK(col["faithfulness"].get<double>() == 0.0);
        CHECK(fs::exists(f.tmp / "circ/circuit.json"));
    }

    SUBCASE("analyze") {
        auto ok = [&](const std::string& out, const std::string& args) {
            const auto r = run_cli(f.tmp.path(), "analyze " + args + " " + f.common(out) + " --n 6");
            INFO(args << "\n" << r.output);
            CHECK(r.status == 0);
            return r;
        };
        ok("qk", "qk --head 1.0 --k 3");
        CHECK(fs::exists(f.tmp / "qk/qk_matrix.csv"));
        CHECK(read_json(f.tmp / "qk/qk_pairs.json")["pairs"].size() == 3);

        ok("trace", "mlp-trace --head 0.1 --mlp 1 --source \" false\"");
        CHECK(fs::exists(f.tmp / "trace/slate_after_ov.csv"));
        CHECK(read_json(f.tmp / "trace/slate_after_mlp_1.json")["top"].size() == 10);

        ok("lens", "lens --head MLP1");
        CHECK(read_json(f.tmp / "lens/lens.json")["top"].size() == 10);

        ok("scatter", "scatter --head 1.1 --target correct");
        CHECK(read_json(f.tmp / "scatter/scatter.json")["head"] == "1.1");

        ok("classify", "classify");
        CHECK(read_json(f.tmp / "classify/classify.json")["heads"].size() == 4);

        ok("diag", "diagnostics");
        CHECK(slurp(f.tmp / "diag/diagnostics.csv").find("1.1,") != std::string::npos);
    }

    SUBCASE("a failure after some outputs were written removes them") {
        const auto r = run_cli(f.tmp.path(), "analyze mlp-trace --head 1.0 --mlp 0 " + f.common("partial"));
        CHECK(r.status != 0);
        CHECK_FALSE(fs::exists(f.tmp / "partial"));

        fs::create_directories(f.tmp / "keep");
        std::ofstream(f.tmp / "keep/other.txt") << "x";
        CHECK(run_cli(f.tmp.path(), "analyze mlp-trace --head 1.0 --mlp 0 " + f.common("keep")).status != 0);
        CHECK(fs::exists(f.tmp / "keep/other.txt"));
        CHECK_FALSE(fs::exists(f.tmp / "keep/slate_after_ov.csv"));
    }

    SUBCASE("rerun reproduces a run from its config") {
        REQUIRE(run_cli(f.tmp.path(), "patch " + f.common("first") + " --n 4 --seed 3").status == 0);
        auto config = read_json(f.tmp / "first/config.json");
        config["out_dir"] = (f.tmp / "second").string();
        std::ofstream(f.tmp / "rerun.json") << config.dump();
        const auto r = run_cli(f.tmp.path(), "rerun \"" + (f.tmp / "rerun.json").string() + "\"");
        INFO(r.output);
        REQUIRE(r.status == 0);
        CHECK(slurp(f.tmp / "first/heads_direct.csv") == slurp(f.tmp / "second/heads_direct.csv"));
    }

    SUBCASE("the checkpoint environment variable is honoured") {
        const std::string out = (f.tmp / "env").string();
        ::setenv("SYLLO_CHECKPOINT", f.model.c_str(), 1);
        const auto r = run_cli(f.tmp.path(), "eval --n 2 --out \"" + out + "\"");
        ::unsetenv("SYLLO_CHECKPOINT");
        INFO(r.output);
        REQUIRE(r.status == 0);
        CHECK(fs::path(read_json(f.tmp / "env/config.json")["checkpoint"].get<std::string>()) == f.model);

        const auto missing = run_cli(f.tmp.path(), "eval --n 2 --checkpoint \"" + (f.tmp / "nowhere").string() +
                                                       "\" --out \"" + (f.tmp / "none").string() + "\"");
        CHECK(missing.status != 0);
        CHECK_FALSE(fs::exists(f.tmp / "none"));
    }
}
