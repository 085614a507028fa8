#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

std::string cli_path() {
    if (const char* env = std::getenv("BNET_CLI")) return env;
    // Fall back to the binary next to this test executable.
    std::error_code ec;
    fs::path self = fs::read_symlink("/proc/self/exe", ec);
    if (!ec) {
        fs::path sibling = self.parent_path() / "bnet";
        if (fs::exists(sibling)) return sibling.string();
    }
    return "./bnet";
}

struct CliResult {
    int code = -1;
    std::string out;
};

struct CliFixture {
    fs::path root;

    CliFixture() {
        root = fs::temp_directory_path() /
               ("bnet_cli_test_" + std::to_string(::getpid()));
        fs::remove_all(root);
        fs::create_directories(root / "mnist");
        write_idx_pair("train", 96);
        write_idx_pair("t10k", 48);
        std::ofstream cfg(root / "run.json");
        cfg << R"({
  "dataset": "mnist",
  "init": "gaussian",
  "dense_widths": [400, 200],
  "classes": 10,
  "learning_rate": 0.02,
  "batch_size": 16,
  "total_steps": 30,
  "eval_interval": 10,
  "tau": 1.0,
  "K": 4,
  "patience": 10,
  "resample_until": 20,
  "seed": 11,
  "augment": false,
  "validation_size": 16
})";
    }
    ~CliFixture() { fs::remove_all(root); }

    void write_be32(std::ofstream& f, uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
        f.write(reinterpret_cast<char*>(b), 4);
    }

    // Minimal IDX pair in the canonical 28x28 shape with i%10 labels.
    void write_idx_pair(const std::string& stem, int n) {
        std::ofstream img(root / "mnist" / (stem + "-images-idx3-ubyte"), std::ios::binary);
        write_be32(img, 0x803);
        write_be32(img, n);
        write_be32(img, 28);
        write_be32(img, 28);
        for (int i = 0; i < n; ++i)
            for (int p = 0; p < 784; ++p) {
                unsigned char v = static_cast<unsigned char>((i * 131 + p * 7) % 256);
                img.write(reinterpret_cast<char*>(&v), 1);
            }
        std::ofstream lab(root / "mnist" / (stem + "-labels-idx1-ubyte"), std::ios::binary);
        write_be32(lab, 0x801);
        write_be32(lab, n);
        for (int i = 0; i < n; ++i) {
            unsigned char v = static_cast<unsigned char>(i % 10);
            lab.write(reinterpret_cast<char*>(&v), 1);
        }
    }

    CliResult run(const std::string& args, const std::string& env_prefix = "") {
        fs::path capture = root / "capture.txt";
        std::string cmd = env_prefix + (env_prefix.empty() ? "" : " ") + cli_path() + " " + args +
                          " >" + capture.string() + " 2>&1";
        int raw = std::system(cmd.c_str());
        CliResult r;
        r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
        std::ifstream in(capture);
        std::stringstream ss;
        ss << in.rdbuf();
        r.out = ss.str();
        return r;
    }

    std::string data_flag() const { return "--data-dir " + (root).string(); }
    std::string config_flag() const { return "--config " + (root / "run.json").string(); }
};

bool contains(const std::string& hay, const std::string& needle) {
    return hay.find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("cli end-to-end pipeline on a synthetic dataset") {
    CliFixture fx;
    fs::path out = fx.root / "run_a";

    CliResult presets = fx.run("presets");
    CHECK(presets.code == 0);
    CHECK(contains(presets.out, "mnist-dense-desk"));
    CHECK(contains(presets.out, "cifar-conv-tiny"));
    CHECK(contains(presets.out, "cifar-conv-L"));

    CliResult train =
        fx.run("train " + fx.config_flag() + " " + fx.data_flag() + " --out " + out.string());
    INFO(train.out);
    REQUIRE(train.code == 0);
    CHECK(contains(train.out, "steps=30"));
    CHECK(contains(train.out, "best_val_acc="));
    CHECK(contains(train.out, "test_disc_acc="));
    CHECK(fs::exists(out / "config.json"));
    CHECK(fs::exists(out / "metrics.jsonl"));
    CHECK(fs::exists(out / "last.ckpt"));
    CHECK(fs::exists(out / "best.ckpt"));

    // The echoed config is self-contained: eval works from it alone.
    CliResult ev = fx.run("eval --config " + (out / "config.json").string() + " " +
                          (out / "last.ckpt").string());
    INFO(ev.out);
    REQUIRE(ev.code == 0);
    CHECK(contains(ev.out, "relaxed_acc="));
    CHECK(contains(ev.out, "disc_acc="));
    CHECK(contains(ev.out, "gap="));
    CHECK(contains(ev.out, "confusion 0"));
    CHECK(contains(ev.out, "confusion 9"));

    CliResult evr = fx.run("eval --config " + (out / "config.json").string() +
                           " --mode relaxed --split train " + (out / "last.ckpt").string());
    REQUIRE(evr.code == 0);
    CHECK(contains(evr.out, "relaxed_acc="));
    CHECK_FALSE(contains(evr.out, "gap="));

    fs::path netlist = fx.root / "model.netlist";
    CliResult comp = fx.run("compile " + (out / "best.ckpt").string() + " --out " +
                            netlist.string());
    INFO(comp.out);
    REQUIRE(comp.code == 0);
    CHECK(contains(comp.out, "neurons=600"));
    CHECK(contains(comp.out, "inputs=784"));
    {
        std::ifstream nl(netlist);
        std::string first;
        std::getline(nl, first);
        CHECK(contains(first, "bnet v1 784 600 10 20"));
    }

    fs::path pruned = fx.root / "model.pruned.netlist";
    CliResult pr = fx.run("prune " + netlist.string() + " --out " + pruned.string() +
                          " --verify-samples 256");
    INFO(pr.out);
    REQUIRE(pr.code == 0);
    CHECK(contains(pr.out, "neurons="));
    CHECK(contains(pr.out, "bops="));
    CHECK(contains(pr.out, "verified_vectors=256"));
    CHECK(fs::exists(pruned));

    // A pruned netlist evaluates like the original model.
    CliResult evn = fx.run("eval --config " + (out / "config.json").string() + " " +
                           pruned.string());
    REQUIRE(evn.code == 0);
    CHECK(contains(evn.out, "disc_acc="));

    CliResult bench = fx.run("bench " + pruned.string() +
                             " --samples 2048 --scalar-samples 256");
    INFO(bench.out);
    REQUIRE(bench.code == 0);
    CHECK(contains(bench.out, "gates="));
    CHECK(contains(bench.out, "packed_sps="));
    CHECK(contains(bench.out, "speedup="));

    fs::path svg = fx.root / "curve.svg";
    CliResult plot = fx.run("plot " + (out / "metrics.jsonl").string() + " --out " + svg.string());
    INFO(plot.out);
    REQUIRE(plot.code == 0);
    REQUIRE(fs::exists(svg));
    {
        std::ifstream in(svg);
        std::stringstream ss;
        ss << in.rdbuf();
        CHECK(contains(ss.str(), "<svg"));
        CHECK(contains(ss.str(), "polyline"));
    }
}

TEST_CASE("cli training runs are reproducible and honor overrides") {
    CliFixture fx;
    fs::path a = fx.root / "rep_a", b = fx.root / "rep_b", c = fx.root / "rep_c";

    std::string base = "train " + fx.config_flag() + " " + fx.data_flag();
    REQUIRE(fx.run(base + " --out " + a.string()).code == 0);
    REQUIRE(fx.run(base + " --out " + b.string()).code == 0);
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    CHECK(slurp(a / "metrics.jsonl") == slurp(b / "metrics.jsonl"));

    // A different seed changes the trajectory.
    REQUIRE(fx.run(base + " --seed 99 --out " + c.string()).code == 0);
    CHECK(slurp(a / "metrics.jsonl") != slurp(c / "metrics.jsonl"));

    // --steps overrides the config, and the override is echoed.
    fs::path d = fx.root / "rep_d";
    CliResult r = fx.run(base + " --steps 12 --out " + d.string());
    REQUIRE(r.code == 0);
    CHECK(contains(r.out, "steps=12"));

    // BNET_DATA_DIR substitutes for --data-dir.
    fs::path e = fx.root / "rep_e";
    CliResult env_run = fx.run("train " + fx.config_flag() + " --steps 5 --out " + e.string(),
                               "BNET_DATA_DIR=" + fx.root.string());
    INFO(env_run.out);
    CHECK(env_run.code == 0);
}

TEST_CASE("cli reports usage and data errors with nonzero exits") {
    CliFixture fx;
    CHECK(fx.run("").code != 0);                                // subcommand required
    CHECK(fx.run("train --preset no-such --out /tmp/x").code == 1);
    CHECK(fx.run("train " + fx.data_flag() + " --out /tmp/x").code != 0);  // no config/preset
    CHECK(fx.run("eval " + fx.config_flag() + " /does/not/exist.ckpt").code == 1);
    CHECK(fx.run("compile /does/not/exist.ckpt --out /tmp/x.netlist").code == 1);
    CHECK(fx.run("plot /does/not/exist.jsonl").code == 1);

    // Unknown config keys are rejected before any work happens.
    std::ofstream bad(fx.root / "bad.json");
    bad << R"({"dataset": "mnist", "not_a_key": true})";
    bad.close();
    CliResult r = fx.run("train --config " + (fx.root / "bad.json").string() + " " +
                         fx.data_flag() + " --out " + (fx.root / "x").string());
    CHECK(r.code == 1);
    CHECK(contains(r.out, "unknown key"));
}
