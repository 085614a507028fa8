// bnet: train logic-gate networks, compile/prune the Boolean circuit, and
// evaluate or benchmark the result.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "bnet/circuit.hpp"
#include "bnet/config.hpp"
#include "bnet/train.hpp"

namespace fs = std::filesystem;
using namespace bnet;

namespace {

struct CommonOpts {
    std::string config_path, preset, data_dir, out;
    uint64_t seed = 0;
    bool seed_set = false;
    long long steps = -1;
    bool no_aug = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "JSON config file");
    cmd->add_option("--preset", o.preset, "named preset (see the presets subcommand)");
    cmd->add_option("--data-dir", o.data_dir, "dataset directory (overrides BNET_DATA_DIR)");
    cmd->add_option("--seed", o.seed, "RNG seed")->each([&](const std::string&) {
        o.seed_set = true;
    });
    cmd->add_option("--steps", o.steps, "override total training steps");
    cmd->add_flag("--no-aug", o.no_aug, "disable data augmentation");
    cmd->add_option("--out", o.out, "output directory / file");
}

RunConfig resolve_config(const CommonOpts& o, bool need_out_dir) {
    RunConfig rc;
    bool have = false;
    if (!o.preset.empty()) {
        rc = preset_config(o.preset);
        have = true;
    }
    if (!o.config_path.empty()) {
        std::ifstream in(o.config_path);
        if (!in) throw std::invalid_argument("cannot open config: " + o.config_path);
        std::stringstream ss;
        ss << in.rdbuf();
        rc = parse_run_config(ss.str(), have ? &rc : nullptr);
        have = true;
    }
    if (!have) throw std::invalid_argument("need --preset or --config");
    if (!o.data_dir.empty())
        rc.data_dir = o.data_dir;
    else if (const char* env = std::getenv("BNET_DATA_DIR"))
        rc.data_dir = env;
    if (o.seed_set) rc.train.seed = o.seed;
    if (o.steps >= 0) rc.train.total_steps = o.steps;
    if (o.no_aug) rc.train.augment = false;
    if (!o.out.empty()) rc.out_dir = o.out;
    if (need_out_dir && rc.out_dir.empty()) throw std::invalid_argument("need --out");
    rc.validate();
    return rc;
}

BooleanCircuit import_netlist_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open netlist: " + path);
    return import_netlist(in);
}

bool is_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot open artifact: " + path);
    char magic[8] = {};
    in.read(magic, 8);
    return in.gcount() == 8 && std::string(magic, 8) == "BNETCKP1";
}

void print_confusion(const std::vector<int>& preds, const Dataset& ds, int classes) {
    std::vector<std::vector<long long>> m(classes, std::vector<long long>(classes, 0));
    for (size_t s = 0; s < preds.size(); ++s) ++m[ds.labels[s]][preds[s]];
    for (int t = 0; t < classes; ++t) {
        std::cout << "confusion " << t;
        for (int p = 0; p < classes; ++p) std::cout << ' ' << m[t][p];
        std::cout << '\n';
    }
}

int cmd_train(const CommonOpts& o) {
    RunConfig rc = resolve_config(o, false);
    fs::create_directories(rc.out_dir);
    {
        std::ofstream cf(rc.out_dir + "/config.json", std::ios::trunc);
        cf << dump_run_config(rc);
    }
    LoadedData data = load_dataset(rc.dataset, rc.data_dir);
    ThermometerCodec codec = ThermometerCodec::make(rc.thermometer_bits);
    Network net = build_network(rc);
    std::ofstream metrics(rc.out_dir + "/metrics.jsonl", std::ios::app);
    Trainer trainer(std::move(net), &data.train, &data.test, codec, rc.train, rc.out_dir);
    TrainResult r = trainer.run(&metrics);
    std::cout << "steps=" << r.steps_run << " best_val_acc=" << r.best_acc
              << " best_step=" << r.best_step << '\n';
    std::cout << "test_relaxed_acc=" << r.final_relaxed_acc
              << " test_disc_acc=" << r.final_disc_acc
              << " gap=" << (r.final_relaxed_acc - r.final_disc_acc) << '\n';
    return 0;
}

int cmd_compile(const std::string& ckpt_path, const std::string& out_path) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    Network snap = ck.net.fully_frozen() ? std::move(ck.net) : ck.net.discretized_snapshot();
    BooleanCircuit c = compile(snap);
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw std::invalid_argument("cannot open output: " + out_path);
    export_netlist(c, out);
    std::cout << "neurons=" << c.num_nodes() << " inputs=" << c.num_inputs << '\n';
    return 0;
}

int cmd_prune(const std::string& in_path, const std::string& out_path, long long samples,
              uint64_t seed) {
    BooleanCircuit c = import_netlist_file(in_path);
    PruneResult pr = prune(c);
    Rng rng(hash_mix(seed, 0x7072756e65ULL));
    EquivalenceReport rep = check_equivalence(c, pr.circuit, samples, rng);
    if (!rep.equivalent) {
        std::cerr << "prune verification failed: counterexample found after "
                  << rep.vectors_checked << " vectors; refusing to write output\n";
        return 2;
    }
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw std::invalid_argument("cannot open output: " + out_path);
    export_netlist(pr.circuit, out);
    std::cout << "neurons=" << pr.metrics.neurons << " bops=" << pr.metrics.bops
              << " verified_vectors=" << rep.vectors_checked
              << (rep.exhaustive ? " (exhaustive)" : "") << '\n';
    return 0;
}

int cmd_eval(const CommonOpts& o, const std::string& artifact, const std::string& split,
             const std::string& mode) {
    RunConfig rc = resolve_config(o, false);
    LoadedData data = load_dataset(rc.dataset, rc.data_dir);
    const Dataset& ds = split == "train" ? data.train : data.test;
    ThermometerCodec codec = ThermometerCodec::make(rc.thermometer_bits);

    if (is_checkpoint_file(artifact)) {
        Checkpoint ck = load_checkpoint(artifact);
        double relaxed = -1.0, disc = -1.0;
        std::vector<int> preds;
        if (mode == "relaxed" || mode == "both") {
            preds = predict(ck.net, ds, codec, EvalMode::Relaxed);
            int correct = 0;
            for (size_t s = 0; s < preds.size(); ++s) correct += preds[s] == ds.labels[s];
            relaxed = static_cast<double>(correct) / preds.size();
        }
        if (mode == "discretized" || mode == "both") {
            preds = predict(ck.net, ds, codec, EvalMode::Discretized);
            int correct = 0;
            for (size_t s = 0; s < preds.size(); ++s) correct += preds[s] == ds.labels[s];
            disc = static_cast<double>(correct) / preds.size();
        }
        if (mode == "both") {
            char buf[128];
            std::snprintf(buf, sizeof(buf), "relaxed_acc=%.4f disc_acc=%.4f gap=%.4f", relaxed,
                          disc, relaxed - disc);
            std::cout << buf << '\n';
        } else {
            std::cout << (mode == "relaxed" ? "relaxed_acc=" : "disc_acc=")
                      << (mode == "relaxed" ? relaxed : disc) << '\n';
        }
        print_confusion(preds, ds, ck.net.head.num_classes);
    } else {
        BooleanCircuit c = import_netlist_file(artifact);
        std::vector<int> preds = predict_circuit(c, ds, codec);
        int correct = 0;
        for (size_t s = 0; s < preds.size(); ++s) correct += preds[s] == ds.labels[s];
        std::cout << "disc_acc=" << static_cast<double>(correct) / preds.size() << '\n';
        print_confusion(preds, ds, c.num_classes);
    }
    return 0;
}

int cmd_bench(const std::string& netlist_path, int packed_samples, int scalar_samples,
              uint64_t seed) {
    BooleanCircuit c = import_netlist_file(netlist_path);
    Rng rng(hash_mix(seed, 0x62656e6368ULL));
    using clock = std::chrono::steady_clock;

    std::vector<uint8_t> input(c.num_inputs);
    auto t0 = clock::now();
    long long sink = 0;
    for (int s = 0; s < scalar_samples; ++s) {
        for (auto& b : input) b = static_cast<uint8_t>(rng.next_u64() & 1);
        sink += eval_reference(c, input).predicted;
    }
    double scalar_sec = std::chrono::duration<double>(clock::now() - t0).count();

    PackedBits packed;
    packed.resize(c.num_inputs, packed_samples);
    for (uint64_t& w : packed.data) w = rng.next_u64();
    auto t1 = clock::now();
    PackedEval pe = eval_bitpacked(c, packed);
    double packed_sec = std::chrono::duration<double>(clock::now() - t1).count();
    sink += pe.predicted.empty() ? 0 : pe.predicted[0];

    double scalar_sps = scalar_samples / std::max(scalar_sec, 1e-12);
    double packed_sps = packed_samples / std::max(packed_sec, 1e-12);
    std::cout << "gates=" << c.num_nodes() << " scalar_sps=" << scalar_sps
              << " packed_sps=" << packed_sps << " speedup=" << packed_sps / scalar_sps
              << " (check " << sink % 10 << ")\n";
    return 0;
}

// Minimal SVG line chart of the accuracy curves in a metrics file.
int cmd_plot(const std::string& metrics_path, const std::string& out_path) {
    std::ifstream in(metrics_path);
    if (!in) throw std::invalid_argument("cannot open metrics: " + metrics_path);
    std::vector<double> steps, relaxed, disc;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        steps.push_back(j.value("step", 0.0));
        relaxed.push_back(j.value("val_relaxed_acc", -1.0));
        disc.push_back(j.value("val_disc_acc", -1.0));
    }
    if (steps.empty()) throw std::invalid_argument("metrics file has no records");

    const int W = 720, H = 420, ML = 60, MR = 20, MT = 20, MB = 45;
    double xmax = *std::max_element(steps.begin(), steps.end());
    if (xmax <= 0) xmax = 1;
    auto px = [&](double s) { return ML + (W - ML - MR) * s / xmax; };
    auto py = [&](double a) { return MT + (H - MT - MB) * (1.0 - a); };
    auto polyline = [&](const std::vector<double>& ys, const char* color) {
        std::string pts;
        for (size_t i = 0; i < steps.size(); ++i) {
            if (ys[i] < 0) continue;
            pts += std::to_string(px(steps[i])) + "," + std::to_string(py(ys[i])) + " ";
        }
        return "<polyline fill=\"none\" stroke=\"" + std::string(color) +
               "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    };
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw std::invalid_argument("cannot open output: " + out_path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (int i = 0; i <= 10; ++i) {
        double a = i / 10.0;
        out << "<line x1=\"" << ML << "\" y1=\"" << py(a) << "\" x2=\"" << W - MR << "\" y2=\""
            << py(a) << "\" stroke=\"#e0e0e0\"/>\n";
        out << "<text x=\"" << ML - 8 << "\" y=\"" << py(a) + 4
            << "\" text-anchor=\"end\" font-size=\"11\">" << a << "</text>\n";
    }
    out << "<line x1=\"" << ML << "\" y1=\"" << py(0) << "\" x2=\"" << W - MR << "\" y2=\""
        << py(0) << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ML << "\" y1=\"" << MT << "\" x2=\"" << ML << "\" y2=\"" << py(0)
        << "\" stroke=\"black\"/>\n";
    out << polyline(relaxed, "#1f77b4") << polyline(disc, "#d62728");
    out << "<text x=\"" << W / 2 << "\" y=\"" << H - 10
        << "\" text-anchor=\"middle\" font-size=\"12\">step</text>\n";
    out << "<text x=\"" << W - MR - 200 << "\" y=\"" << MT + 14
        << "\" font-size=\"12\" fill=\"#1f77b4\">validation relaxed</text>\n";
    out << "<text x=\"" << W - MR - 200 << "\" y=\"" << MT + 30
        << "\" font-size=\"12\" fill=\"#d62728\">validation discretized</text>\n";
    out << "</svg>\n";
    std::cout << "wrote " << out_path << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"logic-gate network trainer and Boolean circuit toolkit"};
    app.require_subcommand(1);
    CLI::App* presets_cmd = app.add_subcommand("presets", "list preset names");

    CommonOpts train_o, eval_o;
    CLI::App* train_cmd = app.add_subcommand("train", "train a model");
    add_common(train_cmd, train_o);

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint or netlist");
    add_common(eval_cmd, eval_o);
    std::string eval_artifact, eval_split = "test", eval_mode = "both";
    eval_cmd->add_option("artifact", eval_artifact, "checkpoint or netlist path")->required();
    eval_cmd->add_option("--split", eval_split, "test|train")
        ->check(CLI::IsMember({"test", "train"}));
    eval_cmd->add_option("--mode", eval_mode, "relaxed|discretized|both")
        ->check(CLI::IsMember({"relaxed", "discretized", "both"}));

    CLI::App* compile_cmd = app.add_subcommand("compile", "compile a checkpoint to a netlist");
    std::string compile_in, compile_out;
    compile_cmd->add_option("checkpoint", compile_in, "checkpoint path")->required();
    compile_cmd->add_option("--out", compile_out, "netlist output path")->required();

    CLI::App* prune_cmd = app.add_subcommand("prune", "prune a netlist");
    std::string prune_in, prune_out;
    long long prune_samples = 512;
    uint64_t prune_seed = 1;
    prune_cmd->add_option("netlist", prune_in, "netlist path")->required();
    prune_cmd->add_option("--out", prune_out, "pruned netlist output path")->required();
    prune_cmd->add_option("--verify-samples", prune_samples, "equivalence sample count");
    prune_cmd->add_option("--seed", prune_seed, "verification RNG seed");

    CLI::App* bench_cmd = app.add_subcommand("bench", "benchmark packed vs scalar inference");
    std::string bench_in;
    int bench_packed = 16384, bench_scalar = 2048;
    uint64_t bench_seed = 1;
    bench_cmd->add_option("netlist", bench_in, "netlist path")->required();
    bench_cmd->add_option("--samples", bench_packed, "packed sample count");
    bench_cmd->add_option("--scalar-samples", bench_scalar, "scalar sample count");
    bench_cmd->add_option("--seed", bench_seed, "input RNG seed");

    CLI::App* plot_cmd = app.add_subcommand("plot", "render metrics to an SVG chart");
    std::string plot_in, plot_out = "metrics.svg";
    plot_cmd->add_option("metrics", plot_in, "metrics.jsonl path")->required();
    plot_cmd->add_option("--out", plot_out, "SVG output path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }
    try {
        if (presets_cmd->parsed()) {
            for (const std::string& n : preset_names()) std::cout << n << '\n';
            return 0;
        }
        if (train_cmd->parsed()) return cmd_train(train_o);
        if (eval_cmd->parsed()) return cmd_eval(eval_o, eval_artifact, eval_split, eval_mode);
        if (compile_cmd->parsed()) return cmd_compile(compile_in, compile_out);
        if (prune_cmd->parsed()) return cmd_prune(prune_in, prune_out, prune_samples, prune_seed);
        if (bench_cmd->parsed()) return cmd_bench(bench_in, bench_packed, bench_scalar, bench_seed);
        if (plot_cmd->parsed()) return cmd_plot(plot_in, plot_out);
    } catch (const TrainAbortError& e) {
        std::cerr << "aborted: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
