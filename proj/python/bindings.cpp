#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "bnet/circuit.hpp"
#include "bnet/config.hpp"
#include "bnet/train.hpp"

namespace py = pybind11;
using namespace bnet;
namespace fs = std::filesystem;

namespace {

const char* class_name(GateClass c) {
    switch (c) {
        case GateClass::Const0: return "const0";
        case GateClass::Const1: return "const1";
        case GateClass::PassA: return "pass_a";
        case GateClass::PassB: return "pass_b";
        case GateClass::NotA: return "not_a";
        case GateClass::NotB: return "not_b";
        case GateClass::Nontrivial: return "nontrivial";
    }
    return "nontrivial";
}

RunConfig resolve(const std::string& config_json, const std::string& data_dir,
                  const std::string& out_dir) {
    RunConfig rc = parse_run_config(config_json, nullptr);
    if (!data_dir.empty()) rc.data_dir = data_dir;
    if (!out_dir.empty()) rc.out_dir = out_dir;
    rc.validate();
    return rc;
}

py::dict train_py(const std::string& config_json, const std::string& data_dir,
                  const std::string& out_dir) {
    RunConfig rc = resolve(config_json, data_dir, out_dir);
    TrainResult r;
    {
        py::gil_scoped_release release;
        LoadedData data = load_dataset(rc.dataset, rc.data_dir);
        fs::create_directories(rc.out_dir);
        {
            std::ofstream cfg(fs::path(rc.out_dir) / "config.json");
            cfg << dump_run_config(rc);
        }
        std::ofstream metrics(fs::path(rc.out_dir) / "metrics.jsonl", std::ios::app);
        Trainer t(build_network(rc), &data.train, &data.test,
                  ThermometerCodec::make(rc.thermometer_bits), rc.train, rc.out_dir);
        r = t.run(&metrics);
    }
    py::dict d;
    d["steps"] = r.steps_run;
    d["best_val_acc"] = r.best_acc;
    d["best_step"] = r.best_step;
    d["test_relaxed_acc"] = r.final_relaxed_acc;
    d["test_disc_acc"] = r.final_disc_acc;
    return d;
}

double evaluate_checkpoint(const std::string& checkpoint, const std::string& config_json,
                           const std::string& data_dir, const std::string& split,
                           const std::string& mode) {
    if (split != "test" && split != "train")
        throw std::invalid_argument("split must be test or train");
    if (mode != "relaxed" && mode != "discretized")
        throw std::invalid_argument("mode must be relaxed or discretized");
    RunConfig rc = resolve(config_json, data_dir, "unused");
    py::gil_scoped_release release;
    Network net = load_checkpoint(checkpoint).net;
    LoadedData data = load_dataset(rc.dataset, rc.data_dir);
    return evaluate(net, split == "test" ? data.test : data.train,
                    ThermometerCodec::make(rc.thermometer_bits),
                    mode == "relaxed" ? EvalMode::Relaxed : EvalMode::Discretized);
}

std::string compile_checkpoint(const std::string& checkpoint) {
    Network net = load_checkpoint(checkpoint).net;
    BooleanCircuit c = compile(net.fully_frozen() ? net : net.discretized_snapshot());
    return export_netlist_string(c);
}

py::dict prune_netlist(const std::string& netlist, long long verify_samples, uint64_t seed) {
    BooleanCircuit c = import_netlist_string(netlist);
    PruneResult pr = prune(c);
    Rng rng(hash_mix(seed, 0x7072756e65ULL));
    EquivalenceReport rep = check_equivalence(c, pr.circuit, verify_samples, rng);
    py::dict d;
    d["netlist"] = export_netlist_string(pr.circuit);
    d["neurons"] = pr.metrics.neurons;
    d["bops"] = pr.metrics.bops;
    d["equivalent"] = rep.equivalent;
    d["exhaustive"] = rep.exhaustive;
    d["vectors_checked"] = rep.vectors_checked;
    return d;
}

double netlist_accuracy(const std::string& netlist, const std::string& config_json,
                        const std::string& data_dir, const std::string& split) {
    if (split != "test" && split != "train")
        throw std::invalid_argument("split must be test or train");
    RunConfig rc = resolve(config_json, data_dir, "unused");
    BooleanCircuit c = import_netlist_string(netlist);
    py::gil_scoped_release release;
    LoadedData data = load_dataset(rc.dataset, rc.data_dir);
    const Dataset& ds = split == "test" ? data.test : data.train;
    std::vector<int> preds = predict_circuit(c, ds, ThermometerCodec::make(rc.thermometer_bits));
    long long correct = 0;
    for (size_t i = 0; i < preds.size(); ++i) correct += preds[i] == ds.labels[i];
    return static_cast<double>(correct) / static_cast<double>(preds.size());
}

}  // namespace

PYBIND11_MODULE(_bnet, m) {
    m.doc() = "Differentiable logic gate networks: training, compilation, pruning";

    m.def("preset_names", &preset_names, "Names of the built-in model presets");
    m.def(
        "preset_config", [](const std::string& name) { return dump_run_config(preset_config(name)); },
        py::arg("name"), "Preset configuration as a JSON string");

    m.def(
        "eval_boolean",
        [](int g, bool a, bool b) { return eval_boolean(static_cast<GateId>(g), a, b); },
        py::arg("gate"), py::arg("a"), py::arg("b"), "Boolean gate semantics, gate in 1..16");
    m.def(
        "eval_relaxed",
        [](int g, double x, double y) { return eval_relaxed(static_cast<GateId>(g), x, y); },
        py::arg("gate"), py::arg("x"), py::arg("y"),
        "Multilinear relaxation of a gate on [0,1]^2");
    m.def(
        "relaxed_partials",
        [](int g, double x, double y) {
            auto [dx, dy] = relaxed_partials(static_cast<GateId>(g), x, y);
            return py::make_tuple(dx, dy);
        },
        py::arg("gate"), py::arg("x"), py::arg("y"), "(d/dx, d/dy) of the relaxed gate");
    m.def(
        "gate_class",
        [](int g) { return std::string(class_name(classify_gate(static_cast<GateId>(g)))); },
        py::arg("gate"), "Gate classification: const/pass/not/nontrivial");

    m.def("train", &train_py, py::arg("config"), py::arg("data_dir") = "",
          py::arg("out_dir") = "",
          "Train from a JSON config; returns final metrics. Resumes from\n"
          "<out_dir>/last.ckpt when present.");
    m.def("evaluate_checkpoint", &evaluate_checkpoint, py::arg("checkpoint"), py::arg("config"),
          py::arg("data_dir") = "", py::arg("split") = "test", py::arg("mode") = "discretized",
          "Accuracy of a saved checkpoint on a dataset split");
    m.def("compile_checkpoint", &compile_checkpoint, py::arg("checkpoint"),
          "Discretize a checkpoint and return its gate-level netlist");
    m.def("prune_netlist", &prune_netlist, py::arg("netlist"), py::arg("verify_samples") = 512,
          py::arg("seed") = 1,
          "Prune a netlist; returns the reduced netlist, metrics and the\n"
          "equivalence-check report");
    m.def("netlist_accuracy", &netlist_accuracy, py::arg("netlist"), py::arg("config"),
          py::arg("data_dir") = "", py::arg("split") = "test",
          "Bit-packed circuit accuracy on a dataset split");
}
