#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "bnet/gates.hpp"
#include "bnet/network.hpp"
#include "bnet/rng.hpp"

namespace bnet {

// Flat Boolean circuit. Refs are value-slot indices: 0..num_inputs-1 are the
// input lines, num_inputs+j is gate node j; kConst0Ref/kConst1Ref are the two
// shared constant nodes. Nodes are stored in topological order (a node only
// references inputs, constants, or earlier nodes).
inline constexpr int32_t kConst0Ref = -1;
inline constexpr int32_t kConst1Ref = -2;

struct CircuitNode {
    uint8_t gate = 1;  // GateId
    int32_t a = kConst0Ref, b = kConst0Ref;
};

struct BooleanCircuit {
    int num_inputs = 0;
    int num_classes = 0;
    int group_size = 0;
    std::vector<CircuitNode> nodes;
    std::vector<std::vector<int32_t>> outputs;  // [class][group_size] refs

    int num_nodes() const { return static_cast<int>(nodes.size()); }
    int slot_of_node(int j) const { return num_inputs + j; }
    void validate() const;  // ref ranges + topological order
};

struct CircuitMetrics {
    long long neurons = 0;  // gate count before pruning
    long long bops = 0;     // gate count after pruning
};

// Compile a fully discretized network into a flat circuit. Conv layers are
// unrolled one gate per output position with padding wired to constant 0;
// output groups follow the GroupSum head.
BooleanCircuit compile(const Network& net);

// Unroll one frozen conv layer: returns the gate nodes for all output
// positions, with refs into [in_slot_base, in_slot_base + in_flat) and
// padding resolved to constant 0. Node order matches the flatten order
// (channel-major), so slot arithmetic stays aligned across layers.
std::vector<CircuitNode> unroll_to_gates(const ConvLayer& layer, int in_slot_base);

// Dead-gate elimination plus bypassing of constant, identity and negation
// gates (negations are absorbed into consumer gates; a negation feeding an
// output directly is kept as a single shared NOT gate per source). The
// result computes identical per-class popcounts on every Boolean input.
struct PruneResult {
    BooleanCircuit circuit;
    CircuitMetrics metrics;
};
PruneResult prune(const BooleanCircuit& c);

struct EvalResult {
    std::vector<int> popcounts;  // per class
    int predicted = 0;           // argmax, ties to lowest class
};

EvalResult eval_reference(const BooleanCircuit& c, const std::vector<uint8_t>& input_bits);

// Bit-packed evaluation: 64 samples per machine word. Rows are input lines.
struct PackedBits {
    int num_lines = 0;
    int num_samples = 0;
    int words = 0;  // per line
    std::vector<uint64_t> data;

    uint64_t* line(int i) { return data.data() + static_cast<size_t>(i) * words; }
    const uint64_t* line(int i) const { return data.data() + static_cast<size_t>(i) * words; }
    void resize(int lines, int samples);
    void set_bit(int line_idx, int sample, bool v);
    bool get_bit(int line_idx, int sample) const;
};

struct PackedEval {
    std::vector<int> predicted;              // per sample
    std::vector<std::vector<int>> popcounts; // [sample][class]
};

PackedEval eval_bitpacked(const BooleanCircuit& c, const PackedBits& inputs,
                          bool want_popcounts = false);

// Netlist I/O, format:
//   bnet v1 <num_inputs> <num_nodes> <num_classes> <group_size>
//   g <idx> <gate 1..16> <ref_a> <ref_b>
//   o <class> <ref>...
// with refs i<n>, g<n>, c0, c1. Nodes must appear in index order and may only
// reference earlier nodes.
void export_netlist(const BooleanCircuit& c, std::ostream& sink);
std::string export_netlist_string(const BooleanCircuit& c);
BooleanCircuit import_netlist(std::istream& source);
BooleanCircuit import_netlist_string(const std::string& text);

struct EquivalenceReport {
    bool equivalent = true;
    bool exhaustive = false;
    long long vectors_checked = 0;
    std::vector<uint8_t> counterexample;  // first failing input, empty if none
};

// Compares per-class popcounts. Exhaustive when num_inputs <= 20, otherwise
// num_samples random vectors.
EquivalenceReport check_equivalence(const BooleanCircuit& a, const BooleanCircuit& b,
                                    long long num_samples, Rng& rng);

bool circuits_structurally_identical(const BooleanCircuit& a, const BooleanCircuit& b);

}  // namespace bnet
