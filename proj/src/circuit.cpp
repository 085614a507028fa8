#include "bnet/circuit.hpp"

#include <algorithm>
#include <array>
#include <cassert>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_map>

namespace bnet {

namespace {

bool ref_ok(int32_t r, int max_slot) {
    return r == kConst0Ref || r == kConst1Ref || (r >= 0 && r < max_slot);
}

}  // namespace

void BooleanCircuit::validate() const {
    if (num_inputs < 0 || num_classes <= 0 || group_size <= 0)
        throw std::invalid_argument("circuit: bad header fields");
    for (size_t j = 0; j < nodes.size(); ++j) {
        const CircuitNode& n = nodes[j];
        if (!gate_valid(n.gate)) throw std::invalid_argument("circuit: invalid gate id");
        int max_slot = num_inputs + static_cast<int>(j);  // strictly earlier only
        if (!ref_ok(n.a, max_slot) || !ref_ok(n.b, max_slot))
            throw std::invalid_argument("circuit: node ref out of range or forward");
    }
    if (static_cast<int>(outputs.size()) != num_classes)
        throw std::invalid_argument("circuit: output class count mismatch");
    int total = num_inputs + num_nodes();
    for (const auto& group : outputs) {
        if (static_cast<int>(group.size()) != group_size)
            throw std::invalid_argument("circuit: output group size mismatch");
        for (int32_t r : group)
            if (!ref_ok(r, total)) throw std::invalid_argument("circuit: output ref out of range");
    }
}

// ---------------------------------------------------------------- compile

std::vector<CircuitNode> unroll_to_gates(const ConvLayer& layer, int in_slot_base) {
    if (!layer.frozen) throw std::logic_error("unroll_to_gates: layer not discretized");
    const ConvLayerSpec& s = layer.spec;
    int oh = s.out_h(), ow = s.out_w();
    std::vector<CircuitNode> nodes;
    nodes.reserve(static_cast<size_t>(s.out_channels) * oh * ow);
    for (int oc = 0; oc < s.out_channels; ++oc) {
        const FrozenChoice& c = layer.choice[oc];
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                int ia = layer.window_index(oy, ox, oc, c.p);
                int ib = layer.window_index(oy, ox, oc, c.q);
                CircuitNode n;
                n.gate = static_cast<uint8_t>(c.g);
                n.a = ia < 0 ? kConst0Ref : in_slot_base + ia;
                n.b = ib < 0 ? kConst0Ref : in_slot_base + ib;
                nodes.push_back(n);
            }
    }
    return nodes;
}

BooleanCircuit compile(const Network& net) {
    if (!net.fully_frozen()) throw std::logic_error("compile: network has non-discretized layers");
    net.check_shapes();
    BooleanCircuit c;
    c.num_inputs = net.input_width();
    c.num_classes = net.head.num_classes;
    c.group_size = net.head.group_size;
    int out_w = net.output_width();
    if (out_w != c.num_classes * c.group_size)
        throw std::logic_error("compile: output width does not match GroupSum head");

    int prev_base = 0;  // slot base of the previous layer's values
    int next_slot = c.num_inputs;
    for (const auto& conv : net.convs) {
        std::vector<CircuitNode> layer_nodes = unroll_to_gates(conv, prev_base);
        prev_base = next_slot;
        next_slot += static_cast<int>(layer_nodes.size());
        c.nodes.insert(c.nodes.end(), layer_nodes.begin(), layer_nodes.end());
    }
    for (const auto& d : net.dense) {
        int base = next_slot;
        for (int j = 0; j < d.d_out; ++j) {
            const FrozenChoice& ch = d.choice[j];
            CircuitNode n;
            n.gate = static_cast<uint8_t>(ch.g);
            n.a = prev_base + ch.p;
            n.b = prev_base + ch.q;
            c.nodes.push_back(n);
        }
        prev_base = base;
        next_slot += d.d_out;
    }
    c.outputs.assign(c.num_classes, {});
    for (int cls = 0; cls < c.num_classes; ++cls) {
        c.outputs[cls].resize(c.group_size);
        for (int i = 0; i < c.group_size; ++i)
            c.outputs[cls][i] = prev_base + cls * c.group_size + i;
    }
    c.validate();
    return c;
}

// ------------------------------------------------------------------ prune

namespace {

// A resolved value: a possibly negated slot, or a constant (neg folded in).
struct Lit {
    int32_t ref = kConst0Ref;
    bool neg = false;
    bool is_const() const { return ref == kConst0Ref || ref == kConst1Ref; }
};

Lit make_const(bool v) { return {v ? kConst1Ref : kConst0Ref, false}; }

Lit negate(Lit l) {
    if (l.ref == kConst0Ref) return {kConst1Ref, false};
    if (l.ref == kConst1Ref) return {kConst0Ref, false};
    return {l.ref, !l.neg};
}

// Reduce a unary truth pair (value at in=0, value at in=1) applied to lit.
Lit unary_reduce(int v0, int v1, Lit in) {
    if (v0 == v1) return make_const(v0 != 0);
    if (v0 == 0) return in;  // pass-through
    return negate(in);
}

}  // namespace

PruneResult prune(const BooleanCircuit& c) {
    c.validate();
    int ni = c.num_inputs;
    std::vector<Lit> res(static_cast<size_t>(ni) + c.nodes.size());
    for (int i = 0; i < ni; ++i) res[i] = {i, false};

    std::vector<CircuitNode> tmp;  // refs already in new slot space
    tmp.reserve(c.nodes.size());
    auto resolve = [&](int32_t ref) -> Lit {
        if (ref == kConst0Ref) return make_const(false);
        if (ref == kConst1Ref) return make_const(true);
        return res[ref];
    };

    for (size_t j = 0; j < c.nodes.size(); ++j) {
        const CircuitNode& n = c.nodes[j];
        GateId g = n.gate;
        Lit out;
        switch (classify_gate(g)) {
            case GateClass::Const0: out = make_const(false); break;
            case GateClass::Const1: out = make_const(true); break;
            case GateClass::PassA: out = resolve(n.a); break;
            case GateClass::PassB: out = resolve(n.b); break;
            case GateClass::NotA: out = negate(resolve(n.a)); break;
            case GateClass::NotB: out = negate(resolve(n.b)); break;
            case GateClass::Nontrivial: {
                Lit la = resolve(n.a), lb = resolve(n.b);
                if (la.is_const()) {
                    int va = la.ref == kConst1Ref ? 1 : 0;
                    out = unary_reduce(truth_row(g, va, 0), truth_row(g, va, 1), lb);
                } else if (lb.is_const()) {
                    int vb = lb.ref == kConst1Ref ? 1 : 0;
                    out = unary_reduce(truth_row(g, 0, vb), truth_row(g, 1, vb), la);
                } else if (la.ref == lb.ref) {
                    // both inputs are the same underlying value
                    int v0 = truth_row(g, la.neg ? 1 : 0, lb.neg ? 1 : 0);
                    int v1 = truth_row(g, la.neg ? 0 : 1, lb.neg ? 0 : 1);
                    out = unary_reduce(v0, v1, {la.ref, false});
                } else {
                    GateId g2 = g;
                    if (la.neg) g2 = absorb_input_negation(g2, 0);
                    if (lb.neg) g2 = absorb_input_negation(g2, 1);
                    assert(classify_gate(g2) == GateClass::Nontrivial);
                    CircuitNode nn;
                    nn.gate = static_cast<uint8_t>(g2);
                    nn.a = la.ref;
                    nn.b = lb.ref;
                    out = {ni + static_cast<int32_t>(tmp.size()), false};
                    tmp.push_back(nn);
                }
                break;
            }
        }
        res[ni + j] = out;
    }

    // Map outputs; a surviving negation with no consumer gate becomes one
    // shared NOT gate per negated source, appended after all other nodes.
    std::vector<std::vector<int32_t>> new_outputs(c.outputs.size());
    std::unordered_map<int32_t, int32_t> not_nodes;
    for (size_t cls = 0; cls < c.outputs.size(); ++cls) {
        new_outputs[cls].reserve(c.outputs[cls].size());
        for (int32_t ref : c.outputs[cls]) {
            Lit l = resolve(ref);
            if (l.is_const() || !l.neg) {
                new_outputs[cls].push_back(l.ref);
                continue;
            }
            auto it = not_nodes.find(l.ref);
            if (it == not_nodes.end()) {
                CircuitNode nn;
                nn.gate = static_cast<uint8_t>(kNotAGate);
                nn.a = l.ref;
                nn.b = l.ref;
                int32_t slot = ni + static_cast<int32_t>(tmp.size());
                tmp.push_back(nn);
                it = not_nodes.emplace(l.ref, slot).first;
            }
            new_outputs[cls].push_back(it->second);
        }
    }

    // Drop nodes unreachable from the outputs, keeping order.
    std::vector<uint8_t> live(tmp.size(), 0);
    std::vector<int32_t> stack;
    auto visit = [&](int32_t ref) {
        if (ref >= ni && !live[ref - ni]) {
            live[ref - ni] = 1;
            stack.push_back(ref - ni);
        }
    };
    for (const auto& group : new_outputs)
        for (int32_t r : group) visit(r);
    while (!stack.empty()) {
        int32_t j = stack.back();
        stack.pop_back();
        visit(tmp[j].a);
        visit(tmp[j].b);
    }
    std::vector<int32_t> remap(tmp.size(), -1);
    PruneResult out;
    out.circuit.num_inputs = ni;
    out.circuit.num_classes = c.num_classes;
    out.circuit.group_size = c.group_size;
    for (size_t j = 0; j < tmp.size(); ++j) {
        if (!live[j]) continue;
        CircuitNode n = tmp[j];
        if (n.a >= ni) n.a = ni + remap[n.a - ni];
        if (n.b >= ni) n.b = ni + remap[n.b - ni];
        remap[j] = static_cast<int32_t>(out.circuit.nodes.size());
        out.circuit.nodes.push_back(n);
    }
    out.circuit.outputs.assign(c.outputs.size(), {});
    for (size_t cls = 0; cls < new_outputs.size(); ++cls) {
        out.circuit.outputs[cls].reserve(new_outputs[cls].size());
        for (int32_t r : new_outputs[cls])
            out.circuit.outputs[cls].push_back(r >= ni ? ni + remap[r - ni] : r);
    }
    out.circuit.validate();
    out.metrics.neurons = static_cast<long long>(c.nodes.size());
    out.metrics.bops = static_cast<long long>(out.circuit.nodes.size());
    return out;
}

// ------------------------------------------------------------------- eval

EvalResult eval_reference(const BooleanCircuit& c, const std::vector<uint8_t>& input_bits) {
    if (static_cast<int>(input_bits.size()) != c.num_inputs)
        throw std::invalid_argument("eval_reference: input length mismatch");
    std::vector<uint8_t> vals(static_cast<size_t>(c.num_inputs) + c.nodes.size());
    std::copy(input_bits.begin(), input_bits.end(), vals.begin());
    auto fetch = [&](int32_t r) -> int {
        if (r == kConst0Ref) return 0;
        if (r == kConst1Ref) return 1;
        return vals[r];
    };
    for (size_t j = 0; j < c.nodes.size(); ++j) {
        const CircuitNode& n = c.nodes[j];
        vals[c.num_inputs + j] =
            static_cast<uint8_t>(truth_row(n.gate, fetch(n.a), fetch(n.b)));
    }
    EvalResult r;
    r.popcounts.resize(c.num_classes);
    for (int cls = 0; cls < c.num_classes; ++cls) {
        int s = 0;
        for (int32_t ref : c.outputs[cls]) s += fetch(ref);
        r.popcounts[cls] = s;
    }
    r.predicted = 0;
    for (int cls = 1; cls < c.num_classes; ++cls)
        if (r.popcounts[cls] > r.popcounts[r.predicted]) r.predicted = cls;
    return r;
}

void PackedBits::resize(int lines, int samples) {
    num_lines = lines;
    num_samples = samples;
    words = (samples + 63) / 64;
    data.assign(static_cast<size_t>(lines) * words, 0);
}

void PackedBits::set_bit(int line_idx, int sample, bool v) {
    uint64_t& w = data[static_cast<size_t>(line_idx) * words + sample / 64];
    uint64_t m = 1ULL << (sample % 64);
    w = v ? (w | m) : (w & ~m);
}

bool PackedBits::get_bit(int line_idx, int sample) const {
    return (data[static_cast<size_t>(line_idx) * words + sample / 64] >> (sample % 64)) & 1;
}

namespace {

inline uint64_t gate_word(uint8_t gate, uint64_t a, uint64_t b) {
    switch (gate) {
        case 1: return 0;
        case 2: return a & b;
        case 3: return a & ~b;
        case 4: return a;
        case 5: return ~a & b;
        case 6: return b;
        case 7: return a ^ b;
        case 8: return a | b;
        case 9: return ~(a | b);
        case 10: return ~(a ^ b);
        case 11: return ~b;
        case 12: return a | ~b;
        case 13: return ~a;
        case 14: return ~a | b;
        case 15: return ~(a & b);
        default: return ~0ULL;
    }
}

// Bit-sliced counter: one uint64 per binary digit, so 64 lanes accumulate
// their popcounts simultaneously via a ripple-carry half-adder chain.
struct VerticalCounter {
    std::array<uint64_t, 17> planes{};
    void add(uint64_t x) {
        for (size_t i = 0; x && i < planes.size(); ++i) {
            uint64_t carry = planes[i] & x;
            planes[i] ^= x;
            x = carry;
        }
    }
    int count(int lane) const {
        int v = 0;
        for (size_t i = 0; i < planes.size(); ++i) v |= static_cast<int>((planes[i] >> lane) & 1) << i;
        return v;
    }
};

}  // namespace

PackedEval eval_bitpacked(const BooleanCircuit& c, const PackedBits& inputs, bool want_popcounts) {
    if (inputs.num_lines != c.num_inputs)
        throw std::invalid_argument("eval_bitpacked: input line count mismatch");
    if (c.group_size >= (1 << 16))
        throw std::invalid_argument("eval_bitpacked: group size too large for counters");
    PackedEval out;
    out.predicted.resize(inputs.num_samples);
    if (want_popcounts) out.popcounts.assign(inputs.num_samples, std::vector<int>(c.num_classes));
    std::vector<uint64_t> vals(static_cast<size_t>(c.num_inputs) + c.nodes.size());
    std::vector<VerticalCounter> counters(c.num_classes);
    for (int wd = 0; wd < inputs.words; ++wd) {
        for (int i = 0; i < c.num_inputs; ++i) vals[i] = inputs.line(i)[wd];
        uint64_t* node_vals = vals.data() + c.num_inputs;
        const CircuitNode* nodes = c.nodes.data();
        size_t nn = c.nodes.size();
        auto fetch = [&](int32_t r) -> uint64_t {
            if (r == kConst0Ref) return 0;
            if (r == kConst1Ref) return ~0ULL;
            return vals[r];
        };
        for (size_t j = 0; j < nn; ++j)
            node_vals[j] = gate_word(nodes[j].gate, fetch(nodes[j].a), fetch(nodes[j].b));
        int lanes = std::min(64, inputs.num_samples - wd * 64);
        for (int cls = 0; cls < c.num_classes; ++cls) {
            VerticalCounter& vc = counters[cls];
            vc.planes.fill(0);
            for (int32_t ref : c.outputs[cls]) vc.add(fetch(ref));
        }
        for (int l = 0; l < lanes; ++l) {
            int sample = wd * 64 + l;
            int best = 0, best_pc = counters[0].count(l);
            if (want_popcounts) out.popcounts[sample][0] = best_pc;
            for (int cls = 1; cls < c.num_classes; ++cls) {
                int pc = counters[cls].count(l);
                if (want_popcounts) out.popcounts[sample][cls] = pc;
                if (pc > best_pc) {
                    best = cls;
                    best_pc = pc;
                }
            }
            out.predicted[sample] = best;
        }
    }
    return out;
}

// ---------------------------------------------------------------- netlist

namespace {

void write_ref(std::ostream& os, int32_t ref, int num_inputs) {
    if (ref == kConst0Ref)
        os << "c0";
    else if (ref == kConst1Ref)
        os << "c1";
    else if (ref < num_inputs)
        os << 'i' << ref;
    else
        os << 'g' << (ref - num_inputs);
}

int32_t parse_ref(const std::string& tok, int num_inputs, int nodes_seen) {
    if (tok == "c0") return kConst0Ref;
    if (tok == "c1") return kConst1Ref;
    if (tok.size() < 2 || (tok[0] != 'i' && tok[0] != 'g'))
        throw std::invalid_argument("netlist: bad ref token '" + tok + "'");
    size_t pos = 0;
    long v;
    try {
        v = std::stol(tok.substr(1), &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("netlist: bad ref token '" + tok + "'");
    }
    if (pos != tok.size() - 1 || v < 0) throw std::invalid_argument("netlist: bad ref token '" + tok + "'");
    if (tok[0] == 'i') {
        if (v >= num_inputs) throw std::invalid_argument("netlist: input ref out of range");
        return static_cast<int32_t>(v);
    }
    if (v >= nodes_seen)
        throw std::invalid_argument("netlist: ref to undeclared or later node g" + std::to_string(v));
    return static_cast<int32_t>(num_inputs + v);
}

}  // namespace

void export_netlist(const BooleanCircuit& c, std::ostream& sink) {
    c.validate();
    sink << "bnet v1 " << c.num_inputs << ' ' << c.num_nodes() << ' ' << c.num_classes << ' '
         << c.group_size << '\n';
    for (size_t j = 0; j < c.nodes.size(); ++j) {
        sink << "g " << j << ' ' << static_cast<int>(c.nodes[j].gate) << ' ';
        write_ref(sink, c.nodes[j].a, c.num_inputs);
        sink << ' ';
        write_ref(sink, c.nodes[j].b, c.num_inputs);
        sink << '\n';
    }
    for (size_t cls = 0; cls < c.outputs.size(); ++cls) {
        sink << "o " << cls;
        for (int32_t r : c.outputs[cls]) {
            sink << ' ';
            write_ref(sink, r, c.num_inputs);
        }
        sink << '\n';
    }
}

std::string export_netlist_string(const BooleanCircuit& c) {
    std::ostringstream os;
    export_netlist(c, os);
    return os.str();
}

BooleanCircuit import_netlist(std::istream& source) {
    std::string line;
    if (!std::getline(source, line)) throw std::invalid_argument("netlist: empty input");
    std::istringstream hdr(line);
    std::string magic, version;
    int ni, nn, nc, gs;
    if (!(hdr >> magic >> version >> ni >> nn >> nc >> gs) || magic != "bnet")
        throw std::invalid_argument("netlist: bad header");
    if (version != "v1") throw std::invalid_argument("netlist: unsupported version '" + version + "'");
    if (ni < 0 || nn < 0 || nc <= 0 || gs <= 0) throw std::invalid_argument("netlist: bad header counts");
    BooleanCircuit c;
    c.num_inputs = ni;
    c.num_classes = nc;
    c.group_size = gs;
    c.nodes.reserve(nn);
    c.outputs.assign(nc, {});
    std::vector<uint8_t> seen_class(nc, 0);
    while (std::getline(source, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        if (kind == "g") {
            long idx, gate;
            std::string ta, tb;
            if (!(ls >> idx >> gate >> ta >> tb)) throw std::invalid_argument("netlist: bad node line");
            if (idx != static_cast<long>(c.nodes.size()))
                throw std::invalid_argument("netlist: node index out of order");
            if (idx >= nn) throw std::invalid_argument("netlist: more nodes than declared");
            if (!gate_valid(static_cast<GateId>(gate)))
                throw std::invalid_argument("netlist: gate id out of range");
            CircuitNode n;
            n.gate = static_cast<uint8_t>(gate);
            n.a = parse_ref(ta, ni, static_cast<int>(c.nodes.size()));
            n.b = parse_ref(tb, ni, static_cast<int>(c.nodes.size()));
            std::string extra;
            if (ls >> extra) throw std::invalid_argument("netlist: trailing tokens on node line");
            c.nodes.push_back(n);
        } else if (kind == "o") {
            int cls;
            if (!(ls >> cls)) throw std::invalid_argument("netlist: bad output line");
            if (cls < 0 || cls >= nc) throw std::invalid_argument("netlist: class out of range");
            if (seen_class[cls]) throw std::invalid_argument("netlist: duplicate output class");
            seen_class[cls] = 1;
            std::string tok;
            while (ls >> tok) c.outputs[cls].push_back(parse_ref(tok, ni, nn));
            if (static_cast<int>(c.outputs[cls].size()) != gs)
                throw std::invalid_argument("netlist: output group size mismatch");
        } else {
            throw std::invalid_argument("netlist: unknown line kind '" + kind + "'");
        }
    }
    if (static_cast<int>(c.nodes.size()) != nn)
        throw std::invalid_argument("netlist: fewer nodes than declared");
    for (int cls = 0; cls < nc; ++cls)
        if (!seen_class[cls]) throw std::invalid_argument("netlist: missing output class");
    c.validate();
    return c;
}

BooleanCircuit import_netlist_string(const std::string& text) {
    std::istringstream is(text);
    return import_netlist(is);
}

// ------------------------------------------------------------ equivalence

bool circuits_structurally_identical(const BooleanCircuit& a, const BooleanCircuit& b) {
    if (a.num_inputs != b.num_inputs || a.num_classes != b.num_classes ||
        a.group_size != b.group_size || a.nodes.size() != b.nodes.size())
        return false;
    for (size_t j = 0; j < a.nodes.size(); ++j)
        if (a.nodes[j].gate != b.nodes[j].gate || a.nodes[j].a != b.nodes[j].a ||
            a.nodes[j].b != b.nodes[j].b)
            return false;
    return a.outputs == b.outputs;
}

EquivalenceReport check_equivalence(const BooleanCircuit& a, const BooleanCircuit& b,
                                    long long num_samples, Rng& rng) {
    if (a.num_inputs != b.num_inputs || a.num_classes != b.num_classes ||
        a.group_size != b.group_size)
        throw std::invalid_argument("check_equivalence: structure mismatch");
    EquivalenceReport rep;
    int ni = a.num_inputs;
    rep.exhaustive = ni <= 20;
    long long total = rep.exhaustive ? (1LL << ni) : num_samples;
    const int chunk_samples = 1 << 14;
    PackedBits in;
    long long done = 0;
    while (done < total) {
        int ns = static_cast<int>(std::min<long long>(chunk_samples, total - done));
        in.resize(ni, ns);
        if (rep.exhaustive) {
            // sample index (done + s) enumerated in binary across lines
            for (int i = 0; i < ni; ++i) {
                uint64_t* row = in.line(i);
                for (int wd = 0; wd < in.words; ++wd) {
                    uint64_t v = 0;
                    if (i < 6) {
                        static const uint64_t masks[6] = {0xAAAAAAAAAAAAAAAAULL, 0xCCCCCCCCCCCCCCCCULL,
                                                          0xF0F0F0F0F0F0F0F0ULL, 0xFF00FF00FF00FF00ULL,
                                                          0xFFFF0000FFFF0000ULL, 0xFFFFFFFF00000000ULL};
                        v = masks[i];
                    } else {
                        uint64_t block = static_cast<uint64_t>(done / 64) + wd;
                        v = ((block >> (i - 6)) & 1) ? ~0ULL : 0;
                    }
                    row[wd] = v;
                }
            }
        } else {
            for (int i = 0; i < ni; ++i) {
                uint64_t* row = in.line(i);
                for (int wd = 0; wd < in.words; ++wd) row[wd] = rng.next_u64();
            }
        }
        PackedEval ea = eval_bitpacked(a, in, true);
        PackedEval eb = eval_bitpacked(b, in, true);
        for (int s = 0; s < ns; ++s) {
            if (ea.popcounts[s] != eb.popcounts[s]) {
                rep.equivalent = false;
                rep.vectors_checked = done + s + 1;
                rep.counterexample.resize(ni);
                for (int i = 0; i < ni; ++i) rep.counterexample[i] = in.get_bit(i, s) ? 1 : 0;
                return rep;
            }
        }
        done += ns;
    }
    rep.vectors_checked = total;
    return rep;
}

}  // namespace bnet
