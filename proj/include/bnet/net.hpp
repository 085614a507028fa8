#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "bnet/gates.hpp"
#include "bnet/rng.hpp"

namespace bnet {

// One neuron in the relaxed network: K candidate triples (gate k_i, inputs
// p_i, q_i into the previous layer's flat output) mixed by softmax(w).
struct NeuronParams {
    std::vector<double> w;
    std::vector<GateId> k;
    std::vector<int> p, q;

    int num_triples() const { return static_cast<int>(w.size()); }
    bool consistent() const {
        return w.size() == k.size() && w.size() == p.size() && w.size() == q.size() && !w.empty();
    }
};

// The single gate a neuron collapses to when discretized.
struct FrozenChoice {
    GateId g = kConst0Gate;
    int p = 0, q = 0;
};

std::vector<double> softmax_weights(const std::vector<double>& w);

// Shannon entropy of softmax(w), in nats; 0 <= h <= ln(len(w)).
double weight_entropy(const std::vector<double>& w);

// Relaxed neuron value: sum_i softmax(w)_i * B_{k_i}(x[p_i], x[q_i]).
double neuron_forward(const NeuronParams& n, const std::vector<double>& x);

// argmax_i w_i, ties to the lowest index.
FrozenChoice discretize_neuron(const NeuronParams& n);

enum class InitScheme { Gaussian, Residual };

// Gaussian: w_i ~ N(0,1) i.i.d. Residual: softmax(w) puts 0.9 on the slot
// whose gate is B4 (pass-through) and 0.1/(K-1) on each other slot.
void init_weights(NeuronParams& n, InitScheme scheme, Rng& rng);

// Connection initialization for dense layers. For each triple slot i < K
// independently, the 2*d_out (p,q) positions across the layer contain every
// input index exactly r = floor(2*d_out/d_in) times, the remainder drawn
// uniformly with replacement, then everything is shuffled. Output is SoA
// indexed [neuron*K + i].
struct ConnInit {
    std::vector<int32_t> p, q;
};
ConnInit init_connections_dense(int d_in, int d_out, int K, Rng& rng);

// Dense logic layer. Parameters are stored SoA (slot = neuron*K + i) so the
// training engine can stream them; NeuronParams views are provided for the
// per-neuron operations. `rev` increments on every mutation and lets tapes
// detect that they are stale.
struct DenseLayer {
    int d_in = 0, d_out = 0, K = 16;
    std::vector<double> w;
    std::vector<uint8_t> k;
    std::vector<int32_t> p, q;
    bool frozen = false;
    std::vector<FrozenChoice> choice;
    uint64_t rev = 0;

    void init(int din, int dout, int KK, InitScheme scheme, Rng& rng);
    NeuronParams neuron(int j) const;
    void set_neuron(int j, const NeuronParams& n);
    // Collapse every neuron to its argmax triple and drop the relaxed
    // parameters; frozen layers keep only (gate, p, q).
    void freeze();
};

// Batch forward/backward in double precision. Rows are samples. These are
// the reference semantics; the float training engine is checked against
// them.
struct DenseTape {
    uint64_t rev = 0;
    std::vector<std::vector<double>> x;      // inputs, copied
    std::vector<std::vector<double>> tilde;  // softmax(w) per neuron
    std::vector<std::vector<double>> out;    // forward outputs
};

std::vector<std::vector<double>> dense_forward(const DenseLayer& layer,
                                               const std::vector<std::vector<double>>& batch,
                                               DenseTape* tape = nullptr);

struct DenseGrads {
    std::vector<std::vector<double>> grad_w;  // per neuron, length K
    std::vector<std::vector<double>> grad_in;
};

DenseGrads dense_backward(const DenseLayer& layer, const DenseTape& tape,
                          const std::vector<std::vector<double>>& grad_out);

// Population-count decoder head: logits_c = (1/tau) * sum of group c.
// Groups are contiguous: group c covers indices [c*group_size, (c+1)*group_size).
struct GroupSumHead {
    int num_classes = 10;
    int group_size = 0;
    double tau = 1.0;
};

std::vector<double> groupsum_forward(const std::vector<double>& x, const GroupSumHead& head);

struct LossResult {
    double loss;
    std::vector<double> grad_logits;
};

LossResult cross_entropy_loss(const std::vector<double>& logits, int label);

}  // namespace bnet
