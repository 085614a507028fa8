#include "bnet/net.hpp"

#include <algorithm>
#include <cmath>

namespace bnet {

std::vector<double> softmax_weights(const std::vector<double>& w) {
    if (w.empty()) throw std::invalid_argument("softmax_weights: empty weight vector");
    double mx = w[0];
    for (double v : w) {
        if (std::isnan(v)) throw std::invalid_argument("softmax_weights: NaN weight");
        mx = std::max(mx, v);
    }
    std::vector<double> out(w.size());
    double sum = 0.0;
    for (size_t i = 0; i < w.size(); ++i) {
        out[i] = std::exp(w[i] - mx);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

double weight_entropy(const std::vector<double>& w) {
    std::vector<double> t = softmax_weights(w);
    double h = 0.0;
    for (double v : t)
        if (v > 0.0) h -= v * std::log(v);
    return h;
}

double neuron_forward(const NeuronParams& n, const std::vector<double>& x) {
    if (!n.consistent()) throw std::invalid_argument("neuron_forward: inconsistent params");
    std::vector<double> t = softmax_weights(n.w);
    double acc = 0.0;
    for (int i = 0; i < n.num_triples(); ++i) {
        int p = n.p[i], q = n.q[i];
        if (p < 0 || q < 0 || p >= static_cast<int>(x.size()) || q >= static_cast<int>(x.size()))
            throw std::out_of_range("neuron_forward: input index out of range");
        acc += t[i] * eval_relaxed_unchecked(relax_coeffs(n.k[i]), x[p], x[q]);
    }
    return acc;
}

FrozenChoice discretize_neuron(const NeuronParams& n) {
    if (!n.consistent()) throw std::invalid_argument("discretize_neuron: inconsistent params");
    int best = 0;
    for (int i = 1; i < n.num_triples(); ++i)
        if (n.w[i] > n.w[best]) best = i;
    return {n.k[best], n.p[best], n.q[best]};
}

void init_weights(NeuronParams& n, InitScheme scheme, Rng& rng) {
    int K = n.num_triples();
    if (scheme == InitScheme::Gaussian) {
        for (int i = 0; i < K; ++i) n.w[i] = rng.normal();
        return;
    }
    int slot = -1;
    for (int i = 0; i < K; ++i)
        if (n.k[i] == kPassAGate) {
            slot = i;
            break;
        }
    if (slot < 0) throw std::invalid_argument("init_weights: residual scheme needs a B4 slot");
    // softmax(ln t) = t for any target distribution t.
    double rest = 0.1 / (K - 1);
    for (int i = 0; i < K; ++i) n.w[i] = std::log(i == slot ? 0.9 : rest);
}

ConnInit init_connections_dense(int d_in, int d_out, int K, Rng& rng) {
    if (d_in <= 0 || d_out <= 0 || K <= 0)
        throw std::invalid_argument("init_connections_dense: bad sizes");
    if (2 * d_out < d_in)
        throw std::invalid_argument(
            "init_connections_dense: 2*d_out < d_in, some input neurons could never be read");
    ConnInit out;
    out.p.resize(static_cast<size_t>(d_out) * K);
    out.q.resize(static_cast<size_t>(d_out) * K);
    int slots_n = 2 * d_out;
    int r = slots_n / d_in;
    std::vector<int32_t> slots(slots_n);
    for (int i = 0; i < K; ++i) {
        int pos = 0;
        for (int rep = 0; rep < r; ++rep)
            for (int v = 0; v < d_in; ++v) slots[pos++] = v;
        while (pos < slots_n) slots[pos++] = static_cast<int32_t>(rng.next_below(d_in));
        // Fisher-Yates
        for (int j = slots_n - 1; j > 0; --j)
            std::swap(slots[j], slots[rng.next_below(static_cast<uint32_t>(j + 1))]);
        for (int n = 0; n < d_out; ++n) {
            out.p[static_cast<size_t>(n) * K + i] = slots[2 * n];
            out.q[static_cast<size_t>(n) * K + i] = slots[2 * n + 1];
        }
    }
    return out;
}

void DenseLayer::init(int din, int dout, int KK, InitScheme scheme, Rng& rng) {
    d_in = din;
    d_out = dout;
    K = KK;
    frozen = false;
    choice.clear();
    ConnInit conn = init_connections_dense(din, dout, KK, rng);
    p = std::move(conn.p);
    q = std::move(conn.q);
    w.resize(static_cast<size_t>(dout) * KK);
    k.resize(static_cast<size_t>(dout) * KK);
    // k = [1..16] cycled so every neuron starts with all 16 distinct gates
    // when K = 16.
    for (int n = 0; n < dout; ++n)
        for (int i = 0; i < KK; ++i) k[static_cast<size_t>(n) * KK + i] = static_cast<uint8_t>(1 + i % kNumGates);
    NeuronParams tmp;
    tmp.w.resize(KK);
    tmp.k.resize(KK);
    tmp.p.assign(KK, 0);
    tmp.q.assign(KK, 0);
    for (int n = 0; n < dout; ++n) {
        for (int i = 0; i < KK; ++i) tmp.k[i] = k[static_cast<size_t>(n) * KK + i];
        init_weights(tmp, scheme, rng);
        for (int i = 0; i < KK; ++i) w[static_cast<size_t>(n) * KK + i] = tmp.w[i];
    }
    ++rev;
}

NeuronParams DenseLayer::neuron(int j) const {
    if (frozen) throw std::logic_error("DenseLayer::neuron: layer is frozen");
    NeuronParams n;
    size_t base = static_cast<size_t>(j) * K;
    n.w.assign(w.begin() + base, w.begin() + base + K);
    n.k.resize(K);
    n.p.resize(K);
    n.q.resize(K);
    for (int i = 0; i < K; ++i) {
        n.k[i] = k[base + i];
        n.p[i] = p[base + i];
        n.q[i] = q[base + i];
    }
    return n;
}

void DenseLayer::set_neuron(int j, const NeuronParams& n) {
    if (frozen) throw std::logic_error("DenseLayer::set_neuron: layer is frozen");
    if (n.num_triples() != K) throw std::invalid_argument("set_neuron: triple count mismatch");
    size_t base = static_cast<size_t>(j) * K;
    for (int i = 0; i < K; ++i) {
        w[base + i] = n.w[i];
        k[base + i] = static_cast<uint8_t>(n.k[i]);
        p[base + i] = n.p[i];
        q[base + i] = n.q[i];
    }
    ++rev;
}

void DenseLayer::freeze() {
    if (frozen) return;
    choice.resize(d_out);
    for (int j = 0; j < d_out; ++j) choice[j] = discretize_neuron(neuron(j));
    frozen = true;
    w.clear();
    w.shrink_to_fit();
    k.clear();
    k.shrink_to_fit();
    p.clear();
    p.shrink_to_fit();
    q.clear();
    q.shrink_to_fit();
    ++rev;
}

std::vector<std::vector<double>> dense_forward(const DenseLayer& layer,
                                               const std::vector<std::vector<double>>& batch,
                                               DenseTape* tape) {
    std::vector<std::vector<double>> out(batch.size(), std::vector<double>(layer.d_out));
    if (tape) {
        tape->rev = layer.rev;
        tape->x = batch;
        tape->tilde.clear();
        tape->out.clear();
    }
    for (const auto& row : batch)
        if (static_cast<int>(row.size()) != layer.d_in)
            throw std::invalid_argument("dense_forward: input width mismatch");
    if (layer.frozen) {
        for (size_t s = 0; s < batch.size(); ++s)
            for (int j = 0; j < layer.d_out; ++j) {
                const FrozenChoice& c = layer.choice[j];
                out[s][j] = eval_relaxed_unchecked(relax_coeffs(c.g), batch[s][c.p], batch[s][c.q]);
            }
        if (tape) tape->out = out;
        return out;
    }
    std::vector<std::vector<double>> tilde(layer.d_out);
    for (int j = 0; j < layer.d_out; ++j) {
        size_t base = static_cast<size_t>(j) * layer.K;
        std::vector<double> wj(layer.w.begin() + base, layer.w.begin() + base + layer.K);
        tilde[j] = softmax_weights(wj);
    }
    for (size_t s = 0; s < batch.size(); ++s) {
        const std::vector<double>& x = batch[s];
        for (int j = 0; j < layer.d_out; ++j) {
            size_t base = static_cast<size_t>(j) * layer.K;
            double acc = 0.0;
            for (int i = 0; i < layer.K; ++i) {
                RelaxCoeffs c = relax_coeffs(layer.k[base + i]);
                acc += tilde[j][i] * eval_relaxed_unchecked(c, x[layer.p[base + i]], x[layer.q[base + i]]);
            }
            out[s][j] = acc;
        }
    }
    if (tape) {
        tape->tilde = std::move(tilde);
        tape->out = out;
    }
    return out;
}

DenseGrads dense_backward(const DenseLayer& layer, const DenseTape& tape,
                          const std::vector<std::vector<double>>& grad_out) {
    if (tape.rev != layer.rev) throw std::logic_error("dense_backward: stale tape");
    if (layer.frozen) throw std::logic_error("dense_backward: layer is frozen");
    if (grad_out.size() != tape.x.size())
        throw std::invalid_argument("dense_backward: batch size mismatch");
    DenseGrads g;
    g.grad_w.assign(layer.d_out, std::vector<double>(layer.K, 0.0));
    g.grad_in.assign(tape.x.size(), std::vector<double>(layer.d_in, 0.0));
    for (size_t s = 0; s < tape.x.size(); ++s) {
        const std::vector<double>& x = tape.x[s];
        for (int j = 0; j < layer.d_out; ++j) {
            double go = grad_out[s][j];
            if (go == 0.0) continue;
            size_t base = static_cast<size_t>(j) * layer.K;
            double fj = tape.out[s][j];
            for (int i = 0; i < layer.K; ++i) {
                double ti = tape.tilde[j][i];
                RelaxCoeffs c = relax_coeffs(layer.k[base + i]);
                double xp = x[layer.p[base + i]], xq = x[layer.q[base + i]];
                double bi = eval_relaxed_unchecked(c, xp, xq);
                // d f / d w_i through the softmax: tilde_i * (B_i - f)
                g.grad_w[j][i] += go * ti * (bi - fj);
                g.grad_in[s][layer.p[base + i]] += go * ti * (c.cx + c.cxy * xq);
                g.grad_in[s][layer.q[base + i]] += go * ti * (c.cy + c.cxy * xp);
            }
        }
    }
    return g;
}

std::vector<double> groupsum_forward(const std::vector<double>& x, const GroupSumHead& head) {
    if (head.group_size <= 0 || head.num_classes <= 0 || head.tau <= 0.0)
        throw std::invalid_argument("groupsum_forward: bad head");
    if (static_cast<int>(x.size()) != head.num_classes * head.group_size)
        throw std::invalid_argument("groupsum_forward: width not divisible into groups");
    std::vector<double> logits(head.num_classes, 0.0);
    for (int c = 0; c < head.num_classes; ++c) {
        double s = 0.0;
        for (int i = 0; i < head.group_size; ++i) s += x[static_cast<size_t>(c) * head.group_size + i];
        logits[c] = s / head.tau;
    }
    return logits;
}

LossResult cross_entropy_loss(const std::vector<double>& logits, int label) {
    if (label < 0 || label >= static_cast<int>(logits.size()))
        throw std::out_of_range("cross_entropy_loss: label out of range");
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    std::vector<double> sm(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) {
        sm[i] = std::exp(logits[i] - mx);
        sum += sm[i];
    }
    for (double& v : sm) v /= sum;
    LossResult r;
    r.loss = -(logits[label] - mx - std::log(sum));
    r.grad_logits = std::move(sm);
    r.grad_logits[label] -= 1.0;
    return r;
}

}  // namespace bnet
