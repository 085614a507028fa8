#include "bnet/conv.hpp"

#include <algorithm>

namespace bnet {

Shape3 output_shape(const ConvLayerSpec& spec, const Shape3& in) {
    if (in.c != spec.in_channels || in.h != spec.in_h || in.w != spec.in_w)
        throw std::invalid_argument("output_shape: input shape does not match spec");
    if (spec.stride != 1 && spec.stride != 2)
        throw std::invalid_argument("output_shape: stride must be 1 or 2");
    if (spec.channels_per_kernel < 1 || spec.channels_per_kernel > spec.in_channels)
        throw std::invalid_argument("output_shape: channels_per_kernel out of range");
    return {spec.out_channels, spec.out_h(), spec.out_w()};
}

std::vector<int32_t> assign_channels(const ConvLayerSpec& spec, Rng& rng) {
    int cpk = spec.channels_per_kernel;
    std::vector<int32_t> map(static_cast<size_t>(spec.out_channels) * cpk);
    std::vector<int32_t> pool(spec.in_channels);
    for (int oc = 0; oc < spec.out_channels; ++oc) {
        int32_t first = oc % spec.in_channels;
        map[static_cast<size_t>(oc) * cpk] = first;
        if (cpk == 1) continue;
        pool.clear();
        for (int c = 0; c < spec.in_channels; ++c)
            if (c != first) pool.push_back(c);
        // partial Fisher-Yates for a without-replacement draw of cpk-1
        for (int j = 0; j < cpk - 1; ++j) {
            int pick = j + static_cast<int>(rng.next_below(static_cast<uint32_t>(pool.size() - j)));
            std::swap(pool[j], pool[pick]);
            map[static_cast<size_t>(oc) * cpk + 1 + j] = pool[j];
        }
    }
    return map;
}

void sample_kernel_candidates(int K, int field_size, Rng& rng, std::vector<int>& p,
                              std::vector<int>& q) {
    p.resize(K);
    q.resize(K);
    for (int i = 0; i < K; ++i) {
        p[i] = static_cast<int>(rng.next_below(static_cast<uint32_t>(field_size)));
        q[i] = static_cast<int>(rng.next_below(static_cast<uint32_t>(field_size)));
    }
}

void ConvLayer::init(const ConvLayerSpec& s, int KK, InitScheme scheme, Rng& rng) {
    spec = s;
    K = KK;
    frozen = false;
    choice.clear();
    channel_map = assign_channels(s, rng);
    int oc_n = s.out_channels;
    w.resize(static_cast<size_t>(oc_n) * KK);
    k.resize(static_cast<size_t>(oc_n) * KK);
    p.resize(static_cast<size_t>(oc_n) * KK);
    q.resize(static_cast<size_t>(oc_n) * KK);
    std::vector<int> pp, qq;
    NeuronParams tmp;
    tmp.w.resize(KK);
    tmp.k.resize(KK);
    tmp.p.assign(KK, 0);
    tmp.q.assign(KK, 0);
    for (int oc = 0; oc < oc_n; ++oc) {
        size_t base = static_cast<size_t>(oc) * KK;
        sample_kernel_candidates(KK, s.field_size(), rng, pp, qq);
        for (int i = 0; i < KK; ++i) {
            k[base + i] = static_cast<uint8_t>(1 + i % kNumGates);
            p[base + i] = pp[i];
            q[base + i] = qq[i];
            tmp.k[i] = k[base + i];
        }
        init_weights(tmp, scheme, rng);
        for (int i = 0; i < KK; ++i) w[base + i] = tmp.w[i];
    }
    ++rev;
}

NeuronParams ConvLayer::kernel(int oc) const {
    if (frozen) throw std::logic_error("ConvLayer::kernel: layer is frozen");
    NeuronParams n;
    size_t base = static_cast<size_t>(oc) * K;
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

void ConvLayer::set_kernel(int oc, const NeuronParams& n) {
    if (frozen) throw std::logic_error("ConvLayer::set_kernel: layer is frozen");
    if (n.num_triples() != K) throw std::invalid_argument("set_kernel: triple count mismatch");
    size_t base = static_cast<size_t>(oc) * K;
    for (int i = 0; i < K; ++i) {
        w[base + i] = n.w[i];
        k[base + i] = static_cast<uint8_t>(n.k[i]);
        p[base + i] = n.p[i];
        q[base + i] = n.q[i];
    }
    ++rev;
}

void ConvLayer::freeze() {
    if (frozen) return;
    choice.resize(spec.out_channels);
    for (int oc = 0; oc < spec.out_channels; ++oc) choice[oc] = discretize_neuron(kernel(oc));
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

int ConvLayer::window_index(int oy, int ox, int oc, int slot) const {
    int local_c = slot / 9;
    int off = slot % 9;
    int ky = off / 3, kx = off % 3;
    int iy = oy * spec.stride - ConvLayerSpec::kPadding + ky;
    int ix = ox * spec.stride - ConvLayerSpec::kPadding + kx;
    if (iy < 0 || iy >= spec.in_h || ix < 0 || ix >= spec.in_w) return -1;
    int ic = channel_map[static_cast<size_t>(oc) * spec.channels_per_kernel + local_c];
    return (ic * spec.in_h + iy) * spec.in_w + ix;
}

std::vector<std::vector<double>> conv_forward(const ConvLayer& layer,
                                              const std::vector<std::vector<double>>& batch,
                                              ConvTape* tape) {
    const ConvLayerSpec& s = layer.spec;
    int in_flat = s.in_channels * s.in_h * s.in_w;
    int oh = s.out_h(), ow = s.out_w();
    int out_flat = s.out_channels * oh * ow;
    for (const auto& row : batch)
        if (static_cast<int>(row.size()) != in_flat)
            throw std::invalid_argument("conv_forward: input width mismatch");
    std::vector<std::vector<double>> out(batch.size(), std::vector<double>(out_flat));
    std::vector<std::vector<double>> tilde;
    if (!layer.frozen) {
        tilde.resize(s.out_channels);
        for (int oc = 0; oc < s.out_channels; ++oc) {
            size_t base = static_cast<size_t>(oc) * layer.K;
            std::vector<double> wv(layer.w.begin() + base, layer.w.begin() + base + layer.K);
            tilde[oc] = softmax_weights(wv);
        }
    }
    for (size_t smp = 0; smp < batch.size(); ++smp) {
        const std::vector<double>& x = batch[smp];
        for (int oc = 0; oc < s.out_channels; ++oc) {
            size_t base = static_cast<size_t>(oc) * layer.K;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    int of = (oc * oh + oy) * ow + ox;
                    if (layer.frozen) {
                        const FrozenChoice& c = layer.choice[oc];
                        int ia = layer.window_index(oy, ox, oc, c.p);
                        int ib = layer.window_index(oy, ox, oc, c.q);
                        double xa = ia < 0 ? 0.0 : x[ia];
                        double xb = ib < 0 ? 0.0 : x[ib];
                        out[smp][of] = eval_relaxed_unchecked(relax_coeffs(c.g), xa, xb);
                        continue;
                    }
                    double acc = 0.0;
                    for (int i = 0; i < layer.K; ++i) {
                        int ia = layer.window_index(oy, ox, oc, layer.p[base + i]);
                        int ib = layer.window_index(oy, ox, oc, layer.q[base + i]);
                        double xa = ia < 0 ? 0.0 : x[ia];
                        double xb = ib < 0 ? 0.0 : x[ib];
                        acc += tilde[oc][i] *
                               eval_relaxed_unchecked(relax_coeffs(layer.k[base + i]), xa, xb);
                    }
                    out[smp][of] = acc;
                }
        }
    }
    if (tape) {
        tape->rev = layer.rev;
        tape->x = batch;
        tape->tilde = std::move(tilde);
        tape->out = out;
    }
    return out;
}

ConvGrads conv_backward(const ConvLayer& layer, const ConvTape& tape,
                        const std::vector<std::vector<double>>& grad_out) {
    if (tape.rev != layer.rev) throw std::logic_error("conv_backward: stale tape");
    if (layer.frozen) throw std::logic_error("conv_backward: layer is frozen");
    if (grad_out.size() != tape.x.size())
        throw std::invalid_argument("conv_backward: batch size mismatch");
    const ConvLayerSpec& s = layer.spec;
    int oh = s.out_h(), ow = s.out_w();
    int in_flat = s.in_channels * s.in_h * s.in_w;
    ConvGrads g;
    g.grad_w.assign(s.out_channels, std::vector<double>(layer.K, 0.0));
    g.grad_in.assign(tape.x.size(), std::vector<double>(in_flat, 0.0));
    for (size_t smp = 0; smp < tape.x.size(); ++smp) {
        const std::vector<double>& x = tape.x[smp];
        for (int oc = 0; oc < s.out_channels; ++oc) {
            size_t base = static_cast<size_t>(oc) * layer.K;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    int of = (oc * oh + oy) * ow + ox;
                    double go = grad_out[smp][of];
                    if (go == 0.0) continue;
                    double fj = tape.out[smp][of];
                    for (int i = 0; i < layer.K; ++i) {
                        double ti = tape.tilde[oc][i];
                        RelaxCoeffs c = relax_coeffs(layer.k[base + i]);
                        int ia = layer.window_index(oy, ox, oc, layer.p[base + i]);
                        int ib = layer.window_index(oy, ox, oc, layer.q[base + i]);
                        double xa = ia < 0 ? 0.0 : x[ia];
                        double xb = ib < 0 ? 0.0 : x[ib];
                        double bi = eval_relaxed_unchecked(c, xa, xb);
                        g.grad_w[oc][i] += go * ti * (bi - fj);
                        if (ia >= 0) g.grad_in[smp][ia] += go * ti * (c.cx + c.cxy * xb);
                        if (ib >= 0) g.grad_in[smp][ib] += go * ti * (c.cy + c.cxy * xa);
                    }
                }
        }
    }
    return g;
}

}  // namespace bnet
