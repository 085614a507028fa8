#include "bnet/engine.hpp"

#include <algorithm>
#include <cassert>
#include <cstring>

namespace bnet {

void SoftmaxCache::refresh_one(const double* w, int neuron, int K) {
    const double* wj = w + static_cast<size_t>(neuron) * K;
    double m = wj[0];
    for (int i = 1; i < K; ++i) m = std::max(m, wj[i]);
    float* tj = tilde.data() + static_cast<size_t>(neuron) * K;
    double s = 0.0, dot = 0.0;
    for (int i = 0; i < K; ++i) {
        double d = wj[i] - m;
        float e = fast_expf(static_cast<float>(d));
        tj[i] = e;
        s += e;
        dot += static_cast<double>(e) * d;
    }
    float inv = static_cast<float>(1.0 / s);
    for (int i = 0; i < K; ++i) tj[i] *= inv;
    ent[neuron] = std::log(s) - dot / s;
}

void SoftmaxCache::refresh(const double* w, int n, int K) {
    tilde.resize(static_cast<size_t>(n) * K);
    ent.resize(n);
    for (int j = 0; j < n; ++j) refresh_one(w, j, K);
}

void ConvPlan::build(const ConvLayer& layer) {
    const ConvLayerSpec& spec = layer.spec;
    positions = spec.out_h() * spec.out_w();
    field = spec.field_size();
    int in_flat = spec.in_channels * spec.in_h * spec.in_w;
    win.resize(static_cast<size_t>(spec.out_channels) * positions * field);
    for (int oc = 0; oc < spec.out_channels; ++oc)
        for (int pos = 0; pos < positions; ++pos)
            for (int slot = 0; slot < field; ++slot) {
                int f = layer.window_index(pos / spec.out_w(), pos % spec.out_w(), oc, slot);
                win[(static_cast<size_t>(oc) * positions + pos) * field + slot] =
                    f < 0 ? in_flat : f;  // zero row stands in for padding
            }
}

// Inner kernels accumulate over 16 lanes in fixed order so results are
// reproducible; stride is a multiple of 16 and padding lanes hold zeros in
// every activation row, so they contribute nothing to gradients.

namespace {

inline void axpy_gate(float* o, const float* xa, const float* xb, float d0, float d1, float d2,
                      float d3, int stride) {
    for (int s = 0; s < stride; ++s) o[s] += d0 + xa[s] * (d1 + d3 * xb[s]) + d2 * xb[s];
}

inline void set_gate(float* o, const float* xa, const float* xb, float c0, float c1, float c2,
                     float c3, int stride) {
    for (int s = 0; s < stride; ++s) o[s] = c0 + xa[s] * (c1 + c3 * xb[s]) + c2 * xb[s];
}

struct LaneAcc {
    float acc[16] = {};
    double total() const {
        double t = 0.0;
        for (float a : acc) t += a;
        return t;
    }
};

}  // namespace

void dense_forward_fast(const DenseLayer& L, const SoftmaxCache& sc, const ActBuf& in,
                        ActBuf& out) {
    int stride = in.stride;
    if (L.frozen) {
        for (int j = 0; j < L.d_out; ++j) {
            const FrozenChoice& fc = L.choice[j];
            RelaxCoeffs c = relax_coeffs(fc.g);
            set_gate(out.row(j), in.row(fc.p), in.row(fc.q), static_cast<float>(c.c0),
                     static_cast<float>(c.cx), static_cast<float>(c.cy),
                     static_cast<float>(c.cxy), stride);
        }
        return;
    }
    for (int j = 0; j < L.d_out; ++j) {
        float* o = out.row(j);
        std::memset(o, 0, sizeof(float) * stride);
        size_t base = static_cast<size_t>(j) * L.K;
        for (int i = 0; i < L.K; ++i) {
            float wt = sc.tilde[base + i];
            RelaxCoeffs c = relax_coeffs(static_cast<GateId>(L.k[base + i]));
            axpy_gate(o, in.row(L.p[base + i]), in.row(L.q[base + i]),
                      wt * static_cast<float>(c.c0), wt * static_cast<float>(c.cx),
                      wt * static_cast<float>(c.cy), wt * static_cast<float>(c.cxy), stride);
        }
    }
}

void dense_backward_fast(const DenseLayer& L, const SoftmaxCache& sc, const ActBuf& in,
                         const ActBuf& out, const ActBuf& gout, ActBuf* gin, double* grad_w) {
    assert(!L.frozen);
    int stride = in.stride;
    for (int j = 0; j < L.d_out; ++j) {
        const float* g = gout.row(j);
        const float* f = out.row(j);
        size_t base = static_cast<size_t>(j) * L.K;
        for (int i = 0; i < L.K; ++i) {
            float wt = sc.tilde[base + i];
            RelaxCoeffs rc = relax_coeffs(static_cast<GateId>(L.k[base + i]));
            float c0 = static_cast<float>(rc.c0), cx = static_cast<float>(rc.cx);
            float cy = static_cast<float>(rc.cy), cxy = static_cast<float>(rc.cxy);
            const float* xp = in.row(L.p[base + i]);
            const float* xq = in.row(L.q[base + i]);
            LaneAcc la;
            if (gin) {
                float* gp = gin->row(L.p[base + i]);
                float* gq = gin->row(L.q[base + i]);
                float wcx = wt * cx, wcy = wt * cy, wcxy = wt * cxy;
                for (int s0 = 0; s0 < stride; s0 += 16)
                    for (int l = 0; l < 16; ++l) {
                        int s = s0 + l;
                        float b = c0 + xp[s] * (cx + cxy * xq[s]) + cy * xq[s];
                        la.acc[l] += g[s] * (b - f[s]);
                        gp[s] += g[s] * (wcx + wcxy * xq[s]);
                        gq[s] += g[s] * (wcy + wcxy * xp[s]);
                    }
            } else {
                for (int s0 = 0; s0 < stride; s0 += 16)
                    for (int l = 0; l < 16; ++l) {
                        int s = s0 + l;
                        float b = c0 + xp[s] * (cx + cxy * xq[s]) + cy * xq[s];
                        la.acc[l] += g[s] * (b - f[s]);
                    }
            }
            grad_w[base + i] += wt * la.total();
        }
    }
}

void conv_forward_fast(const ConvLayer& L, const ConvPlan& plan, const SoftmaxCache& sc,
                       const ActBuf& in, ActBuf& out) {
    int stride = in.stride;
    int positions = plan.positions, field = plan.field;
    for (int oc = 0; oc < L.spec.out_channels; ++oc) {
        size_t base = static_cast<size_t>(oc) * L.K;
        for (int pos = 0; pos < positions; ++pos) {
            float* o = out.row(oc * positions + pos);
            const int32_t* w = plan.win.data() + (static_cast<size_t>(oc) * positions + pos) * field;
            if (L.frozen) {
                const FrozenChoice& fc = L.choice[oc];
                RelaxCoeffs c = relax_coeffs(fc.g);
                set_gate(o, in.row(w[fc.p]), in.row(w[fc.q]), static_cast<float>(c.c0),
                         static_cast<float>(c.cx), static_cast<float>(c.cy),
                         static_cast<float>(c.cxy), stride);
                continue;
            }
            std::memset(o, 0, sizeof(float) * stride);
            for (int i = 0; i < L.K; ++i) {
                float wt = sc.tilde[base + i];
                RelaxCoeffs c = relax_coeffs(static_cast<GateId>(L.k[base + i]));
                axpy_gate(o, in.row(w[L.p[base + i]]), in.row(w[L.q[base + i]]),
                          wt * static_cast<float>(c.c0), wt * static_cast<float>(c.cx),
                          wt * static_cast<float>(c.cy), wt * static_cast<float>(c.cxy), stride);
            }
        }
    }
}

void conv_backward_fast(const ConvLayer& L, const ConvPlan& plan, const SoftmaxCache& sc,
                        const ActBuf& in, const ActBuf& out, const ActBuf& gout, ActBuf* gin,
                        double* grad_w) {
    assert(!L.frozen);
    int stride = in.stride;
    int positions = plan.positions, field = plan.field;
    for (int oc = 0; oc < L.spec.out_channels; ++oc) {
        size_t base = static_cast<size_t>(oc) * L.K;
        for (int i = 0; i < L.K; ++i) {
            float wt = sc.tilde[base + i];
            RelaxCoeffs rc = relax_coeffs(static_cast<GateId>(L.k[base + i]));
            float c0 = static_cast<float>(rc.c0), cx = static_cast<float>(rc.cx);
            float cy = static_cast<float>(rc.cy), cxy = static_cast<float>(rc.cxy);
            float wcx = wt * cx, wcy = wt * cy, wcxy = wt * cxy;
            double gsum = 0.0;
            for (int pos = 0; pos < positions; ++pos) {
                const float* g = gout.row(oc * positions + pos);
                const float* f = out.row(oc * positions + pos);
                const int32_t* w =
                    plan.win.data() + (static_cast<size_t>(oc) * positions + pos) * field;
                const float* xp = in.row(w[L.p[base + i]]);
                const float* xq = in.row(w[L.q[base + i]]);
                LaneAcc la;
                if (gin) {
                    float* gp = gin->row(w[L.p[base + i]]);
                    float* gq = gin->row(w[L.q[base + i]]);
                    for (int s0 = 0; s0 < stride; s0 += 16)
                        for (int l = 0; l < 16; ++l) {
                            int s = s0 + l;
                            float b = c0 + xp[s] * (cx + cxy * xq[s]) + cy * xq[s];
                            la.acc[l] += g[s] * (b - f[s]);
                            gp[s] += g[s] * (wcx + wcxy * xq[s]);
                            gq[s] += g[s] * (wcy + wcxy * xp[s]);
                        }
                } else {
                    for (int s0 = 0; s0 < stride; s0 += 16)
                        for (int l = 0; l < 16; ++l) {
                            int s = s0 + l;
                            float b = c0 + xp[s] * (cx + cxy * xq[s]) + cy * xq[s];
                            la.acc[l] += g[s] * (b - f[s]);
                        }
                }
                gsum += la.total();
            }
            grad_w[base + i] += wt * gsum;
        }
    }
}

BatchLoss groupsum_loss_fast(const GroupSumHead& head, const ActBuf& act, const uint8_t* labels,
                             int nsamp, ActBuf* gout) {
    int C = head.num_classes, gs = head.group_size;
    int stride = act.stride;
    std::vector<float> sums(static_cast<size_t>(C) * stride, 0.0f);
    for (int c = 0; c < C; ++c) {
        float* s = sums.data() + static_cast<size_t>(c) * stride;
        for (int f = c * gs; f < (c + 1) * gs; ++f) {
            const float* r = act.row(f);
            for (int k = 0; k < stride; ++k) s[k] += r[k];
        }
    }
    BatchLoss bl;
    double inv_tau = 1.0 / head.tau;
    double inv_n = nsamp > 0 ? 1.0 / nsamp : 0.0;
    std::vector<double> logits(C), prob(C);
    for (int s = 0; s < stride; ++s) {
        if (s >= nsamp) {
            for (int c = 0; c < C; ++c) sums[static_cast<size_t>(c) * stride + s] = 0.0f;
            continue;
        }
        int best = 0;
        double m = -1e300;
        for (int c = 0; c < C; ++c) {
            logits[c] = sums[static_cast<size_t>(c) * stride + s] * inv_tau;
            if (logits[c] > m) m = logits[c], best = c;
        }
        double z = 0.0;
        for (int c = 0; c < C; ++c) z += prob[c] = std::exp(logits[c] - m);
        int y = labels[s];
        bl.loss_sum += std::log(z) - (logits[y] - m);
        if (best == y) ++bl.correct;
        if (gout) {
            double gscale = inv_n * inv_tau;
            for (int c = 0; c < C; ++c)
                sums[static_cast<size_t>(c) * stride + s] =
                    static_cast<float>((prob[c] / z - (c == y ? 1.0 : 0.0)) * gscale);
        }
    }
    if (gout)
        for (int c = 0; c < C; ++c) {
            const float* gl = sums.data() + static_cast<size_t>(c) * stride;
            for (int f = c * gs; f < (c + 1) * gs; ++f)
                std::memcpy(gout->row(f), gl, sizeof(float) * stride);
        }
    return bl;
}

void groupsum_predict_fast(const GroupSumHead& head, const ActBuf& act, int nsamp, int* preds) {
    int C = head.num_classes, gs = head.group_size;
    int stride = act.stride;
    std::vector<float> sums(static_cast<size_t>(C) * stride, 0.0f);
    for (int c = 0; c < C; ++c) {
        float* s = sums.data() + static_cast<size_t>(c) * stride;
        for (int f = c * gs; f < (c + 1) * gs; ++f) {
            const float* r = act.row(f);
            for (int k = 0; k < stride; ++k) s[k] += r[k];
        }
    }
    for (int s = 0; s < nsamp; ++s) {
        int best = 0;
        float m = sums[s];
        for (int c = 1; c < C; ++c) {
            float v = sums[static_cast<size_t>(c) * stride + s];
            if (v > m) m = v, best = c;
        }
        preds[s] = best;
    }
}

}  // namespace bnet
