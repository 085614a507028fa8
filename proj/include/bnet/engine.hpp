#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <vector>

#include "bnet/network.hpp"

namespace bnet {

// Training-time evaluation engine. Activations are float and stored
// feature-major: row f holds that feature's value for every sample in the
// batch, padded to a multiple of 16 so the per-row loops vectorize. The
// semantics mirror the double-precision reference ops; tests pin the two
// paths together.

template <typename T>
struct AlignedAlloc {
    using value_type = T;
    AlignedAlloc() = default;
    template <typename U>
    AlignedAlloc(const AlignedAlloc<U>&) {}
    T* allocate(size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(64)));
    }
    void deallocate(T* p, size_t) { ::operator delete(p, std::align_val_t(64)); }
    bool operator==(const AlignedAlloc&) const { return true; }
};

// Activation/gradient matrix plus two service rows: row `width` is all
// zeros (padding reads) and row `width+1` is a scribble row (padding grad
// writes), so conv window code stays branch-light.
struct ActBuf {
    int width = 0, batch = 0, stride = 0;
    std::vector<float, AlignedAlloc<float>> data;

    void resize(int w, int b) {
        width = w;
        batch = b;
        stride = (b + 15) & ~15;
        data.assign((static_cast<size_t>(w) + 2) * stride, 0.0f);
    }
    float* row(int f) { return data.data() + static_cast<size_t>(f) * stride; }
    const float* row(int f) const { return data.data() + static_cast<size_t>(f) * stride; }
    int zero_row() const { return width; }
    int scribble_row() const { return width + 1; }
    void zero_grad() { std::fill(data.begin(), data.end(), 0.0f); }
    void rezero_service_row() {
        std::fill(data.begin() + static_cast<size_t>(width) * stride,
                  data.begin() + (static_cast<size_t>(width) + 1) * stride, 0.0f);
    }
};

// exp for the softmax hot path: 2^i * P(r) decomposition, relative error
// under 1e-6 on [-87, 0], deterministic across runs.
inline float fast_expf(float x) {
    if (x < -87.0f) x = -87.0f;
    float t = x * 1.44269504088896341f;
    float fi = std::floor(t + 0.5f);
    float r = x - fi * 0.6931471824645996f;   // ln2 split hi/lo for accuracy
    r += fi * 1.904654323148236e-9f;
    float p = 1.0f / 720 + r * (1.0f / 5040);
    p = 1.0f / 120 + r * p;
    p = 1.0f / 24 + r * p;
    p = 1.0f / 6 + r * p;
    p = 0.5f + r * p;
    p = 1.0f + r * p;
    p = 1.0f + r * p;
    int i = static_cast<int>(fi);
    return std::bit_cast<float>(static_cast<uint32_t>((i + 127) << 23)) * p;
}

// Per-layer softmax cache. tilde is refreshed once per step after the
// optimizer update; ent is the per-neuron weight entropy computed from the
// same pass (double accumulation, used by the controllers).
struct SoftmaxCache {
    std::vector<float> tilde;  // [n*K]
    std::vector<double> ent;   // [n]

    void refresh(const double* w, int n, int K);
    void refresh_one(const double* w, int neuron, int K);
};

// Flat window table for one conv layer: win[(oc*positions + pos)*field + slot]
// is the input feature row, or the buffer's zero row for padding.
struct ConvPlan {
    int positions = 0, field = 0;
    std::vector<int32_t> win;       // resolved to input row index, -1 = padding
    void build(const ConvLayer& layer);
};

void dense_forward_fast(const DenseLayer& L, const SoftmaxCache& sc, const ActBuf& in, ActBuf& out);
// Accumulates grad_w (size d_out*K, caller-zeroed); fills gin unless null.
void dense_backward_fast(const DenseLayer& L, const SoftmaxCache& sc, const ActBuf& in,
                         const ActBuf& out, const ActBuf& gout, ActBuf* gin, double* grad_w);

void conv_forward_fast(const ConvLayer& L, const ConvPlan& plan, const SoftmaxCache& sc,
                       const ActBuf& in, ActBuf& out);
void conv_backward_fast(const ConvLayer& L, const ConvPlan& plan, const SoftmaxCache& sc,
                        const ActBuf& in, const ActBuf& out, const ActBuf& gout, ActBuf* gin,
                        double* grad_w);

// GroupSum + softmax cross-entropy over the batch. Returns summed loss and
// correct-prediction count; writes dL/dactivation rows into gout when given.
struct BatchLoss {
    double loss_sum = 0.0;
    int correct = 0;
};
BatchLoss groupsum_loss_fast(const GroupSumHead& head, const ActBuf& act, const uint8_t* labels,
                             int nsamp, ActBuf* gout);

// Relaxed predictions for an evaluation chunk (argmax of group sums).
void groupsum_predict_fast(const GroupSumHead& head, const ActBuf& act, int nsamp, int* preds);

}  // namespace bnet
