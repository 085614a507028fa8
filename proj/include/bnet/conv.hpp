#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "bnet/net.hpp"

namespace bnet {

// 3x3 kernels with padding 1, stride 1 or 2. Each output channel has a
// single logic-gate kernel (one NeuronParams) shared across all spatial
// positions; its p,q index into the kernel's receptive field, which covers
// channels_per_kernel mapped input channels x 3 x 3 offsets.
struct ConvLayerSpec {
    int in_channels = 0, out_channels = 0;
    int in_h = 0, in_w = 0;
    int stride = 1;
    int channels_per_kernel = 1;

    static constexpr int kKernel = 3;
    static constexpr int kPadding = 1;

    int field_size() const { return channels_per_kernel * kKernel * kKernel; }
    int out_h() const { return (in_h + 2 * kPadding - kKernel) / stride + 1; }
    int out_w() const { return (in_w + 2 * kPadding - kKernel) / stride + 1; }
};

struct Shape3 {
    int c = 0, h = 0, w = 0;
    int flat() const { return c * h * w; }
};

Shape3 output_shape(const ConvLayerSpec& spec, const Shape3& in);

// out_channel -> channels_per_kernel input channels. The first channel is
// assigned round-robin (c mod in_channels) so that out_channels >=
// in_channels guarantees full input coverage; extra channels per kernel are
// drawn uniformly without replacement from the rest.
std::vector<int32_t> assign_channels(const ConvLayerSpec& spec, Rng& rng);

// K (p,q) pairs uniform with replacement over the receptive field.
void sample_kernel_candidates(int K, int field_size, Rng& rng, std::vector<int>& p,
                              std::vector<int>& q);

struct ConvLayer {
    ConvLayerSpec spec;
    int K = 16;
    std::vector<int32_t> channel_map;  // [oc * channels_per_kernel + j]
    // kernel params SoA, slot = oc*K + i; p,q are field-relative
    std::vector<double> w;
    std::vector<uint8_t> k;
    std::vector<int32_t> p, q;
    bool frozen = false;
    std::vector<FrozenChoice> choice;  // field-relative p,q
    uint64_t rev = 0;

    void init(const ConvLayerSpec& s, int KK, InitScheme scheme, Rng& rng);
    NeuronParams kernel(int oc) const;
    void set_kernel(int oc, const NeuronParams& n);
    void freeze();

    int num_kernels() const { return spec.out_channels; }
    int positions() const { return spec.out_h() * spec.out_w(); }

    // Flat input feature index for (output position, field slot), or -1 when
    // the slot falls into the zero padding. Slot = local_channel*9 + ky*3 + kx.
    int window_index(int oy, int ox, int oc, int slot) const;
};

// Reference forward/backward in double precision, batch rows as flat
// (channels*h*w) vectors, channel-major.
struct ConvTape {
    uint64_t rev = 0;
    std::vector<std::vector<double>> x;
    std::vector<std::vector<double>> tilde;  // per kernel
    std::vector<std::vector<double>> out;
};

std::vector<std::vector<double>> conv_forward(const ConvLayer& layer,
                                              const std::vector<std::vector<double>>& batch,
                                              ConvTape* tape = nullptr);

struct ConvGrads {
    std::vector<std::vector<double>> grad_w;  // per kernel, length K
    std::vector<std::vector<double>> grad_in;
};

ConvGrads conv_backward(const ConvLayer& layer, const ConvTape& tape,
                        const std::vector<std::vector<double>>& grad_out);

}  // namespace bnet
