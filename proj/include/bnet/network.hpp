#pragma once

#include <vector>

#include "bnet/conv.hpp"
#include "bnet/net.hpp"

namespace bnet {

// A relaxed network: zero or more conv layers, an implicit flatten, zero or
// more dense logic layers, and a GroupSum head. Conv activations are flat
// channel-major, so flatten is a no-op on indices.
struct Network {
    Shape3 input;  // Boolean input after encoding, (channels, h, w)
    std::vector<ConvLayer> convs;
    std::vector<DenseLayer> dense;
    GroupSumHead head;

    int input_width() const { return input.flat(); }

    Shape3 shape_after_conv(size_t n_convs) const {
        Shape3 s = input;
        for (size_t i = 0; i < n_convs && i < convs.size(); ++i)
            s = output_shape(convs[i].spec, s);
        return s;
    }

    int output_width() const {
        if (!dense.empty()) return dense.back().d_out;
        return shape_after_conv(convs.size()).flat();
    }

    bool fully_frozen() const {
        for (const auto& c : convs)
            if (!c.frozen) return false;
        for (const auto& d : dense)
            if (!d.frozen) return false;
        return true;
    }

    // Analytic node count of the compiled circuit: one gate per conv output
    // position plus one per dense neuron.
    long long neuron_count() const {
        long long n = 0;
        Shape3 s = input;
        for (const auto& c : convs) {
            s = output_shape(c.spec, s);
            n += static_cast<long long>(s.flat());
        }
        for (const auto& d : dense) n += d.d_out;
        return n;
    }

    void check_shapes() const;

    // Copy with every live layer collapsed to its argmax gates; used for
    // discretized evaluation and compilation during training.
    Network discretized_snapshot() const;
};

}  // namespace bnet
