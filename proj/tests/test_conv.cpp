#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"

#include "bnet/conv.hpp"

using namespace bnet;

namespace {

ConvLayer random_conv(int in_c, int out_c, int h, int w, int stride, int cpk, int K, Rng& rng) {
    ConvLayerSpec spec;
    spec.in_channels = in_c;
    spec.out_channels = out_c;
    spec.in_h = h;
    spec.in_w = w;
    spec.stride = stride;
    spec.channels_per_kernel = cpk;
    ConvLayer l;
    l.init(spec, K, InitScheme::Gaussian, rng);
    for (auto& g : l.k) g = static_cast<uint8_t>(1 + rng.next_below(16));
    return l;
}

std::vector<std::vector<double>> random_batch(int rows, int cols, Rng& rng) {
    std::vector<std::vector<double>> x(rows, std::vector<double>(cols));
    for (auto& row : x)
        for (auto& v : row) v = rng.next_double();
    return x;
}

// Independent oracle: evaluate one kernel at one position by explicit loops
// over the 3x3 window with zero padding, using neuron-level primitives only.
double conv_oracle_at(const ConvLayer& l, const std::vector<double>& img, int oc, int oy,
                      int ox) {
    const ConvLayerSpec& s = l.spec;
    std::vector<double> field(s.field_size(), 0.0);
    for (int j = 0; j < s.channels_per_kernel; ++j) {
        int ic = l.channel_map[oc * s.channels_per_kernel + j];
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                int iy = oy * s.stride + ky - 1;
                int ix = ox * s.stride + kx - 1;
                double v = 0.0;
                if (iy >= 0 && iy < s.in_h && ix >= 0 && ix < s.in_w)
                    v = img[(ic * s.in_h + iy) * s.in_w + ix];
                field[j * 9 + ky * 3 + kx] = v;
            }
    }
    return neuron_forward(l.kernel(oc), field);
}

double probe(const ConvLayer& l, const std::vector<std::vector<double>>& x,
             const std::vector<std::vector<double>>& G) {
    auto out = conv_forward(l, x);
    double j = 0;
    for (size_t b = 0; b < out.size(); ++b)
        for (size_t c = 0; c < out[b].size(); ++c) j += G[b][c] * out[b][c];
    return j;
}

}  // namespace

TEST_CASE("output shapes follow the stride-and-padding arithmetic") {
    ConvLayerSpec s;
    s.in_channels = 3;
    s.out_channels = 8;
    s.in_h = 32;
    s.in_w = 32;
    s.stride = 2;
    CHECK(s.out_h() == 16);
    CHECK(s.out_w() == 16);
    s.stride = 1;
    CHECK(s.out_h() == 32);
    s.in_h = 28;
    s.in_w = 28;
    s.stride = 2;
    CHECK(s.out_h() == 14);
    Shape3 in{3, 28, 28};
    Shape3 out = output_shape(s, in);
    CHECK(out.c == 8);
    CHECK(out.h == 14);
    CHECK(out.w == 14);
    CHECK(out.flat() == 8 * 14 * 14);
}

TEST_CASE("channel assignment covers every input channel round-robin") {
    ConvLayerSpec s;
    s.in_channels = 3;
    s.out_channels = 8;
    s.in_h = 8;
    s.in_w = 8;
    s.channels_per_kernel = 2;
    Rng rng(201);
    auto map = assign_channels(s, rng);
    REQUIRE(map.size() == 16);
    for (int oc = 0; oc < 8; ++oc) {
        CHECK(map[oc * 2] == oc % 3);  // primary channel round-robin
        // Secondary channel is distinct and in range.
        CHECK(map[oc * 2 + 1] != map[oc * 2]);
        CHECK(map[oc * 2 + 1] >= 0);
        CHECK(map[oc * 2 + 1] < 3);
    }
}

TEST_CASE("kernel candidate sampling stays inside the receptive field") {
    Rng rng(202);
    std::vector<int> p, q;
    sample_kernel_candidates(16, 18, rng, p, q);
    REQUIRE(p.size() == 16);
    REQUIRE(q.size() == 16);
    for (int i = 0; i < 16; ++i) {
        CHECK(p[i] >= 0);
        CHECK(p[i] < 18);
        CHECK(q[i] >= 0);
        CHECK(q[i] < 18);
    }
}

TEST_CASE("window_index maps field slots to flat input indices with padding") {
    Rng rng(203);
    ConvLayer l = random_conv(2, 4, 5, 5, 1, 2, 4, rng);
    const ConvLayerSpec& s = l.spec;
    for (int oc = 0; oc < 4; ++oc)
        for (int oy = 0; oy < s.out_h(); ++oy)
            for (int ox = 0; ox < s.out_w(); ++ox)
                for (int slot = 0; slot < s.field_size(); ++slot) {
                    int idx = l.window_index(oy, ox, oc, slot);
                    int j = slot / 9, rem = slot % 9;
                    int ky = rem / 3, kx = rem % 3;
                    int iy = oy * s.stride + ky - 1, ix = ox * s.stride + kx - 1;
                    if (iy < 0 || iy >= s.in_h || ix < 0 || ix >= s.in_w) {
                        CHECK(idx == -1);
                    } else {
                        int ic = l.channel_map[oc * 2 + j];
                        CHECK(idx == (ic * s.in_h + iy) * s.in_w + ix);
                    }
                }
}

TEST_CASE("conv_forward matches the explicit-loop oracle") {
    Rng rng(204);
    for (int trial = 0; trial < 5; ++trial) {
        int stride = 1 + static_cast<int>(rng.next_below(2));
        ConvLayer l = random_conv(3, 5, 6, 7, stride, 2, 6, rng);
        auto x = random_batch(2, 3 * 6 * 7, rng);
        auto out = conv_forward(l, x);
        const ConvLayerSpec& s = l.spec;
        REQUIRE(static_cast<int>(out[0].size()) == 5 * s.out_h() * s.out_w());
        for (int b = 0; b < 2; ++b)
            for (int oc = 0; oc < 5; ++oc)
                for (int oy = 0; oy < s.out_h(); ++oy)
                    for (int ox = 0; ox < s.out_w(); ++ox) {
                        double got = out[b][(oc * s.out_h() + oy) * s.out_w() + ox];
                        double want = conv_oracle_at(l, x[b], oc, oy, ox);
                        CHECK(got == doctest::Approx(want).epsilon(1e-12));
                        CHECK(got >= 0.0);
                        CHECK(got <= 1.0);
                    }
    }
}

TEST_CASE("all spatial positions share one kernel") {
    // A frozen pass-through kernel reading the window center copies the
    // (strided) input channel, which is only possible with true sharing.
    Rng rng(205);
    ConvLayer l = random_conv(1, 1, 4, 4, 1, 1, 2, rng);
    NeuronParams n = l.kernel(0);
    n.w = {50.0, 0.0};
    n.k = {kPassAGate, 16};
    n.p = {4, 0};  // center slot of the 3x3 window
    n.q = {0, 0};
    l.set_kernel(0, n);
    auto x = random_batch(1, 16, rng);
    auto out = conv_forward(l, x);
    for (int i = 0; i < 16; ++i) CHECK(out[0][i] == doctest::Approx(x[0][i]).epsilon(1e-9));
}

TEST_CASE("padding reads as exact zero") {
    Rng rng(206);
    ConvLayer l = random_conv(1, 1, 3, 3, 1, 1, 1, rng);
    NeuronParams n = l.kernel(0);
    n.w = {0.0};
    n.k = {kPassAGate};
    n.p = {0};  // top-left slot: padding whenever oy=0 or ox=0
    n.q = {0};
    l.set_kernel(0, n);
    std::vector<std::vector<double>> x(1, std::vector<double>(9, 1.0));
    auto out = conv_forward(l, x);
    CHECK(out[0][0] == 0.0);              // (0,0) top-left reads padding
    CHECK(out[0][4] == doctest::Approx(1.0));  // (1,1) reads input (0,0)
}

TEST_CASE("conv_backward matches central finite differences") {
    Rng rng(207);
    const double h = 1e-6;
    for (int trial = 0; trial < 8; ++trial) {
        int stride = 1 + static_cast<int>(rng.next_below(2));
        int cpk = 1 + static_cast<int>(rng.next_below(2));
        ConvLayer l = random_conv(2, 3, 5, 4, stride, cpk, 5, rng);
        const ConvLayerSpec& s = l.spec;
        auto x = random_batch(2, 2 * 5 * 4, rng);
        auto G = random_batch(2, 3 * s.out_h() * s.out_w(), rng);
        ConvTape tape;
        conv_forward(l, x, &tape);
        ConvGrads g = conv_backward(l, tape, G);

        for (int oc = 0; oc < 3; ++oc)
            for (int i = 0; i < 5; ++i) {
                ConvLayer lp = l, lm = l;
                lp.w[oc * 5 + i] += h;
                lm.w[oc * 5 + i] -= h;
                double fd = (probe(lp, x, G) - probe(lm, x, G)) / (2 * h);
                CHECK(std::abs(g.grad_w[oc][i] - fd) <=
                      1e-5 * std::max(1.0, std::abs(g.grad_w[oc][i])));
            }
        for (int b = 0; b < 2; ++b)
            for (int c = 0; c < 2 * 5 * 4; ++c) {
                auto xp = x, xm = x;
                xp[b][c] += h;
                xm[b][c] -= h;
                double fd = (probe(l, xp, G) - probe(l, xm, G)) / (2 * h);
                CHECK(std::abs(g.grad_in[b][c] - fd) <=
                      1e-5 * std::max(1.0, std::abs(g.grad_in[b][c])));
            }
    }
}

TEST_CASE("frozen conv layers evaluate Boolean inputs to exact Booleans") {
    Rng rng(208);
    ConvLayer l = random_conv(2, 4, 6, 6, 2, 2, 8, rng);
    l.freeze();
    CHECK(l.frozen);
    std::vector<std::vector<double>> x(3, std::vector<double>(2 * 36));
    for (auto& row : x)
        for (auto& v : row) v = rng.next_below(2);
    auto out = conv_forward(l, x);
    for (const auto& row : out)
        for (double v : row) CHECK((v == 0.0 || v == 1.0));
}

TEST_CASE("residual conv init starts as a near-identity") {
    ConvLayerSpec s;
    s.in_channels = 4;
    s.out_channels = 4;
    s.in_h = 6;
    s.in_w = 6;
    s.stride = 1;
    s.channels_per_kernel = 1;
    Rng rng(209);
    ConvLayer l;
    l.init(s, 16, InitScheme::Residual, rng);
    for (int oc = 0; oc < 4; ++oc) {
        std::vector<double> t = softmax_weights(l.kernel(oc).w);
        int best = static_cast<int>(std::max_element(t.begin(), t.end()) - t.begin());
        CHECK(l.kernel(oc).k[best] == kPassAGate);
        CHECK(std::abs(t[best] - 0.9) <= 1e-9);
    }
}

TEST_CASE("conv init is seed-reproducible") {
    ConvLayerSpec s;
    s.in_channels = 3;
    s.out_channels = 6;
    s.in_h = 8;
    s.in_w = 8;
    s.stride = 2;
    s.channels_per_kernel = 3;
    Rng r1(210), r2(210);
    ConvLayer a, b;
    a.init(s, 16, InitScheme::Gaussian, r1);
    b.init(s, 16, InitScheme::Gaussian, r2);
    CHECK(a.w == b.w);
    CHECK(a.k == b.k);
    CHECK(a.p == b.p);
    CHECK(a.q == b.q);
    CHECK(a.channel_map == b.channel_map);
}

TEST_CASE("conv_forward validates the input width") {
    Rng rng(211);
    ConvLayer l = random_conv(2, 3, 4, 4, 1, 1, 4, rng);
    CHECK_THROWS(conv_forward(l, random_batch(1, 2 * 4 * 4 + 1, rng)));
}
