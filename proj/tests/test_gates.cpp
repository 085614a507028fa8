#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"

#include "bnet/gates.hpp"
#include "bnet/rng.hpp"

using namespace bnet;

namespace {

// Independent oracle: each of the 16 gates written out with plain logical
// operators, in id order.
const std::vector<std::function<int(int, int)>> kGateOracle = {
    [](int, int) { return 0; },                      // B1  false
    [](int a, int b) { return a && b ? 1 : 0; },     // B2  and
    [](int a, int b) { return a && !b ? 1 : 0; },    // B3  a and not b
    [](int a, int) { return a; },                    // B4  a
    [](int a, int b) { return !a && b ? 1 : 0; },    // B5  not a and b
    [](int, int b) { return b; },                    // B6  b
    [](int a, int b) { return a != b ? 1 : 0; },     // B7  xor
    [](int a, int b) { return a || b ? 1 : 0; },     // B8  or
    [](int a, int b) { return !(a || b) ? 1 : 0; },  // B9  nor
    [](int a, int b) { return a == b ? 1 : 0; },     // B10 xnor
    [](int, int b) { return !b ? 1 : 0; },           // B11 not b
    [](int a, int b) { return a || !b ? 1 : 0; },    // B12 a or not b
    [](int a, int) { return !a ? 1 : 0; },           // B13 not a
    [](int a, int b) { return !a || b ? 1 : 0; },    // B14 not a or b
    [](int a, int b) { return !(a && b) ? 1 : 0; },  // B15 nand
    [](int, int) { return 1; },                      // B16 true
};

}  // namespace

TEST_CASE("all 16 gates match the hand-written oracle on all 4 input rows") {
    int matches = 0;
    for (GateId g = 1; g <= 16; ++g)
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) {
                CAPTURE(g);
                CAPTURE(a);
                CAPTURE(b);
                CHECK(eval_boolean(g, a, b) == kGateOracle[g - 1](a, b));
                matches += eval_boolean(g, a, b) == kGateOracle[g - 1](a, b);
            }
    CHECK(matches == 64);
}

TEST_CASE("named gate constants have the expected semantics") {
    CHECK(classify_gate(kConst0Gate) == GateClass::Const0);
    CHECK(classify_gate(kConst1Gate) == GateClass::Const1);
    CHECK(classify_gate(kPassAGate) == GateClass::PassA);
    CHECK(classify_gate(kPassBGate) == GateClass::PassB);
    CHECK(classify_gate(kNotAGate) == GateClass::NotA);
    CHECK(classify_gate(kNotBGate) == GateClass::NotB);
    CHECK(eval_boolean(2, 1, 1) == 1);   // and
    CHECK(eval_boolean(2, 1, 0) == 0);
    CHECK(eval_boolean(7, 1, 0) == 1);   // xor
    CHECK(eval_boolean(7, 1, 1) == 0);
    CHECK(eval_boolean(8, 0, 1) == 1);   // or
    CHECK(eval_boolean(15, 1, 1) == 0);  // nand
}

TEST_CASE("exactly six gates are trivial, ten are nontrivial") {
    int trivial = 0, nontrivial = 0;
    for (GateId g = 1; g <= 16; ++g)
        (classify_gate(g) == GateClass::Nontrivial ? nontrivial : trivial)++;
    CHECK(trivial == 6);
    CHECK(nontrivial == 10);
}

TEST_CASE("gate id round-trips through the truth table") {
    for (GateId g = 1; g <= 16; ++g) CHECK(gate_from_table(truth_table(g)) == g);
}

TEST_CASE("relaxation agrees with the Boolean gate on all corners") {
    for (GateId g = 1; g <= 16; ++g)
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
                CHECK(eval_relaxed(g, a, b) == static_cast<double>(eval_boolean(g, a, b)));
}

TEST_CASE("relaxation maps the unit square into [0,1]") {
    Rng rng(0x67617465);
    for (int trial = 0; trial < 10000; ++trial) {
        double x = rng.next_double(), y = rng.next_double();
        for (GateId g = 1; g <= 16; ++g) {
            double v = eval_relaxed(g, x, y);
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("relaxed partials match central finite differences") {
    Rng rng(0x70617274);
    const double h = 1e-4;
    for (int trial = 0; trial < 2000; ++trial) {
        // Keep an h-margin so the stencil stays inside the valid domain.
        double x = h + (1 - 2 * h) * rng.next_double();
        double y = h + (1 - 2 * h) * rng.next_double();
        for (GateId g = 1; g <= 16; ++g) {
            auto [dx, dy] = relaxed_partials(g, x, y);
            // The relaxation is affine in each variable, so the central
            // difference is exact up to rounding.
            double fdx = (eval_relaxed(g, x + h, y) - eval_relaxed(g, x - h, y)) / (2 * h);
            double fdy = (eval_relaxed(g, x, y + h) - eval_relaxed(g, x, y - h)) / (2 * h);
            CHECK(std::abs(dx - fdx) <= 1e-6 * std::max(1.0, std::abs(dx)));
            CHECK(std::abs(dy - fdy) <= 1e-6 * std::max(1.0, std::abs(dy)));
        }
    }
}

TEST_CASE("relaxation is multilinear: affine in each argument") {
    Rng rng(0x6d756c74);
    for (int trial = 0; trial < 200; ++trial) {
        double y = rng.next_double();
        double t = rng.next_double();
        for (GateId g = 1; g <= 16; ++g) {
            // f(t, y) should equal the interpolation of the endpoints.
            double lerp = (1 - t) * eval_relaxed(g, 0, y) + t * eval_relaxed(g, 1, y);
            CHECK(eval_relaxed(g, t, y) == doctest::Approx(lerp).epsilon(1e-12));
        }
    }
}

TEST_CASE("absorbing an input negation permutes the truth table correctly") {
    for (GateId g = 1; g <= 16; ++g)
        for (int slot = 0; slot < 2; ++slot) {
            GateId g2 = absorb_input_negation(g, slot);
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) {
                    int expect = slot == 0 ? eval_boolean(g, 1 - a, b) : eval_boolean(g, a, 1 - b);
                    CHECK(eval_boolean(g2, a, b) == expect);
                }
            // Applying the same absorption twice is the identity.
            CHECK(absorb_input_negation(g2, slot) == g);
        }
}

TEST_CASE("checked entry points validate their arguments") {
    CHECK_THROWS_AS(eval_boolean(0, 0, 0), std::invalid_argument);
    CHECK_THROWS_AS(eval_boolean(17, 0, 0), std::invalid_argument);
    CHECK_THROWS_AS(eval_boolean(1, 2, 0), std::invalid_argument);
    CHECK_THROWS_AS(eval_relaxed(0, 0.5, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(eval_relaxed(3, 1.5, 0.5), std::domain_error);
    CHECK_THROWS_AS(eval_relaxed(3, 0.5, -0.1), std::domain_error);
}
