#pragma once

#include <cstdint>
#include <stdexcept>
#include <utility>

namespace bnet {

// The 16 bivariate Boolean functions B1..B16. Gate i has the truth table
// given by the 4-bit binary expansion of (i-1), MSB first, with rows ordered
// by input (a,b) = (0,0),(0,1),(1,0),(1,1). So B1 is constant 0, B2 is AND,
// B7 is XOR, B8 is OR, B16 is constant 1.
using GateId = int;

inline constexpr int kNumGates = 16;
inline constexpr int kGateMin = 1;
inline constexpr int kGateMax = 16;

constexpr bool gate_valid(GateId g) { return g >= kGateMin && g <= kGateMax; }

// 4-bit truth table; bit (3 - row) holds the output for row = 2*a + b.
constexpr unsigned truth_table(GateId g) { return static_cast<unsigned>(g - 1) & 0xFu; }

constexpr GateId gate_from_table(unsigned t) { return static_cast<GateId>((t & 0xFu) + 1); }

constexpr int truth_row(GateId g, int a, int b) {
    unsigned t = truth_table(g);
    int row = 2 * a + b;
    return static_cast<int>((t >> (3 - row)) & 1u);
}

inline int eval_boolean(GateId g, int a, int b) {
    if (!gate_valid(g)) throw std::invalid_argument("eval_boolean: gate id out of range");
    if ((a & ~1) || (b & ~1)) throw std::invalid_argument("eval_boolean: inputs must be 0 or 1");
    return truth_row(g, a, b);
}

// Multilinear extension of the truth table:
//   v(x,y) = t00 (1-x)(1-y) + t01 (1-x)y + t10 x(1-y) + t11 xy
//          = c0 + cx*x + cy*y + cxy*x*y
// This is the unique polynomial that is affine in each variable and agrees
// with the gate on Boolean corners; it maps [0,1]^2 into [0,1].
struct RelaxCoeffs {
    double c0, cx, cy, cxy;
};

constexpr RelaxCoeffs relax_coeffs(GateId g) {
    double t00 = truth_row(g, 0, 0);
    double t01 = truth_row(g, 0, 1);
    double t10 = truth_row(g, 1, 0);
    double t11 = truth_row(g, 1, 1);
    return {t00, t10 - t00, t01 - t00, t11 + t00 - t01 - t10};
}

// Unchecked form for hot loops.
template <typename Real>
constexpr Real eval_relaxed_unchecked(const RelaxCoeffs& c, Real x, Real y) {
    return static_cast<Real>(c.c0) + static_cast<Real>(c.cx) * x + static_cast<Real>(c.cy) * y +
           static_cast<Real>(c.cxy) * x * y;
}

inline double eval_relaxed(GateId g, double x, double y) {
    if (!gate_valid(g)) throw std::invalid_argument("eval_relaxed: gate id out of range");
    if (!(x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0))
        throw std::domain_error("eval_relaxed: inputs must lie in [0,1]");
    return eval_relaxed_unchecked(relax_coeffs(g), x, y);
}

// (d/dx, d/dy) of the multilinear extension; each partial is affine in the
// other variable.
inline std::pair<double, double> relaxed_partials(GateId g, double x, double y) {
    if (!gate_valid(g)) throw std::invalid_argument("relaxed_partials: gate id out of range");
    RelaxCoeffs c = relax_coeffs(g);
    return {c.cx + c.cxy * y, c.cy + c.cxy * x};
}

enum class GateClass { Const0, Const1, PassA, PassB, NotA, NotB, Nontrivial };

constexpr GateClass classify_gate(GateId g) {
    switch (truth_table(g)) {
        case 0b0000: return GateClass::Const0;   // B1
        case 0b1111: return GateClass::Const1;   // B16
        case 0b0011: return GateClass::PassA;    // B4
        case 0b0101: return GateClass::PassB;    // B6
        case 0b1100: return GateClass::NotA;     // B13
        case 0b1010: return GateClass::NotB;     // B11
        default: return GateClass::Nontrivial;
    }
}

inline constexpr GateId kConst0Gate = 1;
inline constexpr GateId kConst1Gate = 16;
inline constexpr GateId kPassAGate = 4;
inline constexpr GateId kPassBGate = 6;
inline constexpr GateId kNotBGate = 11;
inline constexpr GateId kNotAGate = 13;

// Gate g' with g'(x,y) = g(NOT x, y) (slot 0) or g(x, NOT y) (slot 1).
// Negating an input permutes truth-table rows: slot 0 swaps rows (0,b)<->(1,b),
// slot 1 swaps rows (a,0)<->(a,1). Involution per slot by construction.
constexpr GateId absorb_input_negation(GateId g, int slot) {
    unsigned t = truth_table(g);
    unsigned t2 = slot == 0 ? ((t & 0b1100u) >> 2) | ((t & 0b0011u) << 2)
                            : ((t & 0b1010u) >> 1) | ((t & 0b0101u) << 1);
    return gate_from_table(t2);
}

inline const char* gate_class_name(GateClass c) {
    switch (c) {
        case GateClass::Const0: return "Const0";
        case GateClass::Const1: return "Const1";
        case GateClass::PassA: return "PassA";
        case GateClass::PassB: return "PassB";
        case GateClass::NotA: return "NotA";
        case GateClass::NotB: return "NotB";
        default: return "Nontrivial";
    }
}

}  // namespace bnet
