#include "bnet/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bnet/circuit.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace bnet {

void TrainConfig::validate() const {
    if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("rho must be in (0,1)");
    if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
    if (patience < 1) throw std::invalid_argument("patience must be >= 1");
    if (disc_patience < 1) throw std::invalid_argument("disc_patience must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (total_steps < 0) throw std::invalid_argument("total_steps must be >= 0");
    if (eval_interval < 0) throw std::invalid_argument("eval_interval must be >= 0");
    if (K < 1) throw std::invalid_argument("K must be >= 1");
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be >= 0");
    if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
    if (resample_until < 0) throw std::invalid_argument("resample_until must be >= 0");
    if (validation_size < 0) throw std::invalid_argument("validation_size must be >= 0");
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double lr, double beta1, double beta2, double eps) {
    size_t n = params.size();
    if (grads.size() != n || state.m.size() != n || state.v.size() != n)
        throw std::invalid_argument("adam_step: shape mismatch");
    state.t += 1;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (size_t i = 0; i < n; ++i) {
        double g = grads[i];
        if (!std::isfinite(g)) throw TrainAbortError("adam_step: non-finite gradient");
        double m = state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        double v = state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        params[i] -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
    }
}

ResampleAction controller_update(double h, double max_tilde, double& mu, long long& c, double rho,
                                 double epsilon, long long patience) {
    if (std::abs(mu - h) <= epsilon)
        ++c;
    else
        c = 0;
    mu = rho * mu + (1.0 - rho) * h;
    if (c >= patience) {
        if (max_tilde >= 0.95) {
            c = 0;
            return ResampleAction::ResampleNonDominant;
        }
        if (max_tilde <= 0.4) {
            c = 0;
            return ResampleAction::ResampleAll;
        }
        // Neither dominated nor dispersed: keep counting, re-test next step.
    }
    return ResampleAction::None;
}

ResampleAction resampler_observe(const std::vector<double>& w, ResamplerState& state, int neuron,
                                 const TrainConfig& cfg) {
    double h = weight_entropy(w);
    std::vector<double> tilde = softmax_weights(w);
    double mx = *std::max_element(tilde.begin(), tilde.end());
    return controller_update(h, mx, state.mu[neuron], state.c[neuron], cfg.rho, cfg.epsilon,
                             cfg.patience);
}

void apply_resample_slots(double* w, uint8_t* k, int32_t* p, int32_t* q, int K,
                          ResampleAction action, int input_range, Rng& rng) {
    if (action == ResampleAction::None) throw std::invalid_argument("apply_resample: action None");
    auto redraw = [&](int i) {
        k[i] = static_cast<uint8_t>(1 + rng.next_below(16));
        p[i] = static_cast<int32_t>(rng.next_below(static_cast<uint32_t>(input_range)));
        q[i] = static_cast<int32_t>(rng.next_below(static_cast<uint32_t>(input_range)));
    };
    if (action == ResampleAction::ResampleNonDominant) {
        int dom = 0;
        for (int i = 1; i < K; ++i)
            if (w[i] > w[dom]) dom = i;
        for (int i = 0; i < K; ++i)
            if (i != dom) redraw(i);
        double w_rest = std::log(0.1 / (K - 1));
        for (int i = 0; i < K; ++i) w[i] = i == dom ? std::log(0.9) : w_rest;
    } else {
        for (int i = 0; i < K; ++i) redraw(i);
        double u = -std::log(static_cast<double>(K));
        for (int i = 0; i < K; ++i) w[i] = u;
    }
}

void apply_resample(NeuronParams& n, ResampleAction action, int input_range, Rng& rng) {
    int K = n.num_triples();
    std::vector<uint8_t> k8(K);
    std::vector<int32_t> p(K), q(K);
    for (int i = 0; i < K; ++i) {
        k8[i] = static_cast<uint8_t>(n.k[i]);
        p[i] = n.p[i];
        q[i] = n.q[i];
    }
    apply_resample_slots(n.w.data(), k8.data(), p.data(), q.data(), K, action, input_range, rng);
    for (int i = 0; i < K; ++i) {
        n.k[i] = static_cast<GateId>(k8[i]);
        n.p[i] = p[i];
        n.q[i] = q[i];
    }
}

bool discretizer_update(double h_mean, DiscretizerState& state, double rho, double epsilon,
                        long long patience) {
    if (std::abs(state.mu - h_mean) <= epsilon)
        ++state.c;
    else
        state.c = 0;
    state.mu = rho * state.mu + (1.0 - rho) * h_mean;
    return state.c >= patience;
}

int discretizer_observe(Network& net, DiscretizerState& state, const TrainConfig& cfg) {
    int nc = static_cast<int>(net.convs.size());
    int l = state.next_layer;
    while (l < nc && net.convs[l].frozen) {
        ++l;
        state = DiscretizerState{l, 0.0, 0};
    }
    state.next_layer = l;
    if (l >= nc) return -1;
    const ConvLayer& L = net.convs[l];
    double h = 0.0;
    for (int oc = 0; oc < L.num_kernels(); ++oc) h += weight_entropy(L.kernel(oc).w);
    h /= L.num_kernels();
    if (!discretizer_update(h, state, cfg.rho, cfg.epsilon, cfg.disc_patience)) return -1;
    net.convs[l].freeze();
    state = DiscretizerState{l + 1, 0.0, 0};
    return l;
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

void encode_column(const Dataset& ds, int sample, const ThermometerCodec& codec,
                   std::vector<uint8_t>& bits, ActBuf& a0, int col) {
    thermometer_encode(ds.image(sample), ds.channels, ds.height, ds.width, codec, bits.data());
    for (int f = 0; f < a0.width; ++f) a0.row(f)[col] = bits[f];
}

void check_data_shape(const Network& net, const Dataset& ds, const ThermometerCodec& codec) {
    if (net.input.c != ds.channels * codec.N || net.input.h != ds.height ||
        net.input.w != ds.width)
        throw std::invalid_argument("dataset shape does not match network input");
}

}  // namespace

std::vector<int> predict_circuit(const BooleanCircuit& c, const Dataset& ds,
                                 const ThermometerCodec& codec, int max_samples) {
    int F = ds.channels * codec.N * ds.height * ds.width;
    if (c.num_inputs != F)
        throw std::invalid_argument("circuit input count does not match encoded dataset width");
    int n = ds.num_samples();
    if (max_samples >= 0 && max_samples < n) n = max_samples;
    if (n == 0) return {};
    std::vector<uint8_t> bits(F);
    PackedBits in;
    in.resize(F, n);
    for (int s = 0; s < n; ++s) {
        thermometer_encode(ds.image(s), ds.channels, ds.height, ds.width, codec, bits.data());
        int word = s >> 6;
        uint64_t mask = uint64_t{1} << (s & 63);
        for (int f = 0; f < F; ++f)
            if (bits[f]) in.line(f)[word] |= mask;
    }
    return eval_bitpacked(c, in).predicted;
}

std::vector<int> predict(const Network& net, const Dataset& ds, const ThermometerCodec& codec,
                         EvalMode mode, int max_samples) {
    check_data_shape(net, ds, codec);
    int n = ds.num_samples();
    if (max_samples >= 0 && max_samples < n) n = max_samples;
    if (n == 0) return {};
    int F = net.input_width();
    std::vector<uint8_t> bits(F);

    if (mode == EvalMode::Discretized) {
        Network snap;
        const Network* src = &net;
        if (!net.fully_frozen()) {
            snap = net.discretized_snapshot();
            src = &snap;
        }
        BooleanCircuit c = compile(*src);
        return predict_circuit(c, ds, codec, n);
    }

    int nc = static_cast<int>(net.convs.size());
    int nd = static_cast<int>(net.dense.size());
    int cap = std::min(n, 256);
    cap = (cap + 15) & ~15;
    std::vector<ActBuf> act(nc + nd + 1);
    act[0].resize(F, cap);
    for (int i = 0; i < nc; ++i) act[i + 1].resize(net.shape_after_conv(i + 1).flat(), cap);
    for (int j = 0; j < nd; ++j) act[nc + j + 1].resize(net.dense[j].d_out, cap);
    std::vector<ConvPlan> plans(nc);
    std::vector<SoftmaxCache> sc_conv(nc), sc_dense(nd);
    for (int i = 0; i < nc; ++i) {
        plans[i].build(net.convs[i]);
        if (!net.convs[i].frozen)
            sc_conv[i].refresh(net.convs[i].w.data(), net.convs[i].num_kernels(), net.convs[i].K);
    }
    for (int j = 0; j < nd; ++j)
        if (!net.dense[j].frozen)
            sc_dense[j].refresh(net.dense[j].w.data(), net.dense[j].d_out, net.dense[j].K);

    std::vector<int> preds(cap);
    std::vector<int> out;
    out.reserve(n);
    for (int s0 = 0; s0 < n; s0 += cap) {
        int m = std::min(cap, n - s0);
        for (int s = 0; s < m; ++s) encode_column(ds, s0 + s, codec, bits, act[0], s);
        for (int i = 0; i < nc; ++i)
            conv_forward_fast(net.convs[i], plans[i], sc_conv[i], act[i], act[i + 1]);
        for (int j = 0; j < nd; ++j)
            dense_forward_fast(net.dense[j], sc_dense[j], act[nc + j], act[nc + j + 1]);
        groupsum_predict_fast(net.head, act.back(), m, preds.data());
        out.insert(out.end(), preds.begin(), preds.begin() + m);
    }
    return out;
}

double evaluate(const Network& net, const Dataset& ds, const ThermometerCodec& codec,
                EvalMode mode, int max_samples) {
    std::vector<int> preds = predict(net, ds, codec, mode, max_samples);
    if (preds.empty()) return 0.0;
    int correct = 0;
    for (size_t s = 0; s < preds.size(); ++s) correct += preds[s] == ds.labels[s];
    return static_cast<double>(correct) / static_cast<double>(preds.size());
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'B', 'N', 'E', 'T', 'C', 'K', 'P', '1'};
constexpr uint32_t kVersion = 1;

struct Writer {
    std::string buf;
    void u8(uint8_t v) { buf.push_back(static_cast<char>(v)); }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>(v >> (8 * i)));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>(v >> (8 * i)));
    }
    void i32(int32_t v) { u32(static_cast<uint32_t>(v)); }
    void i64(int64_t v) { u64(static_cast<uint64_t>(v)); }
    void f64(double v) { u64(std::bit_cast<uint64_t>(v)); }
};

struct Reader {
    const unsigned char* p;
    const unsigned char* end;
    void need(size_t n) const {
        if (static_cast<size_t>(end - p) < n) throw std::runtime_error("checkpoint: truncated");
    }
    uint8_t u8() {
        need(1);
        return *p++;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
        p += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
        p += 8;
        return v;
    }
    int32_t i32() { return static_cast<int32_t>(u32()); }
    int64_t i64() { return static_cast<int64_t>(u64()); }
    double f64() { return std::bit_cast<double>(u64()); }
};

void write_params(Writer& w, const std::vector<double>& wv, const std::vector<uint8_t>& kv,
                  const std::vector<int32_t>& pv, const std::vector<int32_t>& qv) {
    for (double x : wv) w.f64(x);
    for (uint8_t x : kv) w.u8(x);
    for (int32_t x : pv) w.i32(x);
    for (int32_t x : qv) w.i32(x);
}

void read_params(Reader& r, size_t n, std::vector<double>& wv, std::vector<uint8_t>& kv,
                 std::vector<int32_t>& pv, std::vector<int32_t>& qv) {
    wv.resize(n);
    kv.resize(n);
    pv.resize(n);
    qv.resize(n);
    for (auto& x : wv) x = r.f64();
    for (auto& x : kv) {
        x = r.u8();
        if (x < 1 || x > 16) throw std::runtime_error("checkpoint: gate id out of range");
    }
    for (auto& x : pv) x = r.i32();
    for (auto& x : qv) x = r.i32();
}

void write_choices(Writer& w, const std::vector<FrozenChoice>& ch) {
    for (const FrozenChoice& c : ch) {
        w.u8(static_cast<uint8_t>(c.g));
        w.i32(c.p);
        w.i32(c.q);
    }
}

void read_choices(Reader& r, size_t n, std::vector<FrozenChoice>& ch) {
    ch.resize(n);
    for (auto& c : ch) {
        c.g = static_cast<GateId>(r.u8());
        if (c.g < 1 || c.g > 16) throw std::runtime_error("checkpoint: gate id out of range");
        c.p = r.i32();
        c.q = r.i32();
    }
}

void write_adam(Writer& w, const AdamState& a) {
    bool live = !a.m.empty();
    w.u8(live);
    if (!live) return;
    w.i64(a.t);
    w.u64(a.m.size());
    for (double x : a.m) w.f64(x);
    for (double x : a.v) w.f64(x);
}

void read_adam(Reader& r, AdamState& a) {
    if (!r.u8()) {
        a = AdamState{};
        return;
    }
    a.t = r.i64();
    size_t n = r.u64();
    a.m.resize(n);
    a.v.resize(n);
    for (auto& x : a.m) x = r.f64();
    for (auto& x : a.v) x = r.f64();
}

void write_rs(Writer& w, const ResamplerState& s) {
    bool live = !s.mu.empty();
    w.u8(live);
    if (!live) return;
    w.u64(s.mu.size());
    for (double x : s.mu) w.f64(x);
    for (long long x : s.c) w.i64(x);
}

void read_rs(Reader& r, ResamplerState& s) {
    if (!r.u8()) {
        s = ResamplerState{};
        return;
    }
    size_t n = r.u64();
    s.mu.resize(n);
    s.c.resize(n);
    for (auto& x : s.mu) x = r.f64();
    for (auto& x : s.c) x = r.i64();
}

}  // namespace

void save_checkpoint(const std::string& path, const Network& net, const TrainerState* state,
                     const TrainConfig* cfg) {
    Writer w;
    w.buf.append(kMagic, sizeof(kMagic));
    w.u32(kVersion);

    w.i32(net.input.c);
    w.i32(net.input.h);
    w.i32(net.input.w);
    w.u32(static_cast<uint32_t>(net.convs.size()));
    for (const ConvLayer& L : net.convs) {
        w.i32(L.spec.in_channels);
        w.i32(L.spec.out_channels);
        w.i32(L.spec.in_h);
        w.i32(L.spec.in_w);
        w.i32(L.spec.stride);
        w.i32(L.spec.channels_per_kernel);
        w.i32(L.K);
        w.u8(L.frozen);
        for (int32_t x : L.channel_map) w.i32(x);
        if (L.frozen)
            write_choices(w, L.choice);
        else
            write_params(w, L.w, L.k, L.p, L.q);
    }
    w.u32(static_cast<uint32_t>(net.dense.size()));
    for (const DenseLayer& L : net.dense) {
        w.i32(L.d_in);
        w.i32(L.d_out);
        w.i32(L.K);
        w.u8(L.frozen);
        if (L.frozen)
            write_choices(w, L.choice);
        else
            write_params(w, L.w, L.k, L.p, L.q);
    }
    w.i32(net.head.num_classes);
    w.i32(net.head.group_size);
    w.f64(net.head.tau);

    w.u8(state != nullptr);
    if (state) {
        w.i64(state->step);
        w.i64(state->best_step);
        w.f64(state->best_acc);
        w.u64(state->rng_data_state);
        w.u64(state->rng_resample_state);
        w.u64(state->seed_aug);
        w.i64(state->resamples_nondominant);
        w.i64(state->resamples_all);
        w.u32(static_cast<uint32_t>(state->adam_conv.size()));
        for (const AdamState& a : state->adam_conv) write_adam(w, a);
        w.u32(static_cast<uint32_t>(state->adam_dense.size()));
        for (const AdamState& a : state->adam_dense) write_adam(w, a);
        w.u32(static_cast<uint32_t>(state->rs_conv.size()));
        for (const ResamplerState& s : state->rs_conv) write_rs(w, s);
        w.u32(static_cast<uint32_t>(state->rs_dense.size()));
        for (const ResamplerState& s : state->rs_dense) write_rs(w, s);
        w.i32(state->disc.next_layer);
        w.f64(state->disc.mu);
        w.i64(state->disc.c);
    }

    w.u8(cfg != nullptr);
    if (cfg) {
        w.f64(cfg->learning_rate);
        w.i32(cfg->batch_size);
        w.i64(cfg->total_steps);
        w.i64(cfg->eval_interval);
        w.f64(cfg->tau);
        w.i32(cfg->K);
        w.f64(cfg->rho);
        w.f64(cfg->epsilon);
        w.i64(cfg->patience);
        w.i64(cfg->disc_patience);
        w.i64(cfg->resample_until);
        w.u64(cfg->seed);
        w.u8(cfg->augment);
        w.i32(cfg->validation_size);
        w.u8(cfg->select_on_test);
        w.u8(cfg->adaptive_discretization);
        w.f64(cfg->beta1);
        w.f64(cfg->beta2);
        w.f64(cfg->adam_eps);
    }

    fs::path tmp = fs::path(path).concat(".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
        out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
        if (!out) throw std::runtime_error("checkpoint write failed: " + path);
    }
    fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r{reinterpret_cast<const unsigned char*>(buf.data()),
             reinterpret_cast<const unsigned char*>(buf.data()) + buf.size()};
    r.need(sizeof(kMagic));
    if (std::memcmp(r.p, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("checkpoint: bad magic");
    r.p += sizeof(kMagic);
    if (r.u32() != kVersion) throw std::runtime_error("checkpoint: unsupported version");

    Checkpoint ck;
    Network& net = ck.net;
    net.input.c = r.i32();
    net.input.h = r.i32();
    net.input.w = r.i32();
    uint32_t nconv = r.u32();
    net.convs.resize(nconv);
    for (ConvLayer& L : net.convs) {
        L.spec.in_channels = r.i32();
        L.spec.out_channels = r.i32();
        L.spec.in_h = r.i32();
        L.spec.in_w = r.i32();
        L.spec.stride = r.i32();
        L.spec.channels_per_kernel = r.i32();
        L.K = r.i32();
        if (L.spec.out_channels <= 0 || L.K <= 0) throw std::runtime_error("checkpoint: bad layer");
        L.frozen = r.u8();
        L.channel_map.resize(static_cast<size_t>(L.spec.out_channels) *
                             L.spec.channels_per_kernel);
        for (auto& x : L.channel_map) x = r.i32();
        if (L.frozen)
            read_choices(r, L.spec.out_channels, L.choice);
        else
            read_params(r, static_cast<size_t>(L.spec.out_channels) * L.K, L.w, L.k, L.p, L.q);
    }
    uint32_t ndense = r.u32();
    net.dense.resize(ndense);
    for (DenseLayer& L : net.dense) {
        L.d_in = r.i32();
        L.d_out = r.i32();
        L.K = r.i32();
        if (L.d_in <= 0 || L.d_out <= 0 || L.K <= 0)
            throw std::runtime_error("checkpoint: bad layer");
        L.frozen = r.u8();
        if (L.frozen)
            read_choices(r, L.d_out, L.choice);
        else
            read_params(r, static_cast<size_t>(L.d_out) * L.K, L.w, L.k, L.p, L.q);
    }
    net.head.num_classes = r.i32();
    net.head.group_size = r.i32();
    net.head.tau = r.f64();
    net.check_shapes();

    if (r.u8()) {
        TrainerState st;
        st.step = r.i64();
        st.best_step = r.i64();
        st.best_acc = r.f64();
        st.rng_data_state = r.u64();
        st.rng_resample_state = r.u64();
        st.seed_aug = r.u64();
        st.resamples_nondominant = r.i64();
        st.resamples_all = r.i64();
        st.adam_conv.resize(r.u32());
        for (auto& a : st.adam_conv) read_adam(r, a);
        st.adam_dense.resize(r.u32());
        for (auto& a : st.adam_dense) read_adam(r, a);
        st.rs_conv.resize(r.u32());
        for (auto& s : st.rs_conv) read_rs(r, s);
        st.rs_dense.resize(r.u32());
        for (auto& s : st.rs_dense) read_rs(r, s);
        st.disc.next_layer = r.i32();
        st.disc.mu = r.f64();
        st.disc.c = r.i64();
        ck.state = std::move(st);
    }
    if (r.u8()) {
        TrainConfig c;
        c.learning_rate = r.f64();
        c.batch_size = r.i32();
        c.total_steps = r.i64();
        c.eval_interval = r.i64();
        c.tau = r.f64();
        c.K = r.i32();
        c.rho = r.f64();
        c.epsilon = r.f64();
        c.patience = r.i64();
        c.disc_patience = r.i64();
        c.resample_until = r.i64();
        c.seed = r.u64();
        c.augment = r.u8();
        c.validation_size = r.i32();
        c.select_on_test = r.u8();
        c.adaptive_discretization = r.u8();
        c.beta1 = r.f64();
        c.beta2 = r.f64();
        c.adam_eps = r.f64();
        ck.cfg = c;
    }
    return ck;
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(Network net, const Dataset* train, const Dataset* test, ThermometerCodec codec,
                 TrainConfig cfg, std::string out_dir)
    : net_(std::move(net)),
      train_(train),
      test_(test),
      codec_(std::move(codec)),
      cfg_(cfg),
      out_dir_(std::move(out_dir)) {
    cfg_.validate();
    net_.check_shapes();
    if (net_.head.tau != cfg_.tau)
        throw std::invalid_argument("config tau does not match the network head");
    for (const ConvLayer& L : net_.convs)
        if (!L.frozen && L.K != cfg_.K) throw std::invalid_argument("config K mismatch (conv)");
    for (const DenseLayer& L : net_.dense)
        if (!L.frozen && L.K != cfg_.K) throw std::invalid_argument("config K mismatch (dense)");
    if (!train_) throw std::invalid_argument("training dataset required");
    check_data_shape(net_, *train_, codec_);
    if (test_) check_data_shape(net_, *test_, codec_);

    int holdout = cfg_.select_on_test ? 0 : cfg_.validation_size;
    train_n_ = train_->num_samples() - holdout;
    if (train_n_ <= 0) throw std::invalid_argument("validation split leaves no training data");
    if (holdout > 0) {
        val_split_.channels = train_->channels;
        val_split_.height = train_->height;
        val_split_.width = train_->width;
        size_t px = static_cast<size_t>(train_->sample_size());
        val_split_.pixels.assign(train_->pixels.begin() + static_cast<size_t>(train_n_) * px,
                                 train_->pixels.end());
        val_split_.labels.assign(train_->labels.begin() + train_n_, train_->labels.end());
        has_val_ = true;
    }

    int nc = static_cast<int>(net_.convs.size());
    int nd = static_cast<int>(net_.dense.size());
    int B = cfg_.batch_size;
    act_.resize(nc + nd + 1);
    grad_.resize(nc + nd + 1);
    act_[0].resize(net_.input_width(), B);
    grad_[0].resize(net_.input_width(), B);
    for (int i = 0; i < nc; ++i) {
        int wdt = net_.shape_after_conv(i + 1).flat();
        act_[i + 1].resize(wdt, B);
        grad_[i + 1].resize(wdt, B);
    }
    for (int j = 0; j < nd; ++j) {
        act_[nc + j + 1].resize(net_.dense[j].d_out, B);
        grad_[nc + j + 1].resize(net_.dense[j].d_out, B);
    }
    sc_conv_.resize(nc);
    sc_dense_.resize(nd);
    plans_.resize(nc);
    gw_conv_.resize(nc);
    gw_dense_.resize(nd);
    st_.adam_conv.resize(nc);
    st_.adam_dense.resize(nd);
    st_.rs_conv.resize(nc);
    st_.rs_dense.resize(nd);
    for (int i = 0; i < nc; ++i) {
        const ConvLayer& L = net_.convs[i];
        gw_conv_[i].assign(static_cast<size_t>(L.num_kernels()) * L.K, 0.0);
        if (!L.frozen) {
            st_.adam_conv[i].init(static_cast<size_t>(L.num_kernels()) * L.K);
            st_.rs_conv[i].init(L.num_kernels());
        }
    }
    for (int j = 0; j < nd; ++j) {
        const DenseLayer& L = net_.dense[j];
        gw_dense_[j].assign(static_cast<size_t>(L.d_out) * L.K, 0.0);
        st_.adam_dense[j].init(static_cast<size_t>(L.d_out) * L.K);
        st_.rs_dense[j].init(L.d_out);
    }
    batch_labels_.resize(B);
    aug_scratch_.resize(train_->sample_size());
    bits_scratch_.resize(net_.input_width());

    uint64_t base = hash_mix(cfg_.seed, 0x747261696eULL);  // stream family for the trainer
    rng_data_ = Rng(hash_mix(base, 1));
    rng_resample_ = Rng(hash_mix(base, 2));
    st_.seed_aug = hash_mix(base, 3);

    if (!out_dir_.empty()) {
        fs::create_directories(out_dir_);
        std::string last = out_dir_ + "/last.ckpt";
        if (fs::exists(last)) {
            Checkpoint ck = load_checkpoint(last);
            if (!ck.state) throw std::runtime_error("resume checkpoint lacks trainer state");
            if (ck.cfg) {
                const TrainConfig& o = *ck.cfg;
                bool same = o.learning_rate == cfg_.learning_rate &&
                            o.batch_size == cfg_.batch_size && o.tau == cfg_.tau &&
                            o.K == cfg_.K && o.rho == cfg_.rho && o.epsilon == cfg_.epsilon &&
                            o.patience == cfg_.patience && o.disc_patience == cfg_.disc_patience &&
                            o.resample_until == cfg_.resample_until && o.seed == cfg_.seed &&
                            o.augment == cfg_.augment &&
                            o.validation_size == cfg_.validation_size &&
                            o.select_on_test == cfg_.select_on_test &&
                            o.adaptive_discretization == cfg_.adaptive_discretization;
                if (!same)
                    throw std::runtime_error("resume config differs from checkpointed config");
            }
            if (ck.net.convs.size() != net_.convs.size() ||
                ck.net.dense.size() != net_.dense.size() ||
                ck.net.input_width() != net_.input_width() ||
                ck.net.output_width() != net_.output_width())
                throw std::runtime_error("resume checkpoint topology mismatch");
            net_ = std::move(ck.net);
            st_ = std::move(*ck.state);
            rng_data_.set_state(st_.rng_data_state);
            rng_resample_.set_state(st_.rng_resample_state);
        }
    }

    for (int i = 0; i < nc; ++i) plans_[i].build(net_.convs[i]);
    refresh_caches();
}

int Trainer::first_live_conv() const {
    int nc = static_cast<int>(net_.convs.size());
    for (int i = 0; i < nc; ++i)
        if (!net_.convs[i].frozen) return i;
    return nc;
}

void Trainer::refresh_caches() {
    for (size_t i = 0; i < net_.convs.size(); ++i)
        if (!net_.convs[i].frozen)
            sc_conv_[i].refresh(net_.convs[i].w.data(), net_.convs[i].num_kernels(),
                                net_.convs[i].K);
    for (size_t j = 0; j < net_.dense.size(); ++j)
        if (!net_.dense[j].frozen)
            sc_dense_[j].refresh(net_.dense[j].w.data(), net_.dense[j].d_out, net_.dense[j].K);
}

void Trainer::fill_batch(int nsamp, long long step_index) {
    int F = net_.input_width();
    ActBuf& a0 = act_[0];
    for (int s = 0; s < nsamp; ++s) {
        int idx = static_cast<int>(rng_data_.next_below(static_cast<uint32_t>(train_n_)));
        batch_labels_[s] = train_->labels[idx];
        const float* src = train_->image(idx);
        if (cfg_.augment) {
            Rng arng(hash_mix(st_.seed_aug,
                              static_cast<uint64_t>(step_index) * cfg_.batch_size + s));
            if (train_->channels == 1)
                augment_mnist(src, aug_scratch_.data(), train_->height, train_->width, arng);
            else
                augment_cifar(src, aug_scratch_.data(), train_->channels, train_->height,
                              train_->width, arng);
            src = aug_scratch_.data();
        }
        thermometer_encode(src, train_->channels, train_->height, train_->width, codec_,
                           bits_scratch_.data());
        for (int f = 0; f < F; ++f) a0.row(f)[s] = bits_scratch_[f];
    }
}

void Trainer::forward_all(int nsamp) {
    (void)nsamp;
    int nc = static_cast<int>(net_.convs.size());
    for (int i = 0; i < nc; ++i)
        conv_forward_fast(net_.convs[i], plans_[i], sc_conv_[i], act_[i], act_[i + 1]);
    for (size_t j = 0; j < net_.dense.size(); ++j)
        dense_forward_fast(net_.dense[j], sc_dense_[j], act_[nc + j], act_[nc + j + 1]);
}

void Trainer::backward_all(int nsamp) {
    (void)nsamp;
    int nc = static_cast<int>(net_.convs.size());
    int nd = static_cast<int>(net_.dense.size());
    int live0 = first_live_conv();
    for (int j = nd - 1; j >= 0; --j) {
        bool need_gin = j > 0 || live0 < nc;
        ActBuf* gin = need_gin ? &grad_[nc + j] : nullptr;
        if (gin) gin->zero_grad();
        std::fill(gw_dense_[j].begin(), gw_dense_[j].end(), 0.0);
        dense_backward_fast(net_.dense[j], sc_dense_[j], act_[nc + j], act_[nc + j + 1],
                            grad_[nc + j + 1], gin, gw_dense_[j].data());
    }
    for (int i = nc - 1; i >= live0; --i) {
        ActBuf* gin = i > live0 ? &grad_[i] : nullptr;
        if (gin) gin->zero_grad();
        std::fill(gw_conv_[i].begin(), gw_conv_[i].end(), 0.0);
        conv_backward_fast(net_.convs[i], plans_[i], sc_conv_[i], act_[i], act_[i + 1],
                           grad_[i + 1], gin, gw_conv_[i].data());
    }
}

void Trainer::optimizer_update() {
    int nc = static_cast<int>(net_.convs.size());
    for (int i = first_live_conv(); i < nc; ++i) {
        adam_step(net_.convs[i].w, gw_conv_[i], st_.adam_conv[i], cfg_.learning_rate, cfg_.beta1,
                  cfg_.beta2, cfg_.adam_eps);
        ++net_.convs[i].rev;
    }
    for (size_t j = 0; j < net_.dense.size(); ++j) {
        adam_step(net_.dense[j].w, gw_dense_[j], st_.adam_dense[j], cfg_.learning_rate, cfg_.beta1,
                  cfg_.beta2, cfg_.adam_eps);
        ++net_.dense[j].rev;
    }
}

void Trainer::run_controllers() {
    int nc = static_cast<int>(net_.convs.size());
    bool resample_phase = st_.step <= cfg_.resample_until;
    if (resample_phase) {
        for (int i = first_live_conv(); i < nc; ++i) {
            ConvLayer& L = net_.convs[i];
            int K = L.K, range = L.spec.field_size();
            for (int oc = 0; oc < L.num_kernels(); ++oc) {
                const float* t = sc_conv_[i].tilde.data() + static_cast<size_t>(oc) * K;
                float mx = t[0];
                for (int x = 1; x < K; ++x) mx = std::max(mx, t[x]);
                ResampleAction a =
                    controller_update(sc_conv_[i].ent[oc], mx, st_.rs_conv[i].mu[oc],
                                      st_.rs_conv[i].c[oc], cfg_.rho, cfg_.epsilon, cfg_.patience);
                if (a == ResampleAction::None) continue;
                size_t base = static_cast<size_t>(oc) * K;
                apply_resample_slots(L.w.data() + base, L.k.data() + base, L.p.data() + base,
                                     L.q.data() + base, K, a, range, rng_resample_);
                std::fill_n(st_.adam_conv[i].m.begin() + base, K, 0.0);
                std::fill_n(st_.adam_conv[i].v.begin() + base, K, 0.0);
                sc_conv_[i].refresh_one(L.w.data(), oc, K);
                ++L.rev;
                (a == ResampleAction::ResampleNonDominant ? st_.resamples_nondominant
                                                          : st_.resamples_all)++;
            }
        }
        for (size_t j = 0; j < net_.dense.size(); ++j) {
            DenseLayer& L = net_.dense[j];
            int K = L.K, range = L.d_in;
            for (int n = 0; n < L.d_out; ++n) {
                const float* t = sc_dense_[j].tilde.data() + static_cast<size_t>(n) * K;
                float mx = t[0];
                for (int x = 1; x < K; ++x) mx = std::max(mx, t[x]);
                ResampleAction a =
                    controller_update(sc_dense_[j].ent[n], mx, st_.rs_dense[j].mu[n],
                                      st_.rs_dense[j].c[n], cfg_.rho, cfg_.epsilon, cfg_.patience);
                if (a == ResampleAction::None) continue;
                size_t base = static_cast<size_t>(n) * K;
                apply_resample_slots(L.w.data() + base, L.k.data() + base, L.p.data() + base,
                                     L.q.data() + base, K, a, range, rng_resample_);
                std::fill_n(st_.adam_dense[j].m.begin() + base, K, 0.0);
                std::fill_n(st_.adam_dense[j].v.begin() + base, K, 0.0);
                sc_dense_[j].refresh_one(L.w.data(), n, K);
                ++L.rev;
                (a == ResampleAction::ResampleNonDominant ? st_.resamples_nondominant
                                                          : st_.resamples_all)++;
            }
        }
        return;
    }
    if (!cfg_.adaptive_discretization) return;
    int l = st_.disc.next_layer;
    while (l < nc && net_.convs[l].frozen) {
        ++l;
        st_.disc = DiscretizerState{l, 0.0, 0};
    }
    st_.disc.next_layer = l;
    if (l >= nc) return;
    const std::vector<double>& ent = sc_conv_[l].ent;
    double h = 0.0;
    for (double e : ent) h += e;
    h /= static_cast<double>(ent.size());
    if (discretizer_update(h, st_.disc, cfg_.rho, cfg_.epsilon, cfg_.disc_patience)) {
        net_.convs[l].freeze();
        st_.adam_conv[l] = AdamState{};
        st_.rs_conv[l] = ResamplerState{};
        st_.disc = DiscretizerState{l + 1, 0.0, 0};
    }
}

void Trainer::step() {
    ++st_.step;
    fill_batch(cfg_.batch_size, st_.step);
    forward_all(cfg_.batch_size);
    BatchLoss bl =
        groupsum_loss_fast(net_.head, act_.back(), batch_labels_.data(), cfg_.batch_size,
                           &grad_.back());
    if (!std::isfinite(bl.loss_sum))
        throw TrainAbortError("non-finite loss at step " + std::to_string(st_.step));
    backward_all(cfg_.batch_size);
    optimizer_update();
    refresh_caches();
    run_controllers();
    last_loss_ = bl.loss_sum / cfg_.batch_size;
    run_loss_sum_ += bl.loss_sum;
    run_correct_ += bl.correct;
    run_samples_ += cfg_.batch_size;
    ++run_batches_;
}

double Trainer::validation_disc_accuracy() {
    const Dataset* d = has_val_ ? &val_split_ : (cfg_.select_on_test ? test_ : nullptr);
    if (!d) return -1.0;
    return evaluate(net_, *d, codec_, EvalMode::Discretized);
}

double Trainer::validation_relaxed_accuracy() {
    const Dataset* d = has_val_ ? &val_split_ : (cfg_.select_on_test ? test_ : nullptr);
    if (!d) return -1.0;
    return evaluate(net_, *d, codec_, EvalMode::Relaxed);
}

void Trainer::eval_tick(std::ostream* metrics) {
    double vr = validation_relaxed_accuracy();
    double vd = validation_disc_accuracy();
    if (vd > st_.best_acc) {
        st_.best_acc = vd;
        st_.best_step = st_.step;
        if (!out_dir_.empty()) {
            st_.rng_data_state = rng_data_.state();
            st_.rng_resample_state = rng_resample_.state();
            save_checkpoint(out_dir_ + "/best.ckpt", net_, &st_, &cfg_);
        }
    }
    if (metrics) {
        nlohmann::ordered_json rec;
        rec["step"] = st_.step;
        rec["loss"] = run_samples_ ? run_loss_sum_ / run_samples_ : 0.0;
        rec["train_acc"] = run_samples_ ? static_cast<double>(run_correct_) / run_samples_ : 0.0;
        rec["val_relaxed_acc"] = vr;
        rec["val_disc_acc"] = vd;
        rec["best_acc"] = st_.best_acc;
        rec["best_step"] = st_.best_step;
        rec["frozen_convs"] = first_live_conv();
        rec["resamples_nondominant"] = st_.resamples_nondominant;
        rec["resamples_all"] = st_.resamples_all;
        std::vector<double> ents;
        for (size_t i = 0; i < net_.convs.size(); ++i) {
            double h = 0.0;
            if (!net_.convs[i].frozen && !sc_conv_[i].ent.empty()) {
                for (double e : sc_conv_[i].ent) h += e;
                h /= static_cast<double>(sc_conv_[i].ent.size());
            }
            ents.push_back(h);
        }
        for (size_t j = 0; j < net_.dense.size(); ++j) {
            double h = 0.0;
            if (!net_.dense[j].frozen && !sc_dense_[j].ent.empty()) {
                for (double e : sc_dense_[j].ent) h += e;
                h /= static_cast<double>(sc_dense_[j].ent.size());
            }
            ents.push_back(h);
        }
        rec["layer_entropy"] = ents;
        (*metrics) << rec.dump() << "\n";
        metrics->flush();
    }
    if (!out_dir_.empty()) {
        st_.rng_data_state = rng_data_.state();
        st_.rng_resample_state = rng_resample_.state();
        save_checkpoint(out_dir_ + "/last.ckpt", net_, &st_, &cfg_);
    }
    run_loss_sum_ = 0.0;
    run_correct_ = run_samples_ = run_batches_ = 0;
}

TrainResult Trainer::run(std::ostream* metrics) {
    while (st_.step < cfg_.total_steps) {
        step();
        if ((cfg_.eval_interval > 0 && st_.step % cfg_.eval_interval == 0) ||
            st_.step == cfg_.total_steps)
            eval_tick(metrics);
    }
    TrainResult r;
    r.steps_run = st_.step;
    r.best_acc = st_.best_acc;
    r.best_step = st_.best_step;
    if (test_) {
        std::string best = out_dir_.empty() ? "" : out_dir_ + "/best.ckpt";
        if (!best.empty() && fs::exists(best)) {
            Network sel = load_checkpoint(best).net;
            r.final_relaxed_acc = evaluate(sel, *test_, codec_, EvalMode::Relaxed);
            r.final_disc_acc = evaluate(sel, *test_, codec_, EvalMode::Discretized);
        } else {
            r.final_relaxed_acc = evaluate(net_, *test_, codec_, EvalMode::Relaxed);
            r.final_disc_acc = evaluate(net_, *test_, codec_, EvalMode::Discretized);
        }
    }
    return r;
}

TrainResult train(Network& net, const Dataset& train_set, const Dataset& test_set,
                  const ThermometerCodec& codec, const TrainConfig& cfg,
                  const std::string& out_dir, std::ostream* metrics) {
    Trainer t(net, &train_set, &test_set, codec, cfg, out_dir);
    TrainResult r = t.run(metrics);
    net = t.net();
    return r;
}

}  // namespace bnet
