#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bnet/data.hpp"
#include "bnet/engine.hpp"
#include "bnet/network.hpp"

namespace bnet {

// Raised on NaN/Inf loss or gradients; training never clamps silently.
struct TrainAbortError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    double learning_rate = 0.01;
    int batch_size = 128;
    long long total_steps = 10000;
    long long eval_interval = 1000;
    double tau = 10.0;           // GroupSum temperature (mirrored into the head)
    int K = 16;                  // candidate triples per neuron
    double rho = 0.99;           // entropy EMA momentum
    double epsilon = 5e-4;       // stability threshold
    long long patience = 100;    // T, resampling controller
    long long disc_patience = 200;  // patience of the discretization controller
    long long resample_until = 0;   // resampling active for steps 1..resample_until
    uint64_t seed = 1;
    bool augment = true;
    int validation_size = 5000;  // carved from the tail of the training set
    bool select_on_test = false; // checkpoint selection on the test set instead
    bool adaptive_discretization = true;  // false: layers stay relaxed until the end
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

    void validate() const;  // throws std::invalid_argument
};

// Adam with bias correction over one flat parameter group. t counts calls.
struct AdamState {
    std::vector<double> m, v;
    long long t = 0;

    void init(size_t n) {
        m.assign(n, 0.0);
        v.assign(n, 0.0);
        t = 0;
    }
};

// One update in place. Throws TrainAbortError on any non-finite gradient.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

enum class ResampleAction { None, ResampleNonDominant, ResampleAll };

// Per-neuron EMA/counter state for the resampling controller.
struct ResamplerState {
    std::vector<double> mu;
    std::vector<long long> c;

    void init(int n) {
        mu.assign(n, 0.0);
        c.assign(n, 0);
    }
};

// One controller step on one neuron, in Algorithm-1 line order: the counter
// compares h against the *previous* EMA, then the EMA absorbs h, then the
// patience gate fires. The counter resets only when a resample action is
// returned; otherwise it keeps accumulating and the test repeats next step.
ResampleAction controller_update(double h, double max_tilde, double& mu, long long& c, double rho,
                                 double epsilon, long long patience);

// Reference form: h and the dominance test are computed from w directly.
ResampleAction resampler_observe(const std::vector<double>& w, ResamplerState& state, int neuron,
                                 const TrainConfig& cfg);

// Redraw candidate triples and reset w. input_range is the sampling range
// for p,q: layer fan-in for dense layers, receptive-field size for conv
// kernels. Draw order per redrawn slot (ascending i): gate, p, q.
void apply_resample_slots(double* w, uint8_t* k, int32_t* p, int32_t* q, int K,
                          ResampleAction action, int input_range, Rng& rng);
void apply_resample(NeuronParams& n, ResampleAction action, int input_range, Rng& rng);

// Layer-wise discretization controller. Watches the first non-frozen conv
// layer's mean weight entropy; on freeze, monitoring moves to the next conv
// layer with fresh EMA state. Dense layers stay relaxed.
struct DiscretizerState {
    int next_layer = 0;
    double mu = 0.0;
    long long c = 0;
};

// Core on a precomputed layer-mean entropy; true when the layer should
// freeze this step.
bool discretizer_update(double h_mean, DiscretizerState& state, double rho, double epsilon,
                        long long patience);

// Reference form: computes the mean entropy itself, freezes the layer and
// advances the state. Returns the index of the layer frozen this call, or -1.
int discretizer_observe(Network& net, DiscretizerState& state, const TrainConfig& cfg);

enum class EvalMode { Relaxed, Discretized };

// Per-sample predicted classes, no augmentation. Relaxed runs the
// continuous forward pass; Discretized collapses every live layer to its
// argmax gates, compiles, and runs the bit-packed circuit. max_samples < 0
// means all.
std::vector<int> predict(const Network& net, const Dataset& ds, const ThermometerCodec& codec,
                         EvalMode mode, int max_samples = -1);
std::vector<int> predict_circuit(const struct BooleanCircuit& c, const Dataset& ds,
                                 const ThermometerCodec& codec, int max_samples = -1);

// Accuracy over predict().
double evaluate(const Network& net, const Dataset& ds, const ThermometerCodec& codec,
                EvalMode mode, int max_samples = -1);

// Everything mutable besides the network itself; checkpoints carry both.
struct TrainerState {
    long long step = 0;
    long long best_step = -1;
    double best_acc = -1.0;
    uint64_t rng_data_state = 0;
    uint64_t rng_resample_state = 0;
    uint64_t seed_aug = 0;
    long long resamples_nondominant = 0;
    long long resamples_all = 0;
    std::vector<AdamState> adam_conv, adam_dense;
    std::vector<ResamplerState> rs_conv, rs_dense;
    DiscretizerState disc;
};

// Versioned little-endian binary checkpoint; round-trips bit-exactly.
void save_checkpoint(const std::string& path, const Network& net, const TrainerState* state,
                     const TrainConfig* cfg);
struct Checkpoint {
    Network net;
    std::optional<TrainerState> state;
    std::optional<TrainConfig> cfg;
};
Checkpoint load_checkpoint(const std::string& path);

struct TrainResult {
    long long steps_run = 0;
    double best_acc = -1.0;
    long long best_step = -1;
    double final_relaxed_acc = 0.0;
    double final_disc_acc = 0.0;
};

// The full loop: batches drawn with replacement from the training split,
// augment + encode, forward/backward, Adam, controller hooks, periodic
// evaluation and best-checkpoint selection on the validation split. Writes
// one structured record per eval to `metrics` (JSON lines) when given, and
// best.ckpt/last.ckpt under out_dir when non-empty. Resumes bit-exactly
// from out_dir/last.ckpt if present.
class Trainer {
  public:
    Trainer(Network net, const Dataset* train, const Dataset* test, ThermometerCodec codec,
            TrainConfig cfg, std::string out_dir = "");

    TrainResult run(std::ostream* metrics = nullptr);

    // Single optimization step, exposed for tests.
    void step();

    const Network& net() const { return net_; }
    Network& net() { return net_; }
    const TrainerState& state() const { return st_; }
    TrainerState& state() { return st_; }
    double last_loss() const { return last_loss_; }

    // Validation accuracy of the discretized snapshot (the checkpoint
    // selection metric).
    double validation_disc_accuracy();
    double validation_relaxed_accuracy();

  private:
    void fill_batch(int nsamp, long long step_index);
    void forward_all(int nsamp);
    void backward_all(int nsamp);
    void optimizer_update();
    void run_controllers();
    void eval_tick(std::ostream* metrics);
    void refresh_caches();
    int first_live_conv() const;

    Network net_;
    const Dataset* train_;
    const Dataset* test_;
    ThermometerCodec codec_;
    TrainConfig cfg_;
    std::string out_dir_;

    int train_n_ = 0;  // batch sampling range (training minus validation tail)
    Dataset val_split_;
    bool has_val_ = false;

    Rng rng_data_, rng_resample_;

    std::vector<ActBuf> act_, grad_;
    std::vector<SoftmaxCache> sc_conv_, sc_dense_;
    std::vector<ConvPlan> plans_;
    std::vector<std::vector<double>> gw_conv_, gw_dense_;
    std::vector<uint8_t> batch_labels_;
    std::vector<float> aug_scratch_, img_scratch_;
    std::vector<uint8_t> bits_scratch_;

    TrainerState st_;
    double last_loss_ = 0.0;
    double run_loss_sum_ = 0.0;
    long long run_correct_ = 0, run_samples_ = 0, run_batches_ = 0;
};

// Convenience wrapper matching the module-level description.
TrainResult train(Network& net, const Dataset& train_set, const Dataset& test_set,
                  const ThermometerCodec& codec, const TrainConfig& cfg,
                  const std::string& out_dir, std::ostream* metrics = nullptr);

}  // namespace bnet
