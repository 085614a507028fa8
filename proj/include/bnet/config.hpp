#pragma once

#include <string>
#include <vector>

#include "bnet/data.hpp"
#include "bnet/network.hpp"
#include "bnet/train.hpp"

namespace bnet {

// Run-level configuration: dataset + architecture + TrainConfig. Serialized
// as a flat JSON object; unknown keys are rejected so typos fail loudly.
struct RunConfig {
    std::string dataset = "mnist";  // "mnist" | "cifar10"
    std::string data_dir = "data";
    std::string out_dir = "run";
    std::string init = "gaussian";  // "gaussian" | "residual"
    int thermometer_bits = 1;       // N
    std::vector<int> conv_channels;  // empty = dense-only model
    std::vector<int> conv_strides;   // parallel to conv_channels
    int channels_per_kernel = 1;
    std::vector<int> dense_widths;
    int classes = 10;
    TrainConfig train;

    void validate() const;  // throws std::invalid_argument
};

// Named presets. Conv presets follow the published variants (S/M on MNIST,
// T/S/M/L on CIFAR-10 with k = 64/128/256/1024); dense presets carry the
// regular-model hyperparameters; *-desk/tiny are scaled-down configurations
// sized for a single desktop CPU.
RunConfig preset_config(const std::string& name);
std::vector<std::string> preset_names();

// Parse a JSON object, overlaying onto `base` when given. Unknown keys throw.
RunConfig parse_run_config(const std::string& json_text, const RunConfig* base = nullptr);
std::string dump_run_config(const RunConfig& rc);

// Instantiate the network described by the config; weights and connections
// are drawn from a stream derived from train.seed.
Network build_network(const RunConfig& rc);

// Image dimensions per dataset name (channels, height, width).
Shape3 dataset_shape(const std::string& dataset);

// Load train+test from data_dir, accepting either the canonical files
// directly in data_dir or under a mnist/ / cifar10/ subdirectory.
struct LoadedData {
    Dataset train, test;
};
LoadedData load_dataset(const std::string& dataset, const std::string& data_dir);

}  // namespace bnet
