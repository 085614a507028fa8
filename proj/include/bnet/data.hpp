#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bnet/rng.hpp"

namespace bnet {

// Images stored as float pixels in [0,1], flat channel-major (c, y, x).
struct Dataset {
    int channels = 0, height = 0, width = 0;
    std::vector<float> pixels;  // [n * channels*height*width]
    std::vector<uint8_t> labels;

    int num_samples() const { return static_cast<int>(labels.size()); }
    int sample_size() const { return channels * height * width; }
    const float* image(int i) const { return pixels.data() + static_cast<size_t>(i) * sample_size(); }
};

// IDX container: big-endian magic 0x803 (images, n x h x w bytes) and 0x801
// (labels). Pixels are scaled to [0,1] by /255.
Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path);

// CIFAR-10 binary batches: records of 1 label byte + 3072 channel-major
// pixel bytes.
Dataset load_cifar10_bin(const std::vector<std::string>& batch_paths);

// N equally spaced thresholds t_j = j / (N+1), j = 1..N.
struct ThermometerCodec {
    int N = 1;
    std::vector<float> thresholds;

    static ThermometerCodec make(int N);
};

// Bit j of pixel v is 1{v >= thresholds[j]}; ties round to 1. Output has
// in_channels*N channels: input channel c expands to output channels
// [c*N, (c+1)*N), so the bits of one pixel stay adjacent channel-wise.
// With N=1 this is plain rounding at 0.5.
void thermometer_encode(const float* image, int channels, int height, int width,
                        const ThermometerCodec& codec, uint8_t* out_bits);

std::vector<uint8_t> thermometer_encode(const Dataset& d, int sample, const ThermometerCodec& codec);

// 1{pixel >= 0.5}, the N=1 special case.
std::vector<uint8_t> binarize_round(const std::vector<float>& image);

// Rotation U(-15deg, 15deg) about the image center followed by translation
// U(-2.8, 2.8) px per axis; bilinear resampling, out-of-frame reads 0.
// Draw order: angle, tx, ty.
void augment_mnist(const float* in, float* out, int height, int width, Rng& rng);
void augment_mnist_with(const float* in, float* out, int height, int width, double angle_rad,
                        double tx, double ty);

// Horizontal flip with probability 1/2, then zero-pad 2 and take a uniform
// 32x32 crop: out(y,x) = in(y-2+oy, x-2+ox) with oy,ox in {0..4}, so the
// center crop (2,2) is the identity. Draw order: flip, oy, ox.
void augment_cifar(const float* in, float* out, int channels, int height, int width, Rng& rng);
void augment_cifar_with(const float* in, float* out, int channels, int height, int width,
                        bool flip, int oy, int ox);

}  // namespace bnet
