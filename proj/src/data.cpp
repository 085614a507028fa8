#include "bnet/data.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace bnet {

namespace {

uint32_t read_be32(std::istream& is, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error(std::string("truncated file while reading ") + what);
    return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

std::ifstream open_binary(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    return f;
}

}  // namespace

Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imgs = open_binary(images_path);
    if (read_be32(imgs, "image magic") != 0x00000803u)
        throw std::runtime_error(images_path + ": bad IDX image magic");
    uint32_t n = read_be32(imgs, "image count");
    uint32_t h = read_be32(imgs, "image height");
    uint32_t w = read_be32(imgs, "image width");

    std::ifstream labs = open_binary(labels_path);
    if (read_be32(labs, "label magic") != 0x00000801u)
        throw std::runtime_error(labels_path + ": bad IDX label magic");
    uint32_t nl = read_be32(labs, "label count");
    if (n != nl) throw std::runtime_error("IDX image/label count mismatch");

    Dataset d;
    d.channels = 1;
    d.height = static_cast<int>(h);
    d.width = static_cast<int>(w);
    d.labels.resize(n);
    if (!labs.read(reinterpret_cast<char*>(d.labels.data()), n))
        throw std::runtime_error(labels_path + ": truncated label data");
    size_t npx = static_cast<size_t>(n) * h * w;
    std::vector<uint8_t> raw(npx);
    if (!imgs.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(npx)))
        throw std::runtime_error(images_path + ": truncated image data");
    d.pixels.resize(npx);
    for (size_t i = 0; i < npx; ++i) d.pixels[i] = raw[i] * (1.0f / 255.0f);
    for (uint8_t l : d.labels)
        if (l > 9) throw std::runtime_error(labels_path + ": label out of range");
    return d;
}

Dataset load_cifar10_bin(const std::vector<std::string>& batch_paths) {
    constexpr size_t kRecord = 3073;
    constexpr size_t kPixels = 3072;
    Dataset d;
    d.channels = 3;
    d.height = 32;
    d.width = 32;
    std::vector<uint8_t> rec(kRecord);
    for (const std::string& path : batch_paths) {
        std::ifstream f = open_binary(path);
        f.seekg(0, std::ios::end);
        auto size = static_cast<size_t>(f.tellg());
        f.seekg(0);
        if (size == 0 || size % kRecord != 0)
            throw std::runtime_error(path + ": size is not a multiple of the 3073-byte record");
        size_t count = size / kRecord;
        for (size_t r = 0; r < count; ++r) {
            if (!f.read(reinterpret_cast<char*>(rec.data()), kRecord))
                throw std::runtime_error(path + ": truncated record");
            if (rec[0] > 9) throw std::runtime_error(path + ": label out of range");
            d.labels.push_back(rec[0]);
            size_t base = d.pixels.size();
            d.pixels.resize(base + kPixels);
            for (size_t i = 0; i < kPixels; ++i)
                d.pixels[base + i] = rec[1 + i] * (1.0f / 255.0f);
        }
    }
    return d;
}

ThermometerCodec ThermometerCodec::make(int N) {
    if (N < 1) throw std::invalid_argument("ThermometerCodec: N must be >= 1");
    ThermometerCodec c;
    c.N = N;
    c.thresholds.resize(N);
    for (int j = 1; j <= N; ++j) c.thresholds[j - 1] = static_cast<float>(j) / (N + 1);
    return c;
}

void thermometer_encode(const float* image, int channels, int height, int width,
                        const ThermometerCodec& codec, uint8_t* out_bits) {
    int hw = height * width;
    for (int c = 0; c < channels; ++c)
        for (int j = 0; j < codec.N; ++j) {
            float t = codec.thresholds[j];
            const float* src = image + static_cast<size_t>(c) * hw;
            uint8_t* dst = out_bits + (static_cast<size_t>(c) * codec.N + j) * hw;
            for (int i = 0; i < hw; ++i) dst[i] = src[i] >= t ? 1 : 0;
        }
}

std::vector<uint8_t> thermometer_encode(const Dataset& d, int sample, const ThermometerCodec& codec) {
    std::vector<uint8_t> bits(static_cast<size_t>(d.channels) * codec.N * d.height * d.width);
    thermometer_encode(d.image(sample), d.channels, d.height, d.width, codec, bits.data());
    return bits;
}

std::vector<uint8_t> binarize_round(const std::vector<float>& image) {
    std::vector<uint8_t> bits(image.size());
    for (size_t i = 0; i < image.size(); ++i) bits[i] = image[i] >= 0.5f ? 1 : 0;
    return bits;
}

void augment_mnist(const float* in, float* out, int height, int width, Rng& rng) {
    constexpr double kMaxDeg = 15.0;
    double angle = rng.uniform(-kMaxDeg, kMaxDeg) * (3.14159265358979323846 / 180.0);
    double tx = rng.uniform(-2.8, 2.8);
    double ty = rng.uniform(-2.8, 2.8);
    augment_mnist_with(in, out, height, width, angle, tx, ty);
}

void augment_mnist_with(const float* in, float* out, int height, int width, double angle,
                        double tx, double ty) {
    double cy = (height - 1) / 2.0, cx = (width - 1) / 2.0;
    double ca = std::cos(angle), sa = std::sin(angle);
    // content at input u lands at R(u-c)+c+t, so sample the inverse map
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            double dy = y - ty - cy, dx = x - tx - cx;
            double sy = ca * dy + sa * dx + cy;  // R(-angle) applied to (dy,dx)
            double sx = -sa * dy + ca * dx + cx;
            int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
            double fy = sy - y0, fx = sx - x0;
            auto at = [&](int yy, int xx) -> double {
                if (yy < 0 || yy >= height || xx < 0 || xx >= width) return 0.0;
                return in[yy * width + xx];
            };
            double v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                       fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
            out[y * width + x] = static_cast<float>(v);
        }
}

void augment_cifar(const float* in, float* out, int channels, int height, int width, Rng& rng) {
    bool flip = rng.next_double() < 0.5;
    int oy = static_cast<int>(rng.next_below(5));
    int ox = static_cast<int>(rng.next_below(5));
    augment_cifar_with(in, out, channels, height, width, flip, oy, ox);
}

void augment_cifar_with(const float* in, float* out, int channels, int height, int width,
                        bool flip, int oy, int ox) {
    constexpr int kPad = 2;
    for (int c = 0; c < channels; ++c) {
        const float* src = in + static_cast<size_t>(c) * height * width;
        float* dst = out + static_cast<size_t>(c) * height * width;
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                int sy = y - kPad + oy;
                int sx = x - kPad + ox;
                float v = 0.0f;
                if (sy >= 0 && sy < height && sx >= 0 && sx < width) {
                    int rx = flip ? width - 1 - sx : sx;
                    v = src[sy * width + rx];
                }
                dst[y * width + x] = v;
            }
    }
}

}  // namespace bnet
