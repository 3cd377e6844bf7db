#include "poolnas/dataset.hpp"

#include "poolnas/error.hpp"
#include "poolnas/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace poolnas {

ImageSet load_cifar_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open dataset file " + path);
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                           std::istreambuf_iterator<char>());
    if (in.bad()) throw std::runtime_error("cannot read dataset file " + path);
    const std::size_t rem = bytes.size() % kCifarRecordBytes;
    if (rem != 0)
        throw ParseError(path + ": length " + std::to_string(bytes.size()) +
                             " is not a multiple of " + std::to_string(kCifarRecordBytes),
                         bytes.size() - rem);
    if (bytes.empty()) throw ParseError(path + ": no records", 0);
    const std::size_t n = bytes.size() / kCifarRecordBytes;
    ImageSet set;
    set.images = cnn::Tensor<float>(static_cast<int>(n), 3, 32, 32);
    set.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t offset = i * kCifarRecordBytes;
        if (bytes[offset] > 9)
            throw ParseError(path + ": label " + std::to_string(bytes[offset]) + " at byte " +
                                 std::to_string(offset) + " exceeds 9",
                             offset);
        set.labels[i] = bytes[offset];
        float* dst = set.images.data.data() + i * (kCifarRecordBytes - 1);
        for (std::size_t j = 1; j < kCifarRecordBytes; ++j)
            dst[j - 1] = static_cast<float>(bytes[offset + j]) / 255.0f;
    }
    return set;
}

namespace {

/// Foreground mask value in [0, 1] of class `label` at pixel (x, y).
struct Pattern {
    int label;
    double size, phase, scale, cx, cy;

    double operator()(double x, double y) const {
        constexpr double two_pi = 2.0 * std::numbers::pi;
        const double r = scale * size;
        const double dx = x - cx, dy = y - cy;
        switch (label) {
            case 0: return 0.5 + 0.5 * std::sin(two_pi * y / (size / 4) + phase);
            case 1: return 0.5 + 0.5 * std::sin(two_pi * x / (size / 4) + phase);
            case 2: return 0.5 + 0.5 * std::sin(two_pi * y / (size / 8) + phase);
            case 3: return 0.5 + 0.5 * std::sin(two_pi * x / (size / 8) + phase);
            case 4: {
                const int shift = static_cast<int>(phase);
                const int cell = static_cast<int>(size / 8);
                return ((static_cast<int>(x) + shift) / cell + (static_cast<int>(y) + shift) / cell) %
                               2 ==
                           0
                           ? 1.0
                           : 0.0;
            }
            case 5: return dx * dx + dy * dy <= r * r ? 1.0 : 0.0;
            case 6: return std::abs(dx) <= r && std::abs(dy) <= r ? 1.0 : 0.0;
            case 7: {
                const double d = std::sqrt(dx * dx + dy * dy);
                return d <= r && d >= 0.6 * r ? 1.0 : 0.0;
            }
            case 8:
                return (std::abs(dx) <= 0.3 * r && std::abs(dy) <= r) ||
                               (std::abs(dy) <= 0.3 * r && std::abs(dx) <= r)
                           ? 1.0
                           : 0.0;
            default:
                return dy >= -r && dy <= r && std::abs(dx) <= 0.5 * (dy + r) ? 1.0 : 0.0;
        }
    }
};

}  // namespace

ImageSet synth_dataset(std::uint64_t seed, int n_per_class, int size, int num_classes) {
    if (n_per_class < 1) throw ValidationError("synthetic dataset needs n_per_class >= 1");
    if (size != 16 && size != 32) throw ValidationError("synthetic image size must be 16 or 32");
    if (num_classes < 2 || num_classes > 10)
        throw ValidationError("synthetic dataset supports 2 to 10 classes");
    const int n = n_per_class * num_classes;
    Rng rng = Rng::substream(seed, "data");
    ImageSet set;
    set.num_classes = num_classes;
    set.images = cnn::Tensor<float>(n, 3, size, size);
    set.labels.resize(n);
    const double side = size;
    for (int i = 0; i < n; ++i) {
        const int label = i % num_classes;
        set.labels[i] = label;
        Pattern pattern{label, side, 0.0, 0.0, 0.0, 0.0};
        pattern.phase = label == 4 ? std::floor(rng.uniform() * side / 4)
                                   : rng.uniform() * 2.0 * std::numbers::pi;
        pattern.scale = 0.2 + 0.15 * rng.uniform();
        pattern.cx = side / 2 + (rng.uniform() - 0.5) * side / 4;
        pattern.cy = side / 2 + (rng.uniform() - 0.5) * side / 4;
        double tint[3];
        for (double& t : tint) t = 0.5 + 0.5 * rng.uniform();
        const double background = 0.3 * rng.uniform();
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double v = pattern(x + 0.5, y + 0.5);
                for (int c = 0; c < 3; ++c) {
                    const double pixel =
                        background + (1.0 - background) * tint[c] * v + 0.08 * rng.normal();
                    set.images.at(i, c, y, x) = static_cast<float>(std::clamp(pixel, 0.0, 1.0));
                }
            }
    }
    return set;
}

ImageSet subset(const ImageSet& set, std::span<const std::size_t> indices) {
    if (indices.empty()) throw ValidationError("subset needs at least one index");
    const auto& src = set.images;
    ImageSet out;
    out.num_classes = set.num_classes;
    out.images = cnn::Tensor<float>(static_cast<int>(indices.size()), src.c, src.h, src.w);
    out.labels.reserve(indices.size());
    const std::size_t stride = static_cast<std::size_t>(src.c) * src.plane();
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const std::size_t i = indices[k];
        if (i >= set.size()) throw ValidationError("subset index out of range");
        std::copy_n(src.data.begin() + static_cast<std::ptrdiff_t>(i * stride), stride,
                    out.images.data.begin() + static_cast<std::ptrdiff_t>(k * stride));
        out.labels.push_back(set.labels[i]);
    }
    return out;
}

DataSplit split_half(const ImageSet& set, std::uint64_t seed) {
    if (set.size() < 2) throw ValidationError("a 50/50 split needs at least two samples");
    std::vector<std::size_t> order(set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = Rng::substream(seed, "split");
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.uniform_index(i)]);
    const std::size_t half = order.size() / 2;
    DataSplit split;
    split.train = subset(set, std::span<const std::size_t>(order.data(), half));
    split.validation =
        subset(set, std::span<const std::size_t>(order.data() + half, order.size() - half));
    return split;
}

}  // namespace poolnas
