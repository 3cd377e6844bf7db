#pragma once

#include "poolnas/cnn/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace poolnas {

/// Labelled RGB images, NCHW, pixel values in [0, 1].
struct ImageSet {
    cnn::Tensor<float> images;
    std::vector<int> labels;
    int num_classes = 10;

    std::size_t size() const noexcept { return labels.size(); }
    friend bool operator==(const ImageSet&, const ImageSet&) = default;
};

inline constexpr std::size_t kCifarRecordBytes = 3073;

/// CIFAR-10 binary layout: per record one label byte (0-9), then the R, G and
/// B planes of a 32x32 image, row-major. Throws ParseError with the byte
/// offset of the offending record, or std::runtime_error naming the path when
/// the file cannot be read.
ImageSet load_cifar_binary(const std::string& path);

/// Deterministic synthetic set, `n_per_class` images of each class, labels
/// cycling 0, 1, ..., num_classes - 1. Classes 0-4 are textures, 5-9 shapes:
///   0 coarse horizontal grating (period size/4)   5 disk
///   1 coarse vertical grating (period size/4)     6 filled square
///   2 fine horizontal grating (period size/8)     7 ring
///   3 fine vertical grating (period size/8)       8 plus-shaped cross
///   4 checkerboard (cell size/8)                  9 upward triangle
/// Per image: random phase, shape scale in [0.2, 0.35] of the side, centre
/// jitter of size/8, per-channel tint in [0.5, 1], background in [0, 0.3],
/// Gaussian pixel noise with standard deviation 0.08, clamped to [0, 1].
/// `size` must be 16 or 32; `num_classes` at most 10.
ImageSet synth_dataset(std::uint64_t seed, int n_per_class, int size, int num_classes = 10);

/// Samples at `indices`, in that order.
ImageSet subset(const ImageSet& set, std::span<const std::size_t> indices);

struct DataSplit {
    ImageSet train, validation;
    friend bool operator==(const DataSplit&, const DataSplit&) = default;
};

/// Seeded shuffle ("split" substream); the first half (rounded down) trains,
/// the rest validates. Needs at least two samples.
DataSplit split_half(const ImageSet& set, std::uint64_t seed);

}  // namespace poolnas
