#pragma once

#include "poolnas/error.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace poolnas::cnn {

/// Dense NCHW tensor. Fully connected activations use h = w = 1.
template <typename T>
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<T> data;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_, T fill = T(0)) : n(n_), c(c_), h(h_), w(w_) {
        if (n_ < 1 || c_ < 1 || h_ < 1 || w_ < 1)
            throw ValidationError("tensor dimensions must be positive");
        data.assign(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill);
    }

    std::size_t size() const noexcept { return data.size(); }
    std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
    T* plane(int ni, int ci) { return data.data() + (static_cast<std::size_t>(ni) * c + ci) * plane(); }
    const T* plane(int ni, int ci) const {
        return data.data() + (static_cast<std::size_t>(ni) * c + ci) * plane();
    }
    T& at(int ni, int ci, int y, int x) { return plane(ni, ci)[static_cast<std::size_t>(y) * w + x]; }
    T at(int ni, int ci, int y, int x) const {
        return plane(ni, ci)[static_cast<std::size_t>(y) * w + x];
    }

    bool same_shape(const Tensor& o) const noexcept {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }
    std::string shape_string() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
               std::to_string(w) + ")";
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

}  // namespace poolnas::cnn
