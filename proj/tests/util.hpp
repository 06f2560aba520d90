#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "mdmask/rng.hpp"
#include "mdmask/tensor.hpp"

namespace testutil {

using mdmask::Rng;
using mdmask::Tensor;
using mdmask::TensorPtr;

inline TensorPtr random_tensor(std::vector<int> shape, Rng& rng, bool requires_grad = false,
                               float lo = -1.0f, float hi = 1.0f) {
    auto t = Tensor::make(std::move(shape), requires_grad);
    for (auto& v : t->data) v = rng.uniform(lo, hi);
    return t;
}

// Central finite difference of a scalar-valued forward at one entry of t.
inline float numeric_grad(const std::function<float()>& forward, Tensor& t, size_t index,
                          float h = 1e-3f) {
    const float saved = t.data[index];
    t.data[index] = saved + h;
    const float up = forward();
    t.data[index] = saved - h;
    const float down = forward();
    t.data[index] = saved;
    return (up - down) / (2.0f * h);
}

// Relative error with a floor: below the floor the comparison degrades to
// an absolute check, absorbing f32 finite-difference noise.
inline float rel_err(float a, float b, float floor = 0.05f) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Checks every entry of a parameter against finite differences.
// Returns max relative error across entries.
inline float max_fd_err(const std::function<float()>& forward,
                        const std::function<void()>& backward_once, Tensor& t,
                        float h = 1e-3f) {
    backward_once();
    float worst = 0.0f;
    for (size_t i = 0; i < t.data.size(); ++i) {
        const float fd = numeric_grad(forward, t, i, h);
        worst = std::max(worst, rel_err(t.grad[i], fd));
    }
    return worst;
}

inline bool bits_equal(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        // Compare bit patterns, not values: NaN != NaN and -0 != +0 here.
        uint32_t ba, bb;
        static_assert(sizeof(float) == sizeof(uint32_t));
        __builtin_memcpy(&ba, &a[i], 4);
        __builtin_memcpy(&bb, &b[i], 4);
        if (ba != bb) return false;
    }
    return true;
}

} // namespace testutil
