#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mdmask/error.hpp"

namespace mdmask {

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major f32 tensor. Gradient buffer is allocated lazily and
// shape-matches data whenever present.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;
    bool requires_grad = false;
    std::vector<float> grad;

    Tensor() = default;
    Tensor(std::vector<int> s, bool rg);

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    // Allocates (zero-filled) grad buffer if missing.
    void ensure_grad();
    void zero_grad();
    bool all_finite() const;
    bool grad_finite() const;

    static TensorPtr make(std::vector<int> shape, bool requires_grad = false);
    static TensorPtr from_data(std::vector<int> shape, std::vector<float> values,
                               bool requires_grad = false);
    static TensorPtr full(std::vector<int> shape, float value, bool requires_grad = false);
    static TensorPtr zeros(std::vector<int> shape, bool requires_grad = false);
    static TensorPtr scalar(float value, bool requires_grad = false);

    // Deep copy; grad buffer is not copied.
    TensorPtr clone() const;
};

int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Reverse-mode tape. Ops are recorded in execution order, so the tape is
// topologically ordered by construction; backward() replays it once in
// reverse, accumulating (summing) into leaf gradients.
class Graph {
public:
    void record(std::function<void()> backward_fn) { tape_.push_back(std::move(backward_fn)); }

    // loss must be a scalar produced by ops recorded on this graph.
    void backward(const TensorPtr& loss);

    void clear() { tape_.clear(); }
    size_t size() const { return tape_.size(); }

private:
    std::vector<std::function<void()>> tape_;
};

} // namespace mdmask
