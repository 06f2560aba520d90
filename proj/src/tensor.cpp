#include "mdmask/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mdmask {

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int> s, bool rg) : shape(std::move(s)), requires_grad(rg) {
    for (int d : shape) {
        if (d <= 0) throw DimensionError("tensor dim must be positive, got shape " + shape_str(shape));
    }
    data.assign(static_cast<size_t>(shape_numel(shape)), 0.0f);
}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
}

void Tensor::zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0f);
}

bool Tensor::all_finite() const {
    for (float v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

bool Tensor::grad_finite() const {
    for (float v : grad)
        if (!std::isfinite(v)) return false;
    return true;
}

TensorPtr Tensor::make(std::vector<int> shape, bool requires_grad) {
    return std::make_shared<Tensor>(std::move(shape), requires_grad);
}

TensorPtr Tensor::from_data(std::vector<int> shape, std::vector<float> values, bool requires_grad) {
    auto t = make(std::move(shape), requires_grad);
    if (static_cast<int64_t>(values.size()) != t->numel())
        throw DimensionError("from_data: " + std::to_string(values.size()) + " values for shape " +
                             shape_str(t->shape));
    t->data = std::move(values);
    return t;
}

TensorPtr Tensor::full(std::vector<int> shape, float value, bool requires_grad) {
    auto t = make(std::move(shape), requires_grad);
    std::fill(t->data.begin(), t->data.end(), value);
    return t;
}

TensorPtr Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    return make(std::move(shape), requires_grad);
}

TensorPtr Tensor::scalar(float value, bool requires_grad) {
    auto t = make({1}, requires_grad);
    t->data[0] = value;
    return t;
}

TensorPtr Tensor::clone() const {
    auto t = std::make_shared<Tensor>();
    t->shape = shape;
    t->data = data;
    t->requires_grad = requires_grad;
    return t;
}

void Graph::backward(const TensorPtr& loss) {
    if (!loss || loss->numel() != 1)
        throw DimensionError("backward requires a scalar loss");
    loss->ensure_grad();
    loss->grad[0] = 1.0f;
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
}

} // namespace mdmask
