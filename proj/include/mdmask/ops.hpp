#pragma once

#include <functional>
#include <vector>

#include "mdmask/tensor.hpp"

namespace mdmask::ops {

// All ops record their backward rule on the graph when any input requires
// grad. Backward closures accumulate (+=) so multi-use tensors sum over
// all paths.

// Cross-correlation, NCHW, bias-free. Output size must divide exactly:
// oh = (h + 2*pad - kh)/stride + 1.
TensorPtr conv2d(Graph& g, const TensorPtr& x, const TensorPtr& w, int stride, int pad);

// Per-channel batch normalization. In training mode batch statistics
// (biased variance) normalize the input and running stats are updated by
// EMA with the given momentum; in eval mode running stats are used.
TensorPtr batchnorm(Graph& g, const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                    const TensorPtr& running_mean, const TensorPtr& running_var, bool training,
                    float eps = 1e-5f, float momentum = 0.1f);

// y = x * w^T + b. b may be null.
TensorPtr dense(Graph& g, const TensorPtr& x, const TensorPtr& w, const TensorPtr& b);

TensorPtr relu(Graph& g, const TensorPtr& x);

// Non-overlapping max pooling, stride == k; h and w must divide by k.
TensorPtr maxpool2d(Graph& g, const TensorPtr& x, int k);

// Mean over batch of -log softmax(label). labels.size() == logits dim 0.
TensorPtr softmax_cross_entropy(Graph& g, const TensorPtr& logits, const std::vector<int>& labels);

TensorPtr add(Graph& g, const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(Graph& g, const TensorPtr& a, const TensorPtr& b);

// Hadamard product with a {0,1} mask, computed as a select so masked-out
// entries are exactly +0.0f. Gradients match the product rule.
TensorPtr masked(Graph& g, const TensorPtr& w, const TensorPtr& m);

// y = k * x where k has numel 1 (per-layer) or numel x.shape[0]
// (per-output-channel, broadcast over remaining dims).
TensorPtr broadcast_scale(Graph& g, const TensorPtr& k, const TensorPtr& x);

// Tensor of the given shape filled from k (numel 1, or numel shape[0]
// broadcast over remaining dims). Backward sum-reduces onto k.
TensorPtr broadcast_fill(Graph& g, const TensorPtr& k, const std::vector<int>& shape);

// Elementwise op with a caller-supplied forward and a backward that
// multiplies the incoming gradient by backward_scale(input).
TensorPtr custom_grad(Graph& g, const TensorPtr& x, const std::function<float(float)>& forward_fn,
                      const std::function<float(float)>& backward_scale_fn);

TensorPtr sum(Graph& g, const TensorPtr& x);

TensorPtr reshape(Graph& g, const TensorPtr& x, std::vector<int> shape);

} // namespace mdmask::ops
