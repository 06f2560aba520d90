#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mdmask/ops.hpp"
#include "mdmask/rng.hpp"
#include "mdmask/tensor.hpp"

namespace mdmask {

// Backward rule used through the hard threshold. Forward is always the
// hard threshold 1_{r>=0}; only the gradient multiplier differs.
enum class Surrogate : uint8_t { Identity = 0, Sigmoid = 1 };

enum class Granularity : uint8_t { PerLayer = 0, PerChannel = 1 };

// Named weight-transform configurations. ClassifierOnly is the
// feature-extractor baseline: no masks, no learned scalars, frozen BN.
enum class Variant : uint8_t {
    Full = 0,
    Simple = 1,
    Piggyback = 2,
    FullNoBias = 3,
    FullNoK2 = 4,
    ClassifierOnly = 5,
};

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);
std::string surrogate_name(Surrogate s);
Surrogate surrogate_from_name(const std::string& name);
std::string granularity_name(Granularity g);
Granularity granularity_from_name(const std::string& name);

struct MaskTransformConfig {
    Variant variant = Variant::Full;
    Surrogate surrogate = Surrogate::Identity;
    Granularity granularity = Granularity::PerLayer;

    bool uses_masks() const { return variant != Variant::ClassifierOnly; }
};

// One of the four transform coefficients: fixed constant or learned tensor
// (shape [1] per-layer, [Cout] per-channel).
struct KParam {
    bool learned = false;
    TensorPtr value;

    static KParam fixed(float v, int count = 1);
    static KParam learn(float init, int count = 1);
    float scalar() const { return value->data[0]; }
};

struct AffineScalars {
    KParam k0, k1, k2, k3;
    Granularity granularity = Granularity::PerLayer;

    // Applies the variant's fixed/learned layout for one layer.
    // followed_by_bn pins k0 (BN output is invariant to weight scale).
    static AffineScalars for_layer(const MaskTransformConfig& cfg, int cout, bool followed_by_bn);

    std::vector<TensorPtr> learned_params() const;
    int64_t learned_count() const;
};

// Gradient multiplier of the surrogate at r; strictly positive for all
// finite r for every supported surrogate.
float surrogate_scale(Surrogate s, float r);

// Hard threshold 1_{r>=0} with the surrogate's derivative attached for
// the backward pass. Output entries are exactly 0.0f / 1.0f.
TensorPtr binarize(Graph& g, const TensorPtr& real_mask, Surrogate s);

// grad_out scaled elementwise by the surrogate derivative at r.
TensorPtr surrogate_backward(const Tensor& grad_out, const Tensor& r, Surrogate s);

// k0*w + k1*1 + k2*m + k3*(w.m). With skip_trivial_terms, terms whose k is
// fixed at 0 are dropped and fixed-1 scales pass through; the general path
// evaluates every term. Both produce bit-identical values and gradients.
TensorPtr transform_weights(Graph& g, const TensorPtr& w, const TensorPtr& m,
                            const AffineScalars& k, bool skip_trivial_terms = true);

// Thresholded snapshot of a real mask, detached from any graph.
struct BinaryMask {
    std::vector<int> shape;
    std::vector<uint8_t> bits; // one element per entry, 0 or 1

    int64_t numel() const { return static_cast<int64_t>(bits.size()); }
    static BinaryMask from_real(const Tensor& r);
    TensorPtr to_tensor(bool requires_grad = false) const;
};

// Percentage of 1s, in [0, 100].
float density(const BinaryMask& m);
float density(const Tensor& mask01);

// Fresh real mask, uniform on [1e-4, 2e-4]: every entry binarizes to 1.
TensorPtr init_real_mask(const std::vector<int>& shape, Rng& rng);

} // namespace mdmask
