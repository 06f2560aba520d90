#include "mdmask/mask.hpp"

#include <cmath>

namespace mdmask {

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::Full: return "full";
        case Variant::Simple: return "simple";
        case Variant::Piggyback: return "piggyback";
        case Variant::FullNoBias: return "full-no-bias";
        case Variant::FullNoK2: return "full-no-k2";
        case Variant::ClassifierOnly: return "classifier-only";
    }
    throw ConfigError("bad variant enum");
}

Variant variant_from_name(const std::string& name) {
    if (name == "full") return Variant::Full;
    if (name == "simple") return Variant::Simple;
    if (name == "piggyback") return Variant::Piggyback;
    if (name == "full-no-bias") return Variant::FullNoBias;
    if (name == "full-no-k2") return Variant::FullNoK2;
    if (name == "classifier-only") return Variant::ClassifierOnly;
    throw ConfigError("unknown variant '" + name + "'");
}

std::string surrogate_name(Surrogate s) {
    return s == Surrogate::Identity ? "identity" : "sigmoid";
}

Surrogate surrogate_from_name(const std::string& name) {
    if (name == "identity") return Surrogate::Identity;
    if (name == "sigmoid") return Surrogate::Sigmoid;
    throw ConfigError("unknown surrogate '" + name + "'");
}

std::string granularity_name(Granularity g) {
    return g == Granularity::PerLayer ? "layer" : "channel";
}

Granularity granularity_from_name(const std::string& name) {
    if (name == "layer") return Granularity::PerLayer;
    if (name == "channel") return Granularity::PerChannel;
    throw ConfigError("unknown granularity '" + name + "'");
}

KParam KParam::fixed(float v, int count) {
    KParam k;
    k.learned = false;
    k.value = Tensor::full({count}, v, false);
    return k;
}

KParam KParam::learn(float init, int count) {
    KParam k;
    k.learned = true;
    k.value = Tensor::full({count}, init, true);
    return k;
}

AffineScalars AffineScalars::for_layer(const MaskTransformConfig& cfg, int cout,
                                       bool followed_by_bn) {
    if (!cfg.uses_masks()) throw ConfigError("classifier-only layers carry no affine scalars");
    const int n = cfg.granularity == Granularity::PerChannel ? cout : 1;
    AffineScalars k;
    k.granularity = cfg.granularity;
    switch (cfg.variant) {
        case Variant::Piggyback:
            k.k0 = KParam::fixed(0.0f, n);
            k.k1 = KParam::fixed(0.0f, n);
            k.k2 = KParam::fixed(0.0f, n);
            k.k3 = KParam::fixed(1.0f, n);
            break;
        case Variant::Simple:
            k.k0 = followed_by_bn ? KParam::fixed(1.0f, n) : KParam::learn(1.0f, n);
            k.k1 = KParam::learn(0.0f, n);
            k.k2 = KParam::learn(0.0f, n);
            k.k3 = KParam::fixed(0.0f, n);
            break;
        case Variant::FullNoBias:
            k.k0 = followed_by_bn ? KParam::fixed(1.0f, n) : KParam::learn(1.0f, n);
            k.k1 = KParam::fixed(0.0f, n);
            k.k2 = KParam::learn(0.0f, n);
            k.k3 = KParam::learn(0.0f, n);
            break;
        case Variant::FullNoK2:
            k.k0 = followed_by_bn ? KParam::fixed(1.0f, n) : KParam::learn(1.0f, n);
            k.k1 = KParam::learn(0.0f, n);
            k.k2 = KParam::fixed(0.0f, n);
            k.k3 = KParam::learn(0.0f, n);
            break;
        case Variant::Full:
            k.k0 = followed_by_bn ? KParam::fixed(1.0f, n) : KParam::learn(1.0f, n);
            k.k1 = KParam::learn(0.0f, n);
            k.k2 = KParam::learn(0.0f, n);
            k.k3 = KParam::learn(0.0f, n);
            break;
        case Variant::ClassifierOnly:
            throw ConfigError("classifier-only layers carry no affine scalars");
    }
    return k;
}

std::vector<TensorPtr> AffineScalars::learned_params() const {
    std::vector<TensorPtr> out;
    for (const KParam* k : {&k0, &k1, &k2, &k3})
        if (k->learned) out.push_back(k->value);
    return out;
}

int64_t AffineScalars::learned_count() const {
    int64_t n = 0;
    for (const KParam* k : {&k0, &k1, &k2, &k3})
        if (k->learned) n += k->value->numel();
    return n;
}

float surrogate_scale(Surrogate s, float r) {
    if (s == Surrogate::Identity) return 1.0f;
    const float sig = 1.0f / (1.0f + std::exp(-r));
    return sig * (1.0f - sig);
}

TensorPtr binarize(Graph& g, const TensorPtr& real_mask, Surrogate s) {
    return ops::custom_grad(
        g, real_mask, [](float r) { return r >= 0.0f ? 1.0f : 0.0f; },
        [s](float r) { return surrogate_scale(s, r); });
}

TensorPtr surrogate_backward(const Tensor& grad_out, const Tensor& r, Surrogate s) {
    if (grad_out.shape != r.shape)
        throw DimensionError("surrogate_backward: shape mismatch " + shape_str(grad_out.shape) +
                             " vs " + shape_str(r.shape));
    auto out = Tensor::make(grad_out.shape, false);
    for (size_t i = 0; i < out->data.size(); ++i)
        out->data[i] = grad_out.data[i] * surrogate_scale(s, r.data[i]);
    return out;
}

namespace {

bool fixed_at(const KParam& k, float v) {
    if (k.learned) return false;
    for (float x : k.value->data)
        if (x != v) return false;
    return true;
}

TensorPtr scale_term(Graph& g, const KParam& k, const TensorPtr& x, bool skip) {
    if (skip && fixed_at(k, 1.0f)) return x;
    return ops::broadcast_scale(g, k.value, x);
}

} // namespace

TensorPtr transform_weights(Graph& g, const TensorPtr& w, const TensorPtr& m,
                            const AffineScalars& k, bool skip_trivial_terms) {
    if (w->shape != m->shape)
        throw DimensionError("transform_weights: weight " + shape_str(w->shape) + " vs mask " +
                             shape_str(m->shape));
    for (const KParam* kp : {&k.k0, &k.k1, &k.k2, &k.k3}) {
        const int64_t n = kp->value->numel();
        if (n != 1 && n != w->dim(0))
            throw DimensionError("transform_weights: k numel " + std::to_string(n) +
                                 " does not match weight " + shape_str(w->shape));
    }

    const bool skip = skip_trivial_terms;
    TensorPtr acc;
    auto accumulate = [&](const TensorPtr& term) { acc = acc ? ops::add(g, acc, term) : term; };

    if (!(skip && fixed_at(k.k0, 0.0f))) accumulate(scale_term(g, k.k0, w, skip));
    if (!(skip && fixed_at(k.k1, 0.0f))) accumulate(ops::broadcast_fill(g, k.k1.value, w->shape));
    if (!(skip && fixed_at(k.k2, 0.0f))) accumulate(scale_term(g, k.k2, m, skip));
    if (!(skip && fixed_at(k.k3, 0.0f))) accumulate(scale_term(g, k.k3, ops::masked(g, w, m), skip));

    if (!acc) acc = Tensor::zeros(w->shape); // every term fixed at zero
    return acc;
}

BinaryMask BinaryMask::from_real(const Tensor& r) {
    BinaryMask m;
    m.shape = r.shape;
    m.bits.resize(r.data.size());
    for (size_t i = 0; i < r.data.size(); ++i) m.bits[i] = r.data[i] >= 0.0f ? 1 : 0;
    return m;
}

TensorPtr BinaryMask::to_tensor(bool requires_grad) const {
    auto t = Tensor::make(shape, requires_grad);
    for (size_t i = 0; i < bits.size(); ++i) t->data[i] = static_cast<float>(bits[i]);
    return t;
}

float density(const BinaryMask& m) {
    if (m.bits.empty()) throw DimensionError("density of empty mask");
    int64_t ones = 0;
    for (uint8_t b : m.bits) ones += b;
    return 100.0f * static_cast<float>(ones) / static_cast<float>(m.bits.size());
}

float density(const Tensor& mask01) {
    if (mask01.data.empty()) throw DimensionError("density of empty mask");
    int64_t ones = 0;
    for (float v : mask01.data) ones += v != 0.0f ? 1 : 0;
    return 100.0f * static_cast<float>(ones) / static_cast<float>(mask01.data.size());
}

TensorPtr init_real_mask(const std::vector<int>& shape, Rng& rng) {
    auto t = Tensor::make(shape, true);
    for (auto& v : t->data) v = rng.uniform(1e-4f, 2e-4f);
    return t;
}

} // namespace mdmask
