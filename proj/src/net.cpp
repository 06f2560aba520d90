#include "mdmask/net.hpp"

#include <cmath>
#include <cstring>

#include "mdmask/rng.hpp"

namespace mdmask {

namespace {

void he_init(Tensor& t, int fan_in, Rng& rng) {
    const float std = std::sqrt(2.0f / static_cast<float>(fan_in));
    for (auto& v : t.data) v = std * rng.normal();
}

uint64_t hash_tensor(uint64_t h, const TensorPtr& t) {
    if (!t) return h;
    return fnv1a64(t->data.data(), t->data.size() * sizeof(float), h);
}

} // namespace

uint64_t Backbone::digest() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& l : layers) {
        h = hash_tensor(h, l.w);
        h = hash_tensor(h, l.b);
        h = hash_tensor(h, l.gamma);
        h = hash_tensor(h, l.beta);
        h = hash_tensor(h, l.running_mean);
        h = hash_tensor(h, l.running_var);
    }
    return h;
}

void Backbone::freeze() {
    for (auto& l : layers)
        for (const TensorPtr& t : {l.w, l.b, l.gamma, l.beta, l.running_mean, l.running_var})
            if (t) t->requires_grad = false;
    frozen = true;
}

int64_t Backbone::learnable_param_count() const {
    int64_t n = 0;
    for (const auto& l : layers) {
        if (l.w) n += l.w->numel();
        if (l.b) n += l.b->numel();
        if (l.gamma) n += l.gamma->numel() + l.beta->numel();
    }
    return n;
}

std::vector<int> Backbone::maskable_layers() const {
    std::vector<int> out;
    for (size_t i = 0; i < layers.size(); ++i)
        if (layers[i].spec.kind == LayerKind::Conv || layers[i].spec.kind == LayerKind::Dense)
            out.push_back(static_cast<int>(i));
    return out;
}

std::vector<int> Backbone::bn_layers() const {
    std::vector<int> out;
    for (size_t i = 0; i < layers.size(); ++i)
        if (layers[i].spec.kind == LayerKind::BatchNorm) out.push_back(static_cast<int>(i));
    return out;
}

Backbone build_backbone(const ArchSpec& spec, uint64_t seed) {
    Backbone bb;
    bb.arch = spec;
    Rng rng(seed);

    int c = spec.in_c, h = spec.in_h, w = spec.in_w;
    bool flat = false;
    int d = 0;

    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& ls = spec.layers[i];
        Backbone::Layer layer;
        layer.spec = ls;
        switch (ls.kind) {
            case LayerKind::Conv: {
                if (flat) throw ConfigError("arch: conv after dense is not supported");
                const int th = h + 2 * ls.pad - ls.kernel;
                const int tw = w + 2 * ls.pad - ls.kernel;
                if (th < 0 || tw < 0 || th % ls.stride != 0 || tw % ls.stride != 0)
                    throw ConfigError("arch: conv output size not integral at layer " +
                                      std::to_string(i));
                layer.w = Tensor::make({ls.channels, c, ls.kernel, ls.kernel}, true);
                he_init(*layer.w, c * ls.kernel * ls.kernel, rng);
                c = ls.channels;
                h = th / ls.stride + 1;
                w = tw / ls.stride + 1;
                layer.followed_by_bn =
                    i + 1 < spec.layers.size() && spec.layers[i + 1].kind == LayerKind::BatchNorm;
                break;
            }
            case LayerKind::BatchNorm: {
                if (flat) throw ConfigError("arch: bn after dense is not supported");
                layer.gamma = Tensor::full({c}, 1.0f, true);
                layer.beta = Tensor::zeros({c}, true);
                layer.running_mean = Tensor::zeros({c});
                layer.running_var = Tensor::full({c}, 1.0f);
                break;
            }
            case LayerKind::Relu:
                break;
            case LayerKind::MaxPool: {
                if (flat) throw ConfigError("arch: pool after dense is not supported");
                if (h % ls.pool != 0 || w % ls.pool != 0)
                    throw ConfigError("arch: pool window " + std::to_string(ls.pool) +
                                      " does not divide " + std::to_string(h) + "x" + std::to_string(w));
                h /= ls.pool;
                w /= ls.pool;
                break;
            }
            case LayerKind::Dense: {
                const int din = flat ? d : c * h * w;
                layer.w = Tensor::make({ls.channels, din}, true);
                he_init(*layer.w, din, rng);
                layer.b = Tensor::zeros({ls.channels}, true);
                flat = true;
                d = ls.channels;
                break;
            }
        }
        layer.out_shape = flat ? std::vector<int>{d} : std::vector<int>{c, h, w};
        bb.layers.push_back(std::move(layer));
    }
    bb.feature_dim = flat ? d : c * h * w;
    return bb;
}

Backbone clone_unfrozen(const Backbone& bb) {
    Backbone out;
    out.arch = bb.arch;
    out.feature_dim = bb.feature_dim;
    out.frozen = false;
    out.head_classes = bb.head_classes;
    auto cl = [](const TensorPtr& t, bool rg) -> TensorPtr {
        if (!t) return nullptr;
        auto c = t->clone();
        c->requires_grad = rg;
        return c;
    };
    for (const auto& l : bb.layers) {
        Backbone::Layer nl;
        nl.spec = l.spec;
        nl.followed_by_bn = l.followed_by_bn;
        nl.out_shape = l.out_shape;
        nl.w = cl(l.w, true);
        nl.b = cl(l.b, true);
        nl.gamma = cl(l.gamma, true);
        nl.beta = cl(l.beta, true);
        nl.running_mean = cl(l.running_mean, false);
        nl.running_var = cl(l.running_var, false);
        out.layers.push_back(std::move(nl));
    }
    out.head_w = cl(bb.head_w, true);
    out.head_b = cl(bb.head_b, true);
    return out;
}

const DomainParams::MaskedLayer* DomainParams::find_mask(int layer_index) const {
    for (const auto& m : masked)
        if (m.layer_index == layer_index) return &m;
    return nullptr;
}

const DomainParams::DomainBN* DomainParams::find_bn(int layer_index) const {
    for (const auto& b : bn)
        if (b.layer_index == layer_index) return &b;
    return nullptr;
}

BinaryMask DomainParams::binary_mask(const MaskedLayer& ml) const {
    if (ml.real_mask) return BinaryMask::from_real(*ml.real_mask);
    return BinaryMask::from_real(*ml.mask_bits); // bits are >= 0, threshold is identity
}

DomainParams add_domain(const Backbone& bb, const std::string& name, int num_classes,
                        const MaskTransformConfig& cfg, uint64_t seed) {
    if (!bb.frozen) throw ConfigError("add_domain: backbone must be frozen (pretrained) first");
    if (num_classes < 2) throw ConfigError("add_domain: num_classes must be >= 2");

    DomainParams dp;
    dp.name = name;
    dp.cfg = cfg;
    dp.num_classes = num_classes;
    Rng rng(seed);

    if (cfg.uses_masks()) {
        for (int idx : bb.maskable_layers()) {
            const auto& l = bb.layers[static_cast<size_t>(idx)];
            DomainParams::MaskedLayer ml;
            ml.layer_index = idx;
            ml.real_mask = init_real_mask(l.w->shape, rng);
            ml.k = AffineScalars::for_layer(cfg, l.w->dim(0), l.followed_by_bn);
            dp.masked.push_back(std::move(ml));
        }
        for (int idx : bb.bn_layers()) {
            const auto& l = bb.layers[static_cast<size_t>(idx)];
            DomainParams::DomainBN dbn;
            dbn.layer_index = idx;
            dbn.gamma = l.gamma->clone();
            dbn.gamma->requires_grad = true;
            dbn.beta = l.beta->clone();
            dbn.beta->requires_grad = true;
            dbn.running_mean = l.running_mean->clone();
            dbn.running_var = l.running_var->clone();
            dp.bn.push_back(std::move(dbn));
        }
    }

    dp.head_w = Tensor::make({num_classes, bb.feature_dim}, true);
    he_init(*dp.head_w, bb.feature_dim, rng);
    dp.head_b = Tensor::zeros({num_classes}, true);
    return dp;
}

void validate_domain(const Backbone& bb, const DomainParams& dp) {
    if (dp.num_classes < 2) throw ConfigError("domain: num_classes must be >= 2");
    for (const auto& ml : dp.masked) {
        if (ml.layer_index < 0 || ml.layer_index >= static_cast<int>(bb.layers.size()))
            throw ConfigError("domain: mask layer index out of range");
        const auto& l = bb.layers[static_cast<size_t>(ml.layer_index)];
        if (!l.w) throw ConfigError("domain: mask attached to a layer without weights");
        const TensorPtr mask = ml.real_mask ? ml.real_mask : ml.mask_bits;
        if (!mask || mask->shape != l.w->shape)
            throw ConfigError("domain: mask shape does not match layer weights");
        if (l.followed_by_bn && ml.k.k0.learned)
            throw ConfigError("domain: k0 must be fixed for layers followed by BN");
        for (const KParam* kp : {&ml.k.k0, &ml.k.k1, &ml.k.k2, &ml.k.k3}) {
            const int64_t n = kp->value->numel();
            if (n != 1 && n != l.w->dim(0))
                throw ConfigError("domain: k granularity does not match layer");
        }
    }
    for (const auto& dbn : dp.bn) {
        if (dbn.layer_index < 0 || dbn.layer_index >= static_cast<int>(bb.layers.size()))
            throw ConfigError("domain: BN layer index out of range");
        const auto& l = bb.layers[static_cast<size_t>(dbn.layer_index)];
        if (!l.gamma || l.gamma->numel() != dbn.gamma->numel())
            throw ConfigError("domain: BN channel count mismatch");
    }
    if (!dp.head_w || dp.head_w->dim(0) != dp.num_classes || dp.head_w->dim(1) != bb.feature_dim)
        throw ConfigError("domain: classifier head shape mismatch");
}

void DomainNet::set_training(bool t) {
    training_ = t;
    cached_weights_.clear();
}

void DomainNet::set_weight_cache(bool enabled) {
    cache_enabled_ = enabled;
    cached_weights_.clear();
}

void DomainNet::invalidate_cache() { cached_weights_.clear(); }

TensorPtr DomainNet::effective_weight(Graph& g, int layer_index) {
    const auto& l = backbone_->layers[static_cast<size_t>(layer_index)];
    const DomainParams::MaskedLayer* ml =
        domain_ && domain_->cfg.uses_masks() ? domain_->find_mask(layer_index) : nullptr;
    if (!ml) return l.w;

    if (!training_ && cache_enabled_) {
        if (cached_weights_.empty()) cached_weights_.resize(backbone_->layers.size());
        if (auto& slot = cached_weights_[static_cast<size_t>(layer_index)]) return slot;
    }

    TensorPtr m;
    if (ml->real_mask)
        m = binarize(g, ml->real_mask, domain_->cfg.surrogate);
    else
        m = ml->mask_bits;
    auto w_eff = transform_weights(g, l.w, m, ml->k);

    if (!training_ && cache_enabled_) {
        auto detached = w_eff->clone(); // drop graph linkage; eval reuse only
        cached_weights_[static_cast<size_t>(layer_index)] = detached;
        return detached;
    }
    return w_eff;
}

TensorPtr DomainNet::features(Graph& g, const TensorPtr& x) {
    if (x->ndim() != 4 || x->dim(1) != backbone_->arch.in_c || x->dim(2) != backbone_->arch.in_h ||
        x->dim(3) != backbone_->arch.in_w)
        throw DimensionError("forward: input " + shape_str(x->shape) + " does not match arch input");

    TensorPtr h = x;
    for (size_t i = 0; i < backbone_->layers.size(); ++i) {
        const auto& l = backbone_->layers[i];
        switch (l.spec.kind) {
            case LayerKind::Conv:
                h = ops::conv2d(g, h, effective_weight(g, static_cast<int>(i)), l.spec.stride,
                                l.spec.pad);
                break;
            case LayerKind::BatchNorm: {
                const DomainParams::DomainBN* dbn =
                    domain_ ? domain_->find_bn(static_cast<int>(i)) : nullptr;
                if (dbn) {
                    h = ops::batchnorm(g, h, dbn->gamma, dbn->beta, dbn->running_mean,
                                       dbn->running_var, training_);
                } else {
                    // Backbone statistics: trainable only while pretraining.
                    const bool bn_train = training_ && !domain_ && !backbone_->frozen;
                    h = ops::batchnorm(g, h, l.gamma, l.beta, l.running_mean, l.running_var,
                                       bn_train);
                }
                break;
            }
            case LayerKind::Relu:
                h = ops::relu(g, h);
                break;
            case LayerKind::MaxPool:
                h = ops::maxpool2d(g, h, l.spec.pool);
                break;
            case LayerKind::Dense: {
                if (h->ndim() == 4)
                    h = ops::reshape(g, h, {h->dim(0), h->dim(1) * h->dim(2) * h->dim(3)});
                h = ops::dense(g, h, effective_weight(g, static_cast<int>(i)), l.b);
                break;
            }
        }
    }
    if (h->ndim() == 4) h = ops::reshape(g, h, {h->dim(0), h->dim(1) * h->dim(2) * h->dim(3)});
    return h;
}

TensorPtr DomainNet::forward(Graph& g, const TensorPtr& x) {
    auto f = features(g, x);
    const TensorPtr w = domain_ ? domain_->head_w : backbone_->head_w;
    const TensorPtr b = domain_ ? domain_->head_b : backbone_->head_b;
    if (!w) throw ConfigError("forward: no classifier head available");
    return ops::dense(g, f, w, b);
}

bool forgetting_check(const Backbone& bb, uint64_t before_digest) {
    return bb.digest() == before_digest;
}

} // namespace mdmask
