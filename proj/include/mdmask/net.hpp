#pragma once

#include <string>
#include <vector>

#include "mdmask/arch.hpp"
#include "mdmask/mask.hpp"
#include "mdmask/ops.hpp"
#include "mdmask/tensor.hpp"

namespace mdmask {

// Shared frozen feature extractor plus the pretraining classifier head.
// Conv/dense weights and BN statistics become immutable after freeze();
// the digest fingerprints every byte of that shared state.
struct Backbone {
    struct Layer {
        LayerSpec spec;
        TensorPtr w;                          // conv / dense
        TensorPtr b;                          // dense only
        bool followed_by_bn = false;          // conv/dense directly before a BN
        TensorPtr gamma, beta, running_mean, running_var; // bn
        std::vector<int> out_shape;           // activation shape after this layer, sans batch
    };

    ArchSpec arch;
    std::vector<Layer> layers;
    int feature_dim = 0;
    bool frozen = false;

    // Pretraining classifier; not part of the shared set or the digest.
    TensorPtr head_w, head_b;
    int head_classes = 0;

    uint64_t digest() const;
    void freeze();

    // Learnable parameter count excluding the classifier: conv/dense
    // weights (+dense bias) and BN gamma/beta.
    int64_t learnable_param_count() const;

    std::vector<int> maskable_layers() const; // conv and non-head dense layers
    std::vector<int> bn_layers() const;
};

Backbone build_backbone(const ArchSpec& spec, uint64_t seed);

// Deep copy with weights unfrozen; used for the per-domain finetune baseline.
Backbone clone_unfrozen(const Backbone& bb);

// Everything private to one domain: real/binary masks and affine scalars
// per maskable layer, domain BN parameters, and the classifier head.
struct DomainParams {
    std::string name;
    MaskTransformConfig cfg;
    int num_classes = 0;

    struct MaskedLayer {
        int layer_index = -1;
        TensorPtr real_mask; // training state; null after loading a delta
        TensorPtr mask_bits; // detached {0,1} tensor used when real_mask is null
        AffineScalars k;
    };
    std::vector<MaskedLayer> masked;

    struct DomainBN {
        int layer_index = -1;
        TensorPtr gamma, beta, running_mean, running_var;
    };
    std::vector<DomainBN> bn; // empty for classifier-only (frozen backbone BN is used)

    TensorPtr head_w, head_b;

    const MaskedLayer* find_mask(int layer_index) const;
    const DomainBN* find_bn(int layer_index) const;

    // Thresholded snapshot of the layer's current mask.
    BinaryMask binary_mask(const MaskedLayer& ml) const;
};

// Registers a fresh domain: masks initialized on [1e-4, 2e-4] (all-ones at
// threshold), BN copied from the pretrained backbone, head He-initialized.
// With the default scalar init the new network starts exactly as the
// backbone's feature extractor.
DomainParams add_domain(const Backbone& bb, const std::string& name, int num_classes,
                        const MaskTransformConfig& cfg, uint64_t seed);

// Validates a DomainParams against its backbone: shape matches and the
// k0-under-BN rule. Throws ConfigError on violation.
void validate_domain(const Backbone& bb, const DomainParams& dp);

// Forward evaluator binding a backbone and one domain (or the backbone's
// own head when domain == nullptr).
class DomainNet {
public:
    DomainNet(const Backbone* bb, DomainParams* dp) : backbone_(bb), domain_(dp) {}

    void set_training(bool t);
    bool training() const { return training_; }

    // Eval-only optimization: reuse transformed weights across forwards.
    void set_weight_cache(bool enabled);
    void invalidate_cache();

    // Flattened features before the classifier.
    TensorPtr features(Graph& g, const TensorPtr& x);
    // Logits over the domain's classes.
    TensorPtr forward(Graph& g, const TensorPtr& x);

    const Backbone* backbone() const { return backbone_; }
    DomainParams* domain() { return domain_; }

private:
    TensorPtr effective_weight(Graph& g, int layer_index);

    const Backbone* backbone_;
    DomainParams* domain_;
    bool training_ = false;
    bool cache_enabled_ = false;
    std::vector<TensorPtr> cached_weights_; // by layer index; empty = invalid
};

// True iff the backbone digest still equals the recorded value.
bool forgetting_check(const Backbone& bb, uint64_t before_digest);

} // namespace mdmask
