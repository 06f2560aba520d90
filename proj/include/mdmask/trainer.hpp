#pragma once

#include <string>
#include <vector>

#include "mdmask/data.hpp"
#include "mdmask/net.hpp"

namespace mdmask {

struct NamedParam {
    std::string name;
    TensorPtr t;
};

struct AdamConfig {
    float lr = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

struct SgdConfig {
    float lr = 1e-3f;
    float momentum = 0.9f;
};

// Standard Adam with bias correction. Throws TrainError on non-finite
// gradients, naming the offending parameter.
class AdamState {
public:
    AdamState(std::vector<NamedParam> params, AdamConfig cfg);
    void step();
    void zero_grad();
    float lr() const { return cfg_.lr; }
    void set_lr(float lr) { cfg_.lr = lr; }
    const std::vector<NamedParam>& params() const { return params_; }

private:
    std::vector<NamedParam> params_;
    AdamConfig cfg_;
    int64_t t_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

class SgdState {
public:
    SgdState(std::vector<NamedParam> params, SgdConfig cfg);
    void step();
    void zero_grad();
    float lr() const { return cfg_.lr; }
    void set_lr(float lr) { cfg_.lr = lr; }
    const std::vector<NamedParam>& params() const { return params_; }

private:
    std::vector<NamedParam> params_;
    SgdConfig cfg_;
    std::vector<std::vector<float>> vel_;
};

struct ParamGroups {
    std::vector<NamedParam> adam; // real masks, learned k's, BN gamma/beta
    std::vector<NamedParam> sgd;  // classifier head
};

ParamGroups make_groups(DomainParams& dp);

struct Schedule {
    int epochs = 30;
    int decay_epoch = 20;
    float decay_factor = 10.0f;

    // "default" 30/20, "bench1" 15/10, "decathlon" 60/45.
    static Schedule preset(const std::string& name);
    void validate() const;
};

struct TrainReport {
    struct Epoch {
        float loss = 0.0f;
        float accuracy = 0.0f;
    };
    std::vector<Epoch> epochs;
    float final_eval_accuracy = 0.0f;
    double wall_seconds = 0.0;
};

struct TrainOptions {
    int batch_size = 32;
    bool augment_flip = false;
    AdamConfig adam;
    SgdConfig sgd;
};

// Per-domain training loop: Adam on masks/k/BN, SGD+momentum on the head,
// one factor-10 lr decay at the schedule's decay epoch. Backbone stays
// untouched (verified by the caller via digest).
TrainReport train_domain(DomainNet& net, const DomainDataset& data, const Schedule& sched,
                         uint64_t seed, const TrainOptions& opts = {});

// Trains all backbone parameters plus a classifier head (pretraining from
// scratch or the per-domain finetune baseline). Creates/replaces the
// backbone head when its class count differs from the dataset's.
TrainReport train_full(Backbone& bb, const DomainDataset& data, const Schedule& sched,
                       uint64_t seed, const TrainOptions& opts = {});

// Top-1 accuracy of the net on a split, eval mode.
float evaluate(DomainNet& net, const DataSplit& split, int height, int width, int batch_size = 64);

// Key=value training config file; values override whatever was set before.
struct TrainConfig {
    std::string arch = "smallnet";
    std::string variant = "full";
    std::string surrogate = "identity";
    std::string granularity = "layer";
    float adam_lr = 1e-4f;
    float sgd_lr = 1e-3f;
    std::string schedule = "default";
    int epochs = -1; // -1: use schedule preset's count
    int batch_size = 32;
    uint64_t seed = 0;
    bool augment = false;

    void apply_file(const std::string& path);
    void apply_kv(const std::string& key, const std::string& value);
    MaskTransformConfig mask_config() const;
    Schedule make_schedule() const;
    TrainOptions options() const;
};

} // namespace mdmask
