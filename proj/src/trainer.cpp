#include "mdmask/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mdmask/rng.hpp"

namespace mdmask {

namespace {

void check_grads(const std::vector<NamedParam>& params) {
    for (const auto& p : params) {
        for (float gv : p.t->grad)
            if (!std::isfinite(gv))
                throw TrainError("non-finite gradient in parameter '" + p.name + "'");
    }
}

} // namespace

AdamState::AdamState(std::vector<NamedParam> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
        m_.emplace_back(p.t->data.size(), 0.0f);
        v_.emplace_back(p.t->data.size(), 0.0f);
    }
}

void AdamState::step() {
    check_grads(params_);
    ++t_;
    const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(t_));
    const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = *params_[i].t;
        if (p.grad.empty()) continue; // no gradient reached this parameter this step
        auto& m = m_[i];
        auto& v = v_[i];
        for (size_t j = 0; j < p.data.size(); ++j) {
            const float g = p.grad[j];
            m[j] = cfg_.beta1 * m[j] + (1.0f - cfg_.beta1) * g;
            v[j] = cfg_.beta2 * v[j] + (1.0f - cfg_.beta2) * g * g;
            const float mhat = m[j] / bc1;
            const float vhat = v[j] / bc2;
            p.data[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void AdamState::zero_grad() {
    for (auto& p : params_) p.t->zero_grad();
}

SgdState::SgdState(std::vector<NamedParam> params, SgdConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) vel_.emplace_back(p.t->data.size(), 0.0f);
}

void SgdState::step() {
    check_grads(params_);
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = *params_[i].t;
        if (p.grad.empty()) continue;
        auto& vel = vel_[i];
        for (size_t j = 0; j < p.data.size(); ++j) {
            vel[j] = cfg_.momentum * vel[j] + p.grad[j];
            p.data[j] -= cfg_.lr * vel[j];
        }
    }
}

void SgdState::zero_grad() {
    for (auto& p : params_) p.t->zero_grad();
}

ParamGroups make_groups(DomainParams& dp) {
    ParamGroups groups;
    for (size_t i = 0; i < dp.masked.size(); ++i) {
        auto& ml = dp.masked[i];
        const std::string tag = "layer" + std::to_string(ml.layer_index);
        if (!ml.real_mask)
            throw TrainError("domain '" + dp.name +
                             "' has no real-valued masks (loaded from a delta?); cannot train");
        groups.adam.push_back({"mask/" + tag, ml.real_mask});
        const char* kn[4] = {"k0", "k1", "k2", "k3"};
        const KParam* ks[4] = {&ml.k.k0, &ml.k.k1, &ml.k.k2, &ml.k.k3};
        for (int j = 0; j < 4; ++j)
            if (ks[j]->learned) groups.adam.push_back({std::string(kn[j]) + "/" + tag, ks[j]->value});
    }
    for (auto& dbn : dp.bn) {
        const std::string tag = "layer" + std::to_string(dbn.layer_index);
        groups.adam.push_back({"bn_gamma/" + tag, dbn.gamma});
        groups.adam.push_back({"bn_beta/" + tag, dbn.beta});
    }
    groups.sgd.push_back({"head_w", dp.head_w});
    groups.sgd.push_back({"head_b", dp.head_b});
    return groups;
}

Schedule Schedule::preset(const std::string& name) {
    Schedule s;
    if (name == "default") {
        s = {30, 20, 10.0f};
    } else if (name == "bench1") {
        s = {15, 10, 10.0f};
    } else if (name == "decathlon") {
        s = {60, 45, 10.0f};
    } else {
        throw ConfigError("unknown schedule preset '" + name + "'");
    }
    s.validate();
    return s;
}

void Schedule::validate() const {
    if (epochs < 0) throw ConfigError("schedule: epochs must be >= 0");
    if (decay_epoch > epochs) throw ConfigError("schedule: decay_epoch must be <= epochs");
    if (decay_factor <= 1.0f) throw ConfigError("schedule: decay_factor must be > 1");
}

namespace {

// Copies one image into a batch slot, optionally mirrored horizontally.
void fill_slot(float* dst, const float* src, int h, int w, bool flip) {
    if (!flip) {
        std::copy(src, src + static_cast<size_t>(h) * w, dst);
        return;
    }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            dst[static_cast<size_t>(y) * w + x] = src[static_cast<size_t>(y) * w + (w - 1 - x)];
}

struct BatchIter {
    const DataSplit* split;
    int h, w;

    TensorPtr make_batch(const std::vector<int>& order, int64_t begin, int64_t count,
                         std::vector<int>& labels, bool augment, Rng& rng) const {
        auto x = Tensor::make({static_cast<int>(count), 1, h, w});
        labels.resize(static_cast<size_t>(count));
        const size_t px = static_cast<size_t>(h) * w;
        for (int64_t i = 0; i < count; ++i) {
            const int idx = order[static_cast<size_t>(begin + i)];
            const bool flip = augment && rng.next_float() < 0.5f;
            fill_slot(x->data.data() + static_cast<size_t>(i) * px,
                      split->images.data() + static_cast<size_t>(idx) * px, h, w, flip);
            labels[static_cast<size_t>(i)] = split->labels[static_cast<size_t>(idx)];
        }
        return x;
    }
};

int count_correct(const Tensor& logits, const std::vector<int>& labels) {
    const int n = logits.dim(0), k = logits.dim(1);
    int correct = 0;
    for (int i = 0; i < n; ++i) {
        const float* row = logits.data.data() + static_cast<int64_t>(i) * k;
        int best = 0;
        for (int j = 1; j < k; ++j)
            if (row[j] > row[best]) best = j;
        if (best == labels[static_cast<size_t>(i)]) ++correct;
    }
    return correct;
}

TrainReport run_loop(DomainNet& net, AdamState& adam, SgdState& sgd, const DomainDataset& data,
                     const Schedule& sched, uint64_t seed, const TrainOptions& opts) {
    sched.validate();
    const auto t0 = std::chrono::steady_clock::now();
    TrainReport report;
    Rng rng(seed);
    BatchIter iter{&data.train, data.height, data.width};

    std::vector<int> order(static_cast<size_t>(data.train.size()));
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    const float adam_lr0 = adam.lr();
    const float sgd_lr0 = sgd.lr();

    for (int epoch = 0; epoch < sched.epochs; ++epoch) {
        if (epoch == sched.decay_epoch) {
            adam.set_lr(adam_lr0 / sched.decay_factor);
            sgd.set_lr(sgd_lr0 / sched.decay_factor);
        }
        rng.shuffle(order);
        net.set_training(true);

        double loss_sum = 0.0;
        int64_t correct = 0, seen = 0, batches = 0;
        for (int64_t begin = 0; begin < data.train.size(); begin += opts.batch_size) {
            const int64_t count = std::min<int64_t>(opts.batch_size, data.train.size() - begin);
            std::vector<int> labels;
            auto x = iter.make_batch(order, begin, count, labels, opts.augment_flip, rng);

            Graph g;
            auto logits = net.forward(g, x);
            auto loss = ops::softmax_cross_entropy(g, logits, labels);
            if (!std::isfinite(loss->data[0]))
                throw TrainError("non-finite loss at epoch " + std::to_string(epoch));

            adam.zero_grad();
            sgd.zero_grad();
            g.backward(loss);
            adam.step();
            sgd.step();

            loss_sum += loss->data[0];
            correct += count_correct(*logits, labels);
            seen += count;
            ++batches;
        }
        TrainReport::Epoch e;
        e.loss = batches ? static_cast<float>(loss_sum / static_cast<double>(batches)) : 0.0f;
        e.accuracy = seen ? static_cast<float>(correct) / static_cast<float>(seen) : 0.0f;
        report.epochs.push_back(e);
    }

    net.set_training(false);
    report.final_eval_accuracy = evaluate(net, data.test, data.height, data.width);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

} // namespace

TrainReport train_domain(DomainNet& net, const DomainDataset& data, const Schedule& sched,
                         uint64_t seed, const TrainOptions& opts) {
    DomainParams* dp = net.domain();
    if (!dp) throw TrainError("train_domain requires a registered domain");
    if (dp->num_classes != data.num_classes)
        throw TrainError("domain '" + dp->name + "' expects " + std::to_string(dp->num_classes) +
                         " classes, dataset '" + data.name + "' has " +
                         std::to_string(data.num_classes));

    ParamGroups groups = make_groups(*dp);
    AdamState adam(std::move(groups.adam), opts.adam);
    SgdState sgd(std::move(groups.sgd), opts.sgd);
    return run_loop(net, adam, sgd, data, sched, seed, opts);
}

TrainReport train_full(Backbone& bb, const DomainDataset& data, const Schedule& sched,
                       uint64_t seed, const TrainOptions& opts) {
    if (bb.frozen) throw TrainError("train_full: backbone is frozen");
    Rng rng(Rng(seed).next_u64() ^ 0x5eedf00dULL);
    if (!bb.head_w || bb.head_classes != data.num_classes) {
        bb.head_w = Tensor::make({data.num_classes, bb.feature_dim}, true);
        const float std = std::sqrt(2.0f / static_cast<float>(bb.feature_dim));
        for (auto& v : bb.head_w->data) v = std * rng.normal();
        bb.head_b = Tensor::zeros({data.num_classes}, true);
        bb.head_classes = data.num_classes;
    }

    ParamGroups groups;
    for (size_t i = 0; i < bb.layers.size(); ++i) {
        auto& l = bb.layers[i];
        const std::string tag = "layer" + std::to_string(i);
        if (l.w) groups.adam.push_back({"w/" + tag, l.w});
        if (l.b) groups.adam.push_back({"b/" + tag, l.b});
        if (l.gamma) {
            groups.adam.push_back({"bn_gamma/" + tag, l.gamma});
            groups.adam.push_back({"bn_beta/" + tag, l.beta});
        }
    }
    groups.sgd.push_back({"head_w", bb.head_w});
    groups.sgd.push_back({"head_b", bb.head_b});

    AdamState adam(std::move(groups.adam), opts.adam);
    SgdState sgd(std::move(groups.sgd), opts.sgd);
    DomainNet net(&bb, nullptr);
    return run_loop(net, adam, sgd, data, sched, seed, opts);
}

float evaluate(DomainNet& net, const DataSplit& split, int height, int width, int batch_size) {
    const bool was_training = net.training();
    net.set_training(false);
    BatchIter iter{&split, height, width};
    std::vector<int> order(static_cast<size_t>(split.size()));
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    Rng rng(0); // unused (no augmentation at eval)
    int64_t correct = 0;
    for (int64_t begin = 0; begin < split.size(); begin += batch_size) {
        const int64_t count = std::min<int64_t>(batch_size, split.size() - begin);
        std::vector<int> labels;
        auto x = iter.make_batch(order, begin, count, labels, false, rng);
        Graph g;
        auto logits = net.forward(g, x);
        correct += count_correct(*logits, labels);
    }
    net.set_training(was_training);
    return split.size() ? static_cast<float>(correct) / static_cast<float>(split.size()) : 0.0f;
}

void TrainConfig::apply_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto b = line.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) continue;
        const auto e = line.find_last_not_of(" \t\r\n");
        line = line.substr(b, e - b + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        auto strip = [](std::string s) {
            const auto sb = s.find_first_not_of(" \t");
            const auto se = s.find_last_not_of(" \t");
            return sb == std::string::npos ? std::string() : s.substr(sb, se - sb + 1);
        };
        apply_kv(strip(key), strip(value));
    }
}

void TrainConfig::apply_kv(const std::string& key, const std::string& value) {
    try {
        if (key == "arch") arch = value;
        else if (key == "variant") variant = value;
        else if (key == "surrogate") surrogate = value;
        else if (key == "granularity") granularity = value;
        else if (key == "adam_lr") adam_lr = std::stof(value);
        else if (key == "sgd_lr") sgd_lr = std::stof(value);
        else if (key == "schedule") schedule = value;
        else if (key == "epochs") epochs = std::stoi(value);
        else if (key == "batch_size") batch_size = std::stoi(value);
        else if (key == "seed") seed = std::stoull(value);
        else if (key == "augment") augment = (value == "1" || value == "true" || value == "on");
        else throw ConfigError("unknown config key '" + key + "'");
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError("bad value '" + value + "' for config key '" + key + "'");
    }
}

MaskTransformConfig TrainConfig::mask_config() const {
    MaskTransformConfig cfg;
    cfg.variant = variant_from_name(variant);
    cfg.surrogate = surrogate_from_name(surrogate);
    cfg.granularity = granularity_from_name(granularity);
    return cfg;
}

Schedule TrainConfig::make_schedule() const {
    Schedule s = Schedule::preset(schedule);
    if (epochs >= 0) {
        s.epochs = epochs;
        if (s.decay_epoch > s.epochs) s.decay_epoch = s.epochs;
        s.validate();
    }
    return s;
}

TrainOptions TrainConfig::options() const {
    TrainOptions opts;
    opts.batch_size = batch_size;
    opts.augment_flip = augment;
    opts.adam.lr = adam_lr;
    opts.sgd.lr = sgd_lr;
    return opts;
}

} // namespace mdmask
