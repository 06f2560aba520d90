#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mdmask/net.hpp"

namespace mdmask {

// Benchmark scoring: each domain is worth up to 1000 points, reached at
// zero test error; a model at the baseline error (or worse) earns 0.
struct ScoreSpec {
    std::vector<float> e_max; // per-domain baseline error in (0, 1]
    std::vector<float> alpha; // 1000 / e_max^2

    static ScoreSpec from_max_errors(const std::vector<float>& max_errors);
    // Baseline = doubled finetune error, clamped to 1.
    static ScoreSpec calibrate(const std::vector<float>& finetune_errors);

    size_t size() const { return e_max.size(); }
};

// S = sum_d alpha_d * max(0, e_max_d - e_d)^2.
float score(const std::vector<float>& errors, const ScoreSpec& spec);

// S_p = S / parameter ratio.
float score_per_param(float s, float ratio);

// 1 + A_p*(T-1) / (32*N_p); T counts the pretraining domain.
double overhead(int64_t n_p, int64_t a_p_bits_per_domain, int t);

// Exact deployable bit count of one domain's delta, classifier excluded:
// 1 bit per masked weight + 32 per learned scalar + 32 per BN value.
int64_t count_domain_bits(const DomainParams& dp, const Backbone& bb);

// The mask-overhead portion only (mask bits + learned k bits).
int64_t mask_and_k_bits(const DomainParams& dp, const Backbone& bb);
int64_t masked_weight_count(const DomainParams& dp, const Backbone& bb);

// (mask + k bits) / masked weights; the per-weight storage overhead that
// lands slightly above 1 bit per parameter.
double bits_per_parameter(const DomainParams& dp, const Backbone& bb);

struct OverheadReport {
    int64_t n_p = 0;          // backbone params, classifiers excluded
    int domains_total = 1;    // T, including the pretraining domain
    int64_t delta_bits = 0;   // summed A_p over added domains
    double ratio = 1.0;

    static OverheadReport compute(const Backbone& bb,
                                  const std::vector<const DomainParams*>& domains);
};

struct MaskAnalysisRow {
    int layer_index = 0;
    float density_pct = 0.0f;
    float k1 = 0.0f, k2 = 0.0f, k3 = 0.0f; // channel means under channel-wise granularity
};

// Per-layer density and transform scalars, ordered by depth.
std::vector<MaskAnalysisRow> analyze_masks(const DomainParams& dp);

// TSV: header line then one row per masked layer
// (layer_index, density, k1, k2, k3).
std::string analysis_tsv(const std::vector<MaskAnalysisRow>& rows);

} // namespace mdmask
