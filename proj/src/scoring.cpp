#include "mdmask/scoring.hpp"

#include <algorithm>
#include <sstream>

namespace mdmask {

ScoreSpec ScoreSpec::from_max_errors(const std::vector<float>& max_errors) {
    ScoreSpec spec;
    for (float e : max_errors) {
        if (!(e > 0.0f && e <= 1.0f))
            throw ConfigError("score: baseline error must be in (0,1], got " + std::to_string(e));
        spec.e_max.push_back(e);
        spec.alpha.push_back(1000.0f / (e * e));
    }
    return spec;
}

ScoreSpec ScoreSpec::calibrate(const std::vector<float>& finetune_errors) {
    std::vector<float> doubled;
    for (float e : finetune_errors) doubled.push_back(std::min(1.0f, 2.0f * e));
    return from_max_errors(doubled);
}

float score(const std::vector<float>& errors, const ScoreSpec& spec) {
    if (errors.size() != spec.size())
        throw DimensionError("score: " + std::to_string(errors.size()) + " errors for " +
                             std::to_string(spec.size()) + " baseline entries");
    float s = 0.0f;
    for (size_t d = 0; d < errors.size(); ++d) {
        if (errors[d] < 0.0f || errors[d] > 1.0f)
            throw ConfigError("score: error must be in [0,1]");
        const float gap = std::max(0.0f, spec.e_max[d] - errors[d]);
        s += spec.alpha[d] * gap * gap;
    }
    return s;
}

float score_per_param(float s, float ratio) {
    if (!(ratio > 0.0f)) throw ConfigError("score_per_param: ratio must be > 0");
    return s / ratio;
}

double overhead(int64_t n_p, int64_t a_p_bits_per_domain, int t) {
    if (t < 1) throw ConfigError("overhead: domain count must be >= 1");
    if (n_p <= 0) throw ConfigError("overhead: backbone parameter count must be > 0");
    return 1.0 + static_cast<double>(a_p_bits_per_domain) * static_cast<double>(t - 1) /
                     (32.0 * static_cast<double>(n_p));
}

int64_t masked_weight_count(const DomainParams& dp, const Backbone& bb) {
    int64_t n = 0;
    for (const auto& ml : dp.masked)
        n += bb.layers[static_cast<size_t>(ml.layer_index)].w->numel();
    return n;
}

int64_t mask_and_k_bits(const DomainParams& dp, const Backbone& bb) {
    int64_t bits = masked_weight_count(dp, bb); // 1 bit per masked weight
    for (const auto& ml : dp.masked) bits += 32 * ml.k.learned_count();
    return bits;
}

int64_t count_domain_bits(const DomainParams& dp, const Backbone& bb) {
    int64_t bits = mask_and_k_bits(dp, bb);
    for (const auto& dbn : dp.bn) bits += 32 * 4 * dbn.gamma->numel();
    return bits;
}

double bits_per_parameter(const DomainParams& dp, const Backbone& bb) {
    const int64_t weights = masked_weight_count(dp, bb);
    if (weights == 0) return 0.0;
    return static_cast<double>(mask_and_k_bits(dp, bb)) / static_cast<double>(weights);
}

OverheadReport OverheadReport::compute(const Backbone& bb,
                                       const std::vector<const DomainParams*>& domains) {
    OverheadReport r;
    r.n_p = bb.learnable_param_count();
    r.domains_total = 1 + static_cast<int>(domains.size());
    for (const DomainParams* dp : domains) r.delta_bits += count_domain_bits(*dp, bb);
    r.ratio = 1.0 + static_cast<double>(r.delta_bits) / (32.0 * static_cast<double>(r.n_p));
    return r;
}

std::vector<MaskAnalysisRow> analyze_masks(const DomainParams& dp) {
    auto mean_of = [](const KParam& k) {
        double s = 0.0;
        for (float v : k.value->data) s += v;
        return static_cast<float>(s / static_cast<double>(k.value->numel()));
    };
    std::vector<MaskAnalysisRow> rows;
    for (const auto& ml : dp.masked) {
        MaskAnalysisRow row;
        row.layer_index = ml.layer_index;
        row.density_pct = density(dp.binary_mask(ml));
        row.k1 = mean_of(ml.k.k1);
        row.k2 = mean_of(ml.k.k2);
        row.k3 = mean_of(ml.k.k3);
        rows.push_back(row);
    }
    std::sort(rows.begin(), rows.end(),
              [](const MaskAnalysisRow& a, const MaskAnalysisRow& b) {
                  return a.layer_index < b.layer_index;
              });
    return rows;
}

std::string analysis_tsv(const std::vector<MaskAnalysisRow>& rows) {
    std::ostringstream os;
    os << "layer_index\tdensity\tk1\tk2\tk3\n";
    for (const auto& r : rows)
        os << r.layer_index << "\t" << r.density_pct << "\t" << r.k1 << "\t" << r.k2 << "\t"
           << r.k3 << "\n";
    return os.str();
}

} // namespace mdmask
