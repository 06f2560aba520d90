#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mdmask/error.hpp"

namespace mdmask {

// One split of flattened H*W images in [0,1] with integer labels.
struct DataSplit {
    std::vector<float> images; // n * h * w, row-major
    std::vector<int> labels;

    int64_t size() const { return static_cast<int64_t>(labels.size()); }
};

struct DomainDataset {
    std::string name;
    int num_classes = 0;
    int height = 16, width = 16;
    uint64_t seed = 0;
    DataSplit train, test;
};

struct GenOptions {
    // Per-family default when unset; 0 disables noise entirely.
    std::optional<float> noise;
};

// Families: "blobs", "bars", "digits-lite", plus "inverted:<family>" and
// "rotated:<family>" transforms (aliases "inverted-digits", "rotated-bars").
// Train and test draw from disjoint child streams of the seed.
DomainDataset generate(const std::string& family, int num_classes, int n_train, int n_test,
                       uint64_t seed, const GenOptions& opts = {});

// Stock suites: "mds-3" = blobs/bars/digits-lite, "mds-5" adds
// inverted-digits and rotated-bars. Per-domain seeds derive from base_seed.
std::vector<DomainDataset> make_suite(const std::string& suite, int n_train, int n_test,
                                      uint64_t base_seed);

// Raw container format ("MDLD"), one split per file. save_raw writes the
// given split; load_raw returns a dataset whose train split holds the
// file's items and whose test split is empty.
void save_raw(const DataSplit& split, int num_classes, int height, int width,
              const std::string& path);
DomainDataset load_raw(const std::string& path);

// Convenience pair <prefix>.train.mdld / <prefix>.test.mdld.
void save_dataset(const DomainDataset& ds, const std::string& prefix);
DomainDataset load_dataset(const std::string& prefix);

} // namespace mdmask
