#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mdmask/mask.hpp"
#include "mdmask/net.hpp"
#include "mdmask/scoring.hpp"

namespace mdmask {

// CRC-32 (IEEE reflected polynomial 0xEDB88320).
uint32_t crc32(const void* bytes, size_t n, uint32_t seed = 0);

// LSB-first bit packing: element j maps to bit (j mod 8) of byte j/8;
// the final partial byte is zero-padded.
std::vector<uint8_t> pack_mask(const BinaryMask& mask);

// Inverse of pack_mask. Requires len(bytes) == ceil(numel/8) and zero
// padding bits; throws FormatError otherwise.
BinaryMask unpack_mask(const std::vector<uint8_t>& bytes, const std::vector<int>& shape);

// "MDBB" backbone checkpoint: arch text, every shared tensor verbatim,
// the pretraining head, digest and CRC. Loaded backbones come back frozen.
void save_backbone(const Backbone& bb, const std::string& path);
Backbone load_backbone(const std::string& path);

// "MDMK" domain delta: bit-packed binary masks, learned scalars, domain
// BN and the classifier, tied to a backbone by digest. Real-valued masks
// are not persisted here (deltas are deployment state).
void save_domain(const DomainParams& dp, const Backbone& bb, const std::string& path);
DomainParams load_domain(const std::string& path, const Backbone& bb);

// Payload bit count recorded in a delta file header without loading the
// whole domain (used by size audits and `inspect`).
struct DeltaInfo {
    std::string name;
    MaskTransformConfig cfg;
    int num_classes = 0;
    uint64_t backbone_digest = 0;
    int64_t payload_bits = 0;
};
DeltaInfo read_delta_info(const std::string& path);

// Byte length of the masks+k+BN payload section of a delta file (what the
// overhead accounting covers; header, layer table and classifier excluded).
int64_t delta_payload_bytes(const std::string& path);

// Standalone mask analysis from a delta file alone (no backbone needed).
std::vector<MaskAnalysisRow> inspect_delta(const std::string& path);

// "MDRM" training-resume checkpoint for real-valued masks. Never counted
// in deployment overhead.
void save_real_masks(const DomainParams& dp, const Backbone& bb, const std::string& path);
void load_real_masks(DomainParams& dp, const Backbone& bb, const std::string& path);

} // namespace mdmask
