#include "mdmask/store.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

namespace mdmask {

uint32_t crc32(const void* bytes, size_t n, uint32_t seed) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    uint32_t c = seed ^ 0xFFFFFFFFu;
    const auto* p = static_cast<const uint8_t*>(bytes);
    for (size_t i = 0; i < n; ++i) c = table[(c ^ p[i]) & 0xFFu] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

std::vector<uint8_t> pack_mask(const BinaryMask& mask) {
    std::vector<uint8_t> out((mask.bits.size() + 7) / 8, 0);
    for (size_t j = 0; j < mask.bits.size(); ++j)
        if (mask.bits[j]) out[j / 8] |= static_cast<uint8_t>(1u << (j % 8));
    return out;
}

BinaryMask unpack_mask(const std::vector<uint8_t>& bytes, const std::vector<int>& shape) {
    const int64_t numel = shape_numel(shape);
    const size_t expected = static_cast<size_t>((numel + 7) / 8);
    if (bytes.size() != expected)
        throw FormatError("unpack_mask: got " + std::to_string(bytes.size()) + " bytes, expected " +
                          std::to_string(expected));
    BinaryMask m;
    m.shape = shape;
    m.bits.resize(static_cast<size_t>(numel));
    for (int64_t j = 0; j < numel; ++j)
        m.bits[static_cast<size_t>(j)] =
            (bytes[static_cast<size_t>(j / 8)] >> (j % 8)) & 1u;
    // Padding bits beyond numel must be zero.
    for (int64_t j = numel; j < static_cast<int64_t>(bytes.size()) * 8; ++j)
        if ((bytes[static_cast<size_t>(j / 8)] >> (j % 8)) & 1u)
            throw FormatError("unpack_mask: nonzero padding bits (corrupt mask)");
    return m;
}

namespace {

struct ByteWriter {
    std::vector<uint8_t> buf;

    void raw(const void* p, size_t n) {
        const auto* b = static_cast<const uint8_t*>(p);
        buf.insert(buf.end(), b, b + n);
    }
    template <typename T>
    void pod(T v) {
        raw(&v, sizeof(T));
    }
    void str16(const std::string& s) {
        pod<uint16_t>(static_cast<uint16_t>(s.size()));
        raw(s.data(), s.size());
    }
    void str32(const std::string& s) {
        pod<uint32_t>(static_cast<uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    void floats(const std::vector<float>& v) { raw(v.data(), v.size() * sizeof(float)); }

    void finish(const std::string& path) {
        const uint32_t crc = crc32(buf.data(), buf.size());
        pod<uint32_t>(crc);
        std::ofstream out(path, std::ios::binary);
        if (!out) throw FormatError("cannot open '" + path + "' for writing");
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size()));
        if (!out) throw FormatError("write failed for '" + path + "'");
    }
};

struct ByteReader {
    std::vector<uint8_t> buf;
    size_t off = 0;
    std::string path;

    explicit ByteReader(const std::string& p) : path(p) {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw FormatError("cannot open '" + p + "'");
        buf.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        if (buf.size() < 8) throw FormatError(p + ": truncated file");
        const uint32_t stored = read_u32_at(buf.size() - 4);
        const uint32_t actual = crc32(buf.data(), buf.size() - 4);
        if (stored != actual) throw FormatError(p + ": CRC mismatch (corrupt file)");
        buf.resize(buf.size() - 4);
    }

    uint32_t read_u32_at(size_t pos) const {
        uint32_t v;
        std::memcpy(&v, buf.data() + pos, 4);
        return v;
    }

    void need(size_t n) const {
        if (off + n > buf.size()) throw FormatError(path + ": truncated file");
    }
    void raw(void* p, size_t n) {
        need(n);
        std::memcpy(p, buf.data() + off, n);
        off += n;
    }
    template <typename T>
    T pod() {
        T v;
        raw(&v, sizeof(T));
        return v;
    }
    std::string str16() {
        const auto n = pod<uint16_t>();
        need(n);
        std::string s(reinterpret_cast<const char*>(buf.data() + off), n);
        off += n;
        return s;
    }
    std::string str32() {
        const auto n = pod<uint32_t>();
        need(n);
        std::string s(reinterpret_cast<const char*>(buf.data() + off), n);
        off += n;
        return s;
    }
    void floats(std::vector<float>& v) { raw(v.data(), v.size() * sizeof(float)); }
    void expect_magic(const char m[4]) {
        char got[4];
        raw(got, 4);
        if (std::memcmp(got, m, 4) != 0) throw FormatError(path + ": bad magic");
    }
    void done() const {
        if (off != buf.size()) throw FormatError(path + ": trailing bytes after payload");
    }
};

constexpr char kBackboneMagic[4] = {'M', 'D', 'B', 'B'};
constexpr char kDeltaMagic[4] = {'M', 'D', 'M', 'K'};
constexpr char kResumeMagic[4] = {'M', 'D', 'R', 'M'};
constexpr uint16_t kFormatVersion = 1;

struct MaskedEntry {
    uint32_t layer_index = 0;
    uint32_t numel = 0;
    uint32_t k_count = 0;
    uint8_t learned_flags = 0;
    uint8_t bn_follows = 0;
};

struct BnEntry {
    uint32_t layer_index = 0;
    uint32_t channels = 0;
};

struct DeltaHeader {
    MaskTransformConfig cfg;
    std::string name;
    uint16_t num_classes = 0;
    uint64_t digest = 0;
    uint32_t head_out = 0, head_in = 0;
    uint64_t payload_bits = 0;
    std::vector<MaskedEntry> masked;
    std::vector<BnEntry> bns;
};

DeltaHeader read_delta_header(ByteReader& r) {
    r.expect_magic(kDeltaMagic);
    const auto version = r.pod<uint16_t>();
    if (version != kFormatVersion)
        throw FormatError(r.path + ": unsupported version " + std::to_string(version));
    DeltaHeader h;
    h.cfg.variant = static_cast<Variant>(r.pod<uint8_t>());
    h.cfg.surrogate = static_cast<Surrogate>(r.pod<uint8_t>());
    h.cfg.granularity = static_cast<Granularity>(r.pod<uint8_t>());
    r.pod<uint8_t>(); // flags, reserved
    h.name = r.str16();
    h.num_classes = r.pod<uint16_t>();
    h.digest = r.pod<uint64_t>();
    const auto n_masked = r.pod<uint32_t>();
    const auto n_bn = r.pod<uint32_t>();
    h.head_out = r.pod<uint32_t>();
    h.head_in = r.pod<uint32_t>();
    h.payload_bits = r.pod<uint64_t>();
    for (uint32_t i = 0; i < n_masked; ++i) {
        MaskedEntry e;
        e.layer_index = r.pod<uint32_t>();
        e.numel = r.pod<uint32_t>();
        e.k_count = r.pod<uint32_t>();
        e.learned_flags = r.pod<uint8_t>();
        e.bn_follows = r.pod<uint8_t>();
        r.pod<uint16_t>(); // reserved
        h.masked.push_back(e);
    }
    for (uint32_t i = 0; i < n_bn; ++i) {
        BnEntry e;
        e.layer_index = r.pod<uint32_t>();
        e.channels = r.pod<uint32_t>();
        h.bns.push_back(e);
    }
    return h;
}

uint8_t learned_flags_of(const AffineScalars& k) {
    uint8_t f = 0;
    const KParam* ks[4] = {&k.k0, &k.k1, &k.k2, &k.k3};
    for (int j = 0; j < 4; ++j)
        if (ks[j]->learned) f |= static_cast<uint8_t>(1u << j);
    return f;
}

} // namespace

void save_backbone(const Backbone& bb, const std::string& path) {
    ByteWriter w;
    w.raw(kBackboneMagic, 4);
    w.pod<uint16_t>(kFormatVersion);
    w.pod<uint16_t>(static_cast<uint16_t>(bb.head_classes));
    w.str32(bb.arch.to_text());
    w.pod<uint64_t>(bb.digest());
    for (const auto& l : bb.layers) {
        if (l.w) w.floats(l.w->data);
        if (l.b) w.floats(l.b->data);
        if (l.gamma) {
            w.floats(l.gamma->data);
            w.floats(l.beta->data);
            w.floats(l.running_mean->data);
            w.floats(l.running_var->data);
        }
    }
    if (bb.head_classes > 0) {
        w.floats(bb.head_w->data);
        w.floats(bb.head_b->data);
    }
    w.finish(path);
}

Backbone load_backbone(const std::string& path) {
    ByteReader r(path);
    r.expect_magic(kBackboneMagic);
    const auto version = r.pod<uint16_t>();
    if (version != kFormatVersion)
        throw FormatError(path + ": unsupported version " + std::to_string(version));
    const auto head_classes = r.pod<uint16_t>();
    const std::string arch_text = r.str32();
    const auto stored_digest = r.pod<uint64_t>();

    Backbone bb = build_backbone(ArchSpec::parse(arch_text), 0);
    for (auto& l : bb.layers) {
        if (l.w) r.floats(l.w->data);
        if (l.b) r.floats(l.b->data);
        if (l.gamma) {
            r.floats(l.gamma->data);
            r.floats(l.beta->data);
            r.floats(l.running_mean->data);
            r.floats(l.running_var->data);
        }
    }
    if (head_classes > 0) {
        bb.head_classes = head_classes;
        bb.head_w = Tensor::make({head_classes, bb.feature_dim});
        bb.head_b = Tensor::make({head_classes});
        r.floats(bb.head_w->data);
        r.floats(bb.head_b->data);
    }
    r.done();
    bb.freeze();
    if (bb.digest() != stored_digest)
        throw FormatError(path + ": content digest mismatch (corrupt checkpoint)");
    return bb;
}

void save_domain(const DomainParams& dp, const Backbone& bb, const std::string& path) {
    validate_domain(bb, dp);
    ByteWriter w;
    w.raw(kDeltaMagic, 4);
    w.pod<uint16_t>(kFormatVersion);
    w.pod<uint8_t>(static_cast<uint8_t>(dp.cfg.variant));
    w.pod<uint8_t>(static_cast<uint8_t>(dp.cfg.surrogate));
    w.pod<uint8_t>(static_cast<uint8_t>(dp.cfg.granularity));
    w.pod<uint8_t>(0);
    w.str16(dp.name);
    w.pod<uint16_t>(static_cast<uint16_t>(dp.num_classes));
    w.pod<uint64_t>(bb.digest());
    w.pod<uint32_t>(static_cast<uint32_t>(dp.masked.size()));
    w.pod<uint32_t>(static_cast<uint32_t>(dp.bn.size()));
    w.pod<uint32_t>(static_cast<uint32_t>(dp.head_w->dim(0)));
    w.pod<uint32_t>(static_cast<uint32_t>(dp.head_w->dim(1)));
    w.pod<uint64_t>(static_cast<uint64_t>(count_domain_bits(dp, bb)));

    for (const auto& ml : dp.masked) {
        const auto& l = bb.layers[static_cast<size_t>(ml.layer_index)];
        w.pod<uint32_t>(static_cast<uint32_t>(ml.layer_index));
        w.pod<uint32_t>(static_cast<uint32_t>(l.w->numel()));
        w.pod<uint32_t>(static_cast<uint32_t>(ml.k.k0.value->numel()));
        w.pod<uint8_t>(learned_flags_of(ml.k));
        w.pod<uint8_t>(l.followed_by_bn ? 1 : 0);
        w.pod<uint16_t>(0);
    }
    for (const auto& dbn : dp.bn) {
        w.pod<uint32_t>(static_cast<uint32_t>(dbn.layer_index));
        w.pod<uint32_t>(static_cast<uint32_t>(dbn.gamma->numel()));
    }

    // Payload: the deployable delta (masks, learned scalars, BN).
    for (const auto& ml : dp.masked) {
        const auto packed = pack_mask(dp.binary_mask(ml));
        w.raw(packed.data(), packed.size());
        const KParam* ks[4] = {&ml.k.k0, &ml.k.k1, &ml.k.k2, &ml.k.k3};
        for (int j = 0; j < 4; ++j)
            if (ks[j]->learned) w.floats(ks[j]->value->data);
    }
    for (const auto& dbn : dp.bn) {
        w.floats(dbn.gamma->data);
        w.floats(dbn.beta->data);
        w.floats(dbn.running_mean->data);
        w.floats(dbn.running_var->data);
    }

    // Classifier section (excluded from overhead accounting).
    w.floats(dp.head_w->data);
    w.floats(dp.head_b->data);
    w.finish(path);
}

DomainParams load_domain(const std::string& path, const Backbone& bb) {
    ByteReader r(path);
    DeltaHeader h = read_delta_header(r);
    if (h.digest != bb.digest())
        throw FormatError(path + ": backbone digest mismatch (delta belongs to another backbone)");

    DomainParams dp;
    dp.name = h.name;
    dp.cfg = h.cfg;
    dp.num_classes = h.num_classes;

    for (const auto& e : h.masked) {
        if (e.layer_index >= bb.layers.size())
            throw FormatError(path + ": mask layer index out of range");
        const auto& l = bb.layers[e.layer_index];
        if (!l.w || l.w->numel() != static_cast<int64_t>(e.numel))
            throw FormatError(path + ": mask size does not match backbone layer");

        DomainParams::MaskedLayer ml;
        ml.layer_index = static_cast<int>(e.layer_index);
        std::vector<uint8_t> packed((e.numel + 7) / 8);
        r.raw(packed.data(), packed.size());
        ml.mask_bits = unpack_mask(packed, l.w->shape).to_tensor();

        ml.k = AffineScalars::for_layer(h.cfg, static_cast<int>(e.k_count), e.bn_follows != 0);
        if (learned_flags_of(ml.k) != e.learned_flags)
            throw FormatError(path + ": learned-scalar layout does not match variant");
        KParam* ks[4] = {&ml.k.k0, &ml.k.k1, &ml.k.k2, &ml.k.k3};
        for (int j = 0; j < 4; ++j)
            if (ks[j]->learned) r.floats(ks[j]->value->data);
        dp.masked.push_back(std::move(ml));
    }
    for (const auto& e : h.bns) {
        if (e.layer_index >= bb.layers.size())
            throw FormatError(path + ": BN layer index out of range");
        DomainParams::DomainBN dbn;
        dbn.layer_index = static_cast<int>(e.layer_index);
        dbn.gamma = Tensor::make({static_cast<int>(e.channels)}, true);
        dbn.beta = Tensor::make({static_cast<int>(e.channels)}, true);
        dbn.running_mean = Tensor::make({static_cast<int>(e.channels)});
        dbn.running_var = Tensor::make({static_cast<int>(e.channels)});
        r.floats(dbn.gamma->data);
        r.floats(dbn.beta->data);
        r.floats(dbn.running_mean->data);
        r.floats(dbn.running_var->data);
        dp.bn.push_back(std::move(dbn));
    }
    dp.head_w = Tensor::make({static_cast<int>(h.head_out), static_cast<int>(h.head_in)}, true);
    dp.head_b = Tensor::make({static_cast<int>(h.head_out)}, true);
    r.floats(dp.head_w->data);
    r.floats(dp.head_b->data);
    r.done();
    validate_domain(bb, dp);
    return dp;
}

DeltaInfo read_delta_info(const std::string& path) {
    ByteReader r(path);
    DeltaHeader h = read_delta_header(r);
    DeltaInfo info;
    info.name = h.name;
    info.cfg = h.cfg;
    info.num_classes = h.num_classes;
    info.backbone_digest = h.digest;
    info.payload_bits = static_cast<int64_t>(h.payload_bits);
    return info;
}

int64_t delta_payload_bytes(const std::string& path) {
    ByteReader r(path);
    DeltaHeader h = read_delta_header(r);
    int64_t bytes = 0;
    for (const auto& e : h.masked) {
        bytes += (e.numel + 7) / 8;
        for (int j = 0; j < 4; ++j)
            if (e.learned_flags & (1u << j)) bytes += 4 * static_cast<int64_t>(e.k_count);
    }
    for (const auto& e : h.bns) bytes += 4 * 4 * static_cast<int64_t>(e.channels);
    return bytes;
}

std::vector<MaskAnalysisRow> inspect_delta(const std::string& path) {
    ByteReader r(path);
    DeltaHeader h = read_delta_header(r);
    std::vector<MaskAnalysisRow> rows;
    for (const auto& e : h.masked) {
        std::vector<uint8_t> packed((e.numel + 7) / 8);
        r.raw(packed.data(), packed.size());
        const BinaryMask m = unpack_mask(packed, {static_cast<int>(e.numel)});

        auto k = AffineScalars::for_layer(h.cfg, static_cast<int>(e.k_count), e.bn_follows != 0);
        KParam* ks[4] = {&k.k0, &k.k1, &k.k2, &k.k3};
        for (int j = 0; j < 4; ++j)
            if (ks[j]->learned) r.floats(ks[j]->value->data);

        auto mean_of = [](const KParam& kp) {
            double s = 0.0;
            for (float v : kp.value->data) s += v;
            return static_cast<float>(s / static_cast<double>(kp.value->numel()));
        };
        MaskAnalysisRow row;
        row.layer_index = static_cast<int>(e.layer_index);
        row.density_pct = density(m);
        row.k1 = mean_of(k.k1);
        row.k2 = mean_of(k.k2);
        row.k3 = mean_of(k.k3);
        rows.push_back(row);
    }
    return rows;
}

void save_real_masks(const DomainParams& dp, const Backbone& bb, const std::string& path) {
    ByteWriter w;
    w.raw(kResumeMagic, 4);
    w.pod<uint16_t>(kFormatVersion);
    w.str16(dp.name);
    w.pod<uint64_t>(bb.digest());
    w.pod<uint32_t>(static_cast<uint32_t>(dp.masked.size()));
    for (const auto& ml : dp.masked) {
        if (!ml.real_mask)
            throw ConfigError("save_real_masks: domain has no real-valued masks");
        w.pod<uint32_t>(static_cast<uint32_t>(ml.layer_index));
        w.pod<uint32_t>(static_cast<uint32_t>(ml.real_mask->numel()));
        w.floats(ml.real_mask->data);
    }
    w.finish(path);
}

void load_real_masks(DomainParams& dp, const Backbone& bb, const std::string& path) {
    ByteReader r(path);
    r.expect_magic(kResumeMagic);
    const auto version = r.pod<uint16_t>();
    if (version != kFormatVersion)
        throw FormatError(path + ": unsupported version " + std::to_string(version));
    const std::string name = r.str16();
    if (name != dp.name) throw FormatError(path + ": mask checkpoint is for domain '" + name + "'");
    const auto digest = r.pod<uint64_t>();
    if (digest != bb.digest()) throw FormatError(path + ": backbone digest mismatch");
    const auto n = r.pod<uint32_t>();
    if (n != dp.masked.size()) throw FormatError(path + ": masked-layer count mismatch");
    for (auto& ml : dp.masked) {
        const auto layer_index = r.pod<uint32_t>();
        const auto numel = r.pod<uint32_t>();
        const auto& l = bb.layers[static_cast<size_t>(ml.layer_index)];
        if (layer_index != static_cast<uint32_t>(ml.layer_index) ||
            numel != static_cast<uint32_t>(l.w->numel()))
            throw FormatError(path + ": layer layout mismatch");
        auto t = Tensor::make(l.w->shape, true);
        r.floats(t->data);
        ml.real_mask = t;
    }
    r.done();
}

} // namespace mdmask
