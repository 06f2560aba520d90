#include "mdmask/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "mdmask/rng.hpp"

namespace mdmask {

namespace {

constexpr int kSide = 16;

float clip01(float v) { return v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v); }

void add_noise(std::vector<float>& img, float sigma, Rng& rng) {
    if (sigma <= 0.0f) return;
    for (auto& p : img) p = clip01(p + sigma * rng.normal());
}

// Gaussian-bump class prototypes; samples are prototype + pixel noise.
struct BlobsFamily {
    struct Proto {
        float cx[2], cy[2], amp[2], inv2s2[2];
    };
    std::vector<Proto> protos;

    BlobsFamily(int num_classes, Rng& rng) {
        for (int k = 0; k < num_classes; ++k) {
            Proto p;
            for (int b = 0; b < 2; ++b) {
                p.cx[b] = rng.uniform(3.0f, 12.0f);
                p.cy[b] = rng.uniform(3.0f, 12.0f);
                p.amp[b] = rng.uniform(0.6f, 1.0f);
                const float s = rng.uniform(1.5f, 3.5f);
                p.inv2s2[b] = 1.0f / (2.0f * s * s);
            }
            protos.push_back(p);
        }
    }

    std::vector<float> prototype(int k) const {
        const Proto& p = protos[static_cast<size_t>(k)];
        std::vector<float> img(kSide * kSide, 0.0f);
        for (int y = 0; y < kSide; ++y)
            for (int x = 0; x < kSide; ++x) {
                float v = 0.0f;
                for (int b = 0; b < 2; ++b) {
                    const float dx = static_cast<float>(x) - p.cx[b];
                    const float dy = static_cast<float>(y) - p.cy[b];
                    v += p.amp[b] * std::exp(-(dx * dx + dy * dy) * p.inv2s2[b]);
                }
                img[static_cast<size_t>(y) * kSide + x] = clip01(v);
            }
        return img;
    }

    std::vector<float> sample(int k, float sigma, Rng& rng) const {
        auto img = prototype(k);
        add_noise(img, sigma, rng);
        return img;
    }
};

// Oriented line through a jittered center; class = angle bucket.
std::vector<float> bars_sample(int k, int num_classes, float sigma, Rng& rng) {
    std::vector<float> img(kSide * kSide, 0.0f);
    const float theta = 3.14159265f * static_cast<float>(k) / static_cast<float>(num_classes);
    const float nx = -std::sin(theta), ny = std::cos(theta); // line normal
    const float cx = 7.5f + rng.uniform(-1.5f, 1.5f);
    const float cy = 7.5f + rng.uniform(-1.5f, 1.5f);
    const float thickness = 1.2f;
    for (int y = 0; y < kSide; ++y)
        for (int x = 0; x < kSide; ++x) {
            const float d = std::abs((static_cast<float>(x) - cx) * nx +
                                     (static_cast<float>(y) - cy) * ny);
            img[static_cast<size_t>(y) * kSide + x] = clip01(1.0f - d / thickness);
        }
    add_noise(img, sigma, rng);
    return img;
}

// Procedural seven-segment glyphs with positional jitter.
// Segment order: a top, b top-right, c bottom-right, d bottom, e
// bottom-left, f top-left, g middle.
constexpr uint8_t kSegments[10] = {
    0b0111111, // 0: abcdef
    0b0000110, // 1: bc
    0b1011011, // 2: abdeg
    0b1001111, // 3: abcdg
    0b1100110, // 4: bcfg
    0b1101101, // 5: acdfg
    0b1111101, // 6: acdefg
    0b0000111, // 7: abc
    0b1111111, // 8
    0b1101111, // 9: abcdfg
};

void draw_rect(std::vector<float>& img, int x0, int y0, int x1, int y1, float v) {
    for (int y = std::max(0, y0); y <= std::min(kSide - 1, y1); ++y)
        for (int x = std::max(0, x0); x <= std::min(kSide - 1, x1); ++x)
            img[static_cast<size_t>(y) * kSide + x] = v;
}

std::vector<float> digit_sample(int digit, float sigma, Rng& rng) {
    std::vector<float> img(kSide * kSide, 0.0f);
    const int ox = 4 + static_cast<int>(rng.next_below(4)) - 1; // jitter -1..+2
    const int oy = 2 + static_cast<int>(rng.next_below(3));     // jitter 0..+2
    const float v = rng.uniform(0.7f, 1.0f);
    const uint8_t seg = kSegments[digit];
    const int w = 6, hh = 5; // half height
    if (seg & 0b0000001) draw_rect(img, ox, oy, ox + w, oy + 1, v);                    // a
    if (seg & 0b0000010) draw_rect(img, ox + w - 1, oy, ox + w, oy + hh, v);           // b
    if (seg & 0b0000100) draw_rect(img, ox + w - 1, oy + hh, ox + w, oy + 2 * hh, v);  // c
    if (seg & 0b0001000) draw_rect(img, ox, oy + 2 * hh - 1, ox + w, oy + 2 * hh, v);  // d
    if (seg & 0b0010000) draw_rect(img, ox, oy + hh, ox + 1, oy + 2 * hh, v);          // e
    if (seg & 0b0100000) draw_rect(img, ox, oy, ox + 1, oy + hh, v);                   // f
    if (seg & 0b1000000) draw_rect(img, ox, oy + hh - 1, ox + w, oy + hh, v);          // g
    add_noise(img, sigma, rng);
    return img;
}

struct FamilyRef {
    std::string base;
    bool inverted = false;
    bool rotated = false;
};

FamilyRef resolve_family(const std::string& family) {
    FamilyRef ref;
    std::string f = family;
    if (f == "inverted-digits") f = "inverted:digits-lite";
    if (f == "rotated-bars") f = "rotated:bars";
    while (true) {
        if (f.rfind("inverted:", 0) == 0) {
            ref.inverted = !ref.inverted;
            f = f.substr(9);
        } else if (f.rfind("rotated:", 0) == 0) {
            ref.rotated = !ref.rotated;
            f = f.substr(8);
        } else {
            break;
        }
    }
    if (f != "blobs" && f != "bars" && f != "digits-lite")
        throw ConfigError("unknown dataset family '" + family + "'");
    ref.base = f;
    return ref;
}

float default_noise(const std::string& base) {
    if (base == "blobs") return 0.25f;
    if (base == "bars") return 0.30f;
    return 0.22f; // digits-lite
}

// Rotate 90 degrees clockwise (square images).
std::vector<float> rotate90(const std::vector<float>& img) {
    std::vector<float> out(img.size());
    for (int y = 0; y < kSide; ++y)
        for (int x = 0; x < kSide; ++x)
            out[static_cast<size_t>(x) * kSide + (kSide - 1 - y)] =
                img[static_cast<size_t>(y) * kSide + x];
    return out;
}

DataSplit generate_split(const FamilyRef& ref, const BlobsFamily* blobs, int num_classes, int n,
                         float sigma, Rng rng) {
    // Round-robin labels (exact balance within +-1), then shuffled order.
    std::vector<int> labels(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) labels[static_cast<size_t>(i)] = i % num_classes;
    rng.shuffle(labels);

    DataSplit split;
    split.labels = labels;
    split.images.reserve(static_cast<size_t>(n) * kSide * kSide);
    for (int i = 0; i < n; ++i) {
        const int k = labels[static_cast<size_t>(i)];
        std::vector<float> img;
        if (ref.base == "blobs")
            img = blobs->sample(k, sigma, rng);
        else if (ref.base == "bars")
            img = bars_sample(k, num_classes, sigma, rng);
        else
            img = digit_sample(k, sigma, rng);
        if (ref.rotated) img = rotate90(img);
        if (ref.inverted)
            for (auto& p : img) p = 1.0f - p;
        split.images.insert(split.images.end(), img.begin(), img.end());
    }
    return split;
}

} // namespace

DomainDataset generate(const std::string& family, int num_classes, int n_train, int n_test,
                       uint64_t seed, const GenOptions& opts) {
    if (num_classes < 2) throw ConfigError("generate: num_classes must be >= 2");
    if (n_train < 0 || n_test < 0) throw ConfigError("generate: negative split size");
    const FamilyRef ref = resolve_family(family);
    if (ref.base == "digits-lite" && num_classes > 10)
        throw ConfigError("digits-lite supports at most 10 classes");
    const float sigma = opts.noise.value_or(default_noise(ref.base));

    Rng root(seed);
    // Prototypes are drawn once so train and test share them.
    std::optional<BlobsFamily> blobs;
    if (ref.base == "blobs") blobs.emplace(num_classes, root);

    DomainDataset ds;
    ds.name = family;
    ds.num_classes = num_classes;
    ds.height = kSide;
    ds.width = kSide;
    ds.seed = seed;
    ds.train = generate_split(ref, blobs ? &*blobs : nullptr, num_classes, n_train, sigma,
                              root.fork(0));
    ds.test = generate_split(ref, blobs ? &*blobs : nullptr, num_classes, n_test, sigma,
                             root.fork(1));
    return ds;
}

std::vector<DomainDataset> make_suite(const std::string& suite, int n_train, int n_test,
                                      uint64_t base_seed) {
    struct Entry {
        const char* family;
        int classes;
        uint64_t salt;
    };
    std::vector<Entry> entries;
    if (suite == "mds-3" || suite == "mds-5") {
        entries = {{"blobs", 4, 1}, {"bars", 4, 2}, {"digits-lite", 10, 3}};
        if (suite == "mds-5") {
            entries.push_back({"inverted-digits", 10, 4});
            entries.push_back({"rotated-bars", 4, 5});
        }
    } else {
        throw ConfigError("unknown suite '" + suite + "' (expected mds-3 or mds-5)");
    }
    std::vector<DomainDataset> out;
    for (const auto& e : entries)
        out.push_back(generate(e.family, e.classes, n_train, n_test, base_seed + e.salt));
    return out;
}

namespace {

constexpr char kMagic[4] = {'M', 'D', 'L', 'D'};
constexpr uint16_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(const std::vector<char>& buf, size_t& off, const std::string& path) {
    if (off + sizeof(T) > buf.size()) throw FormatError(path + ": truncated file");
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

} // namespace

void save_raw(const DataSplit& split, int num_classes, int height, int width,
              const std::string& path) {
    if (split.images.size() !=
        static_cast<size_t>(split.size()) * static_cast<size_t>(height) * width)
        throw DimensionError("save_raw: image buffer does not match item count");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    out.write(kMagic, 4);
    write_pod<uint16_t>(out, kVersion);
    write_pod<uint16_t>(out, static_cast<uint16_t>(num_classes));
    write_pod<uint32_t>(out, static_cast<uint32_t>(split.size()));
    write_pod<uint16_t>(out, static_cast<uint16_t>(height));
    write_pod<uint16_t>(out, static_cast<uint16_t>(width));
    const size_t px = static_cast<size_t>(height) * width;
    for (int64_t i = 0; i < split.size(); ++i) {
        write_pod<uint16_t>(out, static_cast<uint16_t>(split.labels[static_cast<size_t>(i)]));
        out.write(reinterpret_cast<const char*>(split.images.data() + i * px),
                  static_cast<std::streamsize>(px * sizeof(float)));
    }
    if (!out) throw FormatError("write failed for '" + path + "'");
}

DomainDataset load_raw(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "'");
    std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    size_t off = 0;
    char magic[4];
    if (buf.size() < 4) throw FormatError(path + ": truncated file");
    std::memcpy(magic, buf.data(), 4);
    off = 4;
    if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError(path + ": bad magic");
    const auto version = read_pod<uint16_t>(buf, off, path);
    if (version != kVersion) throw FormatError(path + ": unsupported version");
    const auto num_classes = read_pod<uint16_t>(buf, off, path);
    const auto n_items = read_pod<uint32_t>(buf, off, path);
    const auto h = read_pod<uint16_t>(buf, off, path);
    const auto w = read_pod<uint16_t>(buf, off, path);
    const size_t px = static_cast<size_t>(h) * w;
    const size_t expected = off + static_cast<size_t>(n_items) * (2 + px * sizeof(float));
    if (buf.size() < expected) throw FormatError(path + ": truncated payload");
    if (buf.size() > expected) throw FormatError(path + ": trailing bytes after payload");

    DomainDataset ds;
    std::filesystem::path p(path);
    ds.name = p.stem().string();
    ds.num_classes = num_classes;
    ds.height = h;
    ds.width = w;
    ds.train.images.resize(static_cast<size_t>(n_items) * px);
    ds.train.labels.resize(n_items);
    for (uint32_t i = 0; i < n_items; ++i) {
        const auto label = read_pod<uint16_t>(buf, off, path);
        if (label >= num_classes)
            throw FormatError(path + ": label " + std::to_string(label) + " out of range");
        ds.train.labels[i] = label;
        std::memcpy(ds.train.images.data() + static_cast<size_t>(i) * px, buf.data() + off,
                    px * sizeof(float));
        off += px * sizeof(float);
    }
    return ds;
}

void save_dataset(const DomainDataset& ds, const std::string& prefix) {
    save_raw(ds.train, ds.num_classes, ds.height, ds.width, prefix + ".train.mdld");
    save_raw(ds.test, ds.num_classes, ds.height, ds.width, prefix + ".test.mdld");
}

DomainDataset load_dataset(const std::string& prefix) {
    DomainDataset tr = load_raw(prefix + ".train.mdld");
    DomainDataset te = load_raw(prefix + ".test.mdld");
    if (tr.num_classes != te.num_classes || tr.height != te.height || tr.width != te.width)
        throw FormatError(prefix + ": train/test headers disagree");
    DomainDataset ds = std::move(tr);
    ds.test = std::move(te.train);
    std::filesystem::path p(prefix);
    ds.name = p.filename().string();
    return ds;
}

} // namespace mdmask
