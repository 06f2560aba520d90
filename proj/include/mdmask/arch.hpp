#pragma once

#include <string>
#include <vector>

#include "mdmask/error.hpp"

namespace mdmask {

enum class LayerKind { Conv, BatchNorm, Relu, MaxPool, Dense };

struct LayerSpec {
    LayerKind kind;
    int channels = 0; // conv out-channels / dense out-features
    int kernel = 0;
    int stride = 1;
    int pad = 0;
    int pool = 0;
};

// Plain-text network description (key=value lines):
//   input=1x16x16
//   layer=conv:<cout>:<kernel>:<stride>:<pad>
//   layer=bn | relu | pool:<k> | dense:<out>
// The per-domain classifier head is appended separately and is not part
// of the spec.
struct ArchSpec {
    std::string name;
    int in_c = 0, in_h = 0, in_w = 0;
    std::vector<LayerSpec> layers;

    static ArchSpec parse(const std::string& text, const std::string& name = "custom");
    static ArchSpec preset(const std::string& name); // "smallnet", "tinynet"
    // Preset name or path to a spec file.
    static ArchSpec load(const std::string& name_or_path);

    std::string to_text() const;
};

} // namespace mdmask
