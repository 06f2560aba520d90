#include "mdmask/arch.hpp"

#include <fstream>
#include <sstream>

namespace mdmask {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, sep)) out.push_back(part);
    return out;
}

int parse_int(const std::string& s, const std::string& what) {
    try {
        size_t pos = 0;
        const int v = std::stoi(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("arch: bad integer '" + s + "' in " + what);
    }
}

LayerSpec parse_layer(const std::string& value) {
    const auto parts = split(value, ':');
    const std::string& kind = parts[0];
    LayerSpec l;
    if (kind == "conv") {
        if (parts.size() != 5) throw ConfigError("arch: conv needs cout:kernel:stride:pad, got '" + value + "'");
        l.kind = LayerKind::Conv;
        l.channels = parse_int(parts[1], "conv cout");
        l.kernel = parse_int(parts[2], "conv kernel");
        l.stride = parse_int(parts[3], "conv stride");
        l.pad = parse_int(parts[4], "conv pad");
        if (l.channels < 1 || l.kernel < 1 || l.stride < 1 || l.pad < 0)
            throw ConfigError("arch: invalid conv spec '" + value + "'");
    } else if (kind == "bn") {
        l.kind = LayerKind::BatchNorm;
    } else if (kind == "relu") {
        l.kind = LayerKind::Relu;
    } else if (kind == "pool") {
        if (parts.size() != 2) throw ConfigError("arch: pool needs a window size, got '" + value + "'");
        l.kind = LayerKind::MaxPool;
        l.pool = parse_int(parts[1], "pool window");
        if (l.pool < 1) throw ConfigError("arch: invalid pool window in '" + value + "'");
    } else if (kind == "dense") {
        if (parts.size() != 2) throw ConfigError("arch: dense needs an output size, got '" + value + "'");
        l.kind = LayerKind::Dense;
        l.channels = parse_int(parts[1], "dense out");
        if (l.channels < 1) throw ConfigError("arch: invalid dense spec '" + value + "'");
    } else {
        throw ConfigError("arch: unknown layer kind '" + kind + "'");
    }
    return l;
}

} // namespace

ArchSpec ArchSpec::parse(const std::string& text, const std::string& name) {
    ArchSpec spec;
    spec.name = name;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("arch: expected key=value, got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "input") {
            const auto dims = split(value, 'x');
            if (dims.size() != 3) throw ConfigError("arch: input must be CxHxW, got '" + value + "'");
            spec.in_c = parse_int(dims[0], "input channels");
            spec.in_h = parse_int(dims[1], "input height");
            spec.in_w = parse_int(dims[2], "input width");
        } else if (key == "name") {
            spec.name = value;
        } else if (key == "layer") {
            spec.layers.push_back(parse_layer(value));
        } else {
            throw ConfigError("arch: unknown key '" + key + "'");
        }
    }
    if (spec.in_c < 1 || spec.in_h < 1 || spec.in_w < 1)
        throw ConfigError("arch: missing or invalid input=CxHxW line");
    if (spec.layers.empty()) throw ConfigError("arch: no layers");
    return spec;
}

ArchSpec ArchSpec::preset(const std::string& name) {
    if (name == "smallnet") {
        return parse(
            "input=1x16x16\n"
            "layer=conv:8:3:1:1\n"
            "layer=bn\n"
            "layer=relu\n"
            "layer=pool:2\n"
            "layer=conv:16:3:1:1\n"
            "layer=bn\n"
            "layer=relu\n"
            "layer=pool:2\n",
            "smallnet");
    }
    if (name == "tinynet") {
        return parse(
            "input=1x16x16\n"
            "layer=conv:4:3:1:1\n"
            "layer=bn\n"
            "layer=relu\n"
            "layer=pool:2\n",
            "tinynet");
    }
    throw ConfigError("unknown arch preset '" + name + "'");
}

ArchSpec ArchSpec::load(const std::string& name_or_path) {
    if (name_or_path == "smallnet" || name_or_path == "tinynet") return preset(name_or_path);
    std::ifstream in(name_or_path);
    if (!in) throw ConfigError("cannot open arch spec '" + name_or_path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    std::string stem = name_or_path;
    const auto slash = stem.find_last_of("/\\");
    if (slash != std::string::npos) stem = stem.substr(slash + 1);
    const auto dot = stem.rfind('.');
    if (dot != std::string::npos) stem = stem.substr(0, dot);
    return parse(ss.str(), stem);
}

std::string ArchSpec::to_text() const {
    std::ostringstream os;
    os << "name=" << name << "\n";
    os << "input=" << in_c << "x" << in_h << "x" << in_w << "\n";
    for (const auto& l : layers) {
        os << "layer=";
        switch (l.kind) {
            case LayerKind::Conv:
                os << "conv:" << l.channels << ":" << l.kernel << ":" << l.stride << ":" << l.pad;
                break;
            case LayerKind::BatchNorm: os << "bn"; break;
            case LayerKind::Relu: os << "relu"; break;
            case LayerKind::MaxPool: os << "pool:" << l.pool; break;
            case LayerKind::Dense: os << "dense:" << l.channels; break;
        }
        os << "\n";
    }
    return os.str();
}

} // namespace mdmask
