#include "hunet/manifest.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace hunet {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

[[noreturn]] void fail(int line_no, const std::string& what) {
    throw std::invalid_argument("manifest line " + std::to_string(line_no) + ": " + what);
}

long long parse_int(const std::string& v, int line_no) {
    long long out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) fail(line_no, "expected integer, got '" + v + "'");
    return out;
}

double parse_double(const std::string& v, int line_no) {
    try {
        std::size_t pos = 0;
        const double out = std::stod(v, &pos);
        if (pos != v.size()) fail(line_no, "expected number, got '" + v + "'");
        return out;
    } catch (const std::invalid_argument&) {
        fail(line_no, "expected number, got '" + v + "'");
    } catch (const std::out_of_range&) {
        fail(line_no, "number out of range: '" + v + "'");
    }
}

bool parse_bool(const std::string& v, int line_no) {
    if (v == "true" || v == "on" || v == "1") return true;
    if (v == "false" || v == "off" || v == "0") return false;
    fail(line_no, "expected boolean (true/false), got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(v);
    while (std::getline(in, item, ',')) out.push_back(trim(item));
    return out;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace

Manifest parse_manifest(const std::string& text) {
    Manifest m;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = trim(raw);
        if (line.empty() || line[0] == '#') continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail(line_no, "malformed section header '" + line + "'");
            section = line.substr(1, line.size() - 2);
            if (section != "model" && section != "train" && section != "data")
                fail(line_no, "unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail(line_no, "expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) fail(line_no, "empty key");
        if (section.empty()) fail(line_no, "key '" + key + "' appears before any section");

        if (section == "model") {
            if (key == "levels") m.model.levels = static_cast<int>(parse_int(value, line_no));
            else if (key == "channels") {
                m.model.channels.clear();
                for (const auto& item : split_list(value))
                    m.model.channels.push_back(static_cast<int>(parse_int(item, line_no)));
            } else if (key == "bottleneck") m.model.bottleneck = static_cast<int>(parse_int(value, line_no));
            else if (key == "block_depth") m.model.block_depth = static_cast<int>(parse_int(value, line_no));
            else if (key == "pooling") m.model.pooling = pool_kind_from_string(value);
            else if (key == "residual") m.model.residual = parse_bool(value, line_no);
            else if (key == "attention_gates") m.model.attention_gates = parse_bool(value, line_no);
            else if (key == "in_channels") m.model.in_channels = static_cast<int>(parse_int(value, line_no));
            else if (key == "classes") m.model.classes = static_cast<int>(parse_int(value, line_no));
            else if (key == "gn_groups") m.model.gn_groups = static_cast<int>(parse_int(value, line_no));
            else if (key == "leaky_slope") m.model.leaky_slope = parse_double(value, line_no);
            else fail(line_no, "unknown key '" + key + "' in section [model]");
        } else if (section == "train") {
            if (key == "epochs") m.train.epochs = static_cast<int>(parse_int(value, line_no));
            else if (key == "batch") m.train.batch = static_cast<int>(parse_int(value, line_no));
            else if (key == "lr") m.train.lr = parse_double(value, line_no);
            else if (key == "loss") m.train.loss = loss_kind_from_string(value);
            else if (key == "beta1") m.train.beta1 = parse_double(value, line_no);
            else if (key == "beta2") m.train.beta2 = parse_double(value, line_no);
            else if (key == "adam_eps") m.train.adam_eps = parse_double(value, line_no);
            else if (key == "seed") m.train.seed = static_cast<std::uint64_t>(parse_int(value, line_no));
            else if (key == "eval_every") m.train.eval_every = static_cast<int>(parse_int(value, line_no));
            else fail(line_no, "unknown key '" + key + "' in section [train]");
        } else {  // data
            if (key == "count") m.data.count = static_cast<int>(parse_int(value, line_no));
            else if (key == "size") m.data.size = static_cast<int>(parse_int(value, line_no));
            else if (key == "shapes") {
                m.data.shapes.clear();
                for (const auto& item : split_list(value)) {
                    if (item == "ellipse") m.data.shapes.push_back(ShapeKind::ellipse);
                    else if (item == "rectangle") m.data.shapes.push_back(ShapeKind::rectangle);
                    else fail(line_no, "unknown shape kind '" + item + "'");
                }
            } else if (key == "noise") m.data.noise_sigma = parse_double(value, line_no);
            else if (key == "hair") m.data.hair_strokes = parse_bool(value, line_no);
            else if (key == "gradient") m.data.intensity_gradient = parse_bool(value, line_no);
            else if (key == "seed") m.data.seed = static_cast<std::uint64_t>(parse_int(value, line_no));
            else fail(line_no, "unknown key '" + key + "' in section [data]");
        }
    }
    return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_manifest(buf.str());
}

std::string manifest_to_text(const Manifest& m) {
    std::string s;
    s += "[model]\n";
    s += "levels = " + std::to_string(m.model.levels) + "\n";
    std::string channels;
    for (int c : m.model.channels) {
        if (!channels.empty()) channels += ",";
        channels += std::to_string(c);
    }
    s += "channels = " + channels + "\n";
    s += "bottleneck = " + std::to_string(m.model.bottleneck) + "\n";
    s += "block_depth = " + std::to_string(m.model.block_depth) + "\n";
    s += "pooling = " + to_string(m.model.pooling) + "\n";
    s += "residual = " + std::string(m.model.residual ? "true" : "false") + "\n";
    s += "attention_gates = " + std::string(m.model.attention_gates ? "true" : "false") + "\n";
    s += "in_channels = " + std::to_string(m.model.in_channels) + "\n";
    s += "classes = " + std::to_string(m.model.classes) + "\n";
    s += "gn_groups = " + std::to_string(m.model.gn_groups) + "\n";
    s += "leaky_slope = " + fmt_double(m.model.leaky_slope) + "\n";
    s += "\n[train]\n";
    s += "epochs = " + std::to_string(m.train.epochs) + "\n";
    s += "batch = " + std::to_string(m.train.batch) + "\n";
    s += "lr = " + fmt_double(m.train.lr) + "\n";
    s += "loss = " + to_string(m.train.loss) + "\n";
    s += "beta1 = " + fmt_double(m.train.beta1) + "\n";
    s += "beta2 = " + fmt_double(m.train.beta2) + "\n";
    s += "adam_eps = " + fmt_double(m.train.adam_eps) + "\n";
    s += "seed = " + std::to_string(m.train.seed) + "\n";
    s += "eval_every = " + std::to_string(m.train.eval_every) + "\n";
    s += "\n[data]\n";
    s += synthetic_spec_to_text(m.data);
    return s;
}

}  // namespace hunet
