#include "hunet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace hunet {

namespace {

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
    throw std::runtime_error(path.string() + ": " + what);
}

// Skips whitespace and '#' comment lines, then parses a non-negative integer.
int read_pnm_int(std::istream& in, const std::filesystem::path& path, const char* field) {
    int ch = in.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = in.get();
        } else if (!std::isspace(ch)) {
            break;
        }
        ch = in.get();
    }
    if (ch == EOF || !std::isdigit(ch)) fail(path, std::string("malformed header: expected ") + field);
    long value = 0;
    while (ch != EOF && std::isdigit(ch)) {
        value = value * 10 + (ch - '0');
        if (value > 1'000'000) fail(path, std::string("malformed header: ") + field + " out of range");
        ch = in.get();
    }
    if (ch != EOF) in.unget();
    return static_cast<int>(value);
}

struct PnmHeader {
    int channels = 0;
    int width = 0;
    int height = 0;
    std::streampos payload_start;
};

PnmHeader read_pnm_header(std::istream& in, const std::filesystem::path& path) {
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (!in || m0 != 'P' || (m1 != '5' && m1 != '6'))
        fail(path, "malformed header: not a binary PGM (P5) or PPM (P6) file");
    PnmHeader h;
    h.channels = m1 == '5' ? 1 : 3;
    h.width = read_pnm_int(in, path, "width");
    h.height = read_pnm_int(in, path, "height");
    const int maxval = read_pnm_int(in, path, "maxval");
    if (maxval != 255)
        fail(path, "unsupported max value " + std::to_string(maxval) + " (only 8-bit images are supported)");
    const int sep = in.get();
    if (sep == EOF || !std::isspace(sep)) fail(path, "malformed header: missing separator before payload");
    if (h.width < 1 || h.height < 1) fail(path, "malformed header: zero extent");
    h.payload_start = in.tellg();
    return h;
}

std::vector<std::uint8_t> read_payload(std::istream& in, const std::filesystem::path& path,
                                       const PnmHeader& h) {
    const std::size_t expect = static_cast<std::size_t>(h.width) * h.height * h.channels;
    std::vector<std::uint8_t> bytes(expect);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(expect));
    const std::size_t got = static_cast<std::size_t>(in.gcount());
    if (got != expect)
        fail(path, "truncated payload: expected " + std::to_string(expect) + " bytes, file ends at byte " +
                       std::to_string(static_cast<std::size_t>(h.payload_start) + got));
    return bytes;
}

std::uint8_t quantize(float v) {
    const float clamped = std::min(1.0f, std::max(0.0f, v));
    return static_cast<std::uint8_t>(std::lround(clamped * 255.0f));
}

}  // namespace

Tensor<float> load_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path, "cannot open file");
    const PnmHeader h = read_pnm_header(in, path);
    const auto bytes = read_payload(in, path, h);
    Tensor<float> img(Shape{1, h.channels, h.height, h.width});
    // Payload is interleaved rows; tensor is planar per channel.
    for (int y = 0; y < h.height; ++y)
        for (int x = 0; x < h.width; ++x)
            for (int c = 0; c < h.channels; ++c)
                img.at(0, c, y, x) =
                    static_cast<float>(bytes[(static_cast<std::size_t>(y) * h.width + x) * h.channels + c]) / 255.0f;
    return img;
}

BinaryMask load_mask(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path, "cannot open file");
    const PnmHeader h = read_pnm_header(in, path);
    if (h.channels != 1) fail(path, "mask must be a grayscale P5 image");
    const auto bytes = read_payload(in, path, h);
    BinaryMask m(h.height, h.width);
    for (std::size_t i = 0; i < bytes.size(); ++i) m.bits[i] = bytes[i] > 127 ? 1 : 0;
    return m;
}

void save_pnm(const std::filesystem::path& path, const Tensor<float>& image) {
    const int c = image.shape.c;
    if (image.shape.n != 1 || (c != 1 && c != 3))
        throw std::invalid_argument("save_pnm: expected [1,1,h,w] or [1,3,h,w], got " + to_string(image.shape));
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(path, "cannot open file for writing");
    out << (c == 1 ? "P5" : "P6") << "\n" << image.shape.w << " " << image.shape.h << "\n255\n";
    for (int y = 0; y < image.shape.h; ++y)
        for (int x = 0; x < image.shape.w; ++x)
            for (int ch = 0; ch < c; ++ch)
                out.put(static_cast<char>(quantize(image.at(0, ch, y, x))));
    if (!out) fail(path, "write failed");
}

void save_mask(const std::filesystem::path& path, const BinaryMask& mask) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(path, "cannot open file for writing");
    out << "P5\n" << mask.w << " " << mask.h << "\n255\n";
    for (auto b : mask.bits) out.put(static_cast<char>(b ? 255 : 0));
    if (!out) fail(path, "write failed");
}

SamplePair preprocess(const SamplePair& sample, int target, bool allow_upscale) {
    if (target < 1) throw std::invalid_argument("preprocess: target extent must be positive");
    const int H = sample.image.shape.h, W = sample.image.shape.w, C = sample.image.shape.c;
    const int side = std::min(H, W);
    if (target > side && !allow_upscale)
        throw std::invalid_argument("preprocess: target " + std::to_string(target) +
                                    " exceeds source square side " + std::to_string(side) +
                                    " and upscaling is disabled");
    const int off_y = (H - side) / 2;
    const int off_x = (W - side) / 2;

    // Nearest-neighbor index map, identical for image and mask.
    auto src_index = [&](int dst) {
        return static_cast<int>((2 * static_cast<std::int64_t>(dst) + 1) * side / (2 * static_cast<std::int64_t>(target)));
    };

    SamplePair out;
    out.id = sample.id;
    out.image = Tensor<float>(Shape{1, C, target, target});
    out.mask = BinaryMask(target, target);
    for (int y = 0; y < target; ++y) {
        const int sy = src_index(y);
        for (int x = 0; x < target; ++x) {
            const int sx = src_index(x);
            for (int c = 0; c < C; ++c)
                out.image.at(0, c, y, x) = sample.image.at(0, c, off_y + sy, off_x + sx);
            out.mask.set(y, x, sample.mask.at(off_y + sy, off_x + sx) != 0);
        }
    }
    return out;
}

DatasetSplit split_dataset(std::vector<std::string> ids, std::uint64_t seed) {
    if (ids.size() < 10)
        throw std::invalid_argument("split_dataset: need at least 10 ids, got " + std::to_string(ids.size()));
    Rng rng(seed);
    rng.shuffle(ids);
    const std::size_t n = ids.size();
    const std::size_t n_val = n / 10;
    const std::size_t n_test = n / 10;
    const std::size_t n_train = n - n_val - n_test;
    DatasetSplit split;
    split.seed = seed;
    split.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                     ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    split.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
    return split;
}

std::string split_to_text(const DatasetSplit& split) {
    std::string s;
    auto section = [&](const char* name, const std::vector<std::string>& ids) {
        s += std::string("[") + name + "]\n";
        for (const auto& id : ids) s += id + "\n";
    };
    section("train", split.train);
    section("val", split.val);
    section("test", split.test);
    return s;
}

DatasetSplit split_from_text(const std::string& text) {
    DatasetSplit split;
    std::vector<std::string>* section = nullptr;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line == "[train]") section = &split.train;
        else if (line == "[val]") section = &split.val;
        else if (line == "[test]") section = &split.test;
        else if (line[0] == '[') throw std::invalid_argument("split file: unknown section " + line);
        else if (!section) throw std::invalid_argument("split file: id before any section");
        else section->push_back(line);
    }
    return split;
}

namespace {

void draw_stroke(Tensor<float>& img, Rng& rng) {
    const int H = img.shape.h, W = img.shape.w, C = img.shape.c;
    // Bresenham line between two random points, darkened like a hair.
    int x0 = static_cast<int>(rng.range(0, W - 1)), y0 = static_cast<int>(rng.range(0, H - 1));
    int x1 = static_cast<int>(rng.range(0, W - 1)), y1 = static_cast<int>(rng.range(0, H - 1));
    const float shade = static_cast<float>(rng.uniform(0.05, 0.15));
    const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
        for (int c = 0; c < C; ++c) img.at(0, c, y0, x0) = shade;
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

}  // namespace

std::vector<SamplePair> gen_synthetic(const SyntheticSpec& spec) {
    if (spec.count < 1 || spec.size < 16)
        throw std::invalid_argument("gen_synthetic: count must be >= 1 and size >= 16");
    if (spec.shapes.empty()) throw std::invalid_argument("gen_synthetic: no shape kinds enabled");
    std::vector<SamplePair> samples;
    samples.reserve(static_cast<std::size_t>(spec.count));
    const int S = spec.size;
    for (int index = 0; index < spec.count; ++index) {
        Rng rng = Rng::substream(spec.seed, static_cast<std::uint64_t>(index));
        SamplePair sp;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "synth%04d", index);
        sp.id = buf;
        sp.image = Tensor<float>(Shape{1, 1, S, S});
        sp.mask = BinaryMask(S, S);

        const float bg = static_cast<float>(rng.uniform(0.15, 0.35));
        const float fg = bg + static_cast<float>(rng.uniform(0.30, 0.50));
        sp.image.fill(bg);

        // Shape geometry in integers so rasterization is platform-exact.
        const ShapeKind kind = spec.shapes[static_cast<std::size_t>(rng.range(0, static_cast<std::int64_t>(spec.shapes.size()) - 1))];
        if (kind == ShapeKind::ellipse) {
            const int a = static_cast<int>(rng.range(10 * S / 64, 22 * S / 64));  // semi-axes
            const int b = static_cast<int>(rng.range(10 * S / 64, 22 * S / 64));
            const int cx = static_cast<int>(rng.range(a, S - 1 - a));
            const int cy = static_cast<int>(rng.range(b, S - 1 - b));
            const std::int64_t a2 = static_cast<std::int64_t>(a) * a;
            const std::int64_t b2 = static_cast<std::int64_t>(b) * b;
            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S; ++x) {
                    const std::int64_t dx = x - cx, dy = y - cy;
                    if (dx * dx * b2 + dy * dy * a2 <= a2 * b2) sp.mask.set(y, x, true);
                }
        } else {
            const int w = static_cast<int>(rng.range(18 * S / 64, 40 * S / 64));
            const int h = static_cast<int>(rng.range(18 * S / 64, 40 * S / 64));
            const int x0 = static_cast<int>(rng.range(0, S - w));
            const int y0 = static_cast<int>(rng.range(0, S - h));
            for (int y = y0; y < y0 + h; ++y)
                for (int x = x0; x < x0 + w; ++x) sp.mask.set(y, x, true);
        }
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x)
                if (sp.mask.at(y, x)) sp.image.at(0, 0, y, x) = fg;

        if (spec.intensity_gradient) {
            const bool horizontal = rng.range(0, 1) == 0;
            const float span = static_cast<float>(rng.uniform(-0.1, 0.1));
            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S; ++x) {
                    const float t = static_cast<float>(horizontal ? x : y) / static_cast<float>(S - 1);
                    sp.image.at(0, 0, y, x) += span * t;
                }
        }
        if (spec.hair_strokes) {
            const int strokes = static_cast<int>(rng.range(0, 3));
            for (int s = 0; s < strokes; ++s) draw_stroke(sp.image, rng);
        }
        if (spec.noise_sigma > 0.0) {
            for (auto& v : sp.image.data) v += static_cast<float>(spec.noise_sigma * rng.normal());
        }
        for (auto& v : sp.image.data) v = std::min(1.0f, std::max(0.0f, v));
        samples.push_back(std::move(sp));
    }
    return samples;
}

std::string synthetic_spec_to_text(const SyntheticSpec& spec) {
    std::string shapes;
    for (ShapeKind k : spec.shapes) {
        if (!shapes.empty()) shapes += ",";
        shapes += k == ShapeKind::ellipse ? "ellipse" : "rectangle";
    }
    char buf[64];
    std::string s;
    s += "count = " + std::to_string(spec.count) + "\n";
    s += "size = " + std::to_string(spec.size) + "\n";
    s += "shapes = " + shapes + "\n";
    std::snprintf(buf, sizeof(buf), "%.10g", spec.noise_sigma);
    s += "noise = " + std::string(buf) + "\n";
    s += "hair = " + std::string(spec.hair_strokes ? "true" : "false") + "\n";
    s += "gradient = " + std::string(spec.intensity_gradient ? "true" : "false") + "\n";
    s += "seed = " + std::to_string(spec.seed) + "\n";
    return s;
}

void save_dataset(const std::filesystem::path& root, const std::vector<SamplePair>& samples) {
    std::filesystem::create_directories(root / "images");
    std::filesystem::create_directories(root / "masks");
    for (const auto& sp : samples) {
        save_pnm(root / "images" / (sp.id + ".pgm"), sp.image);
        save_mask(root / "masks" / (sp.id + ".pgm"), sp.mask);
    }
}

std::vector<SamplePair> load_dataset(const std::filesystem::path& root) {
    const auto images_dir = root / "images";
    const auto masks_dir = root / "masks";
    if (!std::filesystem::is_directory(images_dir))
        throw std::runtime_error("load_dataset: missing images directory " + images_dir.string());
    if (!std::filesystem::is_directory(masks_dir))
        throw std::runtime_error("load_dataset: missing masks directory " + masks_dir.string());
    std::vector<std::filesystem::path> image_paths;
    for (const auto& entry : std::filesystem::directory_iterator(images_dir)) {
        if (!entry.is_regular_file()) continue;
        const auto ext = entry.path().extension();
        if (ext == ".pgm" || ext == ".ppm") image_paths.push_back(entry.path());
    }
    std::sort(image_paths.begin(), image_paths.end());
    if (image_paths.empty()) throw std::runtime_error("load_dataset: no .pgm/.ppm images in " + images_dir.string());

    std::vector<SamplePair> samples;
    for (const auto& ip : image_paths) {
        SamplePair sp;
        sp.id = ip.stem().string();
        sp.image = load_pnm(ip);
        const auto mask_path = masks_dir / (sp.id + ".pgm");
        if (!std::filesystem::exists(mask_path))
            throw std::runtime_error("load_dataset: missing mask for id '" + sp.id + "' at " + mask_path.string());
        sp.mask = load_mask(mask_path);
        if (sp.mask.h != sp.image.shape.h || sp.mask.w != sp.image.shape.w)
            throw std::runtime_error("load_dataset: image/mask extent mismatch for id '" + sp.id + "'");
        samples.push_back(std::move(sp));
    }
    return samples;
}

}  // namespace hunet
