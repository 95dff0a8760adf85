#include "udream/data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "json.hpp"

namespace udream::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kDatasetVersion = "udream-dataset/1";
constexpr uint32_t kCheckpointVersion = 1;

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

uint64_t derive_seed(uint64_t seed, uint64_t index, uint64_t stream) {
    return splitmix64(splitmix64(seed ^ splitmix64(index)) + stream);
}

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void round_f32(std::vector<double>& v) {
    for (auto& x : v) x = to_f32(x);
}

std::string hex64(uint64_t v) {
    std::ostringstream os;
    os << "fnv1a64:" << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

// ---- little-endian byte streams ----

class Writer {
public:
    void u32(uint32_t v) { put_le(v); }
    void u64(uint64_t v) { put_le(v); }
    void i64(int64_t v) { put_le(static_cast<uint64_t>(v)); }
    void f64(double v) { put_le(std::bit_cast<uint64_t>(v)); }
    void f32(double v) { put_le(std::bit_cast<uint32_t>(static_cast<float>(v))); }
    void f32s(const std::vector<double>& vs) {
        for (double v : vs) f32(v);
    }
    void raw(const char* s, size_t n) { bytes.insert(bytes.end(), s, s + n); }
    std::vector<uint8_t> bytes;

private:
    template <typename U>
    void put_le(U v) {
        for (size_t i = 0; i < sizeof(U); ++i) bytes.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
};

class Reader {
public:
    Reader(const std::vector<uint8_t>& b, std::string origin, size_t pos = 0)
        : bytes_(b), origin_(std::move(origin)), pos_(pos) {}
    uint32_t u32() { return get_le<uint32_t>(); }
    uint64_t u64() { return get_le<uint64_t>(); }
    int64_t i64() { return static_cast<int64_t>(get_le<uint64_t>()); }
    double f64() { return std::bit_cast<double>(get_le<uint64_t>()); }
    double f32() { return static_cast<double>(std::bit_cast<float>(get_le<uint32_t>())); }
    std::vector<double> f32s(size_t n) {
        std::vector<double> v(n);
        for (auto& x : v) x = f32();
        return v;
    }
    size_t pos() const { return pos_; }

private:
    template <typename U>
    U get_le() {
        if (pos_ + sizeof(U) > bytes_.size()) throw FormatError(origin_ + ": truncated at byte " + std::to_string(pos_));
        U v = 0;
        for (size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
        pos_ += sizeof(U);
        return v;
    }
    const std::vector<uint8_t>& bytes_;
    std::string origin_;
    size_t pos_;
};

// ---- phantoms ----

struct Ellipse {
    double cy, cx, ay, ax, rot, value;
    bool contains(double y, double x) const {
        const double dy = y - cy, dx = x - cx;
        const double c = std::cos(rot), s = std::sin(rot);
        const double u = c * dx + s * dy, v = -s * dx + c * dy;
        return (u / ax) * (u / ax) + (v / ay) * (v / ay) <= 1.0;
    }
};

void paint(std::vector<double>& mag, int64_t h, int64_t w, const Ellipse& e) {
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j)
            if (e.contains(static_cast<double>(i), static_cast<double>(j))) mag[static_cast<size_t>(i * w + j)] = e.value;
}

// ---- dataset helpers ----

json deform_json(const deform::DeformSynthConfig& d) {
    return json{{"points", d.points},
                {"delta_min", d.delta_min},
                {"delta_max", d.delta_max},
                {"sigma", d.sigma},
                {"peak_normalize", d.peak_normalize}};
}

json seeds_json(const SampleSeeds& s) {
    return json{{"image", s.image},         {"deform", s.deform},       {"mask_ref", s.mask_ref},
                {"mask_mov", s.mask_mov},   {"noise_ref", s.noise_ref}, {"noise_mov", s.noise_mov}};
}

template <typename T>
T field(const json& j, const char* key, const std::string& origin) {
    if (!j.contains(key)) throw FormatError(origin + ": missing field '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw FormatError(origin + ": bad field '" + key + "': " + e.what());
    }
}

mri::SamplingMask mask_from_values(std::vector<double> values, int64_t size, const MaskConfig& m, uint64_t seed,
                                   const std::string& origin) {
    for (double v : values)
        if (v != 0.0 && v != 1.0) throw FormatError(origin + ": mask values must be 0 or 1");
    mri::SamplingMask mask;
    mask.height = mask.width = size;
    mask.values = std::move(values);
    mask.rate = m.rate;
    mask.center_fraction = m.center_fraction;
    mask.seed = seed;
    return mask;
}

mri::ComplexImage image_from(std::vector<double> re, std::vector<double> im, int64_t size) {
    mri::ComplexImage img;
    img.height = img.width = size;
    img.re = std::move(re);
    img.im = std::move(im);
    return img;
}

std::string read_token(std::istream& in) {
    std::string tok;
    char c;
    while (in.get(c)) {
        if (c == '#') {
            std::string skip;
            std::getline(in, skip);
            if (!tok.empty()) break;
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(c);
    }
    return tok;
}

int64_t parse_positive(const std::string& tok, const fs::path& path, const char* what) {
    int64_t v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size() || v <= 0) {
        throw FormatError(path.string() + ": bad PGM " + what + " '" + tok + "'");
    }
    return v;
}

mri::ComplexImage normalized(std::vector<double> mag, int64_t h, int64_t w) {
    const double peak = mag.empty() ? 0.0 : *std::max_element(mag.begin(), mag.end());
    if (peak > 0.0)
        for (auto& v : mag) v /= peak;
    mri::ComplexImage img(h, w);
    img.re = std::move(mag);
    return img;
}

mri::ComplexImage read_raw_f32(const fs::path& path) {
    fs::path sidecar = path;
    sidecar += ".size";
    std::ifstream side(sidecar);
    if (!side) throw FormatError(path.string() + ": missing size sidecar " + sidecar.filename().string());
    int64_t h = 0, w = 0;
    if (!(side >> h >> w) || h <= 0 || w <= 0) throw FormatError(path.string() + ": bad size sidecar");
    const auto bytes = read_file(path);
    if (bytes.size() != static_cast<size_t>(h * w) * 4) {
        throw FormatError(path.string() + ": expected " + std::to_string(h * w * 4) + " bytes for " + std::to_string(h) +
                          "x" + std::to_string(w) + ", found " + std::to_string(bytes.size()));
    }
    Reader r(bytes, path.string());
    auto mag = r.f32s(static_cast<size_t>(h * w));
    for (auto& v : mag) {
        if (!std::isfinite(v)) throw FormatError(path.string() + ": non-finite value");
        v = std::abs(v);
    }
    return normalized(std::move(mag), h, w);
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::vector<std::string> csv_split(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    cells.push_back(cur);
    return cells;
}

double parse_double(const std::string& s, const std::string& origin) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw FormatError(origin + ": bad number '" + s + "'");
    return v;
}

}  // namespace

uint64_t fnv1a64(const void* data, size_t size, uint64_t state) {
    const auto* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < size; ++i) {
        state ^= p[i];
        state *= 0x100000001b3ULL;
    }
    return state;
}

// ---- phantoms ----

mri::ComplexImage make_phantom(int64_t height, int64_t width, uint64_t seed) {
    if (height < 4 || width < 4) throw std::invalid_argument("make_phantom: image must be at least 4x4");
    std::mt19937_64 rng(seed);
    auto uniform = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
    const double pi = std::numbers::pi;
    const double span = static_cast<double>(std::min(height, width) - 1);

    // Axes at most 0.44 of the span keep both half-extents below span / 2, so a valid center always exists.
    Ellipse outer{};
    outer.ay = uniform(0.32, 0.44) * span;
    outer.ax = uniform(0.26, 0.40) * span;
    outer.rot = uniform(-pi / 6, pi / 6);
    outer.value = uniform(0.45, 0.75);
    const double c = std::cos(outer.rot), s = std::sin(outer.rot);
    const double ex = std::sqrt(outer.ax * outer.ax * c * c + outer.ay * outer.ay * s * s);
    const double ey = std::sqrt(outer.ax * outer.ax * s * s + outer.ay * outer.ay * c * c);
    outer.cx = uniform(ex, static_cast<double>(width - 1) - ex);
    outer.cy = uniform(ey, static_cast<double>(height - 1) - ey);

    std::vector<double> mag(static_cast<size_t>(height * width), 0.0);
    paint(mag, height, width, outer);

    const int inner = 3 + static_cast<int>(rng() % 7);
    const double small = std::min(outer.ax, outer.ay);
    for (int e = 0; e < inner; ++e) {
        Ellipse el{};
        const double r = 0.55 * std::sqrt(uniform(0.0, 1.0));
        const double t = uniform(0.0, 2.0 * pi);
        const double u = r * std::cos(t) * outer.ax, v = r * std::sin(t) * outer.ay;
        el.cx = outer.cx + c * u - s * v;
        el.cy = outer.cy + s * u + c * v;
        el.ax = uniform(0.08, 0.35) * small;
        el.ay = uniform(0.08, 0.35) * small;
        el.rot = uniform(0.0, pi);
        el.value = uniform(0.1, 1.0);
        paint(mag, height, width, el);
    }

    double a[4];
    for (auto& coef : a) coef = uniform(-pi / 4, pi / 4);
    mri::ComplexImage img(height, width);
    for (int64_t i = 0; i < height; ++i)
        for (int64_t j = 0; j < width; ++j) {
            const double y = 2.0 * static_cast<double>(i) / static_cast<double>(height - 1) - 1.0;
            const double x = 2.0 * static_cast<double>(j) / static_cast<double>(width - 1) - 1.0;
            const double phase = a[0] + a[1] * x + a[2] * y + a[3] * x * y;
            const auto p = static_cast<size_t>(i * width + j);
            const double m = std::clamp(mag[p], 0.0, 1.0);
            img.re[p] = m * std::cos(phase);
            img.im[p] = m * std::sin(phase);
        }
    return img;
}

std::vector<mri::ComplexImage> generate_phantoms(int64_t n, int64_t height, int64_t width, uint64_t seed) {
    if (n < 1) throw std::invalid_argument("generate_phantoms: n must be >= 1");
    std::vector<mri::ComplexImage> out;
    out.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) out.push_back(make_phantom(height, width, seed + static_cast<uint64_t>(i)));
    return out;
}

// ---- datasets ----

std::string to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw std::invalid_argument("unknown split '" + s + "'");
}

void DatasetConfig::validate() const {
    if (size < 4) throw std::invalid_argument("dataset size must be >= 4");
    if (n_train < 0 || n_val < 0 || n_test < 0 || total() < 1) throw std::invalid_argument("dataset counts invalid");
    deform.validate();
    if (!(mask.center_fraction > 0.0 && mask.center_fraction <= mask.rate && mask.rate <= 1.0)) {
        throw std::invalid_argument("mask: need 0 < center_fraction <= rate <= 1");
    }
    if (std::isnan(snr_db)) throw std::invalid_argument("snr_db must not be NaN");
}

Dataset Dataset::build(const std::vector<mri::ComplexImage>& images, const DatasetConfig& cfg) {
    cfg.validate();
    if (static_cast<int64_t>(images.size()) != cfg.total()) {
        throw std::invalid_argument("build_dataset: got " + std::to_string(images.size()) + " images for " +
                                    std::to_string(cfg.total()) + " samples");
    }
    const int64_t n = cfg.size;
    Dataset ds;
    ds.cfg_ = cfg;
    ds.access_ = Access::Evaluation;
    const uint64_t hw = static_cast<uint64_t>(n * n);
    const uint64_t train_bytes = 6 * hw * 4, eval_bytes = 4 * hw * 4;
    const uint64_t eval_base = static_cast<uint64_t>(cfg.total()) * train_bytes;

    for (int64_t i = 0; i < cfg.total(); ++i) {
        const auto& src = images[static_cast<size_t>(i)];
        if (src.height != n || src.width != n) {
            throw std::invalid_argument("build_dataset: image " + std::to_string(i) + " is " + std::to_string(src.height) +
                                        "x" + std::to_string(src.width) + ", expected " + std::to_string(n));
        }
        const auto idx = static_cast<uint64_t>(i);
        SampleRecord rec;
        rec.id = "s" + std::to_string(i);
        rec.split = i < cfg.n_train ? Split::Train : (i < cfg.n_train + cfg.n_val ? Split::Val : Split::Test);
        rec.seeds.image = cfg.source == "phantom" ? cfg.seed + idx : 0;
        rec.seeds.deform = derive_seed(cfg.seed, idx, 1);
        rec.seeds.mask_ref = derive_seed(cfg.seed, idx, 2);
        rec.seeds.mask_mov = cfg.shared_mask ? rec.seeds.mask_ref : derive_seed(cfg.seed, idx, 3);
        rec.seeds.noise_ref = derive_seed(cfg.seed, idx, 4);
        rec.seeds.noise_mov = derive_seed(cfg.seed, idx, 5);
        rec.train_offset = idx * train_bytes;
        rec.eval_offset = eval_base + idx * eval_bytes;

        Stored s;
        s.x_ref = src;
        round_f32(s.x_ref.re);
        round_f32(s.x_ref.im);
        deform::DeformSynthConfig dcfg = cfg.deform;
        dcfg.seed = rec.seeds.deform;
        s.phi = deform::synthesize_field(n, n, dcfg);
        round_f32(s.phi.dy);
        round_f32(s.phi.dx);
        const mri::ComplexImage moving = deform::warp_image(s.x_ref, s.phi);

        const auto mask_r = mri::make_cartesian_mask(n, n, cfg.mask.rate, cfg.mask.center_fraction, rec.seeds.mask_ref);
        const auto mask_m = mri::make_cartesian_mask(n, n, cfg.mask.rate, cfg.mask.center_fraction, rec.seeds.mask_mov);
        s.y_ref = mri::add_noise(mri::forward(s.x_ref, mask_r), cfg.snr_db, rec.seeds.noise_ref);
        s.y_mov = mri::add_noise(mri::forward(moving, mask_m), cfg.snr_db, rec.seeds.noise_mov);
        for (auto* y : {&s.y_ref, &s.y_mov}) {
            round_f32(y->values.re);
            round_f32(y->values.im);
        }
        ds.records_.push_back(rec);
        ds.samples_.push_back(std::move(s));
    }
    const auto bytes = ds.serialize();
    ds.checksum_ = fnv1a64(bytes.data(), bytes.size());
    return ds;
}

Dataset Dataset::build_phantoms(const DatasetConfig& cfg) {
    cfg.validate();
    DatasetConfig c = cfg;
    c.source = "phantom";
    return build(generate_phantoms(cfg.total(), cfg.size, cfg.size, cfg.seed), c);
}

std::vector<uint8_t> Dataset::serialize() const {
    if (access_ != Access::Evaluation) throw GroundtruthAccessError("dataset opened for training cannot be re-serialized");
    Writer w;
    for (const auto& s : samples_) {
        w.f32s(s.y_ref.values.re);
        w.f32s(s.y_ref.values.im);
        w.f32s(s.y_mov.values.re);
        w.f32s(s.y_mov.values.im);
        w.f32s(s.y_ref.mask.values);
        w.f32s(s.y_mov.mask.values);
    }
    for (const auto& s : samples_) {
        w.f32s(s.x_ref.re);
        w.f32s(s.x_ref.im);
        w.f32s(s.phi.dy);
        w.f32s(s.phi.dx);
    }
    return std::move(w.bytes);
}

std::string Dataset::manifest_json() const {
    json samples = json::array();
    for (const auto& r : records_) {
        samples.push_back(json{{"id", r.id},
                               {"split", to_string(r.split)},
                               {"seeds", seeds_json(r.seeds)},
                               {"offsets", json{{"train", r.train_offset}, {"eval", r.eval_offset}}}});
    }
    const uint64_t hw = static_cast<uint64_t>(cfg_.size * cfg_.size);
    json j;
    j["version"] = kDatasetVersion;
    j["size"] = json::array({cfg_.size, cfg_.size});
    j["counts"] = json{{"train", cfg_.n_train}, {"val", cfg_.n_val}, {"test", cfg_.n_test}};
    j["config"] = json{{"deform", deform_json(cfg_.deform)},
                       {"mask", json{{"rate", cfg_.mask.rate},
                                     {"center_fraction", cfg_.mask.center_fraction},
                                     {"shared", cfg_.shared_mask}}},
                       {"snr_db", std::isinf(cfg_.snr_db) ? json(nullptr) : json(cfg_.snr_db)},
                       {"seed", cfg_.seed},
                       {"source", cfg_.source}};
    j["samples_file"] = kSamplesFile;
    j["layout"] = json{{"train_record_floats", 6 * hw},
                       {"eval_record_floats", 4 * hw},
                       {"eval_section_offset", static_cast<uint64_t>(cfg_.total()) * 6 * hw * 4},
                       {"eval_only", "eval section holds groundtruth images and deformation fields"}};
    j["bytes"] = static_cast<uint64_t>(cfg_.total()) * 10 * hw * 4;
    j["checksum"] = hex64(checksum_);
    j["samples"] = std::move(samples);
    return j.dump(2) + "\n";
}

void Dataset::save(const fs::path& dir) const {
    const auto bytes = serialize();
    fs::create_directories(dir);
    write_file(dir / kSamplesFile, bytes);
    const std::string m = manifest_json();
    write_file(dir / kManifestFile, std::vector<uint8_t>(m.begin(), m.end()));
}

Dataset Dataset::load(const fs::path& dir, Access access) {
    const std::string origin = (dir / kManifestFile).string();
    const auto mbytes = read_file(dir / kManifestFile);
    json j;
    try {
        j = json::parse(mbytes.begin(), mbytes.end());
    } catch (const json::exception& e) {
        throw FormatError(origin + ": " + e.what());
    }
    if (field<std::string>(j, "version", origin) != kDatasetVersion) throw FormatError(origin + ": unsupported version");

    Dataset ds;
    ds.access_ = access;
    DatasetConfig& cfg = ds.cfg_;
    const auto size = field<std::vector<int64_t>>(j, "size", origin);
    if (size.size() != 2 || size[0] != size[1]) throw FormatError(origin + ": size must be [n, n]");
    cfg.size = size[0];
    const json counts = field<json>(j, "counts", origin);
    cfg.n_train = field<int64_t>(counts, "train", origin);
    cfg.n_val = field<int64_t>(counts, "val", origin);
    cfg.n_test = field<int64_t>(counts, "test", origin);
    const json c = field<json>(j, "config", origin);
    const json d = field<json>(c, "deform", origin);
    cfg.deform.points = field<int64_t>(d, "points", origin);
    cfg.deform.delta_min = field<double>(d, "delta_min", origin);
    cfg.deform.delta_max = field<double>(d, "delta_max", origin);
    cfg.deform.sigma = field<double>(d, "sigma", origin);
    cfg.deform.peak_normalize = field<bool>(d, "peak_normalize", origin);
    const json m = field<json>(c, "mask", origin);
    cfg.mask.rate = field<double>(m, "rate", origin);
    cfg.mask.center_fraction = field<double>(m, "center_fraction", origin);
    cfg.shared_mask = field<bool>(m, "shared", origin);
    cfg.snr_db = c.contains("snr_db") && !c.at("snr_db").is_null() ? field<double>(c, "snr_db", origin)
                                                                    : mri::kNoiseDisabled;
    cfg.seed = field<uint64_t>(c, "seed", origin);
    cfg.source = field<std::string>(c, "source", origin);
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(origin + ": " + e.what());
    }

    const fs::path bin = dir / field<std::string>(j, "samples_file", origin);
    const auto bytes = read_file(bin);
    const uint64_t declared = field<uint64_t>(j, "bytes", origin);
    if (bytes.size() != declared) {
        throw FormatError(bin.string() + ": size " + std::to_string(bytes.size()) + " does not match manifest (" +
                          std::to_string(declared) + ")");
    }
    ds.checksum_ = fnv1a64(bytes.data(), bytes.size());
    if (hex64(ds.checksum_) != field<std::string>(j, "checksum", origin)) throw FormatError(bin.string() + ": checksum mismatch");

    const uint64_t hw = static_cast<uint64_t>(cfg.size * cfg.size);
    const uint64_t train_bytes = 6 * hw * 4, eval_bytes = 4 * hw * 4;
    const uint64_t eval_base = static_cast<uint64_t>(cfg.total()) * train_bytes;
    const json samples = field<json>(j, "samples", origin);
    if (!samples.is_array() || static_cast<int64_t>(samples.size()) != cfg.total()) {
        throw FormatError(origin + ": sample count does not match split counts");
    }
    std::vector<std::pair<uint64_t, uint64_t>> ranges;
    for (const auto& sj : samples) {
        SampleRecord r;
        r.id = field<std::string>(sj, "id", origin);
        r.split = parse_split(field<std::string>(sj, "split", origin));
        const json seeds = field<json>(sj, "seeds", origin);
        r.seeds.image = field<uint64_t>(seeds, "image", origin);
        r.seeds.deform = field<uint64_t>(seeds, "deform", origin);
        r.seeds.mask_ref = field<uint64_t>(seeds, "mask_ref", origin);
        r.seeds.mask_mov = field<uint64_t>(seeds, "mask_mov", origin);
        r.seeds.noise_ref = field<uint64_t>(seeds, "noise_ref", origin);
        r.seeds.noise_mov = field<uint64_t>(seeds, "noise_mov", origin);
        const json off = field<json>(sj, "offsets", origin);
        r.train_offset = field<uint64_t>(off, "train", origin);
        r.eval_offset = field<uint64_t>(off, "eval", origin);
        if (r.train_offset + train_bytes > eval_base || r.eval_offset < eval_base || r.eval_offset + eval_bytes > declared) {
            throw FormatError(origin + ": offsets of '" + r.id + "' out of range");
        }
        ranges.emplace_back(r.train_offset, r.train_offset + train_bytes);
        ranges.emplace_back(r.eval_offset, r.eval_offset + eval_bytes);
        ds.records_.push_back(std::move(r));
    }
    std::sort(ranges.begin(), ranges.end());
    for (size_t i = 1; i < ranges.size(); ++i)
        if (ranges[i].first < ranges[i - 1].second) throw FormatError(origin + ": overlapping sample offsets");

    const auto n = static_cast<size_t>(hw);
    for (const auto& r : ds.records_) {
        Stored s;
        Reader rd(bytes, bin.string(), r.train_offset);
        auto yr_re = rd.f32s(n), yr_im = rd.f32s(n), ym_re = rd.f32s(n), ym_im = rd.f32s(n);
        auto mr = rd.f32s(n), mm = rd.f32s(n);
        s.y_ref.values = image_from(std::move(yr_re), std::move(yr_im), cfg.size);
        s.y_mov.values = image_from(std::move(ym_re), std::move(ym_im), cfg.size);
        s.y_ref.mask = mask_from_values(std::move(mr), cfg.size, cfg.mask, r.seeds.mask_ref, bin.string());
        s.y_mov.mask = mask_from_values(std::move(mm), cfg.size, cfg.mask, r.seeds.mask_mov, bin.string());
        if (access == Access::Evaluation) {
            Reader re(bytes, bin.string(), r.eval_offset);
            auto x_re = re.f32s(n), x_im = re.f32s(n);
            s.x_ref = image_from(std::move(x_re), std::move(x_im), cfg.size);
            s.phi = deform::DeformationField(cfg.size, cfg.size);
            s.phi.dy = re.f32s(n);
            s.phi.dx = re.f32s(n);
        }
        ds.samples_.push_back(std::move(s));
    }
    return ds;
}

PairBatch Dataset::pairs(Split split) const {
    PairBatch out;
    for (size_t i = 0; i < records_.size(); ++i) {
        if (records_[i].split != split) continue;
        out.push_back(MeasurementPair::from_measurements(records_[i].id, samples_[i].y_ref, samples_[i].y_mov));
    }
    return out;
}

std::vector<EvalSample> Dataset::evaluation(Split split) const {
    if (access_ != Access::Evaluation) {
        throw GroundtruthAccessError("groundtruth is not available on a dataset opened for training");
    }
    std::vector<EvalSample> out;
    for (size_t i = 0; i < records_.size(); ++i) {
        if (records_[i].split != split) continue;
        out.push_back(EvalSample{MeasurementPair::from_measurements(records_[i].id, samples_[i].y_ref, samples_[i].y_mov),
                                 samples_[i].x_ref, samples_[i].phi});
    }
    return out;
}

// ---- checkpoints ----

std::vector<uint8_t> encode_checkpoint(const train::Checkpoint& ck) {
    Writer w;
    w.raw("UDRM", 4);
    w.u32(kCheckpointVersion);
    w.i64(ck.net.channels);
    w.i64(ck.net.blocks);
    w.i64(ck.net.levels);
    w.i64(ck.net.reg_channels);
    w.u64(ck.net.seed);
    w.u64(static_cast<uint64_t>(ck.theta.params.scalar_count()));
    w.u64(static_cast<uint64_t>(ck.phi.params.scalar_count()));
    for (const auto* set : {&ck.theta.params, &ck.phi.params})
        for (const auto& a : set->values)
            for (double v : a.data) w.f64(v);
    w.u64(fnv1a64(w.bytes.data(), w.bytes.size()));
    return std::move(w.bytes);
}

train::Checkpoint decode_checkpoint(const std::vector<uint8_t>& bytes, const std::string& origin) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "UDRM", 4) != 0) throw FormatError(origin + ": bad magic");
    Reader r(bytes, origin, 4);
    const uint32_t version = r.u32();
    if (version != kCheckpointVersion) throw FormatError(origin + ": unsupported version " + std::to_string(version));
    nets::NetworkConfig cfg;
    cfg.channels = r.i64();
    cfg.blocks = r.i64();
    cfg.levels = r.i64();
    cfg.reg_channels = r.i64();
    cfg.seed = r.u64();
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(origin + ": " + e.what());
    }
    const uint64_t n_theta = r.u64(), n_phi = r.u64();
    train::Checkpoint ck = train::initial_checkpoint(cfg);
    if (n_theta != static_cast<uint64_t>(ck.theta.params.scalar_count()) ||
        n_phi != static_cast<uint64_t>(ck.phi.params.scalar_count())) {
        throw FormatError(origin + ": parameter counts do not match the network configuration");
    }
    const size_t expected = r.pos() + 8 * static_cast<size_t>(n_theta + n_phi) + 8;
    if (bytes.size() != expected) {
        throw FormatError(origin + ": payload length " + std::to_string(bytes.size()) + " != " + std::to_string(expected));
    }
    const uint64_t sum = fnv1a64(bytes.data(), bytes.size() - 8);
    Reader tail(bytes, origin, bytes.size() - 8);
    if (tail.u64() != sum) throw FormatError(origin + ": checksum mismatch");
    for (auto* set : {&ck.theta.params, &ck.phi.params})
        for (auto& a : set->values)
            for (auto& v : a.data) v = r.f64();
    return ck;
}

void save_checkpoint(const train::Checkpoint& ck, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_file(path, encode_checkpoint(ck));
}

train::Checkpoint load_checkpoint(const fs::path& path) { return decode_checkpoint(read_file(path), path.string()); }

// ---- images ----

mri::ComplexImage read_pgm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(path.string() + ": cannot open");
    if (read_token(in) != "P5") throw FormatError(path.string() + ": not a binary PGM (P5) file");
    const int64_t w = parse_positive(read_token(in), path, "width");
    const int64_t h = parse_positive(read_token(in), path, "height");
    const int64_t maxval = parse_positive(read_token(in), path, "maxval");
    if (maxval > 65535) throw FormatError(path.string() + ": maxval " + std::to_string(maxval) + " exceeds 65535");
    const int64_t bpp = maxval < 256 ? 1 : 2;
    std::vector<uint8_t> raw(static_cast<size_t>(h * w * bpp));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw FormatError(path.string() + ": truncated pixel data");
    std::vector<double> mag(static_cast<size_t>(h * w));
    for (size_t i = 0; i < mag.size(); ++i) {
        const int64_t v = bpp == 1 ? raw[i] : (int64_t{raw[2 * i]} << 8) | raw[2 * i + 1];
        if (v > maxval) throw FormatError(path.string() + ": pixel value above maxval");
        mag[i] = static_cast<double>(v) / static_cast<double>(maxval);
    }
    return normalized(std::move(mag), h, w);
}

std::vector<mri::ComplexImage> ingest_images(const fs::path& directory) {
    if (!fs::is_directory(directory)) throw FormatError(directory.string() + ": not a directory");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(directory)) {
        if (!e.is_regular_file()) continue;
        const auto ext = e.path().extension().string();
        if (ext == ".pgm" || ext == ".raw" || ext == ".f32") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<mri::ComplexImage> out;
    for (const auto& f : files) out.push_back(f.extension() == ".pgm" ? read_pgm(f) : read_raw_f32(f));
    return out;
}

void export_pgm(const std::vector<double>& magnitude, int64_t height, int64_t width, const fs::path& path, int bit_depth,
                std::optional<double> peak) {
    if (bit_depth != 8 && bit_depth != 16) throw std::invalid_argument("export_pgm: bit depth must be 8 or 16");
    if (static_cast<int64_t>(magnitude.size()) != height * width) throw std::invalid_argument("export_pgm: size mismatch");
    const double p = peak.value_or(magnitude.empty() ? 0.0 : *std::max_element(magnitude.begin(), magnitude.end()));
    const int maxval = bit_depth == 8 ? 255 : 65535;
    std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n" + std::to_string(maxval) + "\n";
    std::vector<uint8_t> bytes(header.begin(), header.end());
    for (double m : magnitude) {
        const double v = p > 0.0 ? std::clamp(m / p, 0.0, 1.0) : 0.0;
        const auto q = static_cast<uint32_t>(std::lround(v * maxval));
        if (bit_depth == 16) bytes.push_back(static_cast<uint8_t>(q >> 8));
        bytes.push_back(static_cast<uint8_t>(q & 0xff));
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_file(path, bytes);
}

void export_pgm(const mri::ComplexImage& img, const fs::path& path, int bit_depth, std::optional<double> peak) {
    export_pgm(img.magnitude(), img.height, img.width, path, bit_depth, peak);
}

// ---- tables ----

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 6);
    return std::string(buf, p);
}

void export_csv(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows,
                const fs::path& path) {
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
        for (size_t i = 0; i < cells.size(); ++i) {
            if (i) out += ',';
            out += csv_escape(cells[i]);
        }
        out += '\n';
    };
    line(header);
    for (const auto& r : rows) {
        if (r.size() != header.size()) throw std::invalid_argument("export_csv: row width differs from header");
        line(r);
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_file(path, std::vector<uint8_t>(out.begin(), out.end()));
}

void export_csv(const std::vector<std::string>& header, const std::vector<std::vector<double>>& rows,
                const fs::path& path) {
    std::vector<std::vector<std::string>> text;
    for (const auto& r : rows) {
        std::vector<std::string> cells;
        for (double v : r) cells.push_back(format_number(v));
        text.push_back(std::move(cells));
    }
    export_csv(header, text, path);
}

CsvTable read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(path.string() + ": cannot open");
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path.string() + ": empty CSV");
    t.header = csv_split(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto cells = csv_split(line);
        if (cells.size() != t.header.size()) throw FormatError(path.string() + ": ragged row");
        t.rows.push_back(std::move(cells));
    }
    return t;
}

void write_metrics(const train::MetricLog& log, const fs::path& path) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : log.rows) {
        rows.push_back({std::to_string(r.step), format_number(r.l_rec), format_number(r.l_reg), format_number(r.psnr),
                        format_number(r.ssim)});
    }
    export_csv({"step", "L_rec", "L_reg", "psnr", "ssim"}, rows, path);
}

train::MetricLog read_metrics(const fs::path& path) {
    const CsvTable t = read_csv(path);
    if (t.header != std::vector<std::string>{"step", "L_rec", "L_reg", "psnr", "ssim"}) {
        throw FormatError(path.string() + ": unexpected metrics header");
    }
    train::MetricLog log;
    for (const auto& r : t.rows) {
        train::MetricRow row;
        row.step = static_cast<int64_t>(parse_double(r[0], path.string()));
        row.l_rec = parse_double(r[1], path.string());
        row.l_reg = parse_double(r[2], path.string());
        row.psnr = parse_double(r[3], path.string());
        row.ssim = parse_double(r[4], path.string());
        log.append(row);
    }
    return log;
}

std::vector<uint8_t> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(path.string() + ": cannot open");
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, const std::vector<uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error(path.string() + ": write failed");
}

}  // namespace udream::data
