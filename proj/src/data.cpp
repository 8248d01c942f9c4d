#include "rtfd/data.hpp"

#include <algorithm>
#include <cstring>

#include "rtfd/binio.hpp"

namespace rtfd {

namespace {
constexpr const char kCorpusMagic[] = {'R', 'T', 'F', 'D', 'C', '1'};
constexpr std::uint32_t kCorpusVersion = 1;
}  // namespace

const Palette& palette() {
    static const Palette p{
        {0.25, 0.25, 0.25},  // rgb background
        0.25,                // thermal background
        0.55,                // green pedestal of RGB-visible objects
        0.52,                // red/blue base level
        0.04, 0.04,          // fixed tilt: a stable, weak class cue
        0.78, 0.78,          // class-2 thermal level
        0.62, 0.62,          // class-3 thermal level
    };
    return p;
}

// ---------------------------------------------------------------------------
// generation
// ---------------------------------------------------------------------------

namespace {

struct Canvas {
    int h, w;
    std::vector<double> rgb;  // 3*h*w
    std::vector<double> t;    // h*w
    std::vector<int> label;   // h*w
};

// Per-object appearance: the class cue strength inside one modality.
struct ObjectShade {
    double rgb[3];
    double t;
};

ObjectShade draw_shade(int cls, Rng& rng) {
    const Palette& pal = palette();
    ObjectShade s{{pal.rgb_background[0], pal.rgb_background[1], pal.rgb_background[2]},
                  pal.t_background};
    if (cls == 1 || cls == 3) {
        const double tilt = rng.uniform(pal.tilt_min, pal.tilt_max);
        const double sign = cls == 1 ? 1.0 : -1.0;
        s.rgb[0] = pal.object_base + sign * tilt;
        s.rgb[1] = pal.object_green;
        s.rgb[2] = pal.object_base - sign * tilt;
    }
    if (cls == 2) s.t = rng.uniform(pal.cls2_t_min, pal.cls2_t_max);
    if (cls == 3) s.t = rng.uniform(pal.cls3_t_min, pal.cls3_t_max);
    return s;
}

// Invisible-in-a-modality classes paint that modality back to background, so
// the invisible region stays statistically plain background even when
// objects overlap.
void paint(Canvas& cv, int x, int y, int cls, const ObjectShade& shade) {
    const std::size_t p = static_cast<std::size_t>(y) * cv.w + x;
    const std::size_t hw = static_cast<std::size_t>(cv.h) * cv.w;
    cv.label[p] = cls;
    for (int ch = 0; ch < 3; ++ch) cv.rgb[ch * hw + p] = shade.rgb[ch];
    cv.t[p] = shade.t;
}

BimodalSample make_sample(const CorpusSpec& spec, Rng rng) {
    const int h = spec.height, w = spec.width;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    const Palette& pal = palette();

    Canvas cv{h, w, std::vector<double>(3 * hw), std::vector<double>(hw),
              std::vector<int>(hw, 0)};
    for (int ch = 0; ch < 3; ++ch) {
        std::fill_n(cv.rgb.begin() + static_cast<std::ptrdiff_t>(ch * hw), hw,
                    pal.rgb_background[ch]);
    }
    std::fill(cv.t.begin(), cv.t.end(), pal.t_background);

    std::vector<ObjectMeta> objects;
    const int count = rng.uniform_int(spec.min_objects, spec.max_objects);
    for (int obj = 0; obj < count; ++obj) {
        ObjectMeta meta;
        meta.cls = rng.uniform_int(1, 3);
        meta.visibility = meta.cls == 1   ? Visibility::RgbOnly
                          : meta.cls == 2 ? Visibility::ThermalOnly
                                          : Visibility::Both;
        meta.kind = rng.uniform_int(0, 1) == 0 ? ObjectKind::Rectangle : ObjectKind::Disc;
        const ObjectShade shade = draw_shade(meta.cls, rng);
        if (meta.kind == ObjectKind::Rectangle) {
            const int sx = rng.uniform_int(3, 8);
            const int sy = rng.uniform_int(3, 8);
            const int cx = rng.uniform_int(sx, w - 1 - sx);
            const int cy = rng.uniform_int(sy, h - 1 - sy);
            meta.a = cx - sx;
            meta.b = cy - sy;
            meta.c = cx + sx;
            meta.d = cy + sy;
            for (int y = meta.b; y <= meta.d; ++y) {
                for (int x = meta.a; x <= meta.c; ++x) paint(cv, x, y, meta.cls, shade);
            }
        } else {
            const int r = rng.uniform_int(3, 8);
            const int cx = rng.uniform_int(r, w - 1 - r);
            const int cy = rng.uniform_int(r, h - 1 - r);
            meta.a = cx;
            meta.b = cy;
            meta.c = r;
            meta.d = 0;
            for (int y = cy - r; y <= cy + r; ++y) {
                for (int x = cx - r; x <= cx + r; ++x) {
                    const int dx = x - cx, dy = y - cy;
                    if (dx * dx + dy * dy <= r * r) paint(cv, x, y, meta.cls, shade);
                }
            }
        }
        objects.push_back(meta);
    }

    if (spec.noise_sigma > 0.0) {
        for (double& v : cv.rgb) v = std::clamp(v + spec.noise_sigma * rng.normal(), 0.0, 1.0);
        for (double& v : cv.t) v = std::clamp(v + spec.noise_sigma * rng.normal(), 0.0, 1.0);
    }

    BimodalSample s;
    s.rgb = Tensor({3, h, w}, std::move(cv.rgb));
    s.thermal = Tensor({1, h, w}, std::move(cv.t));
    s.label = std::move(cv.label);
    s.objects = std::move(objects);
    return s;
}

void validate(const CorpusSpec& spec) {
    if (spec.train_count < 1 || spec.test_count < 1) {
        throw DomainError("corpus spec: sample counts must be >= 1");
    }
    if (spec.num_classes != 4) {
        throw DomainError("corpus spec: the generator defines exactly 4 classes, got " +
                          std::to_string(spec.num_classes));
    }
    if (spec.height < 20 || spec.width < 20) {
        throw DomainError("corpus spec: extents must be at least 20 to place objects");
    }
    if (spec.min_objects < 1 || spec.max_objects < spec.min_objects) {
        throw DomainError("corpus spec: bad objects-per-image range");
    }
    if (spec.noise_sigma < 0.0) {
        throw DomainError("corpus spec: noise sigma must be non-negative");
    }
}

}  // namespace

Corpus generate(const CorpusSpec& spec) {
    validate(spec);
    Corpus corpus;
    corpus.spec = spec;
    Rng root(spec.seed);
    for (int i = 0; i < spec.train_count; ++i) {
        corpus.train.push_back(make_sample(spec, root.fork(static_cast<std::uint64_t>(i))));
    }
    for (int i = 0; i < spec.test_count; ++i) {
        corpus.test.push_back(
            make_sample(spec, root.fork(0x0f0f0f0fULL + static_cast<std::uint64_t>(i))));
    }
    return corpus;
}

BimodalSample drop_modality(const BimodalSample& s, Modality which, DropMode mode,
                            std::uint64_t seed) {
    BimodalSample out;
    out.label = s.label;
    out.objects = s.objects;
    auto replace = [&](const Tensor& src) {
        std::vector<double> v(src.numel(), 0.0);
        if (mode == DropMode::Noise) {
            Rng rng(mix_seed(seed, 0xd20bULL));
            for (double& x : v) x = rng.uniform();
        }
        return Tensor(src.shape(), std::move(v));
    };
    if (which == Modality::Rgb) {
        out.rgb = replace(s.rgb);
        out.thermal = s.thermal;
    } else {
        out.rgb = s.rgb;
        out.thermal = replace(s.thermal);
    }
    return out;
}

// ---------------------------------------------------------------------------
// container
// ---------------------------------------------------------------------------

namespace {

void write_sample(binio::Writer& w, const BimodalSample& s) {
    for (double v : s.rgb.values()) w.f64(v);
    for (double v : s.thermal.values()) w.f64(v);
    for (int v : s.label) w.i32(v);
    w.u32(static_cast<std::uint32_t>(s.objects.size()));
    for (const ObjectMeta& o : s.objects) {
        w.i32(o.cls);
        w.i32(static_cast<int>(o.kind));
        w.i32(o.a);
        w.i32(o.b);
        w.i32(o.c);
        w.i32(o.d);
        w.i32(static_cast<int>(o.visibility));
    }
}

BimodalSample read_sample(binio::Reader& r, const CorpusSpec& spec) {
    const std::size_t hw = static_cast<std::size_t>(spec.height) * spec.width;
    BimodalSample s;
    std::vector<double> rgb(3 * hw), t(hw);
    for (double& v : rgb) v = r.f64();
    for (double& v : t) v = r.f64();
    s.rgb = Tensor({3, spec.height, spec.width}, std::move(rgb));
    s.thermal = Tensor({1, spec.height, spec.width}, std::move(t));
    s.label.resize(hw);
    for (int& v : s.label) v = r.i32();
    const std::uint32_t nobj = r.u32();
    for (std::uint32_t i = 0; i < nobj; ++i) {
        ObjectMeta o;
        o.cls = r.i32();
        o.kind = static_cast<ObjectKind>(r.i32());
        o.a = r.i32();
        o.b = r.i32();
        o.c = r.i32();
        o.d = r.i32();
        o.visibility = static_cast<Visibility>(r.i32());
        s.objects.push_back(o);
    }
    return s;
}

}  // namespace

void save_corpus(const std::string& path, const Corpus& corpus) {
    binio::Writer w;
    w.raw(kCorpusMagic, sizeof(kCorpusMagic));
    w.u32(kCorpusVersion);
    const CorpusSpec& sp = corpus.spec;
    w.u32(static_cast<std::uint32_t>(sp.train_count));
    w.u32(static_cast<std::uint32_t>(sp.test_count));
    w.u32(static_cast<std::uint32_t>(sp.height));
    w.u32(static_cast<std::uint32_t>(sp.width));
    w.u32(static_cast<std::uint32_t>(sp.num_classes));
    w.u32(static_cast<std::uint32_t>(sp.min_objects));
    w.u32(static_cast<std::uint32_t>(sp.max_objects));
    w.f64(sp.noise_sigma);
    w.u64(sp.seed);
    for (const BimodalSample& s : corpus.train) write_sample(w, s);
    for (const BimodalSample& s : corpus.test) write_sample(w, s);
    binio::write_file(path, w.bytes());
}

Corpus load_corpus(const std::string& path) {
    const std::vector<std::uint8_t> bytes = binio::read_file(path);
    binio::Reader r(bytes.data(), bytes.size(), "corpus '" + path + "'");
    char magic[sizeof(kCorpusMagic)];
    r.raw(magic, sizeof(magic));
    if (std::memcmp(magic, kCorpusMagic, sizeof(kCorpusMagic)) != 0) {
        throw IoError("corpus '" + path + "' has a bad magic header");
    }
    const std::uint32_t version = r.u32();
    if (version != kCorpusVersion) {
        throw IoError("corpus '" + path + "' has unsupported version " + std::to_string(version));
    }
    Corpus corpus;
    CorpusSpec& sp = corpus.spec;
    sp.train_count = static_cast<int>(r.u32());
    sp.test_count = static_cast<int>(r.u32());
    sp.height = static_cast<int>(r.u32());
    sp.width = static_cast<int>(r.u32());
    sp.num_classes = static_cast<int>(r.u32());
    sp.min_objects = static_cast<int>(r.u32());
    sp.max_objects = static_cast<int>(r.u32());
    sp.noise_sigma = r.f64();
    sp.seed = r.u64();
    if (sp.num_classes != 4) {
        throw IoError("corpus '" + path + "': version " + std::to_string(version) +
                      " defines 4 classes, file declares " + std::to_string(sp.num_classes));
    }
    for (int i = 0; i < sp.train_count; ++i) corpus.train.push_back(read_sample(r, sp));
    for (int i = 0; i < sp.test_count; ++i) corpus.test.push_back(read_sample(r, sp));
    return corpus;
}

}  // namespace rtfd
