#include "rtfd/model.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "rtfd/binio.hpp"

namespace rtfd {

namespace {
constexpr const char* kGroupNames[] = {"rgb_encoder", "t_encoder",     "sff",
                                       "rgb_decoder", "fused_decoder", "t_decoder"};
constexpr const char kBundleMagic[] = {'R', 'T', 'F', 'D', '1'};
}  // namespace

const char* param_group_name(ParamGroup g) { return kGroupNames[static_cast<int>(g)]; }

bool parse_param_group(const std::string& name, ParamGroup* out) {
    for (int i = 0; i < 6; ++i) {
        if (name == kGroupNames[i]) {
            *out = static_cast<ParamGroup>(i);
            return true;
        }
    }
    return false;
}

int stage_scale(const NetworkConfig& cfg, int stage) { return cfg.stages() - 2 - stage; }

// ---------------------------------------------------------------------------
// construction
// ---------------------------------------------------------------------------

namespace {

void validate(const NetworkConfig& cfg) {
    if (cfg.stages() < 2) {
        throw ShapeError("network config: need at least 2 encoder stages, got " +
                         std::to_string(cfg.stages()));
    }
    for (int w : cfg.widths) {
        if (w < 4) {
            throw ShapeError("network config: stage width " + std::to_string(w) +
                             " below the descriptor minimum of 4");
        }
    }
    if (cfg.num_classes < 2) {
        throw ShapeError("network config: need at least 2 classes");
    }
}

EncoderParams make_encoder(int in_channels, const std::vector<int>& widths, Rng& rng) {
    EncoderParams enc;
    int cin = in_channels;
    for (int w : widths) {
        enc.stages.push_back(make_conv3x3(cin, w, 2, rng));
        cin = w;
    }
    return enc;
}

DecoderParams make_decoder(const std::vector<int>& widths, int num_classes, Rng& rng) {
    DecoderParams dec;
    const int e = static_cast<int>(widths.size());
    int cin = widths[static_cast<std::size_t>(e - 1)];
    for (int i = 0; i < e - 1; ++i) {
        const int skip = widths[static_cast<std::size_t>(e - 2 - i)];
        dec.stages.push_back(make_conv3x3(cin + skip, skip, 1, rng));
        cin = skip;
    }
    dec.head = make_conv3x3(cin, num_classes, 1, rng);
    return dec;
}

}  // namespace

ModelParams init_params(const NetworkConfig& cfg) {
    validate(cfg);
    ModelParams p;
    p.config = cfg;
    Rng root(cfg.seed);
    Rng r0 = root.fork(1);
    p.rgb_encoder = make_encoder(cfg.rgb_channels, cfg.widths, r0);
    Rng r1 = root.fork(2);
    p.t_encoder = make_encoder(cfg.t_channels, cfg.widths, r1);
    Rng r2 = root.fork(3);
    for (int w : cfg.widths) p.fusion.push_back(make_fusion_scale(cfg.fusion, w, r2));
    Rng r3 = root.fork(4);
    p.rgb_decoder = make_decoder(cfg.widths, cfg.num_classes, r3);
    Rng r4 = root.fork(5);
    p.fused_decoder = make_decoder(cfg.widths, cfg.num_classes, r4);
    Rng r5 = root.fork(6);
    p.t_decoder = make_decoder(cfg.widths, cfg.num_classes, r5);
    return p;
}

// ---------------------------------------------------------------------------
// parameter enumeration
// ---------------------------------------------------------------------------

namespace {

void push_conv3x3(std::vector<NamedParam>& out, ParamGroup g, const std::string& prefix,
                  const Conv3x3& c) {
    out.push_back({g, prefix + ".w", c.w});
    out.push_back({g, prefix + ".b", c.b});
}

void push_conv1x1(std::vector<NamedParam>& out, ParamGroup g, const std::string& prefix,
                  const Conv1x1& c) {
    out.push_back({g, prefix + ".w", c.w});
    out.push_back({g, prefix + ".b", c.b});
}

void push_mlp(std::vector<NamedParam>& out, ParamGroup g, const std::string& prefix,
              const DescriptorMlp& m) {
    out.push_back({g, prefix + ".w1", m.w1});
    out.push_back({g, prefix + ".b1", m.b1});
    out.push_back({g, prefix + ".w2", m.w2});
    out.push_back({g, prefix + ".b2", m.b2});
}

void push_encoder(std::vector<NamedParam>& out, ParamGroup g, const EncoderParams& e) {
    for (std::size_t i = 0; i < e.stages.size(); ++i) {
        push_conv3x3(out, g, "stage" + std::to_string(i), e.stages[i]);
    }
}

void push_decoder(std::vector<NamedParam>& out, ParamGroup g, const DecoderParams& d) {
    for (std::size_t i = 0; i < d.stages.size(); ++i) {
        push_conv3x3(out, g, "stage" + std::to_string(i), d.stages[i]);
    }
    push_conv3x3(out, g, "head", d.head);
}

}  // namespace

std::vector<NamedParam> all_parameters(const ModelParams& p) {
    std::vector<NamedParam> out;
    push_encoder(out, ParamGroup::RgbEncoder, p.rgb_encoder);
    push_encoder(out, ParamGroup::TEncoder, p.t_encoder);
    for (std::size_t s = 0; s < p.fusion.size(); ++s) {
        const std::string prefix = "scale" + std::to_string(s);
        const FusionScaleParams& f = p.fusion[s];
        push_mlp(out, ParamGroup::Sff, prefix + ".rgb_mlp", f.rgb_mlp);
        push_mlp(out, ParamGroup::Sff, prefix + ".t_mlp", f.t_mlp);
        push_mlp(out, ParamGroup::Sff, prefix + ".fused_mlp", f.fused_mlp);
        if (f.kind == FusionKind::Sff) {
            push_conv1x1(out, ParamGroup::Sff, prefix + ".merge", f.merge);
        } else {
            push_conv1x1(out, ParamGroup::Sff, prefix + ".proj_rgb", f.proj_rgb);
            push_conv1x1(out, ParamGroup::Sff, prefix + ".proj_t", f.proj_t);
        }
    }
    push_decoder(out, ParamGroup::RgbDecoder, p.rgb_decoder);
    push_decoder(out, ParamGroup::FusedDecoder, p.fused_decoder);
    push_decoder(out, ParamGroup::TDecoder, p.t_decoder);
    return out;
}

// ---------------------------------------------------------------------------
// forward passes
// ---------------------------------------------------------------------------

namespace {

void validate_input(const NetworkConfig& cfg, const Tensor& x, int channels, const char* name) {
    if (x.ndim() != 3 || x.dim(0) != channels) {
        throw ShapeError(std::string("forward: ") + name + " input must be [" +
                         std::to_string(channels) + ",H,W], got " + shape_to_string(x.shape()));
    }
    const int div = 1 << cfg.stages();
    if (x.dim(1) % div != 0 || x.dim(2) % div != 0) {
        throw ShapeError(std::string("forward: ") + name + " spatial extents " +
                         shape_to_string(x.shape()) + " must be divisible by " +
                         std::to_string(div));
    }
}

std::vector<Tensor> run_encoder(const EncoderParams& enc, const Tensor& x) {
    std::vector<Tensor> feats;
    Tensor cur = x;
    for (const Conv3x3& stage : enc.stages) {
        cur = relu(conv3x3(cur, stage));
        feats.push_back(cur);
    }
    return feats;
}

struct DecodeTrace {
    std::vector<Tensor> stages;
    Tensor logits, prob;
};

// feats[k] is the stream at scale k (deepest last); the decoder walks back up
// with {upsample x2 nearest, skip concat, 3x3 conv, relu} per stage and a
// final {upsample x2 nearest, 3x3 conv} head into class logits.
DecodeTrace run_decoder(const DecoderParams& dec, const std::vector<Tensor>& feats) {
    DecodeTrace tr;
    const int e = static_cast<int>(feats.size());
    Tensor x = feats[static_cast<std::size_t>(e - 1)];
    for (int i = 0; i < e - 1; ++i) {
        Tensor up = upsample_nearest2(x);
        Tensor cat = concat_channels(up, feats[static_cast<std::size_t>(e - 2 - i)]);
        x = relu(conv3x3(cat, dec.stages[static_cast<std::size_t>(i)]));
        tr.stages.push_back(x);
    }
    tr.logits = conv3x3(upsample_nearest2(x), dec.head);
    tr.prob = softmax(tr.logits, 0);
    return tr;
}

std::vector<Tensor> detached(const std::vector<Tensor>& feats) {
    std::vector<Tensor> out;
    out.reserve(feats.size());
    for (const Tensor& f : feats) out.push_back(stop_gradient(f));
    return out;
}

}  // namespace

BranchOutputs forward_full(const ModelParams& p, const Tensor& rgb, const Tensor& t,
                           const ForwardOptions& opts) {
    validate_input(p.config, rgb, p.config.rgb_channels, "rgb");
    validate_input(p.config, t, p.config.t_channels, "thermal");
    if (rgb.dim(1) != t.dim(1) || rgb.dim(2) != t.dim(2)) {
        throw ShapeError("forward: modality extents differ, " + shape_to_string(rgb.shape()) +
                         " vs " + shape_to_string(t.shape()));
    }

    BranchOutputs out;
    out.enc_rgb = run_encoder(p.rgb_encoder, rgb);
    out.enc_t = run_encoder(p.t_encoder, t);

    for (std::size_t s = 0; s < p.fusion.size(); ++s) {
        FusionOutput f = fusion_forward(out.enc_rgb[s], out.enc_t[s], p.fusion[s]);
        out.fuse_maps.push_back(std::move(f.f_fuse));
        out.desc_r.push_back(std::move(f.r));
        out.desc_t.push_back(std::move(f.t));
    }

    DecodeTrace fused = run_decoder(p.fused_decoder, out.fuse_maps);
    DecodeTrace rgb_tr = run_decoder(
        p.rgb_decoder, opts.detach_unimodal_branch ? detached(out.enc_rgb) : out.enc_rgb);
    DecodeTrace t_tr =
        run_decoder(p.t_decoder, opts.detach_unimodal_branch ? detached(out.enc_t) : out.enc_t);

    out.dec_fuse = std::move(fused.stages);
    out.dec_rgb = std::move(rgb_tr.stages);
    out.dec_t = std::move(t_tr.stages);
    out.logits_fuse = std::move(fused.logits);
    out.logits_rgb = std::move(rgb_tr.logits);
    out.logits_t = std::move(t_tr.logits);
    out.p_fuse = std::move(fused.prob);
    out.p_rgb = std::move(rgb_tr.prob);
    out.p_t = std::move(t_tr.prob);
    return out;
}

Tensor forward_unimodal(const EncoderParams& enc, const DecoderParams& dec, const Tensor& x) {
    return run_decoder(dec, run_encoder(enc, x)).prob;
}

// ---------------------------------------------------------------------------
// bundle io
// ---------------------------------------------------------------------------

void save_bundle(const std::string& path, const ModelParams& p) {
    // group -> ordered named tensors
    std::vector<NamedParam> params = all_parameters(p);
    binio::Writer w;
    w.raw(kBundleMagic, sizeof(kBundleMagic));
    w.u32(6);
    for (int g = 0; g < 6; ++g) {
        w.str(kGroupNames[g]);
        std::vector<const NamedParam*> members;
        for (const NamedParam& np : params) {
            if (static_cast<int>(np.group) == g) members.push_back(&np);
        }
        w.u32(static_cast<std::uint32_t>(members.size()));
        for (const NamedParam* np : members) {
            w.str(np->name);
            const Shape& s = np->tensor.shape();
            w.u32(static_cast<std::uint32_t>(s.size()));
            for (int d : s) w.u64(static_cast<std::uint64_t>(d));
            for (double v : np->tensor.values()) w.f64(v);
        }
    }
    binio::Writer out;
    out.raw(w.bytes().data(), w.bytes().size());
    out.u64(binio::fnv1a(w.bytes().data(), w.bytes().size()));
    binio::write_file(path, out.bytes());
}

std::vector<std::string> load_bundle(const std::string& path, ModelParams& dst,
                                     const std::vector<std::string>& groups) {
    std::set<std::string> wanted;
    for (const std::string& g : groups) {
        ParamGroup pg;
        if (!parse_param_group(g, &pg)) {
            throw IoError("load_bundle: unknown parameter group '" + g + "'");
        }
        wanted.insert(g);
    }
    const bool all = wanted.empty();

    const std::vector<std::uint8_t> bytes = binio::read_file(path);
    if (bytes.size() < sizeof(kBundleMagic) + 8) {
        throw IoError("bundle '" + path + "' truncated at byte " + std::to_string(bytes.size()));
    }
    if (std::memcmp(bytes.data(), kBundleMagic, sizeof(kBundleMagic)) != 0) {
        throw IoError("bundle '" + path + "' has a bad magic header");
    }
    const std::size_t body = bytes.size() - 8;
    binio::Reader tail(bytes.data() + body, 8, "bundle checksum");
    if (binio::fnv1a(bytes.data(), body) != tail.u64()) {
        throw IoError("bundle '" + path + "' failed its checksum");
    }

    // index destination tensors by group/name
    std::map<std::string, std::map<std::string, Tensor>> index;
    for (const NamedParam& np : all_parameters(dst)) {
        index[param_group_name(np.group)][np.name] = np.tensor;
    }

    binio::Reader r(bytes.data() + sizeof(kBundleMagic), body - sizeof(kBundleMagic), "bundle");
    std::vector<std::string> loaded;
    const std::uint32_t group_count = r.u32();
    for (std::uint32_t g = 0; g < group_count; ++g) {
        const std::string gname = r.str();
        const std::uint32_t tensor_count = r.u32();
        const bool take = all || wanted.count(gname) > 0;
        auto git = index.find(gname);
        for (std::uint32_t t = 0; t < tensor_count; ++t) {
            const std::string tname = r.str();
            const std::uint32_t nd = r.u32();
            Shape shape;
            std::size_t numel = 1;
            for (std::uint32_t d = 0; d < nd; ++d) {
                shape.push_back(static_cast<int>(r.u64()));
                numel *= static_cast<std::size_t>(shape.back());
            }
            if (!take) {
                for (std::size_t i = 0; i < numel; ++i) r.f64();
                continue;
            }
            if (git == index.end()) {
                throw IoError("bundle group '" + gname + "' not present in the target model");
            }
            auto tit = git->second.find(tname);
            if (tit == git->second.end()) {
                throw IoError("bundle tensor '" + gname + "/" + tname +
                              "' not present in the target model");
            }
            if (tit->second.shape() != shape) {
                throw IoError("bundle tensor '" + gname + "/" + tname + "' has shape " +
                              shape_to_string(shape) + ", expected " +
                              shape_to_string(tit->second.shape()));
            }
            auto& dstv = tit->second.mutable_values();
            for (std::size_t i = 0; i < numel; ++i) dstv[i] = r.f64();
        }
        if (take && git != index.end()) loaded.push_back(gname);
    }

    // every requested group must exist in the file
    for (const std::string& g : wanted) {
        if (std::find(loaded.begin(), loaded.end(), g) == loaded.end()) {
            throw IoError("bundle '" + path + "' is missing parameter group '" + g + "'");
        }
    }
    if (all && loaded.size() != 6) {
        throw IoError("bundle '" + path + "' is missing parameter groups");
    }
    return loaded;
}

}  // namespace rtfd
