#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rtfd/layers.hpp"
#include "rtfd/modality.hpp"
#include "rtfd/sff.hpp"

namespace rtfd {

// Desk-scale three-branch network: two strided-conv encoders, one fusion
// block per scale, and three mirrored decoders (RGB, fused, Thermal). The
// unimodal decoders consume raw encoder features only, so an RGB-only or
// Thermal-only forward needs nothing beyond its own encoder/decoder groups.
struct NetworkConfig {
    int rgb_channels = 3;
    int t_channels = 1;
    std::vector<int> widths{8, 16, 32};  // one entry per encoder stage
    int num_classes = 4;
    FusionKind fusion = FusionKind::Sff;
    std::uint64_t seed = 0;

    int stages() const { return static_cast<int>(widths.size()); }
};

struct EncoderParams {
    std::vector<Conv3x3> stages;  // stride 2 each
};

struct DecoderParams {
    std::vector<Conv3x3> stages;  // stride 1, after upsample + skip concat
    Conv3x3 head;                 // stride 1, to num_classes logits
};

enum class ParamGroup { RgbEncoder, TEncoder, Sff, RgbDecoder, FusedDecoder, TDecoder };

const char* param_group_name(ParamGroup g);
bool parse_param_group(const std::string& name, ParamGroup* out);

struct ModelParams {
    NetworkConfig config;
    EncoderParams rgb_encoder, t_encoder;
    std::vector<FusionScaleParams> fusion;  // serialized under group "sff"
    DecoderParams rgb_decoder, fused_decoder, t_decoder;
};

/// Validates the config and draws all parameters from config.seed.
ModelParams init_params(const NetworkConfig& cfg);

struct NamedParam {
    ParamGroup group;
    std::string name;
    Tensor tensor;
};

/// Every trainable tensor, in a stable order, each in exactly one group.
std::vector<NamedParam> all_parameters(const ModelParams& p);

struct BranchOutputs {
    Tensor p_rgb, p_fuse, p_t;                      // [Cc,H,W], per-pixel simplex
    Tensor logits_rgb, logits_fuse, logits_t;       // [Cc,H,W]
    std::vector<Tensor> enc_rgb, enc_t;             // per scale
    std::vector<Tensor> fuse_maps;                  // per scale (fusion outputs)
    std::vector<Tensor> dec_rgb, dec_fuse, dec_t;   // per decoder stage
    std::vector<ChannelDescriptor> desc_r, desc_t;  // per scale
};

struct ForwardOptions {
    // Feeds the unimodal decoders detached encoder features, leaving the
    // fused path as the only route from a loss back to the encoders. Used by
    // the gradient-isolation checks.
    bool detach_unimodal_branch = false;
};

BranchOutputs forward_full(const ModelParams& p, const Tensor& rgb, const Tensor& t,
                           const ForwardOptions& opts = {});

/// Standalone single-modality inference; touches only the two given groups.
Tensor forward_unimodal(const EncoderParams& enc, const DecoderParams& dec, const Tensor& x);

/// Decoder stage i is supervised against fusion scale stage_scale(i) in the
/// decouple regularizer (matching width and resolution).
int stage_scale(const NetworkConfig& cfg, int stage);

// ---- bundle container ----
// magic "RTFD1"; per-group records (group name, then named tensors: name,
// shape list, raw little-endian 64-bit floats); trailing 64-bit FNV-1a
// checksum of all preceding bytes.

void save_bundle(const std::string& path, const ModelParams& p);

/// Copies values for the requested groups (all groups when empty) from the
/// bundle into dst; names and shapes must match dst's structure. Returns the
/// group names actually loaded.
std::vector<std::string> load_bundle(const std::string& path, ModelParams& dst,
                                     const std::vector<std::string>& groups = {});

}  // namespace rtfd
