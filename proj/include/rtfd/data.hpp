#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rtfd/modality.hpp"
#include "rtfd/rng.hpp"
#include "rtfd/tensor.hpp"

namespace rtfd {

// Synthetic bimodal corpus. Class visibility is modality-dependent by
// construction: class 1 renders into RGB only, class 2 into thermal only,
// class 3 into both; labels always follow the geometry, so neither modality
// alone can segment everything.

enum class Visibility { RgbOnly, ThermalOnly, Both };
enum class ObjectKind { Rectangle, Disc };

struct ObjectMeta {
    int cls = 0;
    ObjectKind kind = ObjectKind::Rectangle;
    // Rectangle: inclusive bounds x0,y0,x1,y1. Disc: cx,cy,r,0.
    int a = 0, b = 0, c = 0, d = 0;
    Visibility visibility = Visibility::Both;
};

struct BimodalSample {
    Tensor rgb;              // [3,H,W] in [0,1]
    Tensor thermal;          // [1,H,W] in [0,1]
    std::vector<int> label;  // H*W entries in {0..Cc-1}
    std::vector<ObjectMeta> objects;
};

struct CorpusSpec {
    int train_count = 200;
    int test_count = 50;
    int height = 32;
    int width = 32;
    int num_classes = 4;  // background + {RGB-only, thermal-only, both}
    int min_objects = 1;
    int max_objects = 3;
    double noise_sigma = 0.12;
    std::uint64_t seed = 0;
};

struct Corpus {
    CorpusSpec spec;
    std::vector<BimodalSample> train, test;
};

// Rendering rules. Object detection is easy in every modality that sees the
// object, but the class cue inside one modality has a per-object margin:
// classes 1 and 3 share the same green pedestal in RGB and differ only by
// the sign of a variable red/blue tilt, and classes 2 and 3 occupy nearby
// thermal bands. Cross-modally the classes are trivially separable (class 2
// is RGB-dark, class 3 is RGB-tilted), so the fused stream always has easy
// evidence where a single stream may have almost none.
struct Palette {
    double rgb_background[3];
    double t_background;
    double object_green;            // G pedestal of classes 1 and 3 in RGB
    double object_base;             // R/B base level the tilt is applied to
    double tilt_min, tilt_max;      // per-object |R-B|/2, sign +1 for class 1, -1 for class 3
    double cls2_t_min, cls2_t_max;  // thermal band of class 2 (RGB-invisible)
    double cls3_t_min, cls3_t_max;  // thermal band of class 3
};

const Palette& palette();

Corpus generate(const CorpusSpec& spec);

enum class DropMode { Zero, Noise };

/// Replaces one modality with zeros (signal loss) or uniform noise
/// (corruption); the label and the other modality stay untouched.
BimodalSample drop_modality(const BimodalSample& s, Modality which, DropMode mode,
                            std::uint64_t seed = 0);

void save_corpus(const std::string& path, const Corpus& corpus);
Corpus load_corpus(const std::string& path);

}  // namespace rtfd
