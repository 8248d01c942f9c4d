#pragma once

namespace rtfd {

enum class Modality { Rgb, Thermal };

inline const char* modality_name(Modality m) { return m == Modality::Rgb ? "rgb" : "thermal"; }

}  // namespace rtfd
