#include "rtfd/kernels.hpp"

#include <cstdlib>
#include <stdexcept>
#include <string>

namespace rtfd::kernels {
namespace {

const KernelTable& choose() {
    const char* env = std::getenv("RTFD_KERNELS");
    const std::string mode = env ? env : "auto";
    if (mode == "scalar") return scalar_table();
    if (mode == "avx2") {
        const KernelTable* t = avx2_table();
        if (!t) throw std::runtime_error("RTFD_KERNELS=avx2 requested but AVX2 is unavailable");
        return *t;
    }
    if (mode != "auto" && !mode.empty()) {
        throw std::runtime_error("unknown RTFD_KERNELS value '" + mode + "' (expected scalar|avx2|auto)");
    }
    const KernelTable* t = avx2_table();
    return t ? *t : scalar_table();
}

}  // namespace

const KernelTable& active() {
    static const KernelTable& table = choose();
    return table;
}

std::string active_name() { return active().name; }

}  // namespace rtfd::kernels
