#pragma once

#include <string>
#include <vector>

namespace rtfd {

// Self-contained verification suites behind the `verify` CLI command. Each
// check re-derives its expectation from an independent route (finite
// differences, scalar-loop oracles, brute-force tallies) and never consults
// the implementation path it is checking.

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

CheckResult check_op_gradients();
CheckResult check_end_to_end_gradient();
CheckResult check_exchange_gate_oracle();
CheckResult check_sign_gate_oracle();
CheckResult check_stop_gradient_isolation();
CheckResult check_rdr_mask_oracle();
CheckResult check_metric_oracle();
CheckResult check_broadcast_tiling();
CheckResult check_parameter_separability();

std::vector<CheckResult> run_verification_suites();

}  // namespace rtfd
