#pragma once

#include <cstdint>
#include <vector>

#include "rtfd/tensor.hpp"

namespace rtfd {

// Global pixel confusion matrix, reference-major.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes);

    void add(const std::vector<int>& pred, const std::vector<int>& ref);
    void add_pixel(int ref, int pred);
    /// Exact merge for fanned-out evaluation (counts are additive).
    void merge(const ConfusionMatrix& other);

    int num_classes() const { return classes_; }
    std::uint64_t count(int ref, int pred) const;
    std::uint64_t total() const;

private:
    int classes_;
    std::vector<std::uint64_t> m_;
};

struct ClassMetrics {
    std::uint64_t tp = 0, fp = 0, fn = 0;
    bool present = false;  // class appears in prediction or reference
    bool in_ref = false;
    double iou = 0.0;
    double recall = 0.0;
};

std::vector<ClassMetrics> per_class_metrics(const ConfusionMatrix& cm);

/// Mean IoU over classes present in prediction or reference; classes absent
/// from both are excluded from the mean.
double mean_iou(const ConfusionMatrix& cm);

/// Mean per-class recall over classes present in the reference.
double mean_acc(const ConfusionMatrix& cm);

/// Per-pixel argmax over the class axis of a [Cc,H,W] map; ties break toward
/// the smallest class index.
std::vector<int> argmax_classes(const Tensor& p);

}  // namespace rtfd
