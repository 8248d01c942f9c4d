#include "rtfd/metrics.hpp"

namespace rtfd {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : classes_(num_classes),
      m_(static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(num_classes), 0) {
    if (num_classes < 1) throw DomainError("confusion matrix: need at least one class");
}

void ConfusionMatrix::add_pixel(int ref, int pred) {
    if (ref < 0 || ref >= classes_ || pred < 0 || pred >= classes_) {
        throw DomainError("confusion matrix: class out of range (ref " + std::to_string(ref) +
                          ", pred " + std::to_string(pred) + ")");
    }
    ++m_[static_cast<std::size_t>(ref) * classes_ + pred];
}

void ConfusionMatrix::add(const std::vector<int>& pred, const std::vector<int>& ref) {
    if (pred.size() != ref.size()) {
        throw ShapeError("confusion matrix: prediction and reference sizes differ");
    }
    for (std::size_t i = 0; i < pred.size(); ++i) add_pixel(ref[i], pred[i]);
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.classes_ != classes_) {
        throw ShapeError("confusion matrix: cannot merge different class counts");
    }
    for (std::size_t i = 0; i < m_.size(); ++i) m_[i] += other.m_[i];
}

std::uint64_t ConfusionMatrix::count(int ref, int pred) const {
    return m_[static_cast<std::size_t>(ref) * classes_ + pred];
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (std::uint64_t v : m_) t += v;
    return t;
}

std::vector<ClassMetrics> per_class_metrics(const ConfusionMatrix& cm) {
    const int c = cm.num_classes();
    std::vector<ClassMetrics> out(static_cast<std::size_t>(c));
    for (int k = 0; k < c; ++k) {
        ClassMetrics& s = out[static_cast<std::size_t>(k)];
        s.tp = cm.count(k, k);
        std::uint64_t ref_total = 0, pred_total = 0;
        for (int j = 0; j < c; ++j) {
            ref_total += cm.count(k, j);
            pred_total += cm.count(j, k);
        }
        s.fn = ref_total - s.tp;
        s.fp = pred_total - s.tp;
        s.in_ref = ref_total > 0;
        s.present = (s.tp + s.fp + s.fn) > 0;
        if (s.present) {
            s.iou = static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp + s.fn);
        }
        if (s.in_ref) {
            s.recall = static_cast<double>(s.tp) / static_cast<double>(ref_total);
        }
    }
    return out;
}

double mean_iou(const ConfusionMatrix& cm) {
    double acc = 0.0;
    int n = 0;
    for (const ClassMetrics& s : per_class_metrics(cm)) {
        if (s.present) {
            acc += s.iou;
            ++n;
        }
    }
    return n > 0 ? acc / n : 0.0;
}

double mean_acc(const ConfusionMatrix& cm) {
    double acc = 0.0;
    int n = 0;
    for (const ClassMetrics& s : per_class_metrics(cm)) {
        if (s.in_ref) {
            acc += s.recall;
            ++n;
        }
    }
    return n > 0 ? acc / n : 0.0;
}

std::vector<int> argmax_classes(const Tensor& p) {
    if (p.ndim() != 3) {
        throw ShapeError("argmax_classes: expected [Cc,H,W], got " + shape_to_string(p.shape()));
    }
    const int c = p.dim(0);
    const std::size_t hw = static_cast<std::size_t>(p.dim(1)) * static_cast<std::size_t>(p.dim(2));
    const auto& v = p.values();
    std::vector<int> out(hw, 0);
    for (std::size_t px = 0; px < hw; ++px) {
        int best = 0;
        for (int ch = 1; ch < c; ++ch) {
            if (v[static_cast<std::size_t>(ch) * hw + px] >
                v[static_cast<std::size_t>(best) * hw + px]) {
                best = ch;
            }
        }
        out[px] = best;
    }
    return out;
}

}  // namespace rtfd
