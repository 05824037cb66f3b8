// Confusion-matrix accumulation and mean intersection-over-union.
//
// Ground-truth pixels labelled with the ignore class are skipped entirely;
// predicting the ignore class on a valid pixel still counts as an error.
// Classes absent from both prediction and ground truth (empty union) are
// reported as -1 and excluded from the mean.
#pragma once

#include <cstdint>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rangeseg {

struct MiouReport {
    std::vector<double> per_class;  // IoU per class id, -1 where undefined
    double mean = 0.0;
    int contributing = 0;
};

class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes, int ignore_class = -1)
        : num_classes_(num_classes), ignore_class_(ignore_class) {
        if (num_classes < 1) throw std::invalid_argument("confusion matrix: num_classes must be >= 1");
        if (ignore_class < -1 || ignore_class >= num_classes)
            throw std::invalid_argument("confusion matrix: ignore_class out of range");
        counts_.assign(static_cast<std::size_t>(num_classes) * num_classes, 0);
    }

    int num_classes() const { return num_classes_; }
    int ignore_class() const { return ignore_class_; }

    std::uint64_t at(int gt, int pred) const {
        check_pair(gt, pred);
        return counts_[static_cast<std::size_t>(gt) * num_classes_ + pred];
    }

    void add(int gt, int pred) {
        check_pair(gt, pred);
        if (gt == ignore_class_) return;
        ++counts_[static_cast<std::size_t>(gt) * num_classes_ + pred];
    }

    void add(const std::vector<std::int32_t>& gt, const std::vector<std::int32_t>& pred) {
        if (gt.size() != pred.size())
            throw std::invalid_argument("confusion matrix: label count mismatch, " +
                                        std::to_string(gt.size()) + " ground-truth vs " +
                                        std::to_string(pred.size()) + " predicted");
        for (std::size_t i = 0; i < gt.size(); ++i) add(gt[i], pred[i]);
    }

    void merge(const ConfusionMatrix& other) {
        if (other.num_classes_ != num_classes_ || other.ignore_class_ != ignore_class_)
            throw std::invalid_argument("confusion matrix: merge shape or ignore mismatch");
        for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    }

    MiouReport miou() const {
        MiouReport report;
        report.per_class.assign(num_classes_, -1.0);
        double sum = 0.0;
        for (int c = 0; c < num_classes_; ++c) {
            if (c == ignore_class_) continue;
            std::uint64_t tp = 0, row = 0, col = 0;
            for (int k = 0; k < num_classes_; ++k) {
                row += counts_[static_cast<std::size_t>(c) * num_classes_ + k];
                col += counts_[static_cast<std::size_t>(k) * num_classes_ + c];
            }
            tp = counts_[static_cast<std::size_t>(c) * num_classes_ + c];
            const std::uint64_t uni = row + col - tp;
            if (uni == 0) continue;
            report.per_class[c] = static_cast<double>(tp) / static_cast<double>(uni);
            sum += report.per_class[c];
            ++report.contributing;
        }
        report.mean = report.contributing ? sum / report.contributing : 0.0;
        return report;
    }

    std::string format_report(const std::vector<std::string>& class_names = {}) const {
        if (!class_names.empty() && static_cast<int>(class_names.size()) != num_classes_)
            throw std::invalid_argument("confusion matrix: class name count mismatch");
        const MiouReport report = miou();
        std::ostringstream out;
        out << std::fixed << std::setprecision(4);
        for (int c = 0; c < num_classes_; ++c) {
            if (c == ignore_class_) continue;
            const std::string name = class_names.empty() ? "class " + std::to_string(c)
                                                         : class_names[c];
            out << "  " << std::setw(16) << std::left << name << std::right;
            if (report.per_class[c] < 0.0) out << "   n/a\n";
            else out << std::setw(6) << report.per_class[c] << "\n";
        }
        out << "mIoU " << report.mean << " over " << report.contributing << " classes\n";
        return out.str();
    }

private:
    void check_pair(int gt, int pred) const {
        auto bad = [&](const char* which, int v) {
            throw std::invalid_argument(std::string("confusion matrix: ") + which + " label " +
                                        std::to_string(v) + " outside [0, " +
                                        std::to_string(num_classes_) + ")");
        };
        if (gt < 0 || gt >= num_classes_) bad("ground-truth", gt);
        if (pred < 0 || pred >= num_classes_) bad("predicted", pred);
    }

    int num_classes_;
    int ignore_class_;
    std::vector<std::uint64_t> counts_;
};

}  // namespace rangeseg
