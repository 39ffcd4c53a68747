#pragma once

#include <algorithm>
#include <cstdint>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fairlab {

struct PredictionRecord {
    int predicted_class = 0;
    int true_class = 0;
    int true_domain = 0;  // which domain test set the record came from
};

struct MetricsReport {
    std::vector<std::vector<double>> acc_grid;  // [class][domain]
    std::vector<double> per_domain_accuracy;
    double mean_accuracy = 0.0;
    double bias_score = 0.0;
    std::vector<std::vector<std::vector<std::int64_t>>> confusion;  // [domain][true][pred]
};

namespace detail {
inline void check_record(const PredictionRecord& r, int n_classes, int n_domains) {
    if (r.predicted_class < 0 || r.predicted_class >= n_classes || r.true_class < 0 ||
        r.true_class >= n_classes || r.true_domain < 0 || r.true_domain >= n_domains)
        throw std::invalid_argument("prediction record index out of range");
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Mean per-class per-domain accuracy. Cell (c,d) is the accuracy over
// class-c examples evaluated under the domain-d test set.
// ---------------------------------------------------------------------------
struct AccuracyGrid {
    std::vector<std::vector<double>> grid;
    std::vector<double> per_domain;
    double mean = 0.0;
};

inline AccuracyGrid accuracy_grid(const std::vector<PredictionRecord>& records, int n_classes,
                                  int n_domains) {
    std::vector<std::vector<std::int64_t>> total(n_classes, std::vector<std::int64_t>(n_domains, 0));
    std::vector<std::vector<std::int64_t>> correct(n_classes, std::vector<std::int64_t>(n_domains, 0));
    for (const auto& r : records) {
        detail::check_record(r, n_classes, n_domains);
        ++total[r.true_class][r.true_domain];
        if (r.predicted_class == r.true_class) ++correct[r.true_class][r.true_domain];
    }
    AccuracyGrid out;
    out.grid.assign(n_classes, std::vector<double>(n_domains, 0.0));
    out.per_domain.assign(n_domains, 0.0);
    for (int c = 0; c < n_classes; ++c)
        for (int d = 0; d < n_domains; ++d) {
            if (total[c][d] == 0)
                throw std::invalid_argument("accuracy_grid: empty cell (class " + std::to_string(c) +
                                            ", domain " + std::to_string(d) + ")");
            out.grid[c][d] = static_cast<double>(correct[c][d]) / static_cast<double>(total[c][d]);
            out.per_domain[d] += out.grid[c][d];
            out.mean += out.grid[c][d];
        }
    for (int d = 0; d < n_domains; ++d) out.per_domain[d] /= static_cast<double>(n_classes);
    out.mean /= static_cast<double>(n_classes * n_domains);
    return out;
}

// ---------------------------------------------------------------------------
// Mean bias score over records pooled from both domain test sets:
// (1/N) * sum_c max(Gr_c, Col_c) / (Gr_c + Col_c) - 0.5, where Gr_c/Col_c
// count class-c predictions made on the domain-1/domain-0 test set. A class
// never predicted contributes the maximal 0.5 (with a warning).
// ---------------------------------------------------------------------------
inline double mean_bias_score(const std::vector<PredictionRecord>& records, int n_classes,
                              bool warn_unpredicted = true) {
    std::vector<std::int64_t> col(n_classes, 0), gr(n_classes, 0);
    for (const auto& r : records) {
        detail::check_record(r, n_classes, 2);
        if (r.true_domain == 0) ++col[r.predicted_class];
        else ++gr[r.predicted_class];
    }
    double acc = 0.0;
    for (int c = 0; c < n_classes; ++c) {
        const std::int64_t total = col[c] + gr[c];
        if (total == 0) {
            if (warn_unpredicted)
                std::cerr << "mean_bias_score: warning: class " << c
                          << " never predicted, contributes the maximal 0.5\n";
            acc += 1.0;  // max/total taken as 1 in the never-predicted limit
            continue;
        }
        acc += static_cast<double>(std::max(col[c], gr[c])) / static_cast<double>(total);
    }
    return acc / static_cast<double>(n_classes) - 0.5;
}

// ---------------------------------------------------------------------------
// Bias amplification for one binary-group attribute: the predicted share of
// the training-majority group minus its training share. Negative means the
// model is fairer than its data.
// ---------------------------------------------------------------------------
struct BiasAmplification {
    double value = 0.0;
    int majority_group = 0;
    bool tie_flagged = false;
};

inline BiasAmplification bias_amplification(std::pair<std::int64_t, std::int64_t> pred_pos_by_group,
                                            std::pair<std::int64_t, std::int64_t> train_pos_by_group) {
    const auto [pa, pb] = pred_pos_by_group;
    const auto [na, nb] = train_pos_by_group;
    if (na + nb <= 0) throw std::invalid_argument("bias_amplification: empty training counts");
    if (pa + pb <= 0) throw std::invalid_argument("bias_amplification: empty prediction counts");
    BiasAmplification out;
    out.tie_flagged = na == nb;
    out.majority_group = nb > na ? 1 : 0;  // ties resolve to group a
    const double pred_share = out.majority_group == 0
                                  ? static_cast<double>(pa) / static_cast<double>(pa + pb)
                                  : static_cast<double>(pb) / static_cast<double>(pa + pb);
    const double train_share = out.majority_group == 0
                                   ? static_cast<double>(na) / static_cast<double>(na + nb)
                                   : static_cast<double>(nb) / static_cast<double>(na + nb);
    out.value = pred_share - train_share;
    return out;
}

// Mean bias amplification over classes for a two-domain bundle: per class,
// group counts are its training domain counts and its per-domain-test-set
// prediction counts.
inline double mean_bias_amplification(const std::vector<PredictionRecord>& records, int n_classes,
                                      const std::vector<std::vector<std::int64_t>>& train_counts) {
    std::vector<std::int64_t> p0(n_classes, 0), p1(n_classes, 0);
    for (const auto& r : records) {
        detail::check_record(r, n_classes, 2);
        if (r.true_domain == 0) ++p0[r.predicted_class];
        else ++p1[r.predicted_class];
    }
    double acc = 0.0;
    int counted = 0;
    for (int c = 0; c < n_classes; ++c) {
        if (p0[c] + p1[c] == 0) continue;  // class never predicted: no share defined
        const BiasAmplification ba =
            bias_amplification({p0[c], p1[c]}, {train_counts[c][0], train_counts[c][1]});
        acc += ba.value;
        ++counted;
    }
    return counted > 0 ? acc / static_cast<double>(counted) : 0.0;
}

// ---------------------------------------------------------------------------
// Confusion matrix for one domain test set: entry (true, pred).
// ---------------------------------------------------------------------------
inline std::vector<std::vector<std::int64_t>> confusion_matrix(
    const std::vector<PredictionRecord>& records, int n_classes) {
    std::vector<std::vector<std::int64_t>> grid(n_classes, std::vector<std::int64_t>(n_classes, 0));
    for (const auto& r : records) {
        detail::check_record(r, n_classes, 1 << 30);
        ++grid[r.true_class][r.predicted_class];
    }
    return grid;
}

}  // namespace fairlab
