#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "fairlab/ops.hpp"
#include "fairlab/tensor.hpp"

namespace fairlab {

// Norms and log arguments are clamped here to stay clear of singularities.
inline constexpr double kNumericFloor = 1e-12;

// ---------------------------------------------------------------------------
// Mean softmax cross-entropy over a batch of logits [B x K].
// Gradient w.r.t. logits is (softmax - onehot) / B.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> softmax_cross_entropy(Tensor<T> logits, std::span<const int> labels) {
    detail::require(logits.rank() == 2, "softmax_cross_entropy: logits must be [B x K], got " +
                                            shape_str(logits.shape()));
    const int B = logits.dim(0), K = logits.dim(1);
    detail::require(static_cast<int>(labels.size()) == B,
                    "softmax_cross_entropy: label count mismatch");
    if (!detail::all_finite(logits.values()))
        throw std::invalid_argument("softmax_cross_entropy: non-finite logits");
    for (int y : labels)
        detail::require(y >= 0 && y < K,
                        "softmax_cross_entropy: label out of range: " + std::to_string(y));

    auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(B) * K);
    const T* pl = logits.values().data();
    T loss = 0;
    for (int i = 0; i < B; ++i) {
        T mx = pl[i * K];
        for (int j = 1; j < K; ++j) mx = std::max(mx, pl[i * K + j]);
        T denom = 0;
        for (int j = 0; j < K; ++j) {
            const T e = std::exp(pl[i * K + j] - mx);
            (*probs)[i * K + j] = e;
            denom += e;
        }
        for (int j = 0; j < K; ++j) (*probs)[i * K + j] /= denom;
        loss += std::log(denom) - (pl[i * K + labels[i]] - mx);
    }
    loss /= static_cast<T>(B);
    Tensor<T> out = Tensor<T>::scalar(loss);
    std::vector<int> lab(labels.begin(), labels.end());
    detail::record_op(logits.requires_grad(), out, [logits, out, probs, lab]() mutable {
        const int B = logits.dim(0), K = logits.dim(1);
        logits.ensure_grad();
        T* dl = logits.grad().data();
        const T g = out.grad()[0] / static_cast<T>(B);
        for (int i = 0; i < B; ++i)
            for (int j = 0; j < K; ++j)
                dl[i * K + j] += g * ((*probs)[i * K + j] - (j == lab[i] ? T(1) : T(0)));
    });
    return out;
}

template <typename T>
Tensor<T> softmax_cross_entropy(Tensor<T> logits, const std::vector<int>& labels) {
    return softmax_cross_entropy(logits, std::span<const int>(labels.data(), labels.size()));
}

// ---------------------------------------------------------------------------
// Mean negative cosine similarity between matched rows of p and z, both
// [B x M]. With stop_grad_z the target branch is treated as a constant and
// receives no gradient at all.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> neg_cosine(Tensor<T> p, Tensor<T> z, bool stop_grad_z) {
    detail::require(p.rank() == 2 && p.shape() == z.shape(),
                    "neg_cosine: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(z.shape()));
    const int B = p.dim(0), M = p.dim(1);
    auto pnorm = std::make_shared<std::vector<T>>(B);
    auto znorm = std::make_shared<std::vector<T>>(B);
    auto cossim = std::make_shared<std::vector<T>>(B);
    const T* pp = p.values().data();
    const T* pz = z.values().data();
    T loss = 0;
    for (int i = 0; i < B; ++i) {
        T np = 0, nz = 0, dot = 0;
        for (int j = 0; j < M; ++j) {
            np += pp[i * M + j] * pp[i * M + j];
            nz += pz[i * M + j] * pz[i * M + j];
            dot += pp[i * M + j] * pz[i * M + j];
        }
        if (np == T(0))
            throw std::invalid_argument("neg_cosine: zero-norm row " + std::to_string(i) + " in p");
        if (nz == T(0))
            throw std::invalid_argument("neg_cosine: zero-norm row " + std::to_string(i) + " in z");
        np = std::max(std::sqrt(np), static_cast<T>(kNumericFloor));
        nz = std::max(std::sqrt(nz), static_cast<T>(kNumericFloor));
        (*pnorm)[i] = np;
        (*znorm)[i] = nz;
        (*cossim)[i] = dot / (np * nz);
        loss -= (*cossim)[i];
    }
    loss /= static_cast<T>(B);
    Tensor<T> out = Tensor<T>::scalar(loss);
    const bool needs = p.requires_grad() || (!stop_grad_z && z.requires_grad());
    detail::record_op(needs, out, [p, z, out, pnorm, znorm, cossim, stop_grad_z]() mutable {
        const int B = p.dim(0), M = p.dim(1);
        const T g = out.grad()[0] / static_cast<T>(B);
        const T* pp = p.values().data();
        const T* pz = z.values().data();
        if (p.requires_grad()) {
            p.ensure_grad();
            T* dp = p.grad().data();
            for (int i = 0; i < B; ++i) {
                const T np = (*pnorm)[i], nz = (*znorm)[i], c = (*cossim)[i];
                for (int j = 0; j < M; ++j)
                    dp[i * M + j] -= g * (pz[i * M + j] / nz - c * pp[i * M + j] / np) / np;
            }
        }
        if (!stop_grad_z && z.requires_grad()) {
            z.ensure_grad();
            T* dz = z.grad().data();
            for (int i = 0; i < B; ++i) {
                const T np = (*pnorm)[i], nz = (*znorm)[i], c = (*cossim)[i];
                for (int j = 0; j < M; ++j)
                    dz[i * M + j] -= g * (pp[i * M + j] / np - c * pz[i * M + j] / nz) / nz;
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Symmetrized two-view loss: each predictor output chases the other view's
// projection, which acts as a stop-gradient target.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> simsiam_loss(Tensor<T> p1, Tensor<T> z2, Tensor<T> p2,
                       Tensor<T> z1) {
    detail::require(p1.shape() == z2.shape() && p2.shape() == z1.shape() && p1.shape() == p2.shape(),
                    "simsiam_loss: shape mismatch across views");
    Tensor<T> half1 = scale(neg_cosine(p1, z2, /*stop_grad_z=*/true), T(0.5));
    Tensor<T> half2 = scale(neg_cosine(p2, z1, /*stop_grad_z=*/true), T(0.5));
    return add(half1, half2);
}

// ---------------------------------------------------------------------------
// Temperature-scaled KL divergence between student and teacher logits. The
// teacher side is constant. The divergence is written student-first, matching
// how the distillation objective is stated; the conventional teacher-first
// direction stays available as a switch.
// ---------------------------------------------------------------------------
enum class KlDirection { StudentFirst, TeacherFirst };

template <typename T>
Tensor<T> kl_distill_loss(Tensor<T> student_logits, Tensor<T> teacher_logits, T kappa,
                          KlDirection direction = KlDirection::StudentFirst) {
    detail::require(student_logits.rank() == 2 && student_logits.shape() == teacher_logits.shape(),
                    "kl_distill_loss: shape mismatch " + shape_str(student_logits.shape()) + " vs " +
                        shape_str(teacher_logits.shape()));
    detail::require(kappa > T(0), "kl_distill_loss: kappa must be > 0");
    if (!detail::all_finite(student_logits.values()) || !detail::all_finite(teacher_logits.values()))
        throw std::invalid_argument("kl_distill_loss: non-finite logits");
    const int B = student_logits.dim(0), K = student_logits.dim(1);

    auto log_softmax = [&](const T* src, std::vector<T>& dst) {
        for (int i = 0; i < B; ++i) {
            T mx = src[i * K] / kappa;
            for (int j = 1; j < K; ++j) mx = std::max(mx, src[i * K + j] / kappa);
            T denom = 0;
            for (int j = 0; j < K; ++j) denom += std::exp(src[i * K + j] / kappa - mx);
            const T lse = std::log(denom) + mx;
            for (int j = 0; j < K; ++j) dst[i * K + j] = src[i * K + j] / kappa - lse;
        }
    };
    auto ls = std::make_shared<std::vector<T>>(static_cast<std::size_t>(B) * K);
    auto lt = std::make_shared<std::vector<T>>(static_cast<std::size_t>(B) * K);
    log_softmax(student_logits.values().data(), *ls);
    log_softmax(teacher_logits.values().data(), *lt);

    auto rowkl = std::make_shared<std::vector<T>>(B);
    T loss = 0;
    for (int i = 0; i < B; ++i) {
        T kl = 0;
        for (int j = 0; j < K; ++j) {
            if (direction == KlDirection::StudentFirst) {
                kl += std::exp((*ls)[i * K + j]) * ((*ls)[i * K + j] - (*lt)[i * K + j]);
            } else {
                kl += std::exp((*lt)[i * K + j]) * ((*lt)[i * K + j] - (*ls)[i * K + j]);
            }
        }
        (*rowkl)[i] = kl;
        loss += kl;
    }
    loss /= static_cast<T>(B);
    Tensor<T> out = Tensor<T>::scalar(loss);
    detail::record_op(student_logits.requires_grad(), out,
                      [student_logits, out, ls, lt, rowkl, kappa, direction]() mutable {
        const int B = student_logits.dim(0), K = student_logits.dim(1);
        student_logits.ensure_grad();
        T* dl = student_logits.grad().data();
        const T g = out.grad()[0] / (static_cast<T>(B) * kappa);
        for (int i = 0; i < B; ++i)
            for (int j = 0; j < K; ++j) {
                const T s = std::exp((*ls)[i * K + j]);
                if (direction == KlDirection::StudentFirst) {
                    dl[i * K + j] += g * s * (((*ls)[i * K + j] - (*lt)[i * K + j]) - (*rowkl)[i]);
                } else {
                    dl[i * K + j] += g * (s - std::exp((*lt)[i * K + j]));
                }
            }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Uniform confusion loss over domain probabilities [B x D]: mean over the
// batch of -(1/D) * sum_d log q_d. Minimized (at ln D) by the uniform row.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> uniform_confusion_loss(Tensor<T> domain_probs) {
    detail::require(domain_probs.rank() == 2,
                    "uniform_confusion_loss: expected [B x D], got " + shape_str(domain_probs.shape()));
    const int B = domain_probs.dim(0), D = domain_probs.dim(1);
    const T floor = static_cast<T>(kNumericFloor);
    const T* q = domain_probs.values().data();
    T loss = 0;
    for (int i = 0; i < B; ++i)
        for (int d = 0; d < D; ++d) loss -= std::log(std::max(q[i * D + d], floor));
    loss /= static_cast<T>(B) * static_cast<T>(D);
    Tensor<T> out = Tensor<T>::scalar(loss);
    detail::record_op(domain_probs.requires_grad(), out, [domain_probs, out, floor]() mutable {
        const int B = domain_probs.dim(0), D = domain_probs.dim(1);
        domain_probs.ensure_grad();
        T* dq = domain_probs.grad().data();
        const T* q = domain_probs.values().data();
        const T g = out.grad()[0] / (static_cast<T>(B) * static_cast<T>(D));
        for (int i = 0; i < B * D; ++i)
            if (q[i] > floor) dq[i] -= g / q[i];
    });
    return out;
}

}  // namespace fairlab
