#pragma once

#include <string>
#include <vector>

#include "fairlab/gradcheck.hpp"
#include "fairlab/losses.hpp"
#include "fairlab/ops.hpp"
#include "fairlab/rng.hpp"

namespace fairlab {

struct BatteryEntry {
    std::string op;
    double max_rel_error = 0.0;
    bool pass = true;
};

// Finite-difference verification battery over every differentiable op, run in
// 64-bit. Each op gets `instances` random small problems; non-scalar ops are
// scalarized through a fixed random weighted sum.
inline std::vector<BatteryEntry> run_gradcheck_battery(int instances = 20, double eps = 1e-5,
                                                       double tol = 1e-4,
                                                       std::uint64_t seed = 0x5eedf00dULL) {
    using D = double;
    using Fn = std::function<Tensor<D>(const std::vector<Tensor<D>>&)>;
    std::vector<BatteryEntry> results;

    auto rand_tensor = [](Shape shape, Prng& rng, bool rg = true, double lo = -1.5, double hi = 1.5) {
        Tensor<D> t = Tensor<D>::zeros(std::move(shape), rg);
        for (auto& v : t.values()) v = rng.uniform(lo, hi);
        return t;
    };
    // Keeps relu probes away from the kink at zero.
    auto rand_tensor_off_zero = [&](Shape shape, Prng& rng) {
        Tensor<D> t = rand_tensor(std::move(shape), rng);
        for (auto& v : t.values())
            if (std::abs(v) < 1e-3) v += (v >= 0 ? 0.1 : -0.1);
        return t;
    };
    auto scalarize = [](const Tensor<D>& t, Prng& rng) {
        std::vector<D> w(static_cast<std::size_t>(t.size()));
        for (auto& v : w) v = rng.uniform(-1.0, 1.0);
        return weighted_sum(t, std::move(w));
    };

    auto check = [&](const std::string& name,
                     const std::function<std::pair<Fn, std::vector<Tensor<D>>>(Prng&)>& make) {
        BatteryEntry entry{name, 0.0, true};
        for (int inst = 0; inst < instances; ++inst) {
            Prng rng = Prng::from_key({seed, tag(name.c_str()), static_cast<std::uint64_t>(inst)});
            auto [fn, inputs] = make(rng);
            GradCheckReport r = grad_check<D>(fn, std::move(inputs), eps, tol);
            entry.max_rel_error = std::max(entry.max_rel_error, r.max_rel_error);
            entry.pass = entry.pass && r.pass;
        }
        results.push_back(entry);
    };

    check("matmul", [&](Prng& rng) -> std::pair<Fn, std::vector<Tensor<D>>> {
        const int m = 2 + static_cast<int>(rng.uniform_int(3));
        const int k = 2 + static_cast<int>(rng.uniform_int(3));
        const int n = 2 + static_cast<int>(rng.uniform_int(3));
        auto a = rand_tensor({m, k}, rng);
        auto b = rand_tensor({k, n}, rng);
        std::vector<D> w(static_cast<std::size_t>(m) * n);
        for (auto& v : w) v = rng.uniform(-1.0, 1.0);
        Fn f = [w](const std::vector<Tensor<D>>& xs) {
            return weighted_sum(matmul(xs[0], xs[1]), w);
        };
        return {f, {a, b}};
    });

    check("add", [&](Prng& rng) -> std::pair<Fn, std::vector<Tensor<D>>> {
        auto a = rand_tensor({3, 4}, rng);
        auto b = rand_tensor({3, 4}, rng);
        std::vector<D> w(12);
        for (auto& v : w) v = rng.uniform(-1.0, 1.0);
        Fn f = [w](const std::vector<Tensor<D>>& xs) { return weighted_sum(add(xs[0], xs[1]), w); };
        return {f, {a, b}};
    });

    check("add_bias", [&](Prng& rng) -> std::pair<Fn, std::vector<Tensor<D>>> {
        auto a = rand_tensor({3, 4}, rng);
        auto b = rand_tensor({4}, rng);
        std::vector<D> w(12);
        for (auto& v : w) v = rng.uniform(-1.0, 1.0);
        Fn f = [w](const std::vector<Tensor<D>>& xs) { return weighted_sum(add(xs[0], xs[1]), w); };
        return {f, {a, b}};
    });

    check("relu", [&](Prng& rng) -> std::pair<Fn, std::vector<Tensor<D>>> {
        auto x = rand_tensor_off_zero({4, 5}, rng);
        std::vector<D> w(20);
        for (auto& v : w) v = rng.uniform(-1.0, 1.0);
        Fn f = [w](const std::vector<Tensor<D>>& xs) { return weighted_sum(relu(xs[0]), w); };
        return {f, {x}};
    });

    check("conv2d", [&](Prng& rng) -> std::pair<Fn, std::vector<Tensor<D>>> {
        auto x = rand_tensor({2, 2, 4, 4}, rng);
        auto w = rand_tensor({2, 2, 3, 3}, rng);
        auto b = rand_tensor({2}, rng);
        std::vector<D> ww(2 * 2 * 4 * 4);
        for (auto& v : ww) v = rng.uniform(-1.0, 1.0);
        Fn f = [ww](const std::vector<Tensor<D>>& xs) {
            return weighted_sum(conv2d(xs[0], xs[1], xs[2]), ww);
        };
        return {f, {x, w, b}};
    });

    check("avgpool2d", [&](Prng& rng) -> std::pair<Fn, std::vector<Tensor<D>>> {
        auto x = rand_tensor({2, 2, 4, 4}, rng);
        std::vector<D> w(2 * 2 * 2 * 2);
        for (auto& v : w) v = rng.uniform(-1.0, 1.0);
        Fn f = [w](const std::vector<Tensor<D>>& xs) { return weighted_sum(avgpool2d(xs[0], 2), w); };
        return {f, {x}};
    });

    check("batchnorm1d_train", [&](Prng& rng) -> std::pair<Fn, std::vector<Tensor<D>>> {
        auto x = rand_tensor({5, 3}, rng);
        auto gamma = rand_tensor({3}, rng, true, 0.5, 1.5);
        auto beta = rand_tensor({3}, rng);
        std::vector<D> w(15);
        for (auto& v : w) v = rng.uniform(-1.0, 1.0);
        Fn f = [w](const std::vector<Tensor<D>>& xs) {
            Tensor<D> rm = Tensor<D>::zeros({3});
            Tensor<D> rv = Tensor<D>::full({3}, 1.0);
            return weighted_sum(
                batchnorm1d(xs[0], xs[1], xs[2], rm, rv, 0.1, 1e-5, /*training=*/true), w);
        };
        return {f, {x, gamma, beta}};
    });

    check("batchnorm1d_eval", [&](Prng& rng) -> std::pair<Fn, std::vector<Tensor<D>>> {
        auto x = rand_tensor({5, 3}, rng);
        auto gamma = rand_tensor({3}, rng, true, 0.5, 1.5);
        auto beta = rand_tensor({3}, rng);
        std::vector<D> rm_v(3), rv_v(3);
        for (auto& v : rm_v) v = rng.uniform(-0.5, 0.5);
        for (auto& v : rv_v) v = rng.uniform(0.5, 2.0);
        std::vector<D> w(15);
        for (auto& v : w) v = rng.uniform(-1.0, 1.0);
        Fn f = [w, rm_v, rv_v](const std::vector<Tensor<D>>& xs) {
            Tensor<D> rm = Tensor<D>::from({3}, rm_v);
            Tensor<D> rv = Tensor<D>::from({3}, rv_v);
            return weighted_sum(
                batchnorm1d(xs[0], xs[1], xs[2], rm, rv, 0.1, 1e-5, /*training=*/false), w);
        };
        return {f, {x, gamma, beta}};
    });

    check("flatten", [&](Prng& rng) -> std::pair<Fn, std::vector<Tensor<D>>> {
        auto x = rand_tensor({2, 3, 2, 2}, rng);
        std::vector<D> w(24);
        for (auto& v : w) v = rng.uniform(-1.0, 1.0);
        Fn f = [w](const std::vector<Tensor<D>>& xs) { return weighted_sum(flatten(xs[0]), w); };
        return {f, {x}};
    });

    check("scale", [&](Prng& rng) -> std::pair<Fn, std::vector<Tensor<D>>> {
        auto x = rand_tensor({3, 3}, rng);
        const double s = rng.uniform(-2.0, 2.0);
        std::vector<D> w(9);
        for (auto& v : w) v = rng.uniform(-1.0, 1.0);
        Fn f = [w, s](const std::vector<Tensor<D>>& xs) { return weighted_sum(scale(xs[0], s), w); };
        return {f, {x}};
    });

    check("concat", [&](Prng& rng) -> std::pair<Fn, std::vector<Tensor<D>>> {
        auto a = rand_tensor({3, 2}, rng);
        auto b = rand_tensor({3, 4}, rng);
        std::vector<D> w(18);
        for (auto& v : w) v = rng.uniform(-1.0, 1.0);
        Fn f = [w](const std::vector<Tensor<D>>& xs) {
            return weighted_sum(concat_cols(xs[0], xs[1]), w);
        };
        return {f, {a, b}};
    });

    check("softmax_rows", [&](Prng& rng) -> std::pair<Fn, std::vector<Tensor<D>>> {
        auto x = rand_tensor({3, 4}, rng);
        std::vector<D> w(12);
        for (auto& v : w) v = rng.uniform(-1.0, 1.0);
        Fn f = [w](const std::vector<Tensor<D>>& xs) { return weighted_sum(softmax_rows(xs[0]), w); };
        return {f, {x}};
    });

    check("route_rows", [&](Prng& rng) -> std::pair<Fn, std::vector<Tensor<D>>> {
        auto a = rand_tensor({4, 3}, rng);
        auto b = rand_tensor({4, 3}, rng);
        std::vector<int> sel(4);
        for (auto& s : sel) s = static_cast<int>(rng.uniform_int(2));
        std::vector<D> w(12);
        for (auto& v : w) v = rng.uniform(-1.0, 1.0);
        Fn f = [w, sel](const std::vector<Tensor<D>>& xs) {
            return weighted_sum(route_rows<D>({xs[0], xs[1]}, sel), w);
        };
        return {f, {a, b}};
    });

    check("sum", [&](Prng& rng) -> std::pair<Fn, std::vector<Tensor<D>>> {
        auto x = rand_tensor({3, 4}, rng);
        Fn f = [](const std::vector<Tensor<D>>& xs) { return sum(xs[0]); };
        return {f, {x}};
    });

    check("softmax_cross_entropy", [&](Prng& rng) -> std::pair<Fn, std::vector<Tensor<D>>> {
        auto logits = rand_tensor({4, 5}, rng);
        std::vector<int> labels(4);
        for (auto& y : labels) y = static_cast<int>(rng.uniform_int(5));
        Fn f = [labels](const std::vector<Tensor<D>>& xs) {
            return softmax_cross_entropy(xs[0], labels);
        };
        return {f, {logits}};
    });

    check("neg_cosine", [&](Prng& rng) -> std::pair<Fn, std::vector<Tensor<D>>> {
        auto p = rand_tensor({3, 6}, rng);
        auto z = rand_tensor({3, 6}, rng);
        Fn f = [](const std::vector<Tensor<D>>& xs) {
            return neg_cosine(xs[0], xs[1], /*stop_grad_z=*/false);
        };
        return {f, {p, z}};
    });

    check("neg_cosine_stopgrad", [&](Prng& rng) -> std::pair<Fn, std::vector<Tensor<D>>> {
        auto p = rand_tensor({3, 6}, rng);
        auto z = rand_tensor({3, 6}, rng, /*rg=*/false);  // stopped leaf, excluded
        Fn f = [](const std::vector<Tensor<D>>& xs) {
            return neg_cosine(xs[0], xs[1], /*stop_grad_z=*/true);
        };
        return {f, {p, z}};
    });

    check("simsiam_loss", [&](Prng& rng) -> std::pair<Fn, std::vector<Tensor<D>>> {
        auto p1 = rand_tensor({2, 8}, rng);
        auto p2 = rand_tensor({2, 8}, rng);
        auto z1 = rand_tensor({2, 8}, rng, /*rg=*/false);
        auto z2 = rand_tensor({2, 8}, rng, /*rg=*/false);
        Fn f = [](const std::vector<Tensor<D>>& xs) {
            return simsiam_loss(xs[0], xs[1], xs[2], xs[3]);
        };
        return {f, {p1, z2, p2, z1}};
    });

    check("kl_distill_student_first", [&](Prng& rng) -> std::pair<Fn, std::vector<Tensor<D>>> {
        auto s = rand_tensor({3, 5}, rng);
        auto t = rand_tensor({3, 5}, rng, /*rg=*/false);
        const double kappa = rng.uniform(1.0, 5.0);
        Fn f = [kappa](const std::vector<Tensor<D>>& xs) {
            return kl_distill_loss(xs[0], xs[1], kappa, KlDirection::StudentFirst);
        };
        return {f, {s, t}};
    });

    check("kl_distill_teacher_first", [&](Prng& rng) -> std::pair<Fn, std::vector<Tensor<D>>> {
        auto s = rand_tensor({3, 5}, rng);
        auto t = rand_tensor({3, 5}, rng, /*rg=*/false);
        const double kappa = rng.uniform(1.0, 5.0);
        Fn f = [kappa](const std::vector<Tensor<D>>& xs) {
            return kl_distill_loss(xs[0], xs[1], kappa, KlDirection::TeacherFirst);
        };
        return {f, {s, t}};
    });

    check("uniform_confusion_loss", [&](Prng& rng) -> std::pair<Fn, std::vector<Tensor<D>>> {
        // Rows kept inside the simplex interior so the floor clamp stays idle.
        Tensor<D> q = Tensor<D>::zeros({4, 3}, true);
        for (int i = 0; i < 4; ++i) {
            double total = 0;
            std::vector<double> row(3);
            for (auto& v : row) {
                v = rng.uniform(0.1, 1.0);
                total += v;
            }
            for (int j = 0; j < 3; ++j) q.values()[i * 3 + j] = row[j] / total;
        }
        Fn f = [](const std::vector<Tensor<D>>& xs) { return uniform_confusion_loss(xs[0]); };
        return {f, {q}};
    });

    return results;
}

}  // namespace fairlab
