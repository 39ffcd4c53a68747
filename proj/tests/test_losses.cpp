#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fairlab/losses.hpp"
#include "fairlab/ops.hpp"
#include "fairlab/rng.hpp"

using namespace fairlab;
using D = double;

namespace {

// Straight-line re-implementations used as value oracles.
double simsiam_ref(const Tensor<D>& p1, const Tensor<D>& z2, const Tensor<D>& p2,
                   const Tensor<D>& z1) {
    auto half = [](const Tensor<D>& p, const Tensor<D>& z) {
        const int B = p.dim(0), M = p.dim(1);
        double acc = 0;
        for (int i = 0; i < B; ++i) {
            double np = 0, nz = 0, dot = 0;
            for (int j = 0; j < M; ++j) {
                np += p.values()[i * M + j] * p.values()[i * M + j];
                nz += z.values()[i * M + j] * z.values()[i * M + j];
                dot += p.values()[i * M + j] * z.values()[i * M + j];
            }
            acc -= dot / (std::sqrt(np) * std::sqrt(nz));
        }
        return acc / B;
    };
    return 0.5 * half(p1, z2) + 0.5 * half(p2, z1);
}

double kl_ref(const Tensor<D>& s, const Tensor<D>& t, double kappa) {
    const int B = s.dim(0), K = s.dim(1);
    double acc = 0;
    for (int i = 0; i < B; ++i) {
        std::vector<double> ps(K), pt(K);
        double zs = 0, zt = 0;
        for (int j = 0; j < K; ++j) {
            ps[j] = std::exp(s.values()[i * K + j] / kappa);
            pt[j] = std::exp(t.values()[i * K + j] / kappa);
            zs += ps[j];
            zt += pt[j];
        }
        for (int j = 0; j < K; ++j) acc += (ps[j] / zs) * std::log((ps[j] / zs) / (pt[j] / zt));
    }
    return acc / B;
}

Tensor<D> random_tensor(Shape shape, Prng& rng, double lo = -2.0, double hi = 2.0) {
    Tensor<D> t = Tensor<D>::zeros(std::move(shape));
    for (auto& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("cross-entropy of uniform two-way logits is ln 2") {
    Tensor<D> logits = Tensor<D>::from({1, 2}, {0.0, 0.0});
    Tensor<D> loss = softmax_cross_entropy(logits, std::vector<int>{0});
    CHECK(loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("cross-entropy with large margin approaches zero") {
    Tensor<D> logits = Tensor<D>::from({1, 2}, {10.0, -10.0});
    Tensor<D> loss = softmax_cross_entropy(logits, std::vector<int>{0});
    // -log sigma evaluated by hand with max-subtraction: log(1 + e^-20)
    CHECK(loss.item() == doctest::Approx(2.0611536224385578e-9).epsilon(1e-6));
}

TEST_CASE("cross-entropy decreases monotonically as the correct margin grows") {
    double prev = std::numeric_limits<double>::infinity();
    for (double s : {1.0, 2.0, 4.0, 8.0, 16.0, 32.0}) {
        Tensor<D> logits = Tensor<D>::from({1, 3}, {s, 0.0, 0.0});
        const double v = softmax_cross_entropy(logits, std::vector<int>{0}).item();
        CHECK(v < prev);
        prev = v;
    }
    CHECK(prev < 1e-12);
}

TEST_CASE("cross-entropy is invariant to per-row constant shifts") {
    Prng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor<D> logits = random_tensor({4, 6}, rng);
        Tensor<D> shifted = logits.clone();
        for (int i = 0; i < 4; ++i) {
            const double c = rng.uniform(-50.0, 50.0);
            for (int j = 0; j < 6; ++j) shifted.values()[i * 6 + j] += c;
        }
        std::vector<int> labels;
        for (int i = 0; i < 4; ++i) labels.push_back(static_cast<int>(rng.uniform_int(6)));
        const double a = softmax_cross_entropy(logits, labels).item();
        const double b = softmax_cross_entropy(shifted, labels).item();
        CHECK(std::abs(a - b) < 1e-12);
    }
}

TEST_CASE("cross-entropy rejects bad inputs") {
    Tensor<D> logits = Tensor<D>::from({1, 2}, {0.0, 0.0});
    CHECK_THROWS(softmax_cross_entropy(logits, std::vector<int>{2}));
    Tensor<D> inf = Tensor<D>::from({1, 2}, {std::numeric_limits<double>::infinity(), 0.0});
    CHECK_THROWS(softmax_cross_entropy(inf, std::vector<int>{0}));
}

TEST_CASE("cross-entropy gradient matches finite differences") {
    Prng rng(17);
    Tensor<D> logits = random_tensor({4, 5}, rng);
    logits.set_requires_grad(true);
    std::vector<int> labels{1, 0, 4, 2};
    Graph<D> g;
    {
        Graph<D>::Scope scope(g);
        logits.zero_grad();
        g.backward(softmax_cross_entropy(logits, labels));
    }
    const double eps = 1e-5;
    for (std::int64_t i = 0; i < logits.size(); ++i) {
        const double keep = logits.values()[i];
        logits.values()[i] = keep + eps;
        const double up = softmax_cross_entropy(logits, labels).item();
        logits.values()[i] = keep - eps;
        const double dn = softmax_cross_entropy(logits, labels).item();
        logits.values()[i] = keep;
        const double fd = (up - dn) / (2 * eps);
        const double an = logits.grad()[i];
        CHECK(std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-4}) < 1e-4);
    }
}

TEST_CASE("neg_cosine landmarks") {
    Tensor<D> a = Tensor<D>::from({1, 2}, {0.3, -0.7});
    CHECK(neg_cosine(a, a, false).item() == doctest::Approx(-1.0).epsilon(1e-12));

    Tensor<D> p = Tensor<D>::from({1, 2}, {1.0, 0.0});
    Tensor<D> z = Tensor<D>::from({1, 2}, {0.0, 1.0});
    CHECK(neg_cosine(p, z, false).item() == doctest::Approx(0.0));

    Tensor<D> z2 = Tensor<D>::from({1, 2}, {1.0, 1.0});
    CHECK(neg_cosine(p, z2, false).item() == doctest::Approx(-1.0 / std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("neg_cosine rejects a zero-norm row and names it") {
    Tensor<D> p = Tensor<D>::from({2, 2}, {1.0, 0.0, 0.0, 0.0});
    Tensor<D> z = Tensor<D>::from({2, 2}, {1.0, 0.0, 1.0, 0.0});
    try {
        neg_cosine(p, z, false);
        FAIL("expected rejection");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("1") != std::string::npos);
    }
}

TEST_CASE("simsiam_loss landmarks") {
    Tensor<D> v = Tensor<D>::from({1, 2}, {0.5, 0.25});
    CHECK(simsiam_loss(v, v, v, v).item() == doctest::Approx(-1.0).epsilon(1e-9));

    Tensor<D> p1 = Tensor<D>::from({1, 2}, {1.0, 0.0});
    Tensor<D> z2 = Tensor<D>::from({1, 2}, {0.0, 1.0});
    Tensor<D> p2 = Tensor<D>::from({1, 2}, {0.0, 1.0});
    Tensor<D> z1 = Tensor<D>::from({1, 2}, {1.0, 0.0});
    CHECK(simsiam_loss(p1, z2, p2, z1).item() == doctest::Approx(0.0));

    // p1=(1,0), z2=(1,1), p2=(0,1), z1=(1,1) -> -1/sqrt(2)
    Tensor<D> q1 = Tensor<D>::from({1, 2}, {1.0, 0.0});
    Tensor<D> t2 = Tensor<D>::from({1, 2}, {1.0, 1.0});
    Tensor<D> q2 = Tensor<D>::from({1, 2}, {0.0, 1.0});
    Tensor<D> t1 = Tensor<D>::from({1, 2}, {1.0, 1.0});
    CHECK(simsiam_loss(q1, t2, q2, t1).item() ==
          doctest::Approx(-1.0 / std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("simsiam_loss stays in [-1, 1] and matches the straight-line oracle") {
    Prng rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor<D> p1 = random_tensor({3, 7}, rng, 0.1, 2.0);
        Tensor<D> z2 = random_tensor({3, 7}, rng, -2.0, 2.0);
        Tensor<D> p2 = random_tensor({3, 7}, rng, -2.0, -0.1);
        Tensor<D> z1 = random_tensor({3, 7}, rng, 0.1, 2.0);
        const double v = simsiam_loss(p1, z2, p2, z1).item();
        CHECK(v >= -1.0 - 1e-12);
        CHECK(v <= 1.0 + 1e-12);
        CHECK(std::abs(v - simsiam_ref(p1, z2, p2, z1)) < 1e-12);
    }
}

TEST_CASE("kl_distill_loss is zero for identical logits") {
    Tensor<D> s = Tensor<D>::from({2, 3}, {1.0, -2.0, 0.5, 3.0, 3.0, -1.0});
    CHECK(kl_distill_loss(s, s.clone(), 4.0).item() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("kl_distill_loss hand example") {
    // student (0,0), teacher (k*ln3, 0): KL((.5,.5) || (.75,.25)) ~ 0.1438
    const double kappa = 4.0;
    Tensor<D> s = Tensor<D>::from({1, 2}, {0.0, 0.0});
    Tensor<D> t = Tensor<D>::from({1, 2}, {kappa * std::log(3.0), 0.0});
    const double expected = 0.5 * std::log(0.5 / 0.75) + 0.5 * std::log(0.5 / 0.25);
    CHECK(kl_distill_loss(s, t, kappa).item() == doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(0.1438).epsilon(1e-3));
}

TEST_CASE("kl_distill_loss is invariant to per-row constant shifts of either side") {
    Prng rng(31);
    for (double kappa : {1.0, 2.5, 4.0}) {
        Tensor<D> s = random_tensor({3, 5}, rng);
        Tensor<D> t = random_tensor({3, 5}, rng);
        Tensor<D> s2 = s.clone();
        Tensor<D> t2 = t.clone();
        for (int i = 0; i < 3; ++i) {
            const double c = rng.uniform(-20.0, 20.0);
            for (int j = 0; j < 5; ++j) {
                s2.values()[i * 5 + j] += c;
                t2.values()[i * 5 + j] += 0.5 * c;
            }
        }
        const double a = kl_distill_loss(s, t, kappa).item();
        const double b = kl_distill_loss(s2, t2, kappa).item();
        CHECK(std::abs(a - b) < 1e-10);
    }
}

TEST_CASE("kl_distill_loss is nonnegative and matches the straight-line oracle") {
    Prng rng(37);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor<D> s = random_tensor({4, 6}, rng);
        Tensor<D> t = random_tensor({4, 6}, rng);
        const double kappa = rng.uniform(0.5, 6.0);
        const double v = kl_distill_loss(s, t, kappa).item();
        CHECK(v >= -1e-15);
        CHECK(std::abs(v - kl_ref(s, t, kappa)) < 1e-12);
    }
}

TEST_CASE("kl teacher-first direction also checks out") {
    Tensor<D> s = Tensor<D>::from({1, 2}, {0.0, 0.0});
    Tensor<D> t = Tensor<D>::from({1, 2}, {4.0 * std::log(3.0), 0.0});
    // KL((.75,.25) || (.5,.5)) = .75 ln 1.5 + .25 ln .5
    const double expected = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
    CHECK(kl_distill_loss(s, t, 4.0, KlDirection::TeacherFirst).item() ==
          doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("uniform confusion loss landmarks") {
    Tensor<D> uniform = Tensor<D>::from({1, 2}, {0.5, 0.5});
    CHECK(uniform_confusion_loss(uniform).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Tensor<D> skewed = Tensor<D>::from({1, 2}, {0.9, 0.1});
    CHECK(uniform_confusion_loss(skewed).item() ==
          doctest::Approx(-0.5 * (std::log(0.9) + std::log(0.1))).epsilon(1e-12));
    CHECK(uniform_confusion_loss(skewed).item() == doctest::Approx(1.2040).epsilon(1e-3));
}

TEST_CASE("uniform confusion loss is minimized by the uniform row") {
    Prng rng(41);
    for (int d : {2, 3, 5}) {
        const double floor_val = std::log(static_cast<double>(d));
        for (int trial = 0; trial < 40; ++trial) {
            Tensor<D> q = Tensor<D>::zeros({1, d});
            double total = 0;
            for (auto& v : q.values()) {
                v = rng.uniform(0.01, 1.0);
                total += v;
            }
            for (auto& v : q.values()) v /= total;
            CHECK(uniform_confusion_loss(q).item() >= floor_val - 1e-12);
        }
    }
}
