#include "buzz/attacks.hpp"
#include "buzz/random.hpp"

#include "doctest.h"

#include <cmath>

using namespace buzz;

namespace {

Tensor uniform(const Shape& shape, double lo, double hi, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(shape);
    for (auto& v : t.data()) v = u(rng);
    return t;
}

// Two-class linear model on 4x4x1 inputs: z = x W + b.
Classifier linear_model(std::uint64_t seed, double weight_scale = 1.0) {
    const auto spec = parse_network("dense2", {4, 4, 1}, 2);
    Tensor w = uniform({16, 2}, -weight_scale, weight_scale, seed);
    Tensor b = uniform({2}, -0.1, 0.1, seed + 1);
    return Classifier(spec, {w, b});
}

Classifier conv_model(std::uint64_t seed) {
    return Classifier::initialize(parse_network("conv3x4 relu pool dense3", {6, 6, 1}, 3), seed);
}

AttackConfig config(AttackFamily f, double eps, std::size_t iters = 1) {
    AttackConfig c;
    c.family = f;
    c.eps = eps;
    c.iterations = iters;
    return c;
}

} // namespace

TEST_CASE("fgsm with zero eps is the identity") {
    const auto model = conv_model(1);
    const auto x = uniform({3, 6, 6, 1}, -0.5, 0.5, 2);
    const int labels[] = {0, 1, 2};
    CHECK(fgsm(model, x, labels, config(AttackFamily::Fgsm, 0.0)) == x);
    const auto judged = judge_attack(model, x, x, labels, {}, false);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(judged[i].linf == 0.0);
        if (model.predict(x)[i] == labels[i]) CHECK_FALSE(judged[i].success);
    }
}

TEST_CASE("fgsm on a logistic model follows the closed-form gradient sign") {
    const auto model = linear_model(3);
    const auto& w = model.params()[0];
    const auto& b = model.params()[1];
    const auto x = uniform({5, 4, 4, 1}, -0.3, 0.3, 4);
    const int labels[] = {0, 1, 1, 0, 1};
    const double eps = 0.1;
    const auto adv = fgsm(model, x, labels, config(AttackFamily::Fgsm, eps));
    for (std::size_t s = 0; s < 5; ++s) {
        double z0 = b[0], z1 = b[1];
        for (std::size_t i = 0; i < 16; ++i) {
            z0 += x[s * 16 + i] * w[i * 2];
            z1 += x[s * 16 + i] * w[i * 2 + 1];
        }
        const double p1 = 1.0 / (1.0 + std::exp(z0 - z1));
        // d CE / d x_i = (p1 - [l == 1]) (w_i1 - w_i0)
        const double coeff = p1 - (labels[s] == 1 ? 1.0 : 0.0);
        for (std::size_t i = 0; i < 16; ++i) {
            const double g = coeff * (w[i * 2 + 1] - w[i * 2]);
            const double moved = adv[s * 16 + i] - x[s * 16 + i];
            CHECK(moved == doctest::Approx(g > 0 ? eps : -eps).epsilon(1e-12));
        }
    }
}

TEST_CASE("fgsm is antisymmetric in the goal direction") {
    const auto model = linear_model(5);
    const auto x = uniform({4, 4, 4, 1}, -0.3, 0.3, 6);
    const int zeros[] = {0, 0, 0, 0}, ones[] = {1, 1, 1, 1};
    auto cfg = config(AttackFamily::Fgsm, 0.05);
    const auto up0 = fgsm(model, x, zeros, cfg);
    const auto up1 = fgsm(model, x, ones, cfg);
    cfg.targeted = true;
    const auto toward1 = fgsm(model, x, ones, cfg);
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(up0[i] - x[i] == doctest::Approx(-(up1[i] - x[i])).epsilon(1e-12));
        CHECK(toward1[i] == up0[i]);
    }
}

TEST_CASE("single-step iterative attacks equal fgsm") {
    const auto model = conv_model(7);
    const auto x = uniform({4, 6, 6, 1}, -0.5, 0.5, 8);
    const int labels[] = {2, 0, 1, 1};
    for (bool targeted : {false, true}) {
        auto f = config(AttackFamily::Fgsm, 0.03);
        f.targeted = targeted;
        const auto reference = fgsm(model, x, labels, f);
        for (auto family : {AttackFamily::Bim, AttackFamily::Pgd, AttackFamily::Mim}) {
            auto c = config(family, 0.03, 1);
            c.targeted = targeted;
            c.decay = 0.37;
            CHECK(iterative_attack(model, x, labels, c, 99) == reference);
        }
    }
}

TEST_CASE("L-infinity families respect budget and pixel range") {
    const auto model = conv_model(9);
    Rng rng(10);
    std::uniform_int_distribution<int> label(0, 2);
    std::uniform_real_distribution<double> eps(0.0, 0.05);
    for (auto family : {AttackFamily::Fgsm, AttackFamily::Bim, AttackFamily::Pgd, AttackFamily::Mim}) {
        for (int run = 0; run < 100; ++run) {
            const auto x = uniform({1, 6, 6, 1}, -0.5, 0.5, 1000 + run);
            const int l[] = {label(rng)};
            auto c = config(family, eps(rng), family == AttackFamily::Fgsm ? 1 : 5);
            c.r_init = 0.031;
            c.targeted = run % 2 == 1;
            const auto adv = generate_adversarial(model, x, l, c, run);
            double worst = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) {
                worst = std::max(worst, std::abs(adv[i] - x[i]));
                CHECK(adv[i] >= -0.5);
                CHECK(adv[i] <= 0.5);
            }
            CHECK(worst <= c.linf_budget() + 1e-9);
        }
    }
}

TEST_CASE("zero gradient leaves MIM and BIM in place") {
    const auto spec = parse_network("dense2", {4, 4, 1}, 2);
    const Classifier flat(spec, {Tensor({16, 2}, 0.0), Tensor({2}, 0.0)});
    const auto x = uniform({2, 4, 4, 1}, -0.5, 0.5, 11);
    const int l[] = {0, 1};
    CHECK(iterative_attack(flat, x, l, config(AttackFamily::Mim, 0.02, 10), 1) == x);
    CHECK(iterative_attack(flat, x, l, config(AttackFamily::Bim, 0.02, 10), 1) == x);
}

TEST_CASE("PGD start is seeded") {
    const auto model = conv_model(12);
    const auto x = uniform({2, 6, 6, 1}, -0.4, 0.4, 13);
    const int l[] = {0, 2};
    auto c = config(AttackFamily::Pgd, 0.01, 3);
    c.r_init = 0.03;
    CHECK(iterative_attack(model, x, l, c, 5) == iterative_attack(model, x, l, c, 5));
    CHECK_FALSE(iterative_attack(model, x, l, c, 5) == iterative_attack(model, x, l, c, 6));
}

TEST_CASE("C&W distance matches the distance to a linear decision boundary") {
    const auto model = linear_model(14, 1.0);
    const auto& w = model.params()[0];
    const auto& b = model.params()[1];
    const auto x = uniform({12, 4, 4, 1}, -0.15, 0.15, 15);
    const auto pred = model.predict(x);
    auto c = config(AttackFamily::Cw, 0.0);
    c.cw_iterations = 1000;
    PenaltyTrace trace;
    const auto adv = penalty_attack(model, x, pred, c, &trace);
    const auto after = model.predict(adv);
    double wn = 0.0;
    for (std::size_t i = 0; i < 16; ++i) wn += (w[i * 2 + 1] - w[i * 2]) * (w[i * 2 + 1] - w[i * 2]);
    wn = std::sqrt(wn);
    for (std::size_t s = 0; s < 12; ++s) {
        double m = b[1] - b[0];
        double dist = 0.0;
        for (std::size_t i = 0; i < 16; ++i) m += x[s * 16 + i] * (w[i * 2 + 1] - w[i * 2]);
        const double closed = std::abs(m) / wn;
        for (std::size_t i = 0; i < 16; ++i) dist += (adv[s * 16 + i] - x[s * 16 + i]) * (adv[s * 16 + i] - x[s * 16 + i]);
        dist = std::sqrt(dist);
        CHECK(after[s] != pred[s]);
        CHECK(dist == doctest::Approx(closed).epsilon(0.05));
    }
    // best-kept distortion never increases across search steps
    for (std::size_t r = 1; r < trace.best_distortion.size(); ++r)
        for (std::size_t s = 0; s < 12; ++s) CHECK(trace.best_distortion[r][s] <= trace.best_distortion[r - 1][s]);
}

TEST_CASE("EAD with beta 0 is exactly C&W, and beta > 0 sparsifies") {
    const auto model = conv_model(16);
    const auto x = uniform({3, 6, 6, 1}, -0.4, 0.4, 17);
    const auto pred = model.predict(x);
    auto cw = config(AttackFamily::Cw, 0.0);
    cw.cw_iterations = 60;
    cw.binary_search_steps = 3;
    auto ead = cw;
    ead.family = AttackFamily::Ead;
    CHECK(penalty_attack(model, x, pred, cw) == penalty_attack(model, x, pred, ead));
    ead.beta = 0.05;
    const auto dense = penalty_attack(model, x, pred, cw), sparse = penalty_attack(model, x, pred, ead);
    std::size_t zeros_dense = 0, zeros_sparse = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        zeros_dense += std::abs(dense[i] - x[i]) < 1e-9;
        zeros_sparse += std::abs(sparse[i] - x[i]) < 1e-9;
        CHECK(sparse[i] >= -0.5);
        CHECK(sparse[i] <= 0.5);
    }
    CHECK(zeros_sparse > zeros_dense);
}

TEST_CASE("targeted penalty attack reaches the target") {
    const auto model = conv_model(18);
    const auto x = uniform({4, 6, 6, 1}, -0.3, 0.3, 19);
    const auto pred = model.predict(x);
    std::vector<int> target(4);
    for (std::size_t s = 0; s < 4; ++s) target[s] = pick_target(pred[s], 3, 7, s);
    auto c = config(AttackFamily::Cw, 0.0);
    c.targeted = true;
    c.cw_iterations = 300;
    const auto adv = penalty_attack(model, x, target, c);
    const auto judged = judge_attack(model, x, adv, pred, target, true);
    for (const auto& r : judged) CHECK(r.success);
}

TEST_CASE("success semantics") {
    CHECK(attack_succeeded(3, 1, kAbstain, false));
    CHECK_FALSE(attack_succeeded(1, 1, kAbstain, false));
    CHECK_FALSE(attack_succeeded(kAbstain, 1, kAbstain, false));
    CHECK(attack_succeeded(2, 1, 2, true));
    CHECK_FALSE(attack_succeeded(3, 1, 2, true));
    CHECK_FALSE(attack_succeeded(1, 1, 1, true));
    for (std::size_t i = 0; i < 200; ++i) {
        const int t = pick_target(static_cast<int>(i % 5), 5, 3, i);
        CHECK(t != static_cast<int>(i % 5));
        CHECK(t >= 0);
        CHECK(t < 5);
        CHECK(t == pick_target(static_cast<int>(i % 5), 5, 3, i));
    }
}

TEST_CASE("invalid requests are rejected") {
    const auto model = conv_model(20);
    const auto x = uniform({2, 6, 6, 1}, -0.5, 0.5, 21);
    const int bad[] = {0, 3};
    const int good[] = {0, 1};
    CHECK_THROWS(fgsm(model, x, bad, config(AttackFamily::Fgsm, 0.1)));
    CHECK_THROWS(fgsm(model, x, std::span<const int>(good, 1), config(AttackFamily::Fgsm, 0.1)));
    CHECK_THROWS(fgsm(model, x, good, config(AttackFamily::Fgsm, -0.1)));
    CHECK_THROWS(iterative_attack(model, x, good, config(AttackFamily::Cw, 0.1), 0));
}
