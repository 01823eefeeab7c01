#include "buzz/attacks.hpp"

#include "buzz/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace buzz {

namespace {

void check_request(const Classifier& source, const Tensor& batch, std::span<const int> goal, const AttackConfig& cfg) {
    cfg.validate();
    if (batch.rank() != 4 || batch.shape()[0] != goal.size()) {
        throw std::invalid_argument("attack: batch " + shape_str(batch.shape()) + " does not match " +
                                    std::to_string(goal.size()) + " goal labels");
    }
    for (int g : goal) {
        if (g < 0 || static_cast<std::size_t>(g) >= source.class_count()) {
            throw std::invalid_argument("attack: label " + std::to_string(g) + " outside [0," +
                                        std::to_string(source.class_count()) + ")");
        }
    }
}

// +1 climbs the true-class loss, -1 descends the target-class loss.
double direction(const AttackConfig& cfg) { return cfg.targeted ? -1.0 : 1.0; }

void clip_inplace(Tensor& t, double lo, double hi) {
    for (auto& v : t.data()) v = std::clamp(v, lo, hi);
}

void project_ball(Tensor& adv, const Tensor& clean, double radius, double lo, double hi) {
    for (std::size_t i = 0; i < adv.size(); ++i) {
        adv[i] = std::clamp(std::clamp(adv[i], clean[i] - radius, clean[i] + radius), lo, hi);
    }
}

} // namespace

Tensor fgsm(const Classifier& source, const Tensor& batch, std::span<const int> goal, const AttackConfig& cfg) {
    check_request(source, batch, goal, cfg);
    const Tensor g = source.loss_gradient(batch, goal);
    const double step = direction(cfg) * cfg.eps;
    Tensor adv = batch;
    for (std::size_t i = 0; i < adv.size(); ++i) {
        const double s = g[i] > 0 ? 1.0 : (g[i] < 0 ? -1.0 : 0.0);
        adv[i] = std::clamp(batch[i] + step * s, cfg.lo, cfg.hi);
    }
    return adv;
}

Tensor iterative_attack(const Classifier& source, const Tensor& batch, std::span<const int> goal,
                        const AttackConfig& cfg, std::uint64_t seed) {
    check_request(source, batch, goal, cfg);
    if (!(cfg.family == AttackFamily::Bim || cfg.family == AttackFamily::Pgd || cfg.family == AttackFamily::Mim)) {
        throw std::invalid_argument("iterative_attack: family " + to_string(cfg.family) + " is not iterative");
    }
    const double budget = cfg.linf_budget();
    const double step = direction(cfg) * cfg.eps;
    const std::size_t n = batch.shape()[0], per = batch.size() / std::max<std::size_t>(n, 1);
    Tensor adv = batch;
    if (cfg.family == AttackFamily::Pgd && cfg.r_init > 0.0) {
        Rng rng(derive_seed(seed, "pgd-start"));
        std::uniform_real_distribution<double> u(-cfg.r_init, cfg.r_init);
        for (auto& v : adv.data()) v += u(rng);
        project_ball(adv, batch, budget, cfg.lo, cfg.hi);
    }
    Tensor momentum(batch.shape(), 0.0);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const Tensor g = source.loss_gradient(adv, goal);
        const Tensor* dir = &g;
        if (cfg.family == AttackFamily::Mim) {
            for (std::size_t s = 0; s < n; ++s) {
                double l1 = 0.0;
                for (std::size_t j = 0; j < per; ++j) l1 += std::abs(g[s * per + j]);
                for (std::size_t j = 0; j < per; ++j) {
                    const std::size_t i = s * per + j;
                    momentum[i] = cfg.decay * momentum[i] + (l1 > 0.0 ? g[i] / l1 : 0.0);
                }
            }
            dir = &momentum;
        }
        for (std::size_t i = 0; i < adv.size(); ++i) {
            const double d = (*dir)[i];
            adv[i] += step * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0));
        }
        project_ball(adv, batch, budget, cfg.lo, cfg.hi);
    }
    return adv;
}

Tensor penalty_attack(const Classifier& source, const Tensor& batch, std::span<const int> goal,
                      const AttackConfig& cfg, PenaltyTrace* trace) {
    check_request(source, batch, goal, cfg);
    const std::size_t n = batch.shape()[0], per = batch.size() / std::max<std::size_t>(n, 1);
    const std::size_t k = source.class_count();
    const double mid = 0.5 * (cfg.hi + cfg.lo), half = 0.5 * (cfg.hi - cfg.lo);
    const double inf = std::numeric_limits<double>::infinity();
    const double shrink = cfg.beta * cfg.cw_learning_rate;

    auto to_omega = [&](double x) { return std::atanh(std::clamp((x - mid) / half, -1.0 + 1e-12, 1.0 - 1e-12)); };
    Tensor omega0(batch.shape());
    for (std::size_t i = 0; i < batch.size(); ++i) omega0[i] = to_omega(batch[i]);

    std::vector<double> c(n, cfg.initial_c), c_lo(n, cfg.c_lo), c_hi(n, inf), best(n, inf);
    Tensor best_adv = batch, last = batch;
    if (trace) *trace = {};

    for (std::size_t round = 0; round < cfg.binary_search_steps; ++round) {
        Tensor omega = omega0;
        Optimizer adam({.kind = OptimizerKind::Adam, .learning_rate = cfg.cw_learning_rate});
        std::vector<char> hit(n, 0);
        const Tensor weight({n}, std::vector<double>(c));
        for (std::size_t it = 0; it < cfg.cw_iterations; ++it) {
            Tape tape;
            Var w = tape.leaf(omega, true);
            Var xa = add_scalar(scale(tanh(w), half), mid);
            Var dist = sum_per_sample(square(sub(xa, tape.leaf(batch))));
            Var z = source.logits(xa);
            Var margin = cfg.targeted ? sub(max_except(z, goal), pick(z, goal)) : sub(pick(z, goal), max_except(z, goal));
            Var total = sum(add(dist, mul_const(maximum(margin, -cfg.confidence), weight)));
            tape.backward(total);

            // Score the current iterate before moving.
            const Tensor& x_now = xa.value();
            const Tensor& logits = z.value();
            for (std::size_t s = 0; s < n; ++s) {
                const double* row = logits.ptr() + s * k;
                const int g = goal[s];
                double other = -inf;
                for (std::size_t j = 0; j < k; ++j)
                    if (static_cast<int>(j) != g) other = std::max(other, row[j]);
                const bool success = cfg.targeted ? row[g] - other > cfg.confidence : other - row[g] > cfg.confidence;
                if (!success) continue;
                hit[s] = 1;
                double l2sq = 0.0, l1 = 0.0;
                for (std::size_t j = 0; j < per; ++j) {
                    const double d = x_now[s * per + j] - batch[s * per + j];
                    l2sq += d * d;
                    l1 += std::abs(d);
                }
                const double distortion = l2sq + cfg.beta * l1;
                if (distortion < best[s]) {
                    best[s] = distortion;
                    std::copy_n(x_now.ptr() + s * per, per, best_adv.ptr() + s * per);
                }
            }
            last = x_now;

            Tensor grad = w.grad();
            adam.step(std::span<Tensor>(&omega, 1), std::span<const Tensor>(&grad, 1));
            if (shrink > 0.0) {
                // ISTA: soft-threshold the pixel-space perturbation toward x.
                for (std::size_t i = 0; i < omega.size(); ++i) {
                    const double d = mid + half * std::tanh(omega[i]) - batch[i];
                    if (std::abs(d) <= shrink) {
                        omega[i] = omega0[i];
                    } else {
                        omega[i] = to_omega(std::clamp(batch[i] + d - std::copysign(shrink, d), cfg.lo, cfg.hi));
                    }
                }
            }
        }
        for (std::size_t s = 0; s < n; ++s) {
            if (hit[s]) {
                c_hi[s] = std::min(c_hi[s], c[s]);
                c[s] = 0.5 * (c_lo[s] + c_hi[s]);
            } else {
                c_lo[s] = std::max(c_lo[s], c[s]);
                c[s] = std::isfinite(c_hi[s]) ? 0.5 * (c_lo[s] + c_hi[s]) : 2.0 * c[s];
            }
            c[s] = std::clamp(c[s], cfg.c_lo, cfg.c_hi);
        }
        if (trace) {
            trace->best_distortion.push_back(best);
            trace->final_c = c;
        }
    }
    for (std::size_t s = 0; s < n; ++s) {
        if (!std::isfinite(best[s])) std::copy_n(last.ptr() + s * per, per, best_adv.ptr() + s * per);
    }
    clip_inplace(best_adv, cfg.lo, cfg.hi);
    return best_adv;
}

Tensor generate_adversarial(const Classifier& source, const Tensor& batch, std::span<const int> goal,
                            const AttackConfig& cfg, std::uint64_t seed) {
    switch (cfg.family) {
    case AttackFamily::Fgsm: return fgsm(source, batch, goal, cfg);
    case AttackFamily::Bim:
    case AttackFamily::Pgd:
    case AttackFamily::Mim: return iterative_attack(source, batch, goal, cfg, seed);
    case AttackFamily::Cw:
    case AttackFamily::Ead: return penalty_attack(source, batch, goal, cfg);
    }
    throw std::invalid_argument("generate_adversarial: unknown family");
}

bool attack_succeeded(int achieved, int true_label, int target_label, bool targeted) {
    if (targeted) return target_label != true_label && achieved == target_label;
    return !is_abstain(achieved) && achieved != true_label;
}

std::vector<AdvResult> judge_attack(const TargetModel& victim, const Tensor& clean, const Tensor& adversarial,
                                    std::span<const int> true_labels, std::span<const int> target_labels,
                                    bool targeted) {
    if (clean.shape() != adversarial.shape() || clean.rank() != 4 || clean.shape()[0] != true_labels.size()) {
        throw std::invalid_argument("judge_attack: clean/adversarial/label sizes disagree");
    }
    if (targeted && target_labels.size() != true_labels.size()) {
        throw std::invalid_argument("judge_attack: targeted run needs one target label per sample");
    }
    const auto achieved = predict_all(victim, adversarial);
    std::vector<AdvResult> out(true_labels.size());
    for (std::size_t s = 0; s < out.size(); ++s) {
        auto& r = out[s];
        r.adversarial = adversarial.slice0(s);
        r.eta = r.adversarial;
        const Tensor x = clean.slice0(s);
        for (std::size_t i = 0; i < x.size(); ++i) r.eta[i] -= x[i];
        r.achieved_label = achieved[s];
        r.queries_used = 1;
        r.success = attack_succeeded(achieved[s], true_labels[s], targeted ? target_labels[s] : kAbstain, targeted);
        r.linf = linf_norm(r.eta);
        r.l2 = l2_norm(r.eta);
    }
    return out;
}

int pick_target(int true_label, std::size_t class_count, std::uint64_t seed, std::size_t sample_index) {
    if (class_count < 2) throw std::invalid_argument("pick_target: need at least two classes");
    Rng rng(derive_seed(seed, "target", sample_index));
    std::uniform_int_distribution<int> u(0, static_cast<int>(class_count) - 2);
    const int t = u(rng);
    return t >= true_label ? t + 1 : t;
}

} // namespace buzz
