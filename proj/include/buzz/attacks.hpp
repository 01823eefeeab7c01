#pragma once

#include "buzz/models.hpp"
#include "buzz/profile.hpp"
#include "buzz/target.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace buzz {

// White-box attacks on a source classifier. Every function takes a batch
// [N,H,W,C] and one goal label per sample: the true label when untargeted,
// the target label when cfg.targeted. Returns the adversarial batch, always
// inside [cfg.lo, cfg.hi].

Tensor fgsm(const Classifier& source, const Tensor& batch, std::span<const int> goal, const AttackConfig& cfg);

// BIM, PGD and MIM: cfg.iterations steps of size cfg.eps inside the
// L-infinity ball of radius cfg.linf_budget(). The seed drives the PGD start.
Tensor iterative_attack(const Classifier& source, const Tensor& batch, std::span<const int> goal,
                        const AttackConfig& cfg, std::uint64_t seed);

struct PenaltyTrace {
    // Per binary-search step, the best distortion found so far for each sample
    // (infinity until a success).
    std::vector<std::vector<double>> best_distortion;
    std::vector<double> final_c;
};

// C&W (beta == 0) and EAD (beta > 0). Samples without any success come back
// as the final iterate of the last search step.
Tensor penalty_attack(const Classifier& source, const Tensor& batch, std::span<const int> goal,
                      const AttackConfig& cfg, PenaltyTrace* trace = nullptr);

// Dispatch on cfg.family.
Tensor generate_adversarial(const Classifier& source, const Tensor& batch, std::span<const int> goal,
                            const AttackConfig& cfg, std::uint64_t seed);

struct AdvResult {
    Tensor adversarial; // [H,W,C]
    Tensor eta;         // adversarial - clean
    bool success = false;
    int achieved_label = kAbstain;
    std::size_t queries_used = 0;
    double linf = 0.0;
    double l2 = 0.0;
};

// Success against the victim: untargeted needs a label outside {true, abstain};
// targeted needs the target label, and a target different from the true label.
bool attack_succeeded(int achieved, int true_label, int target_label, bool targeted);

// One victim query per sample. target_labels is ignored when untargeted.
std::vector<AdvResult> judge_attack(const TargetModel& victim, const Tensor& clean, const Tensor& adversarial,
                                    std::span<const int> true_labels, std::span<const int> target_labels,
                                    bool targeted);

// Deterministic target choice for targeted runs: uniform over the other
// classes, drawn from derive_seed(seed, "target", sample_index).
int pick_target(int true_label, std::size_t class_count, std::uint64_t seed, std::size_t sample_index);

} // namespace buzz
