#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace buzz {

enum class AttackFamily { Fgsm, Bim, Pgd, Mim, Cw, Ead };

std::string to_string(AttackFamily family);
AttackFamily parse_attack_family(const std::string& name);
const std::vector<AttackFamily>& all_attack_families();
bool is_linf_family(AttackFamily family);

struct AttackConfig {
    AttackFamily family = AttackFamily::Fgsm;
    bool targeted = false;
    double eps = 0.0;           // FGSM budget; per-step size for BIM/PGD/MIM
    std::size_t iterations = 1; // BIM/PGD/MIM steps
    double decay = 1.0;         // MIM momentum decay
    double r_init = 0.0;        // PGD uniform start radius
    std::size_t cw_iterations = 1000;
    std::size_t binary_search_steps = 10;
    double initial_c = 1e-2;
    double c_lo = 1e-3;
    double c_hi = 1e10;
    double cw_learning_rate = 1e-2;
    double beta = 0.0;       // EAD L1 weight
    double confidence = 0.0; // C&W margin
    double lo = -0.5;
    double hi = 0.5;

    // Total L-infinity budget of the L-infinity families.
    double linf_budget() const;

    // Throws std::invalid_argument on out-of-range fields.
    void validate() const;

    bool operator==(const AttackConfig&) const = default;
};

enum class TransformFamily {
    Identity,   // A = I, b = 0
    SparseBias, // A = I, a fraction of b drawn uniformly, rest zero
    Gaussian,   // every entry of A and b Gaussian
};

std::string to_string(TransformFamily family);

struct TransformDistribution {
    TransformFamily family = TransformFamily::Identity;
    double bias_fraction = 0.35;
    double bias_lo = -0.5;
    double bias_hi = 0.5;
    double gaussian_mean = 0.0;
    double gaussian_sigma = 0.1;
    bool share_a = true; // one A for every channel
    bool share_b = true; // one b for every channel

    bool operator==(const TransformDistribution&) const = default;
};

struct DatasetProfile {
    std::string name;
    TransformDistribution transform;
    // Resize targets for reference_side inputs, in layer order.
    std::size_t reference_side = 32;
    std::vector<std::size_t> reference_resizes = {32, 40, 48, 64, 72, 80, 96, 104};
    double fgsm_eps = 0.0;
    double iterative_eps = 0.0;
    std::size_t iterative_steps = 10;
    double mim_decay = 1.0;
    double pgd_r_init = 0.031;
    std::size_t cw_iterations = 1000;
    double ead_beta = 0.01;
    double bt2_threshold = 0.0;   // confidence cutoff of the thresholded BT2 layer
    std::size_t synthetic_rounds = 4; // N
    double synthetic_lambda = 0.1;    // augmentation step

    AttackConfig attack_defaults(AttackFamily family, bool targeted = false) const;

    // reference_resizes scaled to an input side: round(t * side / reference_side).
    std::vector<std::size_t> resize_set(std::size_t side) const;
};

// "fashion-like", "cifar-like" or "synthetic" (grayscale blobs, fashion-like
// transforms and attack budgets).
DatasetProfile profile_by_name(const std::string& name);
std::vector<std::string> profile_names();

} // namespace buzz
