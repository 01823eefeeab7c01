#include "buzz/profile.hpp"

#include <cmath>
#include <stdexcept>

namespace buzz {

std::string to_string(AttackFamily family) {
    switch (family) {
    case AttackFamily::Fgsm: return "fgsm";
    case AttackFamily::Bim: return "bim";
    case AttackFamily::Pgd: return "pgd";
    case AttackFamily::Mim: return "mim";
    case AttackFamily::Cw: return "cw";
    case AttackFamily::Ead: return "ead";
    }
    return "?";
}

AttackFamily parse_attack_family(const std::string& name) {
    for (auto f : all_attack_families()) {
        if (to_string(f) == name) return f;
    }
    throw std::invalid_argument("unknown attack family '" + name + "'");
}

const std::vector<AttackFamily>& all_attack_families() {
    static const std::vector<AttackFamily> all = {AttackFamily::Fgsm, AttackFamily::Bim, AttackFamily::Pgd,
                                                  AttackFamily::Mim,  AttackFamily::Cw,  AttackFamily::Ead};
    return all;
}

bool is_linf_family(AttackFamily family) { return family != AttackFamily::Cw && family != AttackFamily::Ead; }

double AttackConfig::linf_budget() const {
    if (family == AttackFamily::Fgsm) return eps;
    return eps * static_cast<double>(iterations);
}

void AttackConfig::validate() const {
    const std::string who = "attack " + to_string(family) + ": ";
    if (!(eps >= 0.0) || !std::isfinite(eps)) throw std::invalid_argument(who + "eps must be >= 0");
    if (!(lo < hi)) throw std::invalid_argument(who + "pixel range needs lo < hi");
    switch (family) {
    case AttackFamily::Fgsm:
        break;
    case AttackFamily::Bim:
    case AttackFamily::Pgd:
    case AttackFamily::Mim:
        if (iterations < 1) throw std::invalid_argument(who + "iterations must be >= 1");
        if (!(r_init >= 0.0)) throw std::invalid_argument(who + "r_init must be >= 0");
        if (!(decay >= 0.0)) throw std::invalid_argument(who + "decay must be >= 0");
        break;
    case AttackFamily::Cw:
    case AttackFamily::Ead:
        if (cw_iterations < 1) throw std::invalid_argument(who + "cw iterations must be >= 1");
        if (binary_search_steps < 1) throw std::invalid_argument(who + "binary search steps must be >= 1");
        if (!(beta >= 0.0)) throw std::invalid_argument(who + "beta must be >= 0");
        if (!(c_lo > 0.0 && c_lo <= initial_c && initial_c <= c_hi)) {
            throw std::invalid_argument(who + "need 0 < c_lo <= initial_c <= c_hi");
        }
        if (!(cw_learning_rate > 0.0)) throw std::invalid_argument(who + "learning rate must be > 0");
        if (!(confidence >= 0.0)) throw std::invalid_argument(who + "confidence must be >= 0");
        break;
    }
}

std::string to_string(TransformFamily family) {
    switch (family) {
    case TransformFamily::Identity: return "identity";
    case TransformFamily::SparseBias: return "sparse-bias";
    case TransformFamily::Gaussian: return "gaussian";
    }
    return "?";
}

AttackConfig DatasetProfile::attack_defaults(AttackFamily family, bool targeted) const {
    AttackConfig c;
    c.family = family;
    c.targeted = targeted;
    switch (family) {
    case AttackFamily::Fgsm:
        c.eps = fgsm_eps;
        break;
    case AttackFamily::Bim:
    case AttackFamily::Pgd:
    case AttackFamily::Mim:
        c.eps = iterative_eps;
        c.iterations = iterative_steps;
        if (family == AttackFamily::Pgd) c.r_init = pgd_r_init;
        if (family == AttackFamily::Mim) c.decay = mim_decay;
        break;
    case AttackFamily::Cw:
        c.cw_iterations = cw_iterations;
        break;
    case AttackFamily::Ead:
        c.cw_iterations = cw_iterations;
        c.beta = ead_beta;
        break;
    }
    return c;
}

std::vector<std::size_t> DatasetProfile::resize_set(std::size_t side) const {
    if (side == 0) throw std::invalid_argument("resize_set: side must be positive");
    std::vector<std::size_t> out;
    for (auto t : reference_resizes) {
        out.push_back(static_cast<std::size_t>(
            std::lround(static_cast<double>(t) * static_cast<double>(side) / static_cast<double>(reference_side))));
    }
    return out;
}

DatasetProfile profile_by_name(const std::string& name) {
    DatasetProfile p;
    p.name = name;
    if (name == "cifar-like") {
        p.transform.family = TransformFamily::SparseBias;
        p.fgsm_eps = 0.05;
        p.iterative_eps = 0.005;
        p.bt2_threshold = 0.7;
    } else if (name == "fashion-like" || name == "synthetic") {
        p.transform.family = TransformFamily::Gaussian;
        p.fgsm_eps = 0.15;
        p.iterative_eps = 0.015;
        p.bt2_threshold = 0.95;
    } else {
        throw std::invalid_argument("unknown profile '" + name + "'");
    }
    return p;
}

std::vector<std::string> profile_names() { return {"fashion-like", "cifar-like", "synthetic"}; }

} // namespace buzz
