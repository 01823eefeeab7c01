// Acceptance run: one PASS/FAIL line per criterion, exit status = failures.
// Criterion 7 and 8 train the desk-scale experiment from configs/desk.ini.

#include "buzz/attacks.hpp"
#include "buzz/blackbox.hpp"
#include "buzz/defense.hpp"
#include "buzz/experiment.hpp"
#include "buzz/metrics.hpp"
#include "buzz/random.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

using namespace buzz;
namespace fs = std::filesystem;

namespace {

// Tolerances and time limits.
constexpr double kDeltaTol = 0.01;
constexpr double kGradTol = 1e-4;
constexpr double kBudgetSlack = 1e-9;
constexpr double kHyperplaneTol = 0.05;
constexpr double kMinCleanAccuracy = 0.80;
constexpr double kMixedVsPureSlack = 0.05;

constexpr double kLimit1 = 1, kLimit2 = 1, kLimit3 = 60, kLimit4 = 300, kLimit5 = 60, kLimit6 = 120;
constexpr double kLimit7 = 1200, kLimit8 = 180, kLimit9 = 120;

struct Outcome {
    bool pass = false;
    std::string detail;
};

Tensor uniform(const Shape& shape, double lo, double hi, Rng& rng) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(shape);
    for (auto& v : t.data()) v = u(rng);
    return t;
}

std::string fmt(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

// ---------------------------------------------------------------------------

Outcome delta_calculator() {
    // defense, p, p_d, 1 - alpha, expected delta
    const std::string published = "defense,p,p_d,defense_success\n"
                                  "vanilla,0.93,0.93,0.28\n"
                                  "buzz-2,0.93,0.85,0.68\n"
                                  "buzz-8,0.93,0.76,0.93\n";
    const double expected[] = {0.66, 0.36, 0.22};
    const auto rows = read_published(published, "table");
    if (rows.size() != 3) return {false, "expected 3 rows"};
    double worst = 0.0;
    std::string detail;
    for (std::size_t i = 0; i < 3; ++i) {
        worst = std::max(worst, std::abs(rows[i].delta - expected[i]));
        detail += (i ? ", " : "") + fmt(rows[i].delta, 3);
    }
    return {worst <= kDeltaTol, "delta " + detail + "; max deviation " + fmt(worst, 2)};
}

Outcome golden_defaults(const fs::path& golden_path) {
    const auto golden = ConfigDoc::load(golden_path);
    std::size_t checked = 0;
    std::string bad;
    for (const auto& sec : golden.sections()) {
        if (sec.name.empty()) continue;
        const auto dot = sec.name.find('.');
        const auto profile = profile_doc(profile_by_name(sec.name.substr(0, dot)));
        const std::string attack = sec.name.substr(dot + 1);
        for (const auto& [key, value] : sec.entries) {
            const auto got = profile.find(attack, key);
            ++checked;
            if (!got || std::abs(std::stod(*got) - std::stod(value)) > 1e-12) bad += " " + sec.name + "." + key;
        }
    }
    if (!bad.empty()) return {false, "mismatch:" + bad};
    return {checked > 0, std::to_string(checked) + " values match"};
}

Outcome gradient_checks() {
    const char* archs[] = {"conv3x3 tanh pool dense5 tanh dense", "dense7 tanh dense", "conv3x2 tanh conv3x2 tanh dense",
                           "tanh dense"};
    Rng rng(3);
    double worst = 0.0;
    constexpr int kChecks = 50;
    for (int t = 0; t < kChecks; ++t) {
        const std::size_t side = 4 + static_cast<std::size_t>(t % 3) * 2, ch = 1 + static_cast<std::size_t>(t % 2);
        const std::size_t k = 2 + static_cast<std::size_t>(t % 4);
        const std::string arch = std::string(archs[t % 4]) + std::to_string(k);
        const auto model = Classifier::initialize(parse_network(arch, {side, side, ch}, k), derive_seed(4, "grad", t));
        const std::size_t n = 1 + static_cast<std::size_t>(t % 3);
        Tensor x = uniform({n, side, side, ch}, -0.5, 0.5, rng);
        std::vector<int> labels(n);
        for (auto& l : labels) l = static_cast<int>(rng() % k);
        const Tensor g = model.loss_gradient(x, labels);
        // Independent loss: summed -log softmax from the logits.
        auto loss = [&](const Tensor& in) {
            const Tensor z = model.logits(in);
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double mx = -1e300;
                for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, z[i * k + j]);
                double se = 0.0;
                for (std::size_t j = 0; j < k; ++j) se += std::exp(z[i * k + j] - mx);
                s += mx + std::log(se) - z[i * k + static_cast<std::size_t>(labels[i])];
            }
            return s;
        };
        const double h = 1e-6;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double keep = x[i];
            x[i] = keep + h;
            const double up = loss(x);
            x[i] = keep - h;
            const double down = loss(x);
            x[i] = keep;
            const double fd = (up - down) / (2 * h);
            worst = std::max(worst, std::abs(fd - g[i]) / std::max(1.0, std::abs(fd) + std::abs(g[i])));
        }
    }
    return {worst < kGradTol, std::to_string(kChecks) + " checks, max error " + fmt(worst, 3)};
}

Outcome attack_budgets() {
    const auto model = Classifier::initialize(parse_network("conv3x4 relu pool dense16 relu dense4", {8, 8, 1}, 4), 21);
    Rng rng(22);
    std::size_t runs = 0, violations = 0;
    for (const std::string profile : {"fashion-like", "cifar-like"}) {
        for (auto f : {AttackFamily::Fgsm, AttackFamily::Bim, AttackFamily::Pgd, AttackFamily::Mim}) {
            for (int r = 0; r < 100; ++r) {
                const auto cfg = profile_by_name(profile).attack_defaults(f, r % 2 == 1);
                const Tensor x = uniform({1, 8, 8, 1}, -0.5, 0.5, rng);
                const int goal[1] = {static_cast<int>(rng() % 4)};
                const Tensor adv = generate_adversarial(model, x, goal, cfg, static_cast<std::uint64_t>(r));
                bool ok = true;
                for (std::size_t i = 0; i < x.size(); ++i) {
                    ok = ok && std::abs(adv[i] - x[i]) <= cfg.linf_budget() + kBudgetSlack && adv[i] >= -0.5 && adv[i] <= 0.5;
                }
                violations += !ok;
                ++runs;
            }
        }
    }
    // Penalty family: distance to a linear two-class boundary is |m| / ||w1 - w0||.
    const auto spec = parse_network("dense2", {4, 4, 1}, 2);
    const Classifier lin(spec, {uniform({16, 2}, -1, 1, rng), uniform({2}, -0.1, 0.1, rng)});
    const Tensor x = uniform({12, 4, 4, 1}, -0.15, 0.15, rng);
    const auto pred = lin.predict(x);
    AttackConfig cw = profile_by_name("fashion-like").attack_defaults(AttackFamily::Cw);
    const Tensor adv = penalty_attack(lin, x, pred, cw);
    const auto after = lin.predict(adv);
    const auto& w = lin.params()[0];
    const auto& b = lin.params()[1];
    double wn = 0.0;
    for (std::size_t i = 0; i < 16; ++i) wn += (w[i * 2 + 1] - w[i * 2]) * (w[i * 2 + 1] - w[i * 2]);
    wn = std::sqrt(wn);
    double worst = 0.0;
    bool flipped = true;
    for (std::size_t s = 0; s < 12; ++s) {
        double m = b[1] - b[0], d2 = 0.0;
        for (std::size_t i = 0; i < 16; ++i) {
            m += x[s * 16 + i] * (w[i * 2 + 1] - w[i * 2]);
            d2 += (adv[s * 16 + i] - x[s * 16 + i]) * (adv[s * 16 + i] - x[s * 16 + i]);
        }
        const double closed = std::abs(m) / wn;
        worst = std::max(worst, std::abs(std::sqrt(d2) - closed) / closed);
        flipped = flipped && after[s] != pred[s];
    }
    return {violations == 0 && flipped && worst <= kHyperplaneTol,
            std::to_string(runs) + " L-inf runs, " + std::to_string(violations) + " violations; C&W max relative gap " +
                fmt(worst, 3) + (flipped ? "" : ", some labels not flipped")};
}

// Strict plurality among non-abstaining votes, needing at least kappa votes.
int vote_oracle(const std::vector<int>& labels, std::size_t k, std::size_t kappa) {
    std::vector<std::size_t> counts(k, 0);
    for (int l : labels)
        if (l != kAbstain) ++counts[static_cast<std::size_t>(l)];
    std::size_t best = 0, ties = 0;
    int arg = kAbstain;
    for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] > best) {
            best = counts[c];
            arg = static_cast<int>(c);
            ties = 1;
        } else if (counts[c] == best && best > 0) {
            ++ties;
        }
    }
    return best >= kappa && ties == 1 ? arg : kAbstain;
}

Outcome vote_exhaustive() {
    std::size_t cases = 0, mismatches = 0, monotone = 0;
    for (std::size_t m = 1; m <= 4; ++m) {
        for (std::size_t k = 1; k <= 4; ++k) {
            std::size_t total = 1;
            for (std::size_t i = 0; i < m; ++i) total *= k + 1;
            for (std::size_t code = 0; code < total; ++code) {
                std::vector<int> labels(m);
                std::size_t c = code;
                for (auto& l : labels) {
                    const auto d = c % (k + 1);
                    c /= k + 1;
                    l = d == k ? kAbstain : static_cast<int>(d);
                }
                int prev = 0;
                for (std::size_t kappa = 1; kappa <= m; ++kappa) {
                    const int got = vote(labels, kappa);
                    mismatches += got != vote_oracle(labels, k, kappa);
                    // Raising the quorum may only turn a label into an abstention.
                    if (kappa > 1 && got != kAbstain && got != prev) ++monotone;
                    prev = got;
                    ++cases;
                }
            }
        }
    }
    return {mismatches == 0 && monotone == 0, std::to_string(cases) + " cases, " + std::to_string(mismatches) +
                                                  " oracle mismatches, " + std::to_string(monotone) +
                                                  " monotonicity violations"};
}

Outcome synthetic_recurrence() {
    Rng rng(31);
    const auto spec = parse_network("dense3", {5, 5, 1}, 3);
    const Classifier target(spec, {uniform({25, 3}, -1, 1, rng), uniform({3}, -0.1, 0.1, rng)});
    const Tensor x0 = uniform({20, 5, 5, 1}, -0.4, 0.4, rng);
    SyntheticSpec s;
    s.architecture = spec;
    s.train = {OptimizerKind::Adam, 1e-2, 16, 4, 32};
    std::vector<std::string> bad;

    for (std::size_t rounds : {2u, 3u, 4u}) {
        s.rounds = rounds;
        s.lambda = 0.1;
        Oracle o(target);
        SyntheticReport rep;
        train_synthetic(o, x0, s, &rep);
        std::size_t expect_queries = 0;
        for (std::size_t t = 0; t < rounds; ++t) {
            const std::size_t size = 20u << t;
            if (rep.set_sizes.size() != rounds || rep.set_sizes[t] != size) bad.push_back("size N=" + std::to_string(rounds));
            expect_queries += size;
        }
        if (o.queries() != expect_queries || rep.total_queries != expect_queries) bad.push_back("queries N=" + std::to_string(rounds));

        s.lambda = 0.0;
        Oracle o0(target);
        train_synthetic(o0, x0, s, &rep);
        for (auto n : rep.set_sizes)
            if (n != 20) bad.push_back("lambda0 N=" + std::to_string(rounds));
        if (o0.queries() != 20 * rounds) bad.push_back("lambda0 queries");
    }

    // N = 1 is plain training on the oracle's labels of X0.
    s.rounds = 1;
    s.lambda = 0.1;
    Oracle o1(target);
    const auto one = train_synthetic(o1, x0, s);
    LabeledDataset d;
    d.images = x0;
    d.labels = target.predict(x0);
    d.class_count = 3;
    TrainConfig t = s.train;
    t.seed = derive_seed(s.train.seed, "synthetic-round", 0);
    const auto direct = train(spec, d, t);
    if (!(one.params() == direct.params())) bad.push_back("N=1 differs from direct training");
    if (o1.queries() != 20) bad.push_back("N=1 queries");

    std::string detail = bad.empty() ? "doubling, lambda 0 fixed point, N=1 and query counts hold" : "";
    for (const auto& b : bad) detail += b + "; ";
    return {bad.empty(), detail};
}

// Criteria 7 and 8 share one desk-scale run.
struct DeskRun {
    ExperimentConfig cfg;
    bool trained = false;
};

std::map<std::string, std::vector<std::string>> read_keyed(const fs::path& csv, std::size_t key_cols) {
    std::map<std::string, std::vector<std::string>> out;
    std::istringstream is(read_file_bytes(csv));
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
        const auto c = split_csv_line(line);
        std::string key;
        for (std::size_t i = 0; i < key_cols && i < c.size(); ++i) key += (i ? "|" : "") + c[i];
        out[key] = c;
    }
    return out;
}

Outcome desk_experiment(DeskRun& run) {
    std::ostringstream log;
    cmd_train(run.cfg, log);
    run.trained = true;
    cmd_attack(run.cfg, log);
    const auto acc = read_keyed(run.cfg.out / "accuracy.csv", 1);
    const auto idx = read_keyed(run.cfg.out / "campaigns/index.csv", 4);
    auto alpha = [&](const std::string& d, const std::string& pipeline) {
        return std::stod(idx.at(d + "|fgsm|untargeted|" + pipeline).at(5));
    };
    const double p = std::stod(acc.at("vanilla").at(1));
    const double a_van = alpha("vanilla", "mixed"), a_pure = alpha("vanilla", "pure");
    const double a_buzz = alpha("buzz-2", "mixed"), a_bt = alpha("bt-0.95", "mixed");
    const bool a = p >= kMinCleanAccuracy, b = a_buzz < a_van, c = a_bt < a_van, d = a_van >= a_pure - kMixedVsPureSlack;
    std::string detail = "p " + fmt(p, 3) + (a ? "" : " (a fails)") + "; alpha mixed vanilla " + fmt(a_van, 3) + ", buzz-2 " +
                         fmt(a_buzz, 3) + (b ? "" : " (b fails)") + ", bt-0.95 " + fmt(a_bt, 3) + (c ? "" : " (c fails)") +
                         "; pure vanilla " + fmt(a_pure, 3) + (d ? "" : " (d fails)");
    return {a && b && c && d, detail};
}

Outcome desk_maps(DeskRun& run) {
    if (!run.trained) return {false, "desk bundles unavailable"};
    std::ostringstream log;
    cmd_map(run.cfg, log);
    const auto idx = read_keyed(run.cfg.out / "maps/index.csv", 1);
    const auto& van = idx.at("vanilla");
    const auto& buzz = idx.at("buzz-2");
    const double g_van = std::stod(van.at(4)), g_buzz = std::stod(buzz.at(4));
    const bool origin = van.at(2) == van.at(3) && buzz.at(2) == buzz.at(3);
    return {g_van == 0.0 && g_buzz > 0.0 && origin, "sample " + van.at(1) + ": gray vanilla " + fmt(g_van, 3) + ", buzz-2 " +
                                                         fmt(g_buzz, 3) + (origin ? ", origin correct" : ", origin wrong")};
}

Outcome selfcheck_reproducible(const fs::path& exe, const fs::path& work) {
    std::vector<fs::path> dirs = {work / "selfcheck_a", work / "selfcheck_b"};
    for (const auto& d : dirs) {
        fs::remove_all(d);
        const std::string cmd = "\"" + exe.string() + "\" selfcheck --out \"" + d.string() + "\" > \"" + d.string() + ".log\" 2>&1";
        if (std::system(cmd.c_str()) != 0) return {false, "selfcheck failed, see " + d.string() + ".log"};
    }
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(dirs[0])) {
        if (!e.is_regular_file() || e.path().extension() != ".csv") continue;
        const auto other = dirs[1] / fs::relative(e.path(), dirs[0]);
        if (!fs::exists(other) || read_file_bytes(e.path()) != read_file_bytes(other)) {
            return {false, "differs: " + fs::relative(e.path(), dirs[0]).string()};
        }
        ++files;
    }
    return {files >= 2, std::to_string(files) + " CSV files byte-identical"};
}

} // namespace

int main(int argc, char** argv) {
    const fs::path source = BUZZ_SOURCE_DIR;
    const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "buzzlab_acceptance";
    fs::create_directories(work);

    DeskRun desk;
    desk.cfg = ExperimentConfig::load(source / "configs/desk.ini");
    desk.cfg.out = work / "desk";

    struct Criterion {
        int id;
        const char* name;
        double limit;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria = {
        {1, "delta calculator on published triples", kLimit1, delta_calculator},
        {2, "profile defaults match golden file", kLimit2, [&] { return golden_defaults(source / "tests/data/profile_defaults.ini"); }},
        {3, "randomized gradient checks", kLimit3, gradient_checks},
        {4, "attack budgets and penalty distance", kLimit4, attack_budgets},
        {5, "exhaustive vote oracle", kLimit5, vote_exhaustive},
        {6, "synthetic training recurrence", kLimit6, synthetic_recurrence},
        {7, "desk-scale black-box experiment", kLimit7, [&] { return desk_experiment(desk); }},
        {8, "decision-region maps", kLimit8, [&] { return desk_maps(desk); }},
        {9, "selfcheck reproducibility", kLimit9, [&] { return selfcheck_reproducible(BUZZLAB_EXE, work); }},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs <= c.limit;
        const bool pass = o.pass && in_time;
        failures += !pass;
        std::printf("criterion %d %s: %s (%s; %.1fs of %.0fs%s)\n", c.id, c.name, pass ? "PASS" : "FAIL", o.detail.c_str(),
                    secs, c.limit, in_time ? "" : ", over time");
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures;
}
