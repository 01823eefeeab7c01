#include "buzz/blackbox.hpp"

#include "buzz/config.hpp"
#include "buzz/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <unordered_set>

namespace buzz {

QueryBudgetExceeded::QueryBudgetExceeded(std::size_t used_, std::size_t requested, std::size_t budget)
    : std::runtime_error("oracle budget exceeded: " + std::to_string(used_) + " queries used, " +
                         std::to_string(requested) + " more requested, budget " + std::to_string(budget)),
      used(used_) {}

Oracle::Oracle(const TargetModel& target, std::optional<std::size_t> budget) : target_(target), budget_(budget) {}

int Oracle::label(const Tensor& image) {
    const Shape s = target_.input_shape();
    return labels(image.reshaped({1, s[0], s[1], s[2]}))[0];
}

std::vector<int> Oracle::labels(const Tensor& batch) {
    const std::size_t n = batch.rank() == 4 ? batch.shape()[0] : 0;
    if (budget_ && queries_ + n > *budget_) throw QueryBudgetExceeded(queries_, n, *budget_);
    auto out = predict_all(target_, batch);
    queries_ += n;
    return out;
}

void SyntheticSpec::validate() const {
    architecture.validate();
    train.validate();
    if (!(lambda >= 0.0)) throw std::invalid_argument("synthetic: lambda must be >= 0");
    if (rounds < 1) throw std::invalid_argument("synthetic: N must be >= 1");
}

Tensor jacobian_step(const Classifier& model, const Tensor& batch, std::span<const int> labels, double lambda,
                     double lo, double hi) {
    Tape tape;
    Var x = tape.leaf(batch, true);
    Var score = sum(pick(softmax(model.logits(x)), labels));
    tape.backward(score);
    const Tensor& g = x.grad();
    Tensor out = batch;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double s = g[i] > 0 ? 1.0 : (g[i] < 0 ? -1.0 : 0.0);
        out[i] = std::clamp(batch[i] + lambda * s, lo, hi);
    }
    return out;
}

namespace {

std::string image_key(const Tensor& images, std::size_t i, std::size_t per) {
    return std::string(reinterpret_cast<const char*>(images.ptr() + i * per), per * sizeof(double));
}

} // namespace

Classifier train_synthetic(Oracle& oracle, const Tensor& x0, const SyntheticSpec& spec, SyntheticReport* report,
                           const std::function<void(const std::string&)>& log) {
    spec.validate();
    if (x0.rank() != 4 || x0.shape()[0] == 0) throw std::invalid_argument("train_synthetic: empty X0");
    const std::size_t per = x0.size() / x0.shape()[0];
    std::size_t cap = spec.max_set_size;
    if (cap == 0) cap = x0.shape()[0] << std::min<std::size_t>(spec.rounds - 1, 40);

    SyntheticReport local;
    SyntheticReport& rep = report ? *report : local;
    rep = {};

    Tensor current = x0;
    std::unordered_set<std::string> seen;
    {
        // Duplicates inside X0 collapse as well.
        std::vector<std::size_t> keep;
        for (std::size_t i = 0; i < x0.shape()[0]; ++i)
            if (seen.insert(image_key(x0, i, per)).second) keep.push_back(i);
        if (keep.size() != x0.shape()[0]) current = gather_rows(x0, keep);
    }

    Classifier model;
    for (std::size_t round = 0; round < spec.rounds; ++round) {
        const std::size_t n = current.shape()[0];
        const std::size_t before = oracle.queries();
        const auto answers = oracle.labels(current);
        rep.set_sizes.push_back(n);
        rep.round_queries.push_back(oracle.queries() - before);

        std::vector<std::size_t> kept;
        std::vector<int> kept_labels;
        for (std::size_t i = 0; i < n; ++i) {
            if (is_abstain(answers[i])) continue;
            kept.push_back(i);
            kept_labels.push_back(answers[i]);
        }
        rep.abstained.push_back(n - kept.size());
        if (kept.empty()) {
            throw std::runtime_error("train_synthetic: every point was labeled ⊥ in round " + std::to_string(round));
        }

        LabeledDataset d;
        d.images = gather_rows(current, kept);
        d.labels = kept_labels;
        d.class_count = spec.architecture.class_count;
        TrainConfig cfg = spec.train;
        cfg.seed = derive_seed(spec.train.seed, "synthetic-round", round);
        model = train(spec.architecture, d, cfg);
        if (log) {
            log("synthetic round " + std::to_string(round + 1) + "/" + std::to_string(spec.rounds) + ": " +
                std::to_string(n) + " points, " + std::to_string(n - kept.size()) + " abstained");
        }
        if (round + 1 == spec.rounds) break;

        // Augment the non-⊥ points in order, up to the cap.
        std::vector<Tensor> added;
        std::size_t size = n;
        for (std::size_t b = 0; b < kept.size() && size < cap; b += 128) {
            const std::size_t e = std::min(kept.size(), b + 128);
            std::span<const std::size_t> idx(kept.data() + b, e - b);
            const Tensor moved = jacobian_step(model, gather_rows(current, idx),
                                               std::span<const int>(kept_labels.data() + b, e - b), spec.lambda);
            for (std::size_t i = 0; i < idx.size() && size < cap; ++i) {
                if (!seen.insert(image_key(moved, i, per)).second) continue;
                added.push_back(moved.slice0(i));
                ++size;
            }
        }
        if (!added.empty()) {
            std::vector<Tensor> all;
            all.reserve(size);
            for (std::size_t i = 0; i < n; ++i) all.push_back(current.slice0(i));
            for (auto& t : added) all.push_back(std::move(t));
            current = stack(all);
        }
    }
    rep.total_queries = std::accumulate(rep.round_queries.begin(), rep.round_queries.end(), std::size_t{0});
    return model;
}

double CampaignReport::alpha() const {
    if (rows.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& r : rows) hits += r.success;
    return static_cast<double>(hits) / static_cast<double>(rows.size());
}

void CampaignReport::write_csv(std::ostream& os) const {
    os << "sample_id,true_label,target_label_clean,attack_family,targeted,success,final_label,linf_distortion,"
          "l2_distortion,queries\n";
    for (const auto& r : rows) {
        os << r.sample_id << ',' << r.true_label << ',' << r.target_label_clean << ',' << to_string(r.family) << ','
           << (r.targeted ? 1 : 0) << ',' << (r.success ? 1 : 0) << ',' << r.final_label << ','
           << format_double(r.linf) << ',' << format_double(r.l2) << ',' << r.queries << '\n';
    }
}

CampaignReport attack_and_submit(const Classifier& synthetic, Oracle& oracle, const LabeledDataset& eval,
                                 const CampaignOptions& options, const std::string& mode) {
    eval.validate();
    const auto& atk = options.attack;
    atk.validate();
    CampaignReport report;
    report.mode = mode;
    const std::size_t k = oracle.class_count();
    const std::size_t chunk = std::max<std::size_t>(options.attack_chunk, 1);
    for (std::size_t b = 0; b < eval.size(); b += chunk) {
        const std::size_t e = std::min(eval.size(), b + chunk);
        std::vector<std::size_t> rows(e - b);
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = b + i;
        const Tensor clean = gather_rows(eval.images, rows);
        std::vector<int> truth(rows.size()), goal(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            truth[i] = eval.labels[rows[i]];
            goal[i] = atk.targeted ? pick_target(truth[i], k, options.seed, rows[i]) : truth[i];
        }
        const Tensor adv = generate_adversarial(synthetic, clean, goal, atk, derive_seed(options.seed, "attack", b));
        const std::size_t before = oracle.queries();
        const auto answers = oracle.labels(adv);
        report.attack_queries += oracle.queries() - before;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            CampaignRow r;
            r.sample_id = rows[i];
            r.true_label = truth[i];
            // The evaluation set holds samples the target labels correctly.
            r.target_label_clean = truth[i];
            r.family = atk.family;
            r.targeted = atk.targeted;
            r.goal_label = goal[i];
            r.final_label = answers[i];
            r.success = attack_succeeded(answers[i], truth[i], goal[i], atk.targeted);
            double linf = 0.0, l2 = 0.0;
            const std::size_t per = clean.size() / rows.size();
            for (std::size_t j = 0; j < per; ++j) {
                const double d = adv[i * per + j] - clean[i * per + j];
                linf = std::max(linf, std::abs(d));
                l2 += d * d;
            }
            r.linf = linf;
            r.l2 = std::sqrt(l2);
            r.queries = 1;
            report.rows.push_back(r);
        }
        if (options.log) options.log(mode + " attack: " + std::to_string(e) + "/" + std::to_string(eval.size()));
    }
    return report;
}

CampaignReport pure_blackbox_campaign(const TargetModel& target, const LabeledDataset& x0, const LabeledDataset& eval,
                                      const CampaignOptions& options) {
    options.synthetic.validate();
    x0.validate();
    TrainConfig cfg = options.synthetic.train;
    cfg.seed = derive_seed(options.synthetic.train.seed, "synthetic-round", 0);
    const Classifier synthetic = train(options.synthetic.architecture, x0, cfg);
    if (options.log) options.log("pure synthetic model trained on " + std::to_string(x0.size()) + " labeled points");
    Oracle oracle(target);
    auto report = attack_and_submit(synthetic, oracle, eval, options, "pure");
    report.training_queries = 0;
    report.synthetic.set_sizes = {x0.size()};
    report.synthetic.round_queries = {0};
    report.synthetic.abstained = {0};
    return report;
}

CampaignReport mixed_blackbox_campaign(const TargetModel& target, const Tensor& x0, const LabeledDataset& eval,
                                       const CampaignOptions& options) {
    Oracle oracle(target);
    SyntheticReport syn;
    const Classifier synthetic = train_synthetic(oracle, x0, options.synthetic, &syn, options.log);
    const std::size_t training = oracle.queries();
    auto report = attack_and_submit(synthetic, oracle, eval, options, "mixed");
    report.training_queries = training;
    report.synthetic = std::move(syn);
    return report;
}

} // namespace buzz
