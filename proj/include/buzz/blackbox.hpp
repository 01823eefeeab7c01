#pragma once

#include "buzz/attacks.hpp"
#include "buzz/dataio.hpp"
#include "buzz/models.hpp"
#include "buzz/target.hpp"

#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>

namespace buzz {

class QueryBudgetExceeded : public std::runtime_error {
public:
    QueryBudgetExceeded(std::size_t used, std::size_t requested, std::size_t budget);
    std::size_t used;
};

// Label-only access to a target. Counts every image submitted.
class Oracle {
public:
    explicit Oracle(const TargetModel& target, std::optional<std::size_t> budget = std::nullopt);

    int label(const Tensor& image);
    // One query per row; the whole batch is refused if it would pass the budget.
    std::vector<int> labels(const Tensor& batch);

    std::size_t queries() const { return queries_; }
    std::optional<std::size_t> budget() const { return budget_; }
    std::size_t class_count() const { return target_.class_count(); }
    Shape input_shape() const { return target_.input_shape(); }

private:
    const TargetModel& target_;
    std::optional<std::size_t> budget_;
    std::size_t queries_ = 0;
};

struct SyntheticSpec {
    NetworkSpec architecture;
    double lambda = 0.1;
    std::size_t rounds = 4; // N
    TrainConfig train;
    // Upper bound on the augmented set; 0 means 2^(N-1)·|X0| (no cap).
    std::size_t max_set_size = 0;

    void validate() const;
};

struct SyntheticReport {
    std::vector<std::size_t> set_sizes;      // |X_t| at each labeling round
    std::vector<std::size_t> abstained;      // ⊥ answers per round
    std::vector<std::size_t> round_queries;  // oracle queries per round
    std::size_t total_queries = 0;
};

// Jacobian-based augmentation: label X_t with the oracle, train on the
// non-⊥ points, then X_{t+1} = X_t ∪ {clip(x + λ·sign(∂F_O(x)/∂x))}. The
// last round trains without augmenting. Identical images collapse in the
// union.
Classifier train_synthetic(Oracle& oracle, const Tensor& x0, const SyntheticSpec& spec,
                           SyntheticReport* report = nullptr,
                           const std::function<void(const std::string&)>& log = {});

// λ·sign of the input gradient of the softmax score for each row's label.
Tensor jacobian_step(const Classifier& model, const Tensor& batch, std::span<const int> labels, double lambda,
                     double lo = -0.5, double hi = 0.5);

struct CampaignRow {
    std::size_t sample_id = 0;
    int true_label = 0;
    int target_label_clean = 0;
    AttackFamily family = AttackFamily::Fgsm;
    bool targeted = false;
    int goal_label = 0;
    bool success = false;
    int final_label = kAbstain;
    double linf = 0.0;
    double l2 = 0.0;
    std::size_t queries = 0;
};

struct CampaignReport {
    std::string mode; // "pure" or "mixed"
    std::vector<CampaignRow> rows;
    std::size_t training_queries = 0;
    std::size_t attack_queries = 0;
    SyntheticReport synthetic;

    double alpha() const;
    void write_csv(std::ostream& os) const;
};

struct CampaignOptions {
    SyntheticSpec synthetic;
    AttackConfig attack;
    std::uint64_t seed = 0;
    std::size_t attack_chunk = 128;
    std::function<void(const std::string&)> log;
};

// Synthetic model from the true labels of X0 (one round, no oracle), then
// one target query per evaluation sample.
CampaignReport pure_blackbox_campaign(const TargetModel& target, const LabeledDataset& x0,
                                      const LabeledDataset& eval, const CampaignOptions& options);

// Synthetic model from iterative oracle labeling of X0, then the same
// attack and submission.
CampaignReport mixed_blackbox_campaign(const TargetModel& target, const Tensor& x0, const LabeledDataset& eval,
                                       const CampaignOptions& options);

// Attack a synthetic model and submit each adversarial image to the oracle.
CampaignReport attack_and_submit(const Classifier& synthetic, Oracle& oracle, const LabeledDataset& eval,
                                 const CampaignOptions& options, const std::string& mode);

} // namespace buzz
