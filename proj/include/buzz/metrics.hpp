#pragma once

#include "buzz/attacks.hpp"
#include "buzz/blackbox.hpp"
#include "buzz/dataio.hpp"
#include "buzz/target.hpp"

#include <filesystem>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace buzz {

// Fraction of samples labeled correctly; kAbstain is a miss.
double clean_accuracy(const TargetModel& model, const LabeledDataset& test);

// Fraction of successes. Empty input is rejected.
double attack_success_rate(std::span<const AdvResult> results);
double attack_success_rate(std::span<const CampaignRow> rows);

struct DeltaResult {
    double gamma = 0.0; // p - p_d
    double delta = 0.0; // gamma + p_d * alpha
};

// Requires 0 <= p_d <= p <= 1 and 0 <= alpha <= 1.
DeltaResult delta(double p, double p_d, double alpha);

struct ReportRow {
    std::string defense;
    std::string attack; // "fgsm", ..., or "best"
    std::string mode;   // e.g. "mixed-untargeted"
    double p = 0.0;
    double p_d = 0.0;
    double gamma = 0.0;
    double alpha = 0.0;
    double delta = 0.0;
    std::size_t samples = 0;
};

ReportRow make_row(std::string defense, std::string attack, std::string mode, double p, double p_d, double alpha,
                   std::size_t samples);

struct EvaluationReport {
    std::vector<ReportRow> rows;

    // Adds one "best" row per defense: the row with the largest delta.
    void add_best_rows();
    std::vector<std::string> defenses() const;

    // Full precision.
    void write_csv(std::ostream& os) const;
    // defense,p_d,delta from the "best" rows.
    void write_scatter(std::ostream& os) const;
    // Two decimals, aligned columns.
    std::string format_table() const;
};

// Published results as `defense,p,p_d,defense_success` where defense_success
// is 1 - alpha of the strongest attack. One "best"/"published" row each.
std::vector<ReportRow> read_published(const std::string& csv_text, const std::string& origin = "published");

// Splits one CSV line on commas (no quoting).
std::vector<std::string> split_csv_line(const std::string& line);

// Reads back the success column of a campaign CSV.
std::vector<CampaignRow> read_campaign_csv(const std::string& csv_text, const std::string& origin = "campaign");

} // namespace buzz
