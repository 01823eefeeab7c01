#include "buzz/metrics.hpp"

#include "buzz/config.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

namespace buzz {

double clean_accuracy(const TargetModel& model, const LabeledDataset& test) {
    if (test.size() == 0) throw std::invalid_argument("clean_accuracy: empty test set");
    const auto pred = predict_all(model, test.images);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == test.labels[i];
    return static_cast<double>(ok) / static_cast<double>(pred.size());
}

double attack_success_rate(std::span<const AdvResult> results) {
    if (results.empty()) throw std::invalid_argument("attack_success_rate: no results");
    std::size_t hits = 0;
    for (const auto& r : results) hits += r.success;
    return static_cast<double>(hits) / static_cast<double>(results.size());
}

double attack_success_rate(std::span<const CampaignRow> rows) {
    if (rows.empty()) throw std::invalid_argument("attack_success_rate: no results");
    std::size_t hits = 0;
    for (const auto& r : rows) hits += r.success;
    return static_cast<double>(hits) / static_cast<double>(rows.size());
}

DeltaResult delta(double p, double p_d, double alpha) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("delta: p must be in [0,1]");
    if (!(p_d >= 0.0 && p_d <= p)) {
        throw std::invalid_argument("delta: need 0 <= p_d <= p (p = " + format_double(p) + ", p_d = " +
                                    format_double(p_d) + ")");
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("delta: alpha must be in [0,1]");
    const double gamma = p - p_d;
    return {gamma, gamma + p_d * alpha};
}

ReportRow make_row(std::string defense, std::string attack, std::string mode, double p, double p_d, double alpha,
                   std::size_t samples) {
    const auto d = delta(p, p_d, alpha);
    return {std::move(defense), std::move(attack), std::move(mode), p, p_d, d.gamma, alpha, d.delta, samples};
}

std::vector<std::string> EvaluationReport::defenses() const {
    std::vector<std::string> out;
    for (const auto& r : rows)
        if (std::find(out.begin(), out.end(), r.defense) == out.end()) out.push_back(r.defense);
    return out;
}

void EvaluationReport::add_best_rows() {
    std::vector<ReportRow> best;
    for (const auto& name : defenses()) {
        const ReportRow* top = nullptr;
        for (const auto& r : rows) {
            if (r.defense != name || r.attack == "best") continue;
            if (!top || r.delta > top->delta) top = &r;
        }
        if (!top) continue;
        ReportRow b = *top;
        b.mode = top->attack + "/" + top->mode;
        b.attack = "best";
        best.push_back(b);
    }
    rows.insert(rows.end(), best.begin(), best.end());
}

void EvaluationReport::write_csv(std::ostream& os) const {
    os << "defense,attack,mode,p,p_d,gamma,alpha,delta,samples\n";
    for (const auto& r : rows) {
        os << r.defense << ',' << r.attack << ',' << r.mode << ',' << format_double(r.p) << ',' << format_double(r.p_d)
           << ',' << format_double(r.gamma) << ',' << format_double(r.alpha) << ',' << format_double(r.delta) << ','
           << r.samples << '\n';
    }
}

void EvaluationReport::write_scatter(std::ostream& os) const {
    os << "defense,p_d,delta\n";
    for (const auto& r : rows)
        if (r.attack == "best") os << r.defense << ',' << format_double(r.p_d) << ',' << format_double(r.delta) << '\n';
}

std::string EvaluationReport::format_table() const {
    std::size_t wd = 7, wa = 6, wm = 4;
    for (const auto& r : rows) {
        wd = std::max(wd, r.defense.size());
        wa = std::max(wa, r.attack.size());
        wm = std::max(wm, r.mode.size());
    }
    std::ostringstream os;
    char buf[128];
    auto pad = [](const std::string& s, std::size_t w) { return s + std::string(w - s.size(), ' '); };
    os << pad("defense", wd) << "  " << pad("attack", wa) << "  " << pad("mode", wm) << "     p   p_d  gamma  alpha  delta\n";
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "  %.2f  %.2f   %.2f   %.2f   %.2f", r.p, r.p_d, r.gamma, r.alpha, r.delta);
        os << pad(r.defense, wd) << "  " << pad(r.attack, wa) << "  " << pad(r.mode, wm) << buf << '\n';
    }
    return os.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

namespace {

double parse_number(const std::string& text, const std::string& where) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != text.size()) throw std::runtime_error(where + ": not a number: '" + text + "'");
    return v;
}

std::map<std::string, std::size_t> header_index(const std::string& line, const std::vector<std::string>& required,
                                                const std::string& origin) {
    const auto cells = split_csv_line(line);
    std::map<std::string, std::size_t> idx;
    for (std::size_t i = 0; i < cells.size(); ++i) idx[cells[i]] = i;
    for (const auto& r : required)
        if (!idx.count(r)) throw std::runtime_error(origin + ": missing column '" + r + "'");
    return idx;
}

} // namespace

std::vector<ReportRow> read_published(const std::string& csv_text, const std::string& origin) {
    std::istringstream is(csv_text);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error(origin + ": empty file");
    const auto idx = header_index(line, {"defense", "p", "p_d", "defense_success"}, origin);
    std::vector<ReportRow> out;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        const auto cells = split_csv_line(line);
        const std::string where = origin + ":" + std::to_string(line_no);
        if (cells.size() < idx.size()) throw std::runtime_error(where + ": too few columns");
        const double p = parse_number(cells[idx.at("p")], where);
        const double p_d = parse_number(cells[idx.at("p_d")], where);
        const double kept = parse_number(cells[idx.at("defense_success")], where);
        try {
            out.push_back(make_row(cells[idx.at("defense")], "best", "published", p, p_d, 1.0 - kept, 0));
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error(where + ": " + e.what());
        }
    }
    return out;
}

std::vector<CampaignRow> read_campaign_csv(const std::string& csv_text, const std::string& origin) {
    std::istringstream is(csv_text);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error(origin + ": empty file");
    const auto idx = header_index(line,
                                  {"sample_id", "true_label", "target_label_clean", "attack_family", "targeted",
                                   "success", "final_label", "linf_distortion", "l2_distortion", "queries"},
                                  origin);
    std::vector<CampaignRow> out;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto c = split_csv_line(line);
        const std::string where = origin + ":" + std::to_string(line_no);
        if (c.size() < idx.size()) throw std::runtime_error(where + ": too few columns");
        CampaignRow r;
        r.sample_id = static_cast<std::size_t>(parse_number(c[idx.at("sample_id")], where));
        r.true_label = static_cast<int>(parse_number(c[idx.at("true_label")], where));
        r.target_label_clean = static_cast<int>(parse_number(c[idx.at("target_label_clean")], where));
        r.family = parse_attack_family(c[idx.at("attack_family")]);
        r.targeted = c[idx.at("targeted")] == "1";
        r.success = c[idx.at("success")] == "1";
        r.final_label = static_cast<int>(parse_number(c[idx.at("final_label")], where));
        r.linf = parse_number(c[idx.at("linf_distortion")], where);
        r.l2 = parse_number(c[idx.at("l2_distortion")], where);
        r.queries = static_cast<std::size_t>(parse_number(c[idx.at("queries")], where));
        out.push_back(r);
    }
    return out;
}

} // namespace buzz
