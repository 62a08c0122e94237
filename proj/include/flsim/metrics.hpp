#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "flsim/defense.hpp"

namespace flsim {

struct FairnessGap {
    double target_mean = 0.0;
    double other_mean = 0.0;
    double gap = 0.0;  // target_mean - other_mean
};

// Unweighted class means over target and non-target attributes. Every class
// involved must carry a defined accuracy.
inline FairnessGap fairness_gap(std::span<const double> per_class_accuracy,
                                const std::set<int>& target_classes) {
    long double target_sum = 0.0L;
    long double other_sum = 0.0L;
    std::size_t target_n = 0;
    std::size_t other_n = 0;
    for (std::size_t c = 0; c < per_class_accuracy.size(); ++c) {
        const double acc = per_class_accuracy[c];
        if (std::isnan(acc)) {
            throw std::invalid_argument("fairness_gap: class " + std::to_string(c) +
                                        " has no defined accuracy");
        }
        if (target_classes.count(static_cast<int>(c))) {
            target_sum += acc;
            ++target_n;
        } else {
            other_sum += acc;
            ++other_n;
        }
    }
    if (target_n == 0) throw std::invalid_argument("fairness_gap: no target class has an accuracy");
    if (other_n == 0) throw std::invalid_argument("fairness_gap: no non-target class has an accuracy");
    FairnessGap out;
    out.target_mean = static_cast<double>(target_sum / static_cast<long double>(target_n));
    out.other_mean = static_cast<double>(other_sum / static_cast<long double>(other_n));
    out.gap = out.target_mean - out.other_mean;
    return out;
}

// Aggregate metrics for one round, in percent.
struct RoundRecord {
    int round = 0;
    std::vector<double> per_class_accuracy;
    double overall_accuracy = 0.0;
    double target_mean = 0.0;
    double other_mean = 0.0;
    double fairness_gap = 0.0;
    std::vector<double> per_client_update_norm;  // raw submitted norms, roster order
    bool attack_active = false;
    std::vector<DefenseAction> defense_actions;
};

namespace detail {

inline std::string full_precision(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string describe_actions(const std::vector<DefenseAction>& actions) {
    std::string out;
    for (const auto& a : actions) {
        if (!out.empty()) out += ';';
        out += a.kind == DefenseAction::Kind::clipped ? "clip:" : "exclude:";
        out += std::to_string(a.client_index);
    }
    return out;
}

}  // namespace detail

// Streams one CSV row per round as the run progresses, flushing each row so
// an interrupted run still leaves a readable prefix.
class RoundCsvWriter {
public:
    RoundCsvWriter(const std::filesystem::path& path, int num_classes)
        : out_(path), num_classes_(num_classes) {
        if (!out_) throw std::runtime_error("round csv: cannot open " + path.string() + " for writing");
        out_ << "round";
        for (int c = 0; c < num_classes; ++c) out_ << ",acc_class_" << c;
        out_ << ",overall,target_mean,other_mean,gap,attack_active,max_update_norm,"
                "median_update_norm,defense_actions\n";
        out_.flush();
    }

    void append(const RoundRecord& r) {
        if (static_cast<int>(r.per_class_accuracy.size()) != num_classes_) {
            throw std::invalid_argument("round csv: record has " +
                                        std::to_string(r.per_class_accuracy.size()) +
                                        " classes, header has " + std::to_string(num_classes_));
        }
        out_ << r.round;
        for (double acc : r.per_class_accuracy) out_ << ',' << detail::full_precision(acc);
        double max_norm = 0.0;
        for (double n : r.per_client_update_norm) max_norm = std::max(max_norm, n);
        const double median_norm =
            r.per_client_update_norm.empty() ? 0.0 : lower_median(r.per_client_update_norm);
        out_ << ',' << detail::full_precision(r.overall_accuracy) << ','
             << detail::full_precision(r.target_mean) << ','
             << detail::full_precision(r.other_mean) << ',' << detail::full_precision(r.fairness_gap)
             << ',' << (r.attack_active ? 1 : 0) << ',' << detail::full_precision(max_norm) << ','
             << detail::full_precision(median_norm) << ',' << detail::describe_actions(r.defense_actions)
             << '\n';
        out_.flush();
    }

private:
    std::ofstream out_;
    int num_classes_;
};

inline void emit_round_csv(std::span<const RoundRecord> records, const std::filesystem::path& path) {
    if (records.empty()) throw std::invalid_argument("emit_round_csv: no records");
    RoundCsvWriter writer(path, static_cast<int>(records.front().per_class_accuracy.size()));
    for (const auto& r : records) writer.append(r);
}

// Parsed view of one emitted CSV row; norms come back as the two summary
// columns rather than the full per-client list.
struct RoundCsvRow {
    int round = 0;
    std::vector<double> per_class_accuracy;
    double overall = 0.0;
    double target_mean = 0.0;
    double other_mean = 0.0;
    double gap = 0.0;
    bool attack_active = false;
    double max_update_norm = 0.0;
    double median_update_norm = 0.0;
    std::string defense_actions;
};

inline std::vector<RoundCsvRow> read_round_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_round_csv: cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("read_round_csv: " + path.string() + " is empty");
    const auto columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    if (columns < 10) throw std::runtime_error("read_round_csv: malformed header in " + path.string());
    const std::size_t classes = columns - 9;  // round + classes + 8 summary columns

    std::vector<RoundCsvRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        while (cells.size() < columns) cells.emplace_back();  // trailing empty defense column
        if (cells.size() != columns) {
            throw std::runtime_error("read_round_csv: row with " + std::to_string(cells.size()) +
                                     " cells, expected " + std::to_string(columns));
        }
        RoundCsvRow row;
        std::size_t at = 0;
        row.round = std::stoi(cells[at++]);
        for (std::size_t c = 0; c < classes; ++c) row.per_class_accuracy.push_back(std::stod(cells[at++]));
        row.overall = std::stod(cells[at++]);
        row.target_mean = std::stod(cells[at++]);
        row.other_mean = std::stod(cells[at++]);
        row.gap = std::stod(cells[at++]);
        row.attack_active = cells[at++] == "1";
        row.max_update_norm = std::stod(cells[at++]);
        row.median_update_norm = std::stod(cells[at++]);
        row.defense_actions = cells[at++];
        rows.push_back(std::move(row));
    }
    return rows;
}

struct ReportContext {
    std::string scenario_name;
    std::set<int> target_classes;
    int num_clients = 0;
    int num_malicious = 0;
    int attack_start_round = -1;  // negative when no attack is configured
    int num_rounds = 0;
    std::string defense_description = "none";
};

struct FairnessReport {
    std::string scenario_name;
    RoundRecord final_round;
    FairnessGap table;  // recomputed from the per-class values
    std::optional<FairnessGap> baseline;
    bool attack_configured = false;
};

inline FairnessReport render_report(std::span<const RoundRecord> records, const ReportContext& ctx,
                                    const std::optional<FairnessGap>& baseline = std::nullopt) {
    if (records.empty()) throw std::invalid_argument("render_report: no records");
    FairnessReport report;
    report.scenario_name = ctx.scenario_name;
    report.final_round = records.back();
    report.table = fairness_gap(report.final_round.per_class_accuracy, ctx.target_classes);
    report.baseline = baseline;
    report.attack_configured = ctx.attack_start_round >= 0;
    return report;
}

inline std::string format_report(const FairnessReport& report, const ReportContext& ctx) {
    char buf[160];
    std::string text;
    text += "scenario: " + report.scenario_name + "\n";
    std::snprintf(buf, sizeof buf, "clients: %d (malicious: %d), rounds: %d\n", ctx.num_clients,
                  ctx.num_malicious, ctx.num_rounds);
    text += buf;
    if (report.attack_configured) {
        std::snprintf(buf, sizeof buf, "attack window: rounds %d..%d\n", ctx.attack_start_round,
                      ctx.num_rounds - 1);
        text += buf;
    } else {
        text += "attack: no attack configured\n";
    }
    text += "defense: " + ctx.defense_description + "\n";
    text += "target classes:";
    for (int c : ctx.target_classes) text += ' ' + std::to_string(c);
    text += "\n\n";
    std::snprintf(buf, sizeof buf, "%-14s %14s %14s %14s\n", "", "target classes", "other classes",
                  "overall");
    text += buf;
    std::snprintf(buf, sizeof buf, "%-14s %14.2f %14.2f %14.2f\n", report.scenario_name.c_str(),
                  report.table.target_mean, report.table.other_mean,
                  report.final_round.overall_accuracy);
    text += buf;
    std::snprintf(buf, sizeof buf, "\nfairness gap (target mean - other mean): %.2f\n",
                  report.table.gap);
    text += buf;
    if (report.baseline) {
        std::snprintf(buf, sizeof buf, "baseline gap on the same setup: %.2f\n", report.baseline->gap);
        text += buf;
    }
    text += "\nper-class accuracy at the final round:\n";
    for (std::size_t c = 0; c < report.final_round.per_class_accuracy.size(); ++c) {
        std::snprintf(buf, sizeof buf, "  class %-2zu %8.2f%s\n", c,
                      report.final_round.per_class_accuracy[c],
                      ctx.target_classes.count(static_cast<int>(c)) ? "   <- target" : "");
        text += buf;
    }
    return text;
}

}  // namespace flsim
