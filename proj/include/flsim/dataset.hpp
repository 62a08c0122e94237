#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "flsim/rng.hpp"

namespace flsim {

// Feature rows with integer class labels. Class ids double as the fairness
// attribute throughout the simulator.
struct LabeledDataset {
    std::vector<double> features;  // row-major, rows() x input_dim
    std::vector<int> labels;
    int input_dim = 0;

    std::size_t rows() const { return labels.size(); }

    std::span<const double> row(std::size_t i) const {
        return {features.data() + i * static_cast<std::size_t>(input_dim),
                static_cast<std::size_t>(input_dim)};
    }

    void append_row(std::span<const double> x, int label) {
        features.insert(features.end(), x.begin(), x.end());
        labels.push_back(label);
    }

    void append_row_from(const LabeledDataset& src, std::size_t i) {
        append_row(src.row(i), src.labels[i]);
    }
};

inline LabeledDataset subset_by_indices(const LabeledDataset& src,
                                        const std::vector<std::size_t>& indices) {
    LabeledDataset out;
    out.input_dim = src.input_dim;
    out.features.reserve(indices.size() * static_cast<std::size_t>(src.input_dim));
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) out.append_row_from(src, i);
    return out;
}

// One Gaussian cluster per class. Cluster centres sit on a sphere and are
// redrawn until every pairwise centre distance is at least 4.5x the unit
// within-class spread (comfortably past the 3x floor a linear separator
// needs), which keeps the problem learnable to high accuracy in a few dozen
// rounds while real class overlap remains.
inline LabeledDataset generate_synthetic(int num_classes, int input_dim, int samples_per_class,
                                         std::uint64_t seed) {
    if (num_classes <= 0 || input_dim <= 0 || samples_per_class <= 0) {
        throw std::invalid_argument("generate_synthetic: all arguments must be positive");
    }
    Rng rng(mix_seed(seed, 0x5d47u));

    const double min_separation = 4.5;
    double radius = 3.4;
    std::vector<std::vector<double>> means;
    for (int attempt = 0;; ++attempt) {
        means.assign(static_cast<std::size_t>(num_classes), std::vector<double>(input_dim));
        for (auto& mean : means) {
            double norm2 = 0.0;
            for (double& m : mean) {
                m = rng.gaussian();
                norm2 += m * m;
            }
            const double scale = radius / std::sqrt(std::max(norm2, 1e-300));
            for (double& m : mean) m *= scale;
        }
        double closest = std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < means.size(); ++a) {
            for (std::size_t b = a + 1; b < means.size(); ++b) {
                double d2 = 0.0;
                for (int k = 0; k < input_dim; ++k) {
                    const double diff = means[a][k] - means[b][k];
                    d2 += diff * diff;
                }
                closest = std::min(closest, std::sqrt(d2));
            }
        }
        if (closest >= min_separation) break;
        if (attempt % 16 == 15) radius *= 1.1;  // widen if the class count crowds the sphere
    }

    LabeledDataset ds;
    ds.input_dim = input_dim;
    ds.features.reserve(static_cast<std::size_t>(num_classes) * samples_per_class * input_dim);
    ds.labels.reserve(static_cast<std::size_t>(num_classes) * samples_per_class);
    std::vector<double> x(static_cast<std::size_t>(input_dim));
    for (int c = 0; c < num_classes; ++c) {
        for (int s = 0; s < samples_per_class; ++s) {
            for (int k = 0; k < input_dim; ++k) x[static_cast<std::size_t>(k)] = means[c][k] + rng.gaussian();
            ds.append_row(x, c);
        }
    }
    return ds;
}

namespace detail {

inline double parse_real(const std::string& cell, const std::filesystem::path& path,
                         std::size_t line_no, const char* what) {
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (end == cell.c_str() || *end != '\0') {
        throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                 ": malformed " + what + " '" + cell + "'");
    }
    return v;
}

}  // namespace detail

// Schema: header "f0,...,f{k-1},label", one sample per row, decimal-point
// reals, integer labels. Row order is preserved.
inline LabeledDataset load_csv(const std::filesystem::path& path, int num_classes = -1) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("load_csv: cannot open " + path.string());
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw std::runtime_error("load_csv: " + path.string() + " is empty");
    }
    const std::size_t columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    if (columns < 2) {
        throw std::runtime_error(path.string() + ":1: header must name features and a label");
    }

    LabeledDataset ds;
    ds.input_dim = static_cast<int>(columns - 1);
    std::vector<double> x(columns - 1);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream row(line);
        std::string cell;
        std::size_t col = 0;
        while (std::getline(row, cell, ',')) {
            if (col >= columns) break;
            if (col < columns - 1) {
                x[col] = detail::parse_real(cell, path, line_no, "feature");
            } else {
                const double label_real = detail::parse_real(cell, path, line_no, "label");
                const int label = static_cast<int>(label_real);
                if (static_cast<double>(label) != label_real || label < 0 ||
                    (num_classes >= 0 && label >= num_classes)) {
                    throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                             ": label out of range '" + cell + "'");
                }
                ds.append_row(x, label);
            }
            ++col;
        }
        if (col != columns) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": expected " + std::to_string(columns) + " columns, got " +
                                     std::to_string(col));
        }
    }
    return ds;
}

inline void save_csv(const LabeledDataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("save_csv: cannot open " + path.string() + " for writing");
    }
    for (int k = 0; k < ds.input_dim; ++k) out << 'f' << k << ',';
    out << "label\n";
    char buf[40];
    for (std::size_t i = 0; i < ds.rows(); ++i) {
        const auto x = ds.row(i);
        for (double v : x) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out << buf << ',';
        }
        out << ds.labels[i] << '\n';
    }
}

// Exactly the rows whose label is in `classes`, original order preserved.
inline LabeledDataset filter_by_classes(const LabeledDataset& ds, const std::set<int>& classes) {
    LabeledDataset out;
    out.input_dim = ds.input_dim;
    for (std::size_t i = 0; i < ds.rows(); ++i) {
        if (classes.count(ds.labels[i])) out.append_row_from(ds, i);
    }
    if (out.rows() == 0) {
        throw std::runtime_error("filter_by_classes: no rows carry the requested classes");
    }
    return out;
}

struct PartitionPlan {
    int num_clients = 0;
    int samples_per_client = 0;
    int unfair_set_size = 0;  // 0 resolves to all target rows in the clean union, capped at samples_per_client
    std::set<int> target_classes;
    std::uint64_t seed = 0;
};

struct Partition {
    std::vector<LabeledDataset> clean_sets;
    LabeledDataset unfair_set;
    LabeledDataset representative_set;
    // pool row indices behind each piece, for audits
    std::vector<std::vector<std::size_t>> clean_indices;
    std::vector<std::size_t> unfair_indices;
    std::vector<std::size_t> representative_indices;
};

// Draws disjoint i.i.d. clean sets, an unfair set restricted to the target
// classes and taken from inside the clean union, and an i.i.d. representative
// set the size of one clean set (overlap with clean data allowed).
inline Partition partition(const LabeledDataset& pool, const PartitionPlan& plan) {
    if (plan.num_clients <= 0 || plan.samples_per_client <= 0) {
        throw std::invalid_argument("partition: num_clients and samples_per_client must be positive");
    }
    const std::size_t need =
        static_cast<std::size_t>(plan.num_clients) * static_cast<std::size_t>(plan.samples_per_client);
    if (need > pool.rows()) {
        throw std::invalid_argument("partition: pool has " + std::to_string(pool.rows()) +
                                    " rows, plan needs " + std::to_string(need));
    }
    if (plan.target_classes.empty()) {
        throw std::invalid_argument("partition: target_classes must be non-empty");
    }
    bool has_other = false;
    for (int label : pool.labels) {
        if (!plan.target_classes.count(label)) {
            has_other = true;
            break;
        }
    }
    if (!has_other) {
        throw std::invalid_argument("partition: target_classes must be a proper subset of the pool's classes");
    }

    Rng rng(mix_seed(plan.seed, 0x9a27u));
    const std::vector<std::size_t> order = rng.permutation(pool.rows());

    Partition parts;
    parts.clean_indices.resize(static_cast<std::size_t>(plan.num_clients));
    for (int c = 0; c < plan.num_clients; ++c) {
        auto& idx = parts.clean_indices[static_cast<std::size_t>(c)];
        idx.assign(order.begin() + static_cast<std::ptrdiff_t>(c) * plan.samples_per_client,
                   order.begin() + static_cast<std::ptrdiff_t>(c + 1) * plan.samples_per_client);
        parts.clean_sets.push_back(subset_by_indices(pool, idx));
    }

    for (std::size_t i = 0; i < need; ++i) {
        if (plan.target_classes.count(pool.labels[order[i]])) {
            parts.unfair_indices.push_back(order[i]);
        }
    }
    const std::size_t available = parts.unfair_indices.size();
    std::size_t unfair_size =
        plan.unfair_set_size > 0
            ? static_cast<std::size_t>(plan.unfair_set_size)
            : std::min(available, static_cast<std::size_t>(plan.samples_per_client));
    if (unfair_size > available || unfair_size == 0) {
        throw std::invalid_argument("partition: clean union holds " + std::to_string(available) +
                                    " target-class rows, unfair set needs " +
                                    std::to_string(std::max<std::size_t>(unfair_size, 1)));
    }
    parts.unfair_indices.resize(unfair_size);
    parts.unfair_set = subset_by_indices(pool, parts.unfair_indices);

    const std::vector<std::size_t> rep_order = rng.permutation(pool.rows());
    parts.representative_indices.assign(rep_order.begin(),
                                        rep_order.begin() + plan.samples_per_client);
    parts.representative_set = subset_by_indices(pool, parts.representative_indices);
    return parts;
}

// Stratified split so every class keeps the same test share; the test side is
// balanced whenever the pool is.
inline std::pair<LabeledDataset, LabeledDataset> train_test_split(const LabeledDataset& pool,
                                                                  double test_fraction,
                                                                  std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
        throw std::invalid_argument("train_test_split: test_fraction must lie in (0, 1)");
    }
    std::set<int> classes(pool.labels.begin(), pool.labels.end());
    Rng rng(mix_seed(seed, 0x7e57u));
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> test_idx;
    for (int c : classes) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < pool.rows(); ++i) {
            if (pool.labels[i] == c) idx.push_back(i);
        }
        rng.shuffle(idx);
        const auto take = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(idx.size())));
        test_idx.insert(test_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
        train_idx.insert(train_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end());
    }
    return {subset_by_indices(pool, train_idx), subset_by_indices(pool, test_idx)};
}

}  // namespace flsim
