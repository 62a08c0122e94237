#pragma once

#include <algorithm>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flsim/client_update.hpp"

namespace flsim {

// Server-side magnitude screening applied before aggregation.
struct DefensePolicy {
    enum class Kind { none, clip_fixed, clip_adaptive_median, flag_outliers };
    Kind kind = Kind::none;
    double clip_bound = 0.0;            // clip_fixed
    double threshold_multiplier = 3.0;  // flag_outliers; must exceed 1

    void validate() const {
        if (kind == Kind::clip_fixed && !(clip_bound > 0.0)) {
            throw std::invalid_argument("defense: clip bound must be positive");
        }
        if (kind == Kind::flag_outliers && !(threshold_multiplier > 1.0)) {
            throw std::invalid_argument("defense: threshold_multiplier must exceed 1");
        }
    }
};

struct DefenseAction {
    enum class Kind { clipped, excluded };
    Kind kind = Kind::clipped;
    int client_index = 0;  // position in the submitted roster order
    double original_norm = 0.0;
    double bound = 0.0;
};

struct DefenseOutcome {
    std::vector<ClientUpdate> updates;
    std::vector<DefenseAction> actions;
};

// Lower median: for even counts the smaller middle element. Clipping to it is
// a fixed point, so screening the same round twice changes nothing.
inline double lower_median(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("lower_median: empty input");
    const std::size_t mid = (values.size() - 1) / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
    return values[mid];
}

inline DefenseOutcome apply_defense(std::span<const ClientUpdate> updates,
                                    const DefensePolicy& policy) {
    if (updates.empty()) throw std::invalid_argument("apply_defense: no updates");
    policy.validate();

    DefenseOutcome out;
    if (policy.kind == DefensePolicy::Kind::none) {
        out.updates.assign(updates.begin(), updates.end());
        return out;
    }

    std::vector<double> norms;
    norms.reserve(updates.size());
    for (const auto& u : updates) norms.push_back(u.delta.l2_norm());

    if (policy.kind == DefensePolicy::Kind::flag_outliers) {
        const double cutoff = policy.threshold_multiplier * lower_median(norms);
        for (std::size_t i = 0; i < updates.size(); ++i) {
            if (norms[i] > cutoff) {
                out.actions.push_back({DefenseAction::Kind::excluded, static_cast<int>(i),
                                       norms[i], cutoff});
            } else {
                out.updates.push_back(updates[i]);
            }
        }
        return out;
    }

    const double bound = policy.kind == DefensePolicy::Kind::clip_fixed ? policy.clip_bound
                                                                        : lower_median(norms);
    for (std::size_t i = 0; i < updates.size(); ++i) {
        ClientUpdate u = updates[i];
        if (norms[i] > bound) {
            const double scale = bound / norms[i];
            for (double& v : u.delta.values) v *= scale;
            out.actions.push_back({DefenseAction::Kind::clipped, static_cast<int>(i), norms[i], bound});
        }
        out.updates.push_back(std::move(u));
    }
    return out;
}

}  // namespace flsim
