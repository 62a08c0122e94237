#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flsim/client_update.hpp"
#include "flsim/dataset.hpp"
#include "flsim/model.hpp"
#include "flsim/parameter_vector.hpp"

namespace flsim {

// Datapoint-count-weighted mean of the deltas. Accumulation runs in the
// order given, so callers pass updates in canonical roster order to keep the
// shipped aggregate bit-stable.
inline ParameterVector fedavg_aggregate(std::span<const ClientUpdate> updates) {
    if (updates.empty()) throw std::invalid_argument("fedavg_aggregate: no updates");
    const std::size_t dim = updates.front().delta.size();
    std::vector<long double> acc(dim, 0.0L);
    long double total = 0.0L;
    for (const auto& update : updates) {
        if (update.delta.size() != dim) {
            throw std::invalid_argument("fedavg_aggregate: delta length mismatch (" +
                                        std::to_string(update.delta.size()) + " vs " +
                                        std::to_string(dim) + ")");
        }
        if (update.reported_count < 1) {
            throw std::invalid_argument("fedavg_aggregate: reported_count must be at least 1");
        }
        const auto weight = static_cast<long double>(update.reported_count);
        for (std::size_t i = 0; i < dim; ++i) acc[i] += weight * update.delta[i];
        total += weight;
    }
    ParameterVector out(dim);
    for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<double>(acc[i] / total);
    return out;
}

enum class ClientRole { honest, malicious };

struct ClientDescriptor {
    int id = 0;
    ClientRole role = ClientRole::honest;
};

// Server-side view of one experiment in flight. The roster fixes the
// aggregation order and the malicious head count.
struct FederationState {
    int round = 0;
    ParameterVector global_params;
    std::vector<ClientDescriptor> roster;

    int malicious_count() const {
        int n = 0;
        for (const auto& d : roster) {
            if (d.role == ClientRole::malicious) ++n;
        }
        return n;
    }
};

class Client {
public:
    virtual ~Client() = default;
    virtual ClientUpdate produce_update(const ParameterVector& global_params, int round) = 0;
    virtual int id() const = 0;
    virtual ClientRole role() const = 0;
    // true when the client submitted a solved (attacking) update this round
    virtual bool attacked(int round) const {
        (void)round;
        return false;
    }
};

inline std::uint64_t client_train_seed(std::uint64_t run_seed, int round, int client_id) {
    return mix_seed(run_seed, 0xc11e07u, static_cast<std::uint64_t>(round),
                    static_cast<std::uint64_t>(client_id));
}

class HonestClient final : public Client {
public:
    HonestClient(int id, ModelSpec spec, LabeledDataset data, TrainingConfig training,
                 std::uint64_t run_seed)
        : id_(id),
          spec_(std::move(spec)),
          data_(std::move(data)),
          training_(training),
          run_seed_(run_seed) {}

    ClientUpdate produce_update(const ParameterVector& global_params, int round) override {
        TrainingConfig cfg = training_;
        cfg.seed = client_train_seed(run_seed_, round, id_);
        return local_train(global_params, spec_, data_, cfg);
    }

    int id() const override { return id_; }
    ClientRole role() const override { return ClientRole::honest; }
    const LabeledDataset& dataset() const { return data_; }

private:
    int id_;
    ModelSpec spec_;
    LabeledDataset data_;
    TrainingConfig training_;
    std::uint64_t run_seed_;
};

}  // namespace flsim
