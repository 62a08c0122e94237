#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flsim/client_update.hpp"
#include "flsim/dataset.hpp"
#include "flsim/parameter_vector.hpp"
#include "flsim/rng.hpp"

namespace flsim {

enum class Architecture { softmax_regression, mlp };

struct ModelSpec {
    Architecture architecture = Architecture::softmax_regression;
    int input_dim = 0;
    int num_classes = 0;
    std::vector<int> hidden_sizes;  // used by mlp only

    // layer widths input -> hidden... -> classes
    std::vector<int> layer_dims() const {
        std::vector<int> dims{input_dim};
        if (architecture == Architecture::mlp) {
            dims.insert(dims.end(), hidden_sizes.begin(), hidden_sizes.end());
        }
        dims.push_back(num_classes);
        return dims;
    }

    void validate() const {
        if (input_dim <= 0) throw std::invalid_argument("model: input_dim must be positive");
        if (num_classes <= 0) throw std::invalid_argument("model: num_classes must be positive");
        if (architecture == Architecture::mlp) {
            if (hidden_sizes.empty()) {
                throw std::invalid_argument("model: mlp needs at least one hidden layer");
            }
            for (int h : hidden_sizes) {
                if (h <= 0) throw std::invalid_argument("model: hidden sizes must be positive");
            }
        } else if (!hidden_sizes.empty()) {
            throw std::invalid_argument("model: softmax_regression takes no hidden sizes");
        }
    }
};

inline std::size_t parameter_count(const ModelSpec& spec) {
    const auto dims = spec.layer_dims();
    std::size_t count = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        count += static_cast<std::size_t>(dims[l]) * static_cast<std::size_t>(dims[l + 1]) +
                 static_cast<std::size_t>(dims[l + 1]);
    }
    return count;
}

struct TrainingConfig {
    double learning_rate = 0.1;
    int local_epochs = 1;
    int batch_size = 32;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(learning_rate >= 0.0)) throw std::invalid_argument("training: learning_rate must be non-negative");
        if (local_epochs <= 0) throw std::invalid_argument("training: local_epochs must be positive");
        if (batch_size <= 0) throw std::invalid_argument("training: batch_size must be positive");
    }
};

// Weights uniform in (-1/sqrt(fan_in), +1/sqrt(fan_in)), biases zero.
inline ParameterVector init_parameters(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    const auto dims = spec.layer_dims();
    ParameterVector params(parameter_count(spec));
    Rng rng(mix_seed(seed, 0x1437u));
    std::size_t at = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
        const std::size_t weights = static_cast<std::size_t>(dims[l]) * static_cast<std::size_t>(dims[l + 1]);
        for (std::size_t i = 0; i < weights; ++i) params[at++] = rng.uniform(-bound, bound);
        at += static_cast<std::size_t>(dims[l + 1]);  // biases stay zero
    }
    return params;
}

namespace detail {

struct LayerView {
    const double* weights;  // out x in, row-major
    const double* biases;
    int in;
    int out;
};

inline std::vector<LayerView> layer_views(const ParameterVector& params, const ModelSpec& spec) {
    const auto dims = spec.layer_dims();
    if (params.size() != parameter_count(spec)) {
        throw std::invalid_argument("model: parameter vector has length " +
                                    std::to_string(params.size()) + ", model needs " +
                                    std::to_string(parameter_count(spec)));
    }
    std::vector<LayerView> layers;
    std::size_t at = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        LayerView view{params.values.data() + at, nullptr, dims[l], dims[l + 1]};
        at += static_cast<std::size_t>(dims[l]) * static_cast<std::size_t>(dims[l + 1]);
        view.biases = params.values.data() + at;
        at += static_cast<std::size_t>(dims[l + 1]);
        layers.push_back(view);
    }
    return layers;
}

inline void affine(const LayerView& layer, std::span<const double> in, std::vector<double>& out) {
    out.resize(static_cast<std::size_t>(layer.out));
    for (int i = 0; i < layer.out; ++i) {
        const double* w = layer.weights + static_cast<std::size_t>(i) * layer.in;
        double acc = layer.biases[i];
        for (int j = 0; j < layer.in; ++j) acc += w[j] * in[static_cast<std::size_t>(j)];
        out[static_cast<std::size_t>(i)] = acc;
    }
}

inline void softmax_in_place(std::vector<double>& z) {
    const double top = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (double& v : z) {
        v = std::exp(v - top);
        total += v;
    }
    for (double& v : z) v /= total;
}

// Activations for one sample: acts[0] is the input copy, then one tanh layer
// per hidden stage, then class probabilities last.
inline void forward_sample(const std::vector<LayerView>& layers, std::span<const double> x,
                           std::vector<std::vector<double>>& acts) {
    acts.resize(layers.size() + 1);
    acts[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < layers.size(); ++l) {
        affine(layers[l], acts[l], acts[l + 1]);
        if (l + 1 < layers.size()) {
            for (double& v : acts[l + 1]) v = std::tanh(v);
        }
    }
    softmax_in_place(acts.back());
}

}  // namespace detail

// Class probabilities, row-major rows x num_classes.
inline std::vector<double> forward(const ParameterVector& params, const ModelSpec& spec,
                                   std::span<const double> features) {
    spec.validate();
    const auto layers = detail::layer_views(params, spec);
    if (features.size() % static_cast<std::size_t>(spec.input_dim) != 0) {
        throw std::invalid_argument("forward: feature length " + std::to_string(features.size()) +
                                    " is not a multiple of input_dim " +
                                    std::to_string(spec.input_dim));
    }
    const std::size_t rows = features.size() / static_cast<std::size_t>(spec.input_dim);
    std::vector<double> probs(rows * static_cast<std::size_t>(spec.num_classes));
    std::vector<std::vector<double>> acts;
    for (std::size_t r = 0; r < rows; ++r) {
        detail::forward_sample(layers, features.subspan(r * spec.input_dim, spec.input_dim), acts);
        std::copy(acts.back().begin(), acts.back().end(),
                  probs.begin() + static_cast<std::ptrdiff_t>(r * spec.num_classes));
    }
    return probs;
}

inline std::vector<double> forward(const ParameterVector& params, const ModelSpec& spec,
                                   const LabeledDataset& data) {
    if (data.input_dim != spec.input_dim) {
        throw std::invalid_argument("forward: dataset width " + std::to_string(data.input_dim) +
                                    " does not match input_dim " + std::to_string(spec.input_dim));
    }
    return forward(params, spec, std::span<const double>(data.features));
}

namespace detail {

// Mean cross-entropy gradient over the indexed rows. Accumulates per-sample
// contributions in long double so the result is stable against row order.
inline ParameterVector gradient_over(const ParameterVector& params, const ModelSpec& spec,
                                     const LabeledDataset& batch,
                                     std::span<const std::size_t> indices) {
    const auto layers = layer_views(params, spec);
    if (indices.empty()) throw std::invalid_argument("gradient: batch is empty");
    if (batch.input_dim != spec.input_dim) {
        throw std::invalid_argument("gradient: dataset width " + std::to_string(batch.input_dim) +
                                    " does not match input_dim " + std::to_string(spec.input_dim));
    }

    std::vector<long double> acc(params.size(), 0.0L);
    std::vector<std::vector<double>> acts;
    std::vector<double> delta;
    std::vector<double> delta_prev;

    // per-layer offsets into the flat parameter vector
    std::vector<std::size_t> offsets;
    {
        std::size_t at = 0;
        for (const auto& layer : layers) {
            offsets.push_back(at);
            at += static_cast<std::size_t>(layer.in) * layer.out + static_cast<std::size_t>(layer.out);
        }
    }

    for (std::size_t idx : indices) {
        const int label = batch.labels[idx];
        if (label < 0 || label >= spec.num_classes) {
            throw std::invalid_argument("gradient: label " + std::to_string(label) +
                                        " outside [0, " + std::to_string(spec.num_classes) + ")");
        }
        forward_sample(layers, batch.row(idx), acts);

        delta = acts.back();
        delta[static_cast<std::size_t>(label)] -= 1.0;  // d(loss)/d(logits) = p - onehot

        for (std::size_t l = layers.size(); l-- > 0;) {
            const auto& layer = layers[l];
            const auto& below = acts[l];
            long double* grad_w = acc.data() + offsets[l];
            long double* grad_b = grad_w + static_cast<std::size_t>(layer.in) * layer.out;
            for (int i = 0; i < layer.out; ++i) {
                const double d = delta[static_cast<std::size_t>(i)];
                long double* row = grad_w + static_cast<std::size_t>(i) * layer.in;
                for (int j = 0; j < layer.in; ++j) row[j] += d * below[static_cast<std::size_t>(j)];
                grad_b[i] += d;
            }
            if (l == 0) break;
            delta_prev.assign(static_cast<std::size_t>(layer.in), 0.0);
            for (int i = 0; i < layer.out; ++i) {
                const double d = delta[static_cast<std::size_t>(i)];
                const double* w = layer.weights + static_cast<std::size_t>(i) * layer.in;
                for (int j = 0; j < layer.in; ++j) delta_prev[static_cast<std::size_t>(j)] += w[j] * d;
            }
            for (int j = 0; j < layer.in; ++j) {
                const double a = below[static_cast<std::size_t>(j)];
                delta_prev[static_cast<std::size_t>(j)] *= 1.0 - a * a;  // tanh'
            }
            delta.swap(delta_prev);
        }
    }

    ParameterVector grad(params.size());
    const long double inv = 1.0L / static_cast<long double>(indices.size());
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = static_cast<double>(acc[i] * inv);
    return grad;
}

}  // namespace detail

inline ParameterVector gradient(const ParameterVector& params, const ModelSpec& spec,
                                const LabeledDataset& batch) {
    std::vector<std::size_t> all(batch.rows());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return detail::gradient_over(params, spec, batch, all);
}

// Mean cross-entropy of the dataset under the model.
inline double mean_loss(const ParameterVector& params, const ModelSpec& spec,
                        const LabeledDataset& data) {
    const auto probs = forward(params, spec, data);
    long double total = 0.0L;
    for (std::size_t r = 0; r < data.rows(); ++r) {
        const double p = probs[r * static_cast<std::size_t>(spec.num_classes) +
                               static_cast<std::size_t>(data.labels[r])];
        total += -std::log(std::max(p, 1e-300));
    }
    return static_cast<double>(total / static_cast<long double>(data.rows()));
}

// Runs local SGD and returns the parameter delta along with the true
// datapoint count. Batches are drawn by a seeded shuffle each epoch; the
// whole call is a pure function of its arguments.
inline ClientUpdate local_train(const ParameterVector& params, const ModelSpec& spec,
                                const LabeledDataset& dataset, const TrainingConfig& cfg) {
    cfg.validate();
    if (dataset.rows() == 0) throw std::invalid_argument("local_train: dataset is empty");

    ParameterVector current = params;
    Rng rng(mix_seed(cfg.seed, 0x10ca1u));
    const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
    for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        const auto order = rng.permutation(dataset.rows());
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t count = std::min(batch, order.size() - start);
            const auto grad = detail::gradient_over(current, spec, dataset,
                                                    std::span(order).subspan(start, count));
            current.add_scaled(grad, -cfg.learning_rate);
        }
    }
    if (!current.all_finite()) {
        throw std::runtime_error("local_train: parameters diverged to non-finite values");
    }
    return ClientUpdate{current - params, static_cast<std::int64_t>(dataset.rows())};
}

struct EvalResult {
    std::vector<double> per_class_accuracy;  // percent; NaN marks a class absent from the dataset
    std::vector<std::size_t> per_class_count;
    double overall_accuracy = 0.0;  // percent

    bool class_defined(std::size_t c) const { return per_class_count[c] > 0; }
};

inline EvalResult evaluate(const ParameterVector& params, const ModelSpec& spec,
                           const LabeledDataset& data) {
    if (data.rows() == 0) throw std::invalid_argument("evaluate: dataset is empty");
    const auto probs = forward(params, spec, data);
    const auto classes = static_cast<std::size_t>(spec.num_classes);
    std::vector<std::size_t> correct(classes, 0);
    std::vector<std::size_t> count(classes, 0);
    for (std::size_t r = 0; r < data.rows(); ++r) {
        const double* row = probs.data() + r * classes;
        const std::size_t pred =
            static_cast<std::size_t>(std::max_element(row, row + classes) - row);
        const auto label = static_cast<std::size_t>(data.labels[r]);
        ++count[label];
        if (pred == label) ++correct[label];
    }
    EvalResult out;
    out.per_class_count = count;
    out.per_class_accuracy.resize(classes);
    std::size_t total_correct = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        total_correct += correct[c];
        out.per_class_accuracy[c] =
            count[c] ? 100.0 * static_cast<double>(correct[c]) / static_cast<double>(count[c])
                     : std::numeric_limits<double>::quiet_NaN();
    }
    out.overall_accuracy = 100.0 * static_cast<double>(total_correct) / static_cast<double>(data.rows());
    return out;
}

}  // namespace flsim
