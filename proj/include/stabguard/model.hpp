#pragma once

// Desk-scale training targets: a tanh MLP classifier with hand-written
// backprop, two synthetic datasets, and the held-out probe measurement.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "stabguard/numerics.hpp"

namespace stabguard {

/// Fully connected network, tanh on every hidden layer, linear logits.
///
/// Parameters are laid out layer by layer as the weights, input-major
/// (entry [i * out + j] connects input i to unit j), followed by the bias.
struct MlpSpec {
    std::vector<std::size_t> layer_sizes;

    void validate() const;
    std::size_t input_dim() const { return layer_sizes.front(); }
    std::size_t output_dim() const { return layer_sizes.back(); }
    std::size_t num_layers() const { return layer_sizes.size() - 1; }
    std::size_t param_count() const;
};

struct Dataset {
    Matrix features;                   // one example per row
    std::vector<std::size_t> labels;   // class index per row
    std::size_t num_classes = 0;
    std::vector<std::uint64_t> ids;    // identity of each example within its generator's pool

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return features.cols; }
    std::span<const double> input(std::size_t i) const { return features.row(i); }

    void validate() const;
    Dataset subset(std::span<const std::size_t> rows) const;
};

/// Fixed held-out measurement set. Construction rejects any overlap (by
/// example id) with the training data it is paired with.
class ProbeSet {
public:
    ProbeSet(Dataset probe, const Dataset& train);

    const Dataset& data() const { return data_; }
    std::size_t size() const { return data_.size(); }

private:
    Dataset data_;
};

/// Mini-batch indices as a pure function of (seed, stream, step).
///
/// Batch t never depends on how many batches were consumed before it, so a
/// rollback cannot shift the order seen by later steps.
class BatchStream {
public:
    BatchStream(std::size_t dataset_size, std::size_t batch_size, RngStream rng);

    std::vector<std::size_t> batch_at(std::uint64_t step) const;
    std::vector<std::size_t> next() { return batch_at(step_++); }
    std::uint64_t step() const { return step_; }

private:
    std::size_t dataset_size_;
    std::size_t batch_size_;
    RngStream rng_;
    std::uint64_t step_ = 0;
};

struct LossAndGrad {
    double loss = 0.0;
    Vec64 grad;
};

/// Gaussian init, std = 1/sqrt(fan_in) for weights; biases start at zero.
ParameterVector init_params(const MlpSpec& spec, RngStream& rng);

Vec64 forward(const MlpSpec& spec, std::span<const double> params, std::span<const double> input);

/// Mean cross-entropy over `rows` of `data` and its exact gradient.
LossAndGrad loss_and_grad(const MlpSpec& spec, std::span<const double> params, const Dataset& data,
                          std::span<const std::size_t> rows);
LossAndGrad loss_and_grad(const MlpSpec& spec, std::span<const double> params, const Dataset& data);

/// Mean cross-entropy without the backward pass. Non-finite results are
/// returned unchanged.
double mean_loss(const MlpSpec& spec, std::span<const double> params, const Dataset& data);
double mean_loss(const MlpSpec& spec, std::span<const double> params, const Dataset& data,
                 std::span<const std::size_t> rows);

inline double probe_loss(const MlpSpec& spec, std::span<const double> params, const ProbeSet& probe) {
    return mean_loss(spec, params, probe.data());
}

double accuracy(const MlpSpec& spec, std::span<const double> params, const Dataset& data);

/// Gaussian class clusters with unit within-class variance. Labels are
/// assigned round-robin. Adjacent class centers lie `separation` apart on a
/// circle spanned by the first two coordinates (a line when dim == 1).
Dataset make_blobs(RngStream& rng, std::size_t n, std::size_t num_classes, std::size_t dim, double separation);

/// Sorted distinct characters of `phrase`.
std::string char_vocabulary(std::string_view phrase);

/// Next-character prediction over `phrase` repeated `repeats` times (the
/// corpus wraps by `window` characters so every position has a successor).
/// Inputs are one-hot encodings of `window` consecutive characters.
Dataset make_char_task(std::string_view phrase, std::size_t window, std::size_t repeats = 1);

/// Stratified split of `pool` into a training set and a probe of `probe_size`
/// examples (classes are drawn round-robin from per-class shuffles).
std::pair<Dataset, ProbeSet> split_holdout(const Dataset& pool, std::size_t probe_size, RngStream rng);

void write_dataset_csv(std::ostream& out, const Dataset& data);
Dataset read_dataset_csv(std::istream& in, std::size_t num_classes);

} // namespace stabguard
