#pragma once

// Small convolutional classifier with hand-written backprop.
//
// Layer menu: [conv(k x k, stride) -> ReLU -> max-pool(p x p)]* followed by
// dense layers with ReLU on every hidden layer and a softmax on the last.
// Training runs in float; the same templates instantiated for double back the
// finite-difference gradient check.
//
// Flat parameter order: for each conv layer, weights [out][in][ky][kx] then
// bias [out]; then for each dense layer, weights [out][in] then bias [out].

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace aa::nn {

struct ConvSpec {
    int out_channels = 8;
    int kernel_size = 3;
    int stride = 1;
    int pool = 2;  // max-pool window and stride; 1 disables pooling

    bool operator==(const ConvSpec&) const = default;
};

struct Architecture {
    int input_height = 32;
    int input_width = 32;
    std::vector<ConvSpec> conv_layers;
    std::vector<int> dense_layers;  // widths; the last one equals num_classes
    int num_classes = 2;

    void validate() const;  // throws ConfigError
    std::size_t parameter_count() const;

    // Two 3x3 conv layers (8 and 16 channels, 2x2 max-pool after each),
    // dense 64, dense num_classes.
    static Architecture desk_default(int num_classes, int height = 32, int width = 32);

    bool operator==(const Architecture&) const = default;
};

struct ConvPlan {
    int in_channels, in_height, in_width;
    int out_channels, kernel, stride, out_height, out_width;
    int pool, pooled_height, pooled_width;
};

struct DensePlan {
    int in, out;
    bool relu;
};

struct Plan {
    std::vector<ConvPlan> conv;
    std::vector<DensePlan> dense;
};

Plan make_plan(const Architecture& arch);

template <class T>
class BasicParams {
public:
    BasicParams() = default;
    explicit BasicParams(const Architecture& arch);  // all zeros

    const Architecture& architecture() const { return arch_; }
    const Plan& plan() const { return plan_; }

    std::span<T> flat() { return data_; }
    std::span<const T> flat() const { return data_; }
    std::size_t size() const { return data_.size(); }

    // Parametrized layers: conv layers first, then dense layers.
    std::size_t layer_count() const { return weight_slices_.size(); }
    std::span<T> weights(std::size_t layer) { return slice(weight_slices_.at(layer)); }
    std::span<const T> weights(std::size_t layer) const { return slice(weight_slices_.at(layer)); }
    std::span<T> biases(std::size_t layer) { return slice(bias_slices_.at(layer)); }
    std::span<const T> biases(std::size_t layer) const { return slice(bias_slices_.at(layer)); }

    void set_zero();

    template <class U>
    BasicParams<U> cast() const {
        BasicParams<U> out(arch_);
        auto dst = out.flat();
        for (std::size_t i = 0; i < data_.size(); ++i) dst[i] = static_cast<U>(data_[i]);
        return out;
    }

    bool operator==(const BasicParams& other) const { return arch_ == other.arch_ && data_ == other.data_; }

private:
    using Slice = std::pair<std::size_t, std::size_t>;  // offset, length
    std::span<T> slice(Slice s) { return std::span<T>(data_).subspan(s.first, s.second); }
    std::span<const T> slice(Slice s) const { return std::span<const T>(data_).subspan(s.first, s.second); }

    Architecture arch_;
    Plan plan_;
    std::vector<T> data_;
    std::vector<Slice> weight_slices_;
    std::vector<Slice> bias_slices_;
};

using Params = BasicParams<float>;
using Gradient = BasicParams<float>;

// He (fan-in) normal weights, zero biases.
Params init_params(const Architecture& arch, std::uint64_t seed);

template <class T>
struct BasicTrace {
    std::vector<std::vector<T>> conv_activations;  // post-ReLU conv output, before pooling
    std::vector<std::vector<T>> pooled;            // input to the following layer
    std::vector<std::vector<int>> pool_argmax;     // index into conv_activations per pooled cell
    std::vector<std::vector<T>> dense_activations; // post-ReLU; the last entry holds the logits
    std::vector<double> log_probs;
    std::vector<double> output_probs;
};

using ForwardTrace = BasicTrace<float>;

template <class T>
BasicTrace<T> forward(const BasicParams<T>& params, std::span<const T> image);

// Reuses the buffers of an existing trace.
template <class T>
void forward_into(const BasicParams<T>& params, std::span<const T> image, BasicTrace<T>& trace);

// Cross entropy -sum_k t_k log p_k of a computed trace against a target vector.
double trace_loss(std::span<const double> log_probs, std::span<const double> target);

// Scratch space for backprop, sized on first use.
template <class T>
struct Workspace {
    BasicTrace<T> trace;
    std::vector<std::vector<T>> conv_grad;
    std::vector<std::vector<T>> pooled_grad;
    std::vector<std::vector<T>> dense_grad;
};

// Adds weight * d(CE(image, target))/d(params) into grad and returns the
// example's cross entropy. The logit gradient is weight * (p - t).
template <class T>
double accumulate_gradient(const BasicParams<T>& params, std::span<const T> image,
                           std::span<const double> target, double weight,
                           BasicParams<T>& grad, Workspace<T>& ws);

// Gradient of the mean cross entropy over the batch.
template <class T>
BasicParams<T> backward(const BasicParams<T>& params, std::span<const std::span<const T>> images,
                        std::span<const std::vector<double>> targets);

template <class T>
double mean_loss(const BasicParams<T>& params, std::span<const std::span<const T>> images,
                 std::span<const std::vector<double>> targets);

struct GradCheckOptions {
    // Relative error is |a - b| / max(|a|, |b|, denominator_floor).
    double denominator_floor = 1e-12;
    // Nets larger than this are checked on a random subsample of coordinates.
    std::size_t full_check_limit = 5000;
    std::size_t subsample = 500;
    std::uint64_t seed = 0;
};

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t worst_index = 0;
    std::size_t coordinates_checked = 0;
};

// Central finite differences in double precision against backward().
// epsilon must lie in [1e-7, 1e-3].
GradCheckResult grad_check(const BasicParams<double>& params, std::span<const std::span<const double>> images,
                           std::span<const std::vector<double>> targets, double epsilon,
                           const GradCheckOptions& options = {});
GradCheckResult grad_check(const Params& params, std::span<const std::vector<float>> images,
                           std::span<const std::vector<double>> targets, double epsilon,
                           const GradCheckOptions& options = {});

void sgd_step(Params& params, const Gradient& gradient, double learning_rate);

struct AdamHyper {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step = 0;
};

void adam_step(Params& params, const Gradient& gradient, AdamState& state, const AdamHyper& hyper);

extern template class BasicParams<float>;
extern template class BasicParams<double>;

}  // namespace aa::nn
