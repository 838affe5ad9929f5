#include "aa/network.hpp"

#include "aa/errors.hpp"
#include "aa/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace aa::nn {

namespace {

std::string shape_str(int h, int w) { return std::to_string(h) + "x" + std::to_string(w); }

}  // namespace

Plan make_plan(const Architecture& arch) {
    if (arch.input_height < 1 || arch.input_width < 1) throw ConfigError("architecture: input extent must be >= 1");
    if (arch.num_classes < 2) throw ConfigError("architecture: num_classes must be >= 2");
    if (arch.dense_layers.empty()) throw ConfigError("architecture: at least one dense layer is required");
    if (arch.dense_layers.back() != arch.num_classes)
        throw ConfigError("architecture: final dense width " + std::to_string(arch.dense_layers.back()) +
                          " != num_classes " + std::to_string(arch.num_classes));

    Plan plan;
    int c = 1, h = arch.input_height, w = arch.input_width;
    for (std::size_t i = 0; i < arch.conv_layers.size(); ++i) {
        const auto& s = arch.conv_layers[i];
        const std::string where = "architecture: conv layer " + std::to_string(i);
        if (s.out_channels < 1 || s.kernel_size < 1 || s.stride < 1 || s.pool < 1)
            throw ConfigError(where + " needs positive channels, kernel, stride and pool");
        if (s.kernel_size > h || s.kernel_size > w)
            throw ConfigError(where + " kernel " + std::to_string(s.kernel_size) + " does not fit input " +
                              shape_str(h, w));
        ConvPlan p{};
        p.in_channels = c;
        p.in_height = h;
        p.in_width = w;
        p.out_channels = s.out_channels;
        p.kernel = s.kernel_size;
        p.stride = s.stride;
        p.out_height = (h - s.kernel_size) / s.stride + 1;
        p.out_width = (w - s.kernel_size) / s.stride + 1;
        p.pool = s.pool;
        p.pooled_height = p.out_height / s.pool;
        p.pooled_width = p.out_width / s.pool;
        if (p.pooled_height < 1 || p.pooled_width < 1)
            throw ConfigError(where + " pool " + std::to_string(s.pool) + " does not fit output " +
                              shape_str(p.out_height, p.out_width));
        plan.conv.push_back(p);
        c = p.out_channels;
        h = p.pooled_height;
        w = p.pooled_width;
    }
    int in = c * h * w;
    for (std::size_t i = 0; i < arch.dense_layers.size(); ++i) {
        const int out = arch.dense_layers[i];
        if (out < 1) throw ConfigError("architecture: dense width must be >= 1");
        plan.dense.push_back({in, out, i + 1 < arch.dense_layers.size()});
        in = out;
    }
    return plan;
}

void Architecture::validate() const { (void)make_plan(*this); }

std::size_t Architecture::parameter_count() const {
    const Plan plan = make_plan(*this);
    std::size_t n = 0;
    for (const auto& p : plan.conv)
        n += static_cast<std::size_t>(p.out_channels) * p.in_channels * p.kernel * p.kernel + p.out_channels;
    for (const auto& d : plan.dense) n += static_cast<std::size_t>(d.out) * d.in + d.out;
    return n;
}

Architecture Architecture::desk_default(int num_classes, int height, int width) {
    Architecture a;
    a.input_height = height;
    a.input_width = width;
    a.conv_layers = {{8, 3, 1, 2}, {16, 3, 1, 2}};
    a.dense_layers = {64, num_classes};
    a.num_classes = num_classes;
    return a;
}

template <class T>
BasicParams<T>::BasicParams(const Architecture& arch) : arch_(arch), plan_(make_plan(arch)) {
    std::size_t offset = 0;
    auto add = [&](std::size_t nw, std::size_t nb) {
        weight_slices_.emplace_back(offset, nw);
        offset += nw;
        bias_slices_.emplace_back(offset, nb);
        offset += nb;
    };
    for (const auto& p : plan_.conv)
        add(static_cast<std::size_t>(p.out_channels) * p.in_channels * p.kernel * p.kernel,
            static_cast<std::size_t>(p.out_channels));
    for (const auto& d : plan_.dense) add(static_cast<std::size_t>(d.out) * d.in, static_cast<std::size_t>(d.out));
    data_.assign(offset, T{0});
}

template <class T>
void BasicParams<T>::set_zero() {
    std::fill(data_.begin(), data_.end(), T{0});
}

template class BasicParams<float>;
template class BasicParams<double>;

Params init_params(const Architecture& arch, std::uint64_t seed) {
    Params params(arch);
    Rng rng = make_rng(seed, "init");
    const Plan& plan = params.plan();
    std::size_t layer = 0;
    auto fill = [&](std::size_t fan_in) {
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        for (float& w : params.weights(layer)) w = static_cast<float>(dist(rng));
        ++layer;
    };
    for (const auto& p : plan.conv) fill(static_cast<std::size_t>(p.in_channels) * p.kernel * p.kernel);
    for (const auto& d : plan.dense) fill(static_cast<std::size_t>(d.in));
    return params;
}

namespace {

template <class T>
void conv_forward(const ConvPlan& p, const T* in, std::span<const T> w, std::span<const T> b, std::vector<T>& out) {
    const std::size_t plane = static_cast<std::size_t>(p.out_height) * p.out_width;
    out.resize(plane * p.out_channels);
    const std::size_t in_plane = static_cast<std::size_t>(p.in_height) * p.in_width;
    for (int oc = 0; oc < p.out_channels; ++oc) {
        T* o = out.data() + oc * plane;
        std::fill(o, o + plane, b[oc]);
        for (int ic = 0; ic < p.in_channels; ++ic) {
            const T* src = in + ic * in_plane;
            for (int ky = 0; ky < p.kernel; ++ky) {
                for (int kx = 0; kx < p.kernel; ++kx) {
                    const T wv = w[((static_cast<std::size_t>(oc) * p.in_channels + ic) * p.kernel + ky) * p.kernel + kx];
                    for (int oy = 0; oy < p.out_height; ++oy) {
                        const T* row = src + static_cast<std::size_t>(oy * p.stride + ky) * p.in_width + kx;
                        T* orow = o + static_cast<std::size_t>(oy) * p.out_width;
                        if (p.stride == 1) {
                            for (int ox = 0; ox < p.out_width; ++ox) orow[ox] += wv * row[ox];
                        } else {
                            for (int ox = 0; ox < p.out_width; ++ox) orow[ox] += wv * row[ox * p.stride];
                        }
                    }
                }
            }
        }
    }
    for (T& v : out) v = v > T{0} ? v : T{0};
}

template <class T>
void pool_forward(const ConvPlan& p, const std::vector<T>& act, std::vector<T>& out, std::vector<int>& arg) {
    const std::size_t n = static_cast<std::size_t>(p.out_channels) * p.pooled_height * p.pooled_width;
    out.resize(n);
    arg.resize(n);
    std::size_t idx = 0;
    for (int c = 0; c < p.out_channels; ++c) {
        const int base = c * p.out_height * p.out_width;
        for (int py = 0; py < p.pooled_height; ++py) {
            for (int px = 0; px < p.pooled_width; ++px, ++idx) {
                int best = base + (py * p.pool) * p.out_width + px * p.pool;
                for (int dy = 0; dy < p.pool; ++dy)
                    for (int dx = 0; dx < p.pool; ++dx) {
                        const int k = base + (py * p.pool + dy) * p.out_width + px * p.pool + dx;
                        if (act[k] > act[best]) best = k;
                    }
                out[idx] = act[best];
                arg[idx] = best;
            }
        }
    }
}

template <class T>
void dense_forward(const DensePlan& d, const T* in, std::span<const T> w, std::span<const T> b, std::vector<T>& out) {
    out.resize(static_cast<std::size_t>(d.out));
    for (int o = 0; o < d.out; ++o) {
        const T* row = w.data() + static_cast<std::size_t>(o) * d.in;
        T acc = b[o];
        for (int i = 0; i < d.in; ++i) acc += row[i] * in[i];
        out[o] = d.relu && acc < T{0} ? T{0} : acc;
    }
}

void log_softmax(std::span<const double> logits, std::vector<double>& log_probs, std::vector<double>& probs) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - mx);
    const double lse = mx + std::log(sum);
    log_probs.resize(logits.size());
    probs.resize(logits.size());
    for (std::size_t k = 0; k < logits.size(); ++k) {
        log_probs[k] = logits[k] - lse;
        probs[k] = std::exp(log_probs[k]);
    }
}

void check_target(std::span<const double> target, std::size_t k) {
    if (target.size() != k)
        throw DimensionError("target has " + std::to_string(target.size()) + " entries, expected " + std::to_string(k));
    double sum = 0.0;
    for (double t : target) {
        if (!(t >= 0.0) || !std::isfinite(t)) throw ConfigError("target entries must be finite and >= 0");
        sum += t;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw ConfigError("target must sum to 1 (got " + std::to_string(sum) + ")");
}

}  // namespace

template <class T>
void forward_into(const BasicParams<T>& params, std::span<const T> image, BasicTrace<T>& trace) {
    const Architecture& arch = params.architecture();
    const Plan& plan = params.plan();
    const auto expected = static_cast<std::size_t>(arch.input_height) * arch.input_width;
    if (image.size() != expected)
        throw DimensionError("forward: expected " + std::to_string(expected) + " inputs (" +
                             shape_str(arch.input_height, arch.input_width) + "), got " +
                             std::to_string(image.size()));

    trace.conv_activations.resize(plan.conv.size());
    trace.pooled.resize(plan.conv.size());
    trace.pool_argmax.resize(plan.conv.size());
    trace.dense_activations.resize(plan.dense.size());

    const T* in = image.data();
    std::size_t layer = 0;
    for (std::size_t i = 0; i < plan.conv.size(); ++i, ++layer) {
        conv_forward(plan.conv[i], in, params.weights(layer), params.biases(layer), trace.conv_activations[i]);
        pool_forward(plan.conv[i], trace.conv_activations[i], trace.pooled[i], trace.pool_argmax[i]);
        in = trace.pooled[i].data();
    }
    for (std::size_t i = 0; i < plan.dense.size(); ++i, ++layer) {
        dense_forward(plan.dense[i], in, params.weights(layer), params.biases(layer), trace.dense_activations[i]);
        in = trace.dense_activations[i].data();
    }
    const auto& logits_t = trace.dense_activations.back();
    std::vector<double> logits(logits_t.begin(), logits_t.end());
    log_softmax(logits, trace.log_probs, trace.output_probs);
}

template <class T>
BasicTrace<T> forward(const BasicParams<T>& params, std::span<const T> image) {
    BasicTrace<T> trace;
    forward_into(params, image, trace);
    return trace;
}

double trace_loss(std::span<const double> log_probs, std::span<const double> target) {
    double loss = 0.0;
    for (std::size_t k = 0; k < log_probs.size(); ++k)
        if (target[k] != 0.0) loss -= target[k] * log_probs[k];
    return loss;
}

template <class T>
double accumulate_gradient(const BasicParams<T>& params, std::span<const T> image, std::span<const double> target,
                           double weight, BasicParams<T>& grad, Workspace<T>& ws) {
    const Plan& plan = params.plan();
    forward_into(params, image, ws.trace);
    const auto& tr = ws.trace;
    const std::size_t n_conv = plan.conv.size();
    const std::size_t n_dense = plan.dense.size();

    ws.dense_grad.resize(n_dense);
    ws.conv_grad.resize(n_conv);
    ws.pooled_grad.resize(n_conv);

    auto& dlogits = ws.dense_grad.back();
    dlogits.resize(tr.output_probs.size());
    for (std::size_t k = 0; k < dlogits.size(); ++k)
        dlogits[k] = static_cast<T>(weight * (tr.output_probs[k] - target[k]));

    for (std::size_t j = n_dense; j-- > 0;) {
        const DensePlan& d = plan.dense[j];
        const std::size_t layer = n_conv + j;
        const T* in = j > 0 ? tr.dense_activations[j - 1].data()
                            : (n_conv > 0 ? tr.pooled.back().data() : image.data());
        const auto& delta = ws.dense_grad[j];
        auto gw = grad.weights(layer);
        auto gb = grad.biases(layer);
        const auto w = params.weights(layer);
        for (int o = 0; o < d.out; ++o) {
            const T g = delta[o];
            gb[o] += g;
            if (g == T{0}) continue;
            T* grow = gw.data() + static_cast<std::size_t>(o) * d.in;
            for (int i = 0; i < d.in; ++i) grow[i] += g * in[i];
        }
        if (j == 0 && n_conv == 0) break;
        auto& din = j > 0 ? ws.dense_grad[j - 1] : ws.pooled_grad.back();
        din.assign(static_cast<std::size_t>(d.in), T{0});
        for (int o = 0; o < d.out; ++o) {
            const T g = delta[o];
            if (g == T{0}) continue;
            const T* row = w.data() + static_cast<std::size_t>(o) * d.in;
            for (int i = 0; i < d.in; ++i) din[i] += g * row[i];
        }
        if (j > 0) {
            const auto& act = tr.dense_activations[j - 1];
            for (int i = 0; i < d.in; ++i)
                if (!(act[i] > T{0})) din[i] = T{0};
        }
    }

    for (std::size_t l = n_conv; l-- > 0;) {
        const ConvPlan& p = plan.conv[l];
        const auto& act = tr.conv_activations[l];
        auto& dconv = ws.conv_grad[l];
        dconv.assign(act.size(), T{0});
        const auto& dpool = ws.pooled_grad[l];
        const auto& arg = tr.pool_argmax[l];
        for (std::size_t i = 0; i < dpool.size(); ++i) dconv[static_cast<std::size_t>(arg[i])] += dpool[i];
        for (std::size_t i = 0; i < dconv.size(); ++i)
            if (!(act[i] > T{0})) dconv[i] = T{0};

        const T* in = l > 0 ? tr.pooled[l - 1].data() : image.data();
        const std::size_t plane = static_cast<std::size_t>(p.out_height) * p.out_width;
        const std::size_t in_plane = static_cast<std::size_t>(p.in_height) * p.in_width;
        auto gw = grad.weights(l);
        auto gb = grad.biases(l);
        const auto w = params.weights(l);
        std::vector<T>* din = nullptr;
        if (l > 0) {
            din = &ws.pooled_grad[l - 1];
            din->assign(in_plane * p.in_channels, T{0});
        }
        for (int oc = 0; oc < p.out_channels; ++oc) {
            const T* dout = dconv.data() + oc * plane;
            T bsum{0};
            for (std::size_t i = 0; i < plane; ++i) bsum += dout[i];
            gb[oc] += bsum;
            if (bsum == T{0} && std::all_of(dout, dout + plane, [](T v) { return v == T{0}; })) continue;
            for (int ic = 0; ic < p.in_channels; ++ic) {
                const T* src = in + ic * in_plane;
                T* dsrc = din ? din->data() + ic * in_plane : nullptr;
                for (int ky = 0; ky < p.kernel; ++ky) {
                    for (int kx = 0; kx < p.kernel; ++kx) {
                        const std::size_t widx =
                            ((static_cast<std::size_t>(oc) * p.in_channels + ic) * p.kernel + ky) * p.kernel + kx;
                        const T wv = w[widx];
                        T acc{0};
                        for (int oy = 0; oy < p.out_height; ++oy) {
                            const std::size_t roff = static_cast<std::size_t>(oy * p.stride + ky) * p.in_width + kx;
                            const T* row = src + roff;
                            const T* drow = dout + static_cast<std::size_t>(oy) * p.out_width;
                            if (p.stride == 1) {
                                for (int ox = 0; ox < p.out_width; ++ox) acc += drow[ox] * row[ox];
                                if (dsrc) {
                                    T* drow_in = dsrc + roff;
                                    for (int ox = 0; ox < p.out_width; ++ox) drow_in[ox] += wv * drow[ox];
                                }
                            } else {
                                for (int ox = 0; ox < p.out_width; ++ox) acc += drow[ox] * row[ox * p.stride];
                                if (dsrc) {
                                    T* drow_in = dsrc + roff;
                                    for (int ox = 0; ox < p.out_width; ++ox) drow_in[ox * p.stride] += wv * drow[ox];
                                }
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    return trace_loss(tr.log_probs, target);
}

template <class T>
BasicParams<T> backward(const BasicParams<T>& params, std::span<const std::span<const T>> images,
                        std::span<const std::vector<double>> targets) {
    if (images.size() != targets.size())
        throw DimensionError("backward: " + std::to_string(images.size()) + " images but " +
                             std::to_string(targets.size()) + " targets");
    if (images.empty()) throw DimensionError("backward: empty batch");
    const auto k = static_cast<std::size_t>(params.architecture().num_classes);
    for (const auto& t : targets) check_target(t, k);
    BasicParams<T> grad(params.architecture());
    Workspace<T> ws;
    const double weight = 1.0 / static_cast<double>(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) accumulate_gradient(params, images[i], targets[i], weight, grad, ws);
    return grad;
}

template <class T>
double mean_loss(const BasicParams<T>& params, std::span<const std::span<const T>> images,
                 std::span<const std::vector<double>> targets) {
    if (images.size() != targets.size()) throw DimensionError("mean_loss: batch/target length mismatch");
    if (images.empty()) throw DimensionError("mean_loss: empty batch");
    BasicTrace<T> trace;
    double sum = 0.0;
    for (std::size_t i = 0; i < images.size(); ++i) {
        forward_into(params, images[i], trace);
        sum += trace_loss(trace.log_probs, targets[i]);
    }
    return sum / static_cast<double>(images.size());
}

template BasicTrace<float> forward(const BasicParams<float>&, std::span<const float>);
template BasicTrace<double> forward(const BasicParams<double>&, std::span<const double>);
template void forward_into(const BasicParams<float>&, std::span<const float>, BasicTrace<float>&);
template void forward_into(const BasicParams<double>&, std::span<const double>, BasicTrace<double>&);
template double accumulate_gradient(const BasicParams<float>&, std::span<const float>, std::span<const double>,
                                    double, BasicParams<float>&, Workspace<float>&);
template double accumulate_gradient(const BasicParams<double>&, std::span<const double>, std::span<const double>,
                                    double, BasicParams<double>&, Workspace<double>&);
template BasicParams<float> backward(const BasicParams<float>&, std::span<const std::span<const float>>,
                                     std::span<const std::vector<double>>);
template BasicParams<double> backward(const BasicParams<double>&, std::span<const std::span<const double>>,
                                      std::span<const std::vector<double>>);
template double mean_loss(const BasicParams<float>&, std::span<const std::span<const float>>,
                          std::span<const std::vector<double>>);
template double mean_loss(const BasicParams<double>&, std::span<const std::span<const double>>,
                          std::span<const std::vector<double>>);

GradCheckResult grad_check(const BasicParams<double>& params, std::span<const std::span<const double>> images,
                           std::span<const std::vector<double>> targets, double epsilon,
                           const GradCheckOptions& options) {
    if (!(epsilon >= 1e-7 && epsilon <= 1e-3))
        throw ConfigError("grad_check: epsilon must lie in [1e-7, 1e-3]");
    const BasicParams<double> analytic = backward(params, images, targets);

    std::vector<std::size_t> coords(params.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > options.full_check_limit) {
        std::vector<std::size_t> picked;
        Rng rng = make_rng(options.seed, "grad-check");
        std::sample(coords.begin(), coords.end(), std::back_inserter(picked),
                    std::max<std::size_t>(options.subsample, 200), rng);
        coords = std::move(picked);
    }

    BasicParams<double> probe = params;
    auto flat = probe.flat();
    GradCheckResult result;
    for (std::size_t i : coords) {
        const double saved = flat[i];
        flat[i] = saved + epsilon;
        const double up = mean_loss(probe, images, targets);
        flat[i] = saved - epsilon;
        const double down = mean_loss(probe, images, targets);
        flat[i] = saved;
        const double numeric = (up - down) / (2.0 * epsilon);
        const double a = analytic.flat()[i];
        const double denom = std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
        const double rel = std::abs(a - numeric) / denom;
        if (rel > result.max_relative_error) {
            result.max_relative_error = rel;
            result.worst_index = i;
        }
        ++result.coordinates_checked;
    }
    return result;
}

GradCheckResult grad_check(const Params& params, std::span<const std::vector<float>> images,
                           std::span<const std::vector<double>> targets, double epsilon,
                           const GradCheckOptions& options) {
    const BasicParams<double> p64 = params.cast<double>();
    std::vector<std::vector<double>> storage;
    storage.reserve(images.size());
    for (const auto& im : images) storage.emplace_back(im.begin(), im.end());
    std::vector<std::span<const double>> views(storage.begin(), storage.end());
    return grad_check(p64, views, targets, epsilon, options);
}

namespace {

void check_update_inputs(const Params& params, const Gradient& gradient, double learning_rate) {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw ConfigError("optimizer: learning_rate must be finite and > 0");
    if (gradient.size() != params.size())
        throw DimensionError("optimizer: gradient has " + std::to_string(gradient.size()) + " entries, params " +
                             std::to_string(params.size()));
    for (std::size_t i = 0; i < gradient.size(); ++i)
        if (!std::isfinite(gradient.flat()[i]))
            throw NumericError("optimizer: non-finite gradient at coordinate " + std::to_string(i));
}

}  // namespace

void sgd_step(Params& params, const Gradient& gradient, double learning_rate) {
    check_update_inputs(params, gradient, learning_rate);
    const auto lr = static_cast<float>(learning_rate);
    auto p = params.flat();
    auto g = gradient.flat();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
}

void adam_step(Params& params, const Gradient& gradient, AdamState& state, const AdamHyper& hyper) {
    check_update_inputs(params, gradient, hyper.learning_rate);
    if (!(hyper.beta1 >= 0.0 && hyper.beta1 < 1.0 && hyper.beta2 >= 0.0 && hyper.beta2 < 1.0 && hyper.epsilon > 0.0))
        throw ConfigError("adam: betas must lie in [0, 1) and epsilon must be > 0");
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    } else if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw DimensionError("adam: moment state does not match parameter count");
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
    auto p = params.flat();
    auto g = gradient.flat();
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = g[i];
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * gi;
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * gi * gi;
        const double mhat = state.m[i] / c1;
        const double vhat = state.v[i] / c2;
        p[i] = static_cast<float>(p[i] - hyper.learning_rate * mhat / (std::sqrt(vhat) + hyper.epsilon));
    }
}

}  // namespace aa::nn
