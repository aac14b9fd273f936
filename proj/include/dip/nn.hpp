// nn.hpp
//
// Forward-only network primitives. Weights are flat segments in the
// canonical layout documented in docs/formats.md:
//   conv    W[out][in][ky][kx], then bias[out]
//   linear  W[out][in], then bias[out]
//   lstm    W[4*hidden][in + hidden] over concat(x, h), then bias[4*hidden];
//           gate blocks ordered input, forget, cell-candidate, output
//   mdn     linear hidden -> 3*M*Z laid out as [logits | means | log-scales],
//           each block Z rows of M mixtures
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace dip::nn {

enum class LayerKind { conv, linear, lstm_cell, mdn_head };
enum class Activation { relu, tanh, identity };

/// One layer of a composed stack. For conv layers in/out sizes are channel
/// counts; for the recurrent cell out_size is the hidden size.
struct LayerSpec {
    std::string name;
    LayerKind kind = LayerKind::linear;
    std::size_t in_size = 1;
    std::size_t out_size = 1;
    std::size_t kernel = 4;
    std::size_t stride = 2;
    Activation activation = Activation::identity;
};

inline std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride)
{
    if (in < kernel)
        return 0;
    return (in - kernel) / stride + 1;
}

inline std::size_t conv_param_count(std::size_t in_ch, std::size_t out_ch, std::size_t kernel)
{
    return out_ch * in_ch * kernel * kernel + out_ch;
}

inline std::size_t linear_param_count(std::size_t in, std::size_t out) { return out * in + out; }

inline std::size_t lstm_param_count(std::size_t in, std::size_t hidden)
{
    return 4 * (hidden * (in + hidden) + hidden);
}

inline std::size_t mdn_param_count(std::size_t hidden, std::size_t n_mixtures, std::size_t z_dim)
{
    return linear_param_count(hidden, 3 * n_mixtures * z_dim);
}

inline std::size_t param_count(const LayerSpec& spec)
{
    switch (spec.kind) {
    case LayerKind::conv:
        return conv_param_count(spec.in_size, spec.out_size, spec.kernel);
    case LayerKind::linear:
        return linear_param_count(spec.in_size, spec.out_size);
    case LayerKind::lstm_cell:
        return lstm_param_count(spec.in_size, spec.out_size);
    case LayerKind::mdn_head:
        return linear_param_count(spec.in_size, spec.out_size);
    }
    return 0;
}

inline double activate(double v, Activation a)
{
    switch (a) {
    case Activation::relu:
        return v > 0.0 ? v : 0.0;
    case Activation::tanh:
        return std::tanh(v);
    case Activation::identity:
        return v;
    }
    return v;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

namespace detail {

inline void check_weights(const LayerSpec& spec, std::size_t actual)
{
    const std::size_t expected = param_count(spec);
    if (actual != expected)
        throw ConfigError("layer '" + spec.name + "': expected " + std::to_string(expected) +
                          " weights, got " + std::to_string(actual));
}

} // namespace detail

/// Valid-padding strided convolution.
inline Image conv2d_forward(const Image& input, std::span<const double> weights, const LayerSpec& spec)
{
    if (spec.kind != LayerKind::conv)
        throw ConfigError("layer '" + spec.name + "' is not a conv layer");
    if (input.channels != spec.in_size)
        throw ConfigError("layer '" + spec.name + "': expected " + std::to_string(spec.in_size) +
                          " input channels, got shape " + input.shape().str());
    detail::check_weights(spec, weights.size());
    const std::size_t k = spec.kernel;
    const std::size_t s = spec.stride;
    const std::size_t oh = conv_output_extent(input.height, k, s);
    const std::size_t ow = conv_output_extent(input.width, k, s);
    if (oh == 0 || ow == 0)
        throw ConfigError("layer '" + spec.name + "': input " + input.shape().str() +
                          " smaller than kernel " + std::to_string(k));

    const std::size_t in_ch = spec.in_size;
    const auto bias = weights.subspan(spec.out_size * in_ch * k * k);
    Image out(spec.out_size, oh, ow);
    for (std::size_t o = 0; o < spec.out_size; ++o) {
        const double* w_o = weights.data() + o * in_ch * k * k;
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                double acc = bias[o];
                for (std::size_t c = 0; c < in_ch; ++c) {
                    const double* w_c = w_o + c * k * k;
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        const double* row = &input.data[(c * input.height + y * s + ky) * input.width + x * s];
                        const double* w_row = w_c + ky * k;
                        for (std::size_t kx = 0; kx < k; ++kx)
                            acc += w_row[kx] * row[kx];
                    }
                }
                out.at(o, y, x) = activate(acc, spec.activation);
            }
        }
    }
    return out;
}

inline std::vector<double> linear_forward(std::span<const double> input, std::span<const double> weights,
                                          const LayerSpec& spec)
{
    if (input.size() != spec.in_size)
        throw ConfigError("layer '" + spec.name + "': expected input length " + std::to_string(spec.in_size) +
                          ", got " + std::to_string(input.size()));
    if (weights.size() != linear_param_count(spec.in_size, spec.out_size))
        throw ConfigError("layer '" + spec.name + "': expected " +
                          std::to_string(linear_param_count(spec.in_size, spec.out_size)) + " weights, got " +
                          std::to_string(weights.size()));
    std::vector<double> out(spec.out_size);
    const auto bias = weights.subspan(spec.out_size * spec.in_size);
    for (std::size_t j = 0; j < spec.out_size; ++j) {
        const double* w = weights.data() + j * spec.in_size;
        double acc = bias[j];
        for (std::size_t i = 0; i < spec.in_size; ++i)
            acc += w[i] * input[i];
        out[j] = activate(acc, spec.activation);
    }
    return out;
}

struct LstmState {
    std::vector<double> h;
    std::vector<double> c;
};

/// One step of the LSTM recurrence with gate order (input, forget,
/// cell-candidate, output).
inline LstmState lstm_cell_forward(std::span<const double> x, std::span<const double> h,
                                   std::span<const double> c, std::span<const double> weights)
{
    const std::size_t hidden = h.size();
    if (hidden == 0 || c.size() != hidden)
        throw ConfigError("lstm: hidden/cell length mismatch (" + std::to_string(hidden) + " vs " +
                          std::to_string(c.size()) + ")");
    const std::size_t in = x.size();
    const std::size_t cols = in + hidden;
    if (weights.size() != lstm_param_count(in, hidden))
        throw ConfigError("lstm: expected " + std::to_string(lstm_param_count(in, hidden)) + " weights for in=" +
                          std::to_string(in) + " hidden=" + std::to_string(hidden) + ", got " +
                          std::to_string(weights.size()));

    std::vector<double> pre(4 * hidden);
    const double* bias = weights.data() + 4 * hidden * cols;
    for (std::size_t r = 0; r < 4 * hidden; ++r) {
        const double* w = weights.data() + r * cols;
        double acc = bias[r];
        for (std::size_t i = 0; i < in; ++i)
            acc += w[i] * x[i];
        for (std::size_t i = 0; i < hidden; ++i)
            acc += w[in + i] * h[i];
        pre[r] = acc;
    }

    LstmState next{std::vector<double>(hidden), std::vector<double>(hidden)};
    for (std::size_t j = 0; j < hidden; ++j) {
        const double i_gate = sigmoid(pre[j]);
        const double f_gate = sigmoid(pre[hidden + j]);
        const double g = std::tanh(pre[2 * hidden + j]);
        const double o_gate = sigmoid(pre[3 * hidden + j]);
        next.c[j] = f_gate * c[j] + i_gate * g;
        next.h[j] = o_gate * std::tanh(next.c[j]);
    }
    return next;
}

/// Raw mixture-density parameters, each block z_dim rows of n_mixtures.
struct MixtureParams {
    std::size_t z_dim = 0;
    std::size_t n_mixtures = 0;
    std::vector<double> logits;
    std::vector<double> means;
    std::vector<double> log_scales;

    /// Softmax of the logits for one latent dimension.
    std::vector<double> weights(std::size_t z) const
    {
        const auto row = std::span<const double>(logits).subspan(z * n_mixtures, n_mixtures);
        const double mx = *std::max_element(row.begin(), row.end());
        std::vector<double> w(n_mixtures);
        double sum = 0.0;
        for (std::size_t m = 0; m < n_mixtures; ++m) {
            w[m] = std::exp(row[m] - mx);
            sum += w[m];
        }
        for (auto& v : w)
            v /= sum;
        return w;
    }
};

inline MixtureParams mdn_head_forward(std::span<const double> h, std::span<const double> weights,
                                      std::size_t n_mixtures, std::size_t z_dim)
{
    if (n_mixtures == 0 || z_dim == 0)
        throw ConfigError("mdn: mixture count and z-dim must be >= 1");
    const std::size_t block = n_mixtures * z_dim;
    LayerSpec spec{"mdn", LayerKind::linear, h.size(), 3 * block, 0, 0, Activation::identity};
    if (weights.size() != mdn_param_count(h.size(), n_mixtures, z_dim))
        throw ConfigError("mdn: expected " + std::to_string(mdn_param_count(h.size(), n_mixtures, z_dim)) +
                          " weights, got " + std::to_string(weights.size()));
    const auto raw = linear_forward(h, weights, spec);
    MixtureParams out;
    out.z_dim = z_dim;
    out.n_mixtures = n_mixtures;
    out.logits.assign(raw.begin(), raw.begin() + block);
    out.means.assign(raw.begin() + block, raw.begin() + 2 * block);
    out.log_scales.assign(raw.begin() + 2 * block, raw.end());
    return out;
}

/// Uniform initialization in [-sqrt(1/fan_in), sqrt(1/fan_in)].
inline std::vector<double> he_uniform_init(std::size_t fan_in, std::size_t count, RandomSource& rng)
{
    if (fan_in == 0)
        throw ConfigError("he_uniform_init: fan_in must be >= 1");
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    std::vector<double> out(count);
    for (auto& v : out)
        v = rng.uniform(-bound, bound);
    return out;
}

} // namespace dip::nn
