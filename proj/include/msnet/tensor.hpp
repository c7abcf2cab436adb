#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "msnet/error.hpp"

namespace msnet {

// Row-major (length, channels) sequence. T is double on training paths and
// float on the inference/benchmark path.
template <typename T>
struct SeqTensorT {
    long rows = 0;  // l: slice positions
    long cols = 0;  // c: channels
    std::vector<T> data;

    SeqTensorT() = default;

    SeqTensorT(long l, long c) : rows(l), cols(c), data(checked_size(l, c), T{0}) {}

    SeqTensorT(long l, long c, std::vector<T> values) : rows(l), cols(c), data(std::move(values)) {
        if (data.size() != static_cast<std::size_t>(l) * static_cast<std::size_t>(c)) {
            throw Error(ErrorKind::ShapeMismatch, "buffer size does not match l*c");
        }
    }

    T& at(long t, long c) { return data[static_cast<std::size_t>(t) * cols + c]; }
    const T& at(long t, long c) const { return data[static_cast<std::size_t>(t) * cols + c]; }

    T* row(long t) { return data.data() + static_cast<std::size_t>(t) * cols; }
    const T* row(long t) const { return data.data() + static_cast<std::size_t>(t) * cols; }

    bool same_shape(const SeqTensorT& other) const {
        return rows == other.rows && cols == other.cols;
    }

    bool all_finite() const {
        for (const T v : data) {
            if (!std::isfinite(static_cast<double>(v))) {
                return false;
            }
        }
        return true;
    }

private:
    static std::size_t checked_size(long l, long c) {
        if (l < 0 || c < 0) {
            throw Error(ErrorKind::InvalidArgument, "tensor dimensions must be non-negative");
        }
        return static_cast<std::size_t>(l) * static_cast<std::size_t>(c);
    }
};

using SeqTensor = SeqTensorT<double>;
using SeqTensor32 = SeqTensorT<float>;

// Static description of a 1-D convolution. Weights are flat (k, cin, cout)
// row-major, bias is (cout). Same-padding requires odd k; output length
// always equals input length.
struct ConvSpec {
    int kernel = 1;
    int in_channels = 1;
    int out_channels = 1;
    int dilation = 1;

    std::size_t weight_count() const {
        return static_cast<std::size_t>(kernel) * in_channels * out_channels;
    }
    std::size_t param_count() const { return weight_count() + out_channels; }
};

namespace detail {

inline void check_conv_args(const ConvSpec& spec, long in_cols, std::size_t w_size,
                            std::size_t b_size) {
    if (spec.kernel < 1 || spec.kernel % 2 == 0) {
        throw Error(ErrorKind::InvalidArgument,
                    "conv kernel must be odd and positive, got " + std::to_string(spec.kernel));
    }
    if (spec.dilation < 1) {
        throw Error(ErrorKind::InvalidArgument, "conv dilation must be >= 1");
    }
    if (in_cols != spec.in_channels) {
        throw Error(ErrorKind::ShapeMismatch,
                    "input has " + std::to_string(in_cols) + " channels, kernel expects " +
                        std::to_string(spec.in_channels));
    }
    if (w_size != spec.weight_count()) {
        throw Error(ErrorKind::ShapeMismatch, "conv weight buffer size mismatch");
    }
    if (b_size != static_cast<std::size_t>(spec.out_channels)) {
        throw Error(ErrorKind::ShapeMismatch, "conv bias buffer size mismatch");
    }
}

}  // namespace detail

// out[t,o] = bias[o] + sum_{j,i} w[j,i,o] * in[t + (j - k/2)*dilation, i],
// out-of-range input positions contribute zero (symmetric same-padding).
template <typename T>
SeqTensorT<T> conv1d_forward(const SeqTensorT<T>& input, const ConvSpec& spec,
                             std::span<const T> weights, std::span<const T> bias) {
    detail::check_conv_args(spec, input.cols, weights.size(), bias.size());

    const long l = input.rows;
    const int k = spec.kernel;
    const int cin = spec.in_channels;
    const int cout = spec.out_channels;
    const long center = k / 2;

    SeqTensorT<T> out(l, cout);
    for (long t = 0; t < l; ++t) {
        T* out_row = out.row(t);
        std::copy(bias.begin(), bias.end(), out_row);
        for (int j = 0; j < k; ++j) {
            const long s = t + (j - center) * spec.dilation;
            if (s < 0 || s >= l) {
                continue;
            }
            const T* in_row = input.row(s);
            const T* w_tap = weights.data() + static_cast<std::size_t>(j) * cin * cout;
            for (int i = 0; i < cin; ++i) {
                const T x = in_row[i];
                const T* w_row = w_tap + static_cast<std::size_t>(i) * cout;
                for (int o = 0; o < cout; ++o) {
                    out_row[o] += x * w_row[o];
                }
            }
        }
    }
    return out;
}

template <typename T>
struct Conv1dGrads {
    SeqTensorT<T> d_input;
    std::vector<T> d_params;  // [dW (k,cin,cout) | dBias (cout)]
};

template <typename T>
Conv1dGrads<T> conv1d_backward(const SeqTensorT<T>& input, const ConvSpec& spec,
                               std::span<const T> weights, const SeqTensorT<T>& d_output) {
    detail::check_conv_args(spec, input.cols, weights.size(),
                            static_cast<std::size_t>(spec.out_channels));
    if (d_output.rows != input.rows || d_output.cols != spec.out_channels) {
        throw Error(ErrorKind::ShapeMismatch, "dOutput shape does not match conv forward output");
    }

    const long l = input.rows;
    const int k = spec.kernel;
    const int cin = spec.in_channels;
    const int cout = spec.out_channels;
    const long center = k / 2;

    Conv1dGrads<T> g;
    g.d_input = SeqTensorT<T>(l, cin);
    g.d_params.assign(spec.param_count(), T{0});
    T* dw = g.d_params.data();
    T* db = g.d_params.data() + spec.weight_count();

    for (long t = 0; t < l; ++t) {
        const T* dout_row = d_output.row(t);
        for (int o = 0; o < cout; ++o) {
            db[o] += dout_row[o];
        }
        for (int j = 0; j < k; ++j) {
            const long s = t + (j - center) * spec.dilation;
            if (s < 0 || s >= l) {
                continue;
            }
            const T* in_row = input.row(s);
            T* din_row = g.d_input.row(s);
            const std::size_t tap = static_cast<std::size_t>(j) * cin * cout;
            for (int i = 0; i < cin; ++i) {
                const T x = in_row[i];
                const T* w_row = weights.data() + tap + static_cast<std::size_t>(i) * cout;
                T* dw_row = dw + tap + static_cast<std::size_t>(i) * cout;
                T acc = T{0};
                for (int o = 0; o < cout; ++o) {
                    dw_row[o] += x * dout_row[o];
                    acc += w_row[o] * dout_row[o];
                }
                din_row[i] += acc;
            }
        }
    }
    return g;
}

template <typename T>
SeqTensorT<T> relu_forward(const SeqTensorT<T>& input) {
    SeqTensorT<T> out = input;
    for (T& v : out.data) {
        v = v > T{0} ? v : T{0};
    }
    return out;
}

// Gradient at exactly 0 is defined as 0.
template <typename T>
SeqTensorT<T> relu_backward(const SeqTensorT<T>& input, const SeqTensorT<T>& d_output) {
    if (!input.same_shape(d_output)) {
        throw Error(ErrorKind::ShapeMismatch, "relu backward shape mismatch");
    }
    SeqTensorT<T> d_input(input.rows, input.cols);
    for (std::size_t idx = 0; idx < input.data.size(); ++idx) {
        d_input.data[idx] = input.data[idx] > T{0} ? d_output.data[idx] : T{0};
    }
    return d_input;
}

template <typename T>
struct MaxPoolResult {
    std::vector<T> values;       // per-channel maximum
    std::vector<long> argmax;    // smallest row index attaining it
};

// Per-channel max over all rows; ties resolve to the first index so the
// backward routing is deterministic.
template <typename T>
MaxPoolResult<T> global_maxpool_forward(const SeqTensorT<T>& input) {
    if (input.rows < 1) {
        throw Error(ErrorKind::EmptyInput, "global max-pool over empty sequence");
    }
    MaxPoolResult<T> r;
    r.values.assign(input.row(0), input.row(0) + input.cols);
    r.argmax.assign(static_cast<std::size_t>(input.cols), 0);
    for (long t = 1; t < input.rows; ++t) {
        const T* row = input.row(t);
        for (long c = 0; c < input.cols; ++c) {
            if (row[c] > r.values[static_cast<std::size_t>(c)]) {
                r.values[static_cast<std::size_t>(c)] = row[c];
                r.argmax[static_cast<std::size_t>(c)] = t;
            }
        }
    }
    return r;
}

template <typename T>
SeqTensorT<T> global_maxpool_backward(const std::vector<long>& argmax,
                                      std::span<const T> d_output, long length) {
    if (argmax.size() != d_output.size()) {
        throw Error(ErrorKind::ShapeMismatch, "argmax/dOutput channel count mismatch");
    }
    SeqTensorT<T> d_input(length, static_cast<long>(argmax.size()));
    for (std::size_t c = 0; c < argmax.size(); ++c) {
        if (argmax[c] < 0 || argmax[c] >= length) {
            throw Error(ErrorKind::IndexOutOfRange,
                        "argmax index " + std::to_string(argmax[c]) + " outside [0, " +
                            std::to_string(length) + ")");
        }
        d_input.at(argmax[c], static_cast<long>(c)) = d_output[c];
    }
    return d_input;
}

// out = in^T W + b with W flat (n, m) row-major.
template <typename T>
std::vector<T> dense_forward(std::span<const T> input, std::span<const T> weights,
                             std::span<const T> bias) {
    const std::size_t n = input.size();
    const std::size_t m = bias.size();
    if (weights.size() != n * m) {
        throw Error(ErrorKind::ShapeMismatch, "dense weight buffer size mismatch");
    }
    std::vector<T> out(bias.begin(), bias.end());
    for (std::size_t i = 0; i < n; ++i) {
        const T x = input[i];
        const T* w_row = weights.data() + i * m;
        for (std::size_t o = 0; o < m; ++o) {
            out[o] += x * w_row[o];
        }
    }
    return out;
}

template <typename T>
struct DenseGrads {
    std::vector<T> d_input;
    std::vector<T> d_params;  // [dW (n,m) | dBias (m)]
};

template <typename T>
DenseGrads<T> dense_backward(std::span<const T> input, std::span<const T> weights,
                             std::span<const T> d_output) {
    const std::size_t n = input.size();
    const std::size_t m = d_output.size();
    if (weights.size() != n * m) {
        throw Error(ErrorKind::ShapeMismatch, "dense weight buffer size mismatch");
    }
    DenseGrads<T> g;
    g.d_input.assign(n, T{0});
    g.d_params.assign(n * m + m, T{0});
    T* dw = g.d_params.data();
    T* db = g.d_params.data() + n * m;
    for (std::size_t o = 0; o < m; ++o) {
        db[o] = d_output[o];
    }
    for (std::size_t i = 0; i < n; ++i) {
        const T x = input[i];
        const T* w_row = weights.data() + i * m;
        T* dw_row = dw + i * m;
        T acc = T{0};
        for (std::size_t o = 0; o < m; ++o) {
            dw_row[o] = x * d_output[o];
            acc += w_row[o] * d_output[o];
        }
        g.d_input[i] = acc;
    }
    return g;
}

}  // namespace msnet
