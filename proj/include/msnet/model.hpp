#pragma once

#include <array>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "msnet/error.hpp"
#include "msnet/rng.hpp"
#include "msnet/tensor.hpp"

namespace msnet {

// Aggregation network hyperparameters: pointwise input projection, a stack
// of dilated residual blocks with doubling dilations, global max-pool over
// the sequence, then a two-layer classification head.
struct MsNetArch {
    int input_channels = 2048;
    int initial_conv_kernel = 1;
    int block_count = 4;
    int block_channels = 64;
    int block_kernel = 3;
    std::vector<int> dilations = {1, 2, 4, 8};
    int dense_hidden = 32;
    int classes = 3;

    void validate() const {
        if (input_channels < 1 || block_channels < 1 || dense_hidden < 1 || classes < 1) {
            throw Error(ErrorKind::InvalidArgument, "arch dimensions must be positive");
        }
        if (block_count < 0) {
            throw Error(ErrorKind::InvalidArgument, "block_count must be >= 0");
        }
        if (initial_conv_kernel < 1 || initial_conv_kernel % 2 == 0) {
            throw Error(ErrorKind::InvalidArgument, "initial_conv_kernel must be odd");
        }
        if (block_kernel < 1 || block_kernel % 2 == 0) {
            throw Error(ErrorKind::InvalidArgument, "block_kernel must be odd");
        }
        if (static_cast<int>(dilations.size()) != block_count) {
            throw Error(ErrorKind::InvalidArgument, "dilations size must equal block_count");
        }
        for (int d : dilations) {
            if (d < 1) {
                throw Error(ErrorKind::InvalidArgument, "dilations must be >= 1");
            }
        }
    }

    ConvSpec initial_conv_spec() const {
        return {initial_conv_kernel, input_channels, block_channels, 1};
    }
    ConvSpec dilated_conv_spec(int block) const {
        return {block_kernel, block_channels, block_channels, dilations[block]};
    }
    ConvSpec pointwise_conv_spec() const { return {1, block_channels, block_channels, 1}; }

    bool operator==(const MsNetArch&) const = default;
};

// Closed-form trainable parameter total:
//   initial conv  k0*cin*ch + ch
//   per block     (kb*ch*ch + ch) + (ch*ch + ch)
//   head          ch*hidden + hidden + hidden*classes + classes
inline std::int64_t param_count(const MsNetArch& arch) {
    arch.validate();
    const std::int64_t ch = arch.block_channels;
    std::int64_t total = static_cast<std::int64_t>(arch.initial_conv_kernel) *
                             arch.input_channels * ch + ch;
    total += arch.block_count * ((arch.block_kernel * ch * ch + ch) + (ch * ch + ch));
    total += ch * arch.dense_hidden + arch.dense_hidden;
    total += static_cast<std::int64_t>(arch.dense_hidden) * arch.classes + arch.classes;
    return total;
}

// Number of consecutive input positions that can influence one output
// position: k0 + sum_i (kb - 1) * dilation_i.
inline int receptive_field(const MsNetArch& arch) {
    arch.validate();
    int rf = arch.initial_conv_kernel;
    for (int d : arch.dilations) {
        rf += (arch.block_kernel - 1) * d;
    }
    return rf;
}

// Flat parameter vector layout, in order: initial conv W,b; per block the
// dilated conv W,b then pointwise conv W,b; dense 1 W,b; dense 2 W,b.
struct ParamLayout {
    struct Slice {
        std::size_t offset = 0;
        std::size_t size = 0;
    };
    struct Block {
        Slice dilated_w, dilated_b, pointwise_w, pointwise_b;
    };

    Slice conv0_w, conv0_b;
    std::vector<Block> blocks;
    Slice fc1_w, fc1_b, fc2_w, fc2_b;
    std::size_t total = 0;

    static ParamLayout of(const MsNetArch& arch) {
        arch.validate();
        ParamLayout lay;
        std::size_t pos = 0;
        auto take = [&pos](std::size_t n) {
            Slice s{pos, n};
            pos += n;
            return s;
        };
        const std::size_t ch = static_cast<std::size_t>(arch.block_channels);
        lay.conv0_w = take(arch.initial_conv_spec().weight_count());
        lay.conv0_b = take(ch);
        lay.blocks.resize(static_cast<std::size_t>(arch.block_count));
        for (auto& b : lay.blocks) {
            b.dilated_w = take(static_cast<std::size_t>(arch.block_kernel) * ch * ch);
            b.dilated_b = take(ch);
            b.pointwise_w = take(ch * ch);
            b.pointwise_b = take(ch);
        }
        lay.fc1_w = take(ch * static_cast<std::size_t>(arch.dense_hidden));
        lay.fc1_b = take(static_cast<std::size_t>(arch.dense_hidden));
        lay.fc2_w = take(static_cast<std::size_t>(arch.dense_hidden) * arch.classes);
        lay.fc2_b = take(static_cast<std::size_t>(arch.classes));
        lay.total = pos;
        return lay;
    }
};

struct MsNetModel {
    MsNetArch arch;
    std::vector<double> params;
    std::uint64_t rng_seed = 0;  // seed used at init; not serialized
};

// Conv weights: zero-mean normal with variance 2/fan_in. Dense weights:
// uniform +-1/sqrt(fan_in). All biases zero.
inline MsNetModel init_model(const MsNetArch& arch, std::uint64_t seed) {
    const ParamLayout lay = ParamLayout::of(arch);
    MsNetModel m;
    m.arch = arch;
    m.rng_seed = seed;
    m.params.assign(lay.total, 0.0);
    Rng rng(seed);

    auto fill_conv = [&](const ParamLayout::Slice& s, int fan_in) {
        const double stddev = std::sqrt(2.0 / fan_in);
        for (std::size_t i = 0; i < s.size; ++i) {
            m.params[s.offset + i] = rng.normal(0.0, stddev);
        }
    };
    auto fill_dense = [&](const ParamLayout::Slice& s, int fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (std::size_t i = 0; i < s.size; ++i) {
            m.params[s.offset + i] = rng.uniform(-bound, bound);
        }
    };

    fill_conv(lay.conv0_w, arch.initial_conv_kernel * arch.input_channels);
    for (const auto& b : lay.blocks) {
        fill_conv(b.dilated_w, arch.block_kernel * arch.block_channels);
        fill_conv(b.pointwise_w, arch.block_channels);
    }
    fill_dense(lay.fc1_w, arch.block_channels);
    fill_dense(lay.fc2_w, arch.dense_hidden);
    return m;
}

// Intermediates retained by a forward pass for the matching backward pass.
template <typename T>
struct ForwardCacheT {
    MsNetArch arch;
    SeqTensorT<T> input;
    SeqTensorT<T> conv0_out;
    struct BlockCache {
        SeqTensorT<T> dilated_out;    // pre-activation
        SeqTensorT<T> activated;      // relu(dilated_out)
        SeqTensorT<T> pointwise_out;  // before the residual add
        SeqTensorT<T> block_out;      // input + pointwise_out
    };
    std::vector<BlockCache> blocks;
    MaxPoolResult<T> pooled;
    std::vector<T> fc1_pre;   // dense 1 output before activation
    std::vector<T> fc1_post;  // relu(fc1_pre)
    std::vector<T> logits;
    std::vector<T> probs;
};

using ForwardCache = ForwardCacheT<double>;

namespace detail {

template <typename T>
std::vector<T> stable_softmax(std::span<const T> logits) {
    T max_logit = logits[0];
    for (const T v : logits) {
        max_logit = std::max(max_logit, v);
    }
    std::vector<T> out(logits.size());
    T sum = T{0};
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - max_logit);
        sum += out[i];
    }
    for (T& v : out) {
        v /= sum;
    }
    return out;
}

template <typename T>
std::span<const T> slice(std::span<const T> params, const ParamLayout::Slice& s) {
    return params.subspan(s.offset, s.size);
}

}  // namespace detail

// Full pipeline: initial conv -> dilated residual blocks -> global max-pool
// -> dense -> relu -> dense -> softmax. Shared by the double training path
// and the float inference path. Pass a cache only when a backward follows.
template <typename T>
std::vector<T> forward_pass(const MsNetArch& arch, std::span<const T> params,
                            const SeqTensorT<T>& input, ForwardCacheT<T>* cache = nullptr) {
    arch.validate();
    if (input.rows < 1) {
        throw Error(ErrorKind::EmptyInput, "forward on empty volume (l = 0)");
    }
    if (input.cols != arch.input_channels) {
        throw Error(ErrorKind::ShapeMismatch,
                    "volume has " + std::to_string(input.cols) + " channels, model expects " +
                        std::to_string(arch.input_channels));
    }
    const ParamLayout lay = ParamLayout::of(arch);
    if (params.size() != lay.total) {
        throw Error(ErrorKind::ShapeMismatch, "parameter vector length mismatch");
    }

    using detail::slice;
    if (cache) {
        cache->arch = arch;
        cache->input = input;
        cache->blocks.clear();
        cache->blocks.reserve(lay.blocks.size());
    }

    SeqTensorT<T> x = conv1d_forward(input, arch.initial_conv_spec(), slice(params, lay.conv0_w),
                                     slice(params, lay.conv0_b));
    if (cache) {
        cache->conv0_out = x;
    }

    for (int b = 0; b < arch.block_count; ++b) {
        const auto& bl = lay.blocks[static_cast<std::size_t>(b)];
        SeqTensorT<T> z = conv1d_forward(x, arch.dilated_conv_spec(b), slice(params, bl.dilated_w),
                                         slice(params, bl.dilated_b));
        SeqTensorT<T> a = relu_forward(z);
        SeqTensorT<T> p = conv1d_forward(a, arch.pointwise_conv_spec(),
                                         slice(params, bl.pointwise_w),
                                         slice(params, bl.pointwise_b));
        SeqTensorT<T> y(x.rows, x.cols);
        for (std::size_t i = 0; i < y.data.size(); ++i) {
            y.data[i] = x.data[i] + p.data[i];
        }
        if (cache) {
            cache->blocks.push_back({std::move(z), std::move(a), std::move(p), y});
        }
        x = std::move(y);
    }

    MaxPoolResult<T> pooled = global_maxpool_forward(x);
    std::vector<T> h1 = dense_forward<T>(pooled.values, slice(params, lay.fc1_w),
                                         slice(params, lay.fc1_b));
    std::vector<T> r1 = h1;
    for (T& v : r1) {
        v = v > T{0} ? v : T{0};
    }
    std::vector<T> logits = dense_forward<T>(r1, slice(params, lay.fc2_w),
                                             slice(params, lay.fc2_b));
    std::vector<T> probs = detail::stable_softmax<T>(logits);

    if (cache) {
        cache->pooled = std::move(pooled);
        cache->fc1_pre = std::move(h1);
        cache->fc1_post = std::move(r1);
        cache->logits = logits;
        cache->probs = probs;
    }
    return probs;
}

struct ForwardResult {
    std::array<double, 3> probs;
    ForwardCache cache;
};

inline std::array<double, 3> to_probs3(const std::vector<double>& p) {
    if (p.size() != 3) {
        throw Error(ErrorKind::ShapeMismatch, "expected a 3-class output");
    }
    return {p[0], p[1], p[2]};
}

inline ForwardResult forward(const MsNetModel& model, const SeqTensor& input) {
    ForwardResult r;
    r.probs = to_probs3(forward_pass<double>(model.arch, model.params, input, &r.cache));
    return r;
}

inline std::array<double, 3> forward_probs(const MsNetModel& model, const SeqTensor& input) {
    return to_probs3(forward_pass<double>(model.arch, model.params, input));
}

// Gradient of a scalar loss w.r.t. every parameter, given d(loss)/d(logits).
// For softmax + cross-entropy the caller passes w_label * (probs - onehot).
inline std::vector<double> backward(const MsNetModel& model, const ForwardCache& cache,
                                    std::span<const double> grad_logits) {
    if (!(cache.arch == model.arch)) {
        throw Error(ErrorKind::MismatchedCache, "forward cache built for a different arch");
    }
    if (cache.blocks.size() != static_cast<std::size_t>(model.arch.block_count) ||
        cache.probs.size() != static_cast<std::size_t>(model.arch.classes)) {
        throw Error(ErrorKind::MismatchedCache, "forward cache is incomplete");
    }
    if (grad_logits.size() != static_cast<std::size_t>(model.arch.classes)) {
        throw Error(ErrorKind::ShapeMismatch, "grad_logits length must equal class count");
    }

    const MsNetArch& arch = model.arch;
    const ParamLayout lay = ParamLayout::of(arch);
    std::span<const double> params(model.params);
    using detail::slice;

    std::vector<double> grad(lay.total, 0.0);
    auto store = [&grad](const ParamLayout::Slice& w, const ParamLayout::Slice& b,
                         const std::vector<double>& d_params) {
        std::copy(d_params.begin(), d_params.begin() + static_cast<long>(w.size),
                  grad.begin() + static_cast<long>(w.offset));
        std::copy(d_params.begin() + static_cast<long>(w.size), d_params.end(),
                  grad.begin() + static_cast<long>(b.offset));
    };

    // Head.
    DenseGrads<double> g2 = dense_backward<double>(cache.fc1_post, slice(params, lay.fc2_w),
                                                   grad_logits);
    store(lay.fc2_w, lay.fc2_b, g2.d_params);

    std::vector<double> d_fc1(cache.fc1_pre.size());
    for (std::size_t i = 0; i < d_fc1.size(); ++i) {
        d_fc1[i] = cache.fc1_pre[i] > 0.0 ? g2.d_input[i] : 0.0;
    }
    DenseGrads<double> g1 = dense_backward<double>(cache.pooled.values, slice(params, lay.fc1_w),
                                                   d_fc1);
    store(lay.fc1_w, lay.fc1_b, g1.d_params);

    // Pool routes the 64-d gradient back to one row per channel.
    const long l = cache.input.rows;
    SeqTensor d_x = global_maxpool_backward<double>(cache.pooled.argmax, g1.d_input, l);

    // Blocks, in reverse. d_x arrives as the gradient of the block output.
    for (int b = arch.block_count - 1; b >= 0; --b) {
        const auto& bl = lay.blocks[static_cast<std::size_t>(b)];
        const auto& bc = cache.blocks[static_cast<std::size_t>(b)];
        const SeqTensor& block_in = b == 0 ? cache.conv0_out : cache.blocks[b - 1].block_out;

        Conv1dGrads<double> gp = conv1d_backward(bc.activated, arch.pointwise_conv_spec(),
                                                 slice(params, bl.pointwise_w), d_x);
        store(bl.pointwise_w, bl.pointwise_b, gp.d_params);

        SeqTensor d_z = relu_backward(bc.dilated_out, gp.d_input);
        Conv1dGrads<double> gd = conv1d_backward(block_in, arch.dilated_conv_spec(b),
                                                 slice(params, bl.dilated_w), d_z);
        store(bl.dilated_w, bl.dilated_b, gd.d_params);

        // Residual: gradient flows through both the conv path and identity.
        for (std::size_t i = 0; i < d_x.data.size(); ++i) {
            d_x.data[i] += gd.d_input.data[i];
        }
    }

    Conv1dGrads<double> g0 = conv1d_backward(cache.input, arch.initial_conv_spec(),
                                             slice(params, lay.conv0_w), d_x);
    store(lay.conv0_w, lay.conv0_b, g0.d_params);
    return grad;
}

// Parameters converted once to float for the 32-bit inference mode.
struct InferenceModel32 {
    MsNetArch arch;
    std::vector<float> params;

    explicit InferenceModel32(const MsNetModel& m)
        : arch(m.arch), params(m.params.begin(), m.params.end()) {}

    std::array<float, 3> forward_probs(const SeqTensor32& input) const {
        std::vector<float> p = forward_pass<float>(arch, params, input);
        if (p.size() != 3) {
            throw Error(ErrorKind::ShapeMismatch, "expected a 3-class output");
        }
        return {p[0], p[1], p[2]};
    }
};

}  // namespace msnet
