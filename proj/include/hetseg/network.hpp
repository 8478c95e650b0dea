#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hetseg/errors.hpp"
#include "hetseg/ops.hpp"
#include "hetseg/rng.hpp"
#include "hetseg/tensor.hpp"
#include "hetseg/volume.hpp"

namespace hetseg {

struct ModelConfig {
    int in_channels = 0;
    int num_classes = 0;
    int base_channels = 32;
    int depth = 4;
    Index3 patch_size{32, 32, 32};

    std::int64_t pool_factor() const { return std::int64_t{1} << (depth - 1); }
};

inline void validate(const ModelConfig& cfg) {
    if (cfg.in_channels < 1) throw ConfigError("model needs in_channels >= 1");
    if (cfg.num_classes < 2) throw ConfigError("model needs num_classes >= 2");
    if (cfg.base_channels < 1) throw ConfigError("model needs base_channels >= 1");
    if (cfg.depth < 2) throw ConfigError("model needs depth >= 2");
    for (std::int64_t d : cfg.patch_size)
        if (d < cfg.pool_factor() || d % cfg.pool_factor() != 0)
            throw ConfigError("patch dims must be positive multiples of 2^(depth-1) = " +
                              std::to_string(cfg.pool_factor()));
}

/// Reference to one named parameter tensor and its gradient accumulator.
struct ParamRef {
    std::string name;
    Tensor* value;
    Tensor* grad;
};

/// Reference to one named non-trained state tensor (batch-norm statistics).
struct BufferRef {
    std::string name;
    Tensor* value;
};

namespace detail {

struct ConvBnRelu {
    Conv3 conv;
    BatchNorm3 bn;
    ReLU3 relu;

    ConvBnRelu() = default;
    ConvBnRelu(std::int64_t in, std::int64_t out) : conv(in, out), bn(out) {}

    Tensor forward(const Tensor& x, Workspace& ws, bool train_mode) {
        return relu.forward(bn.forward(conv.forward(x, ws), train_mode));
    }

    Tensor backward(const Tensor& dy, Workspace& ws) {
        return conv.backward(bn.backward(relu.backward(dy)), ws);
    }

    void set_save(bool save) {
        conv.save_input = save;
        bn.save_input = save;
        relu.save_input = save;
    }
};

struct UNetBlock {
    ConvBnRelu a, b;

    UNetBlock() = default;
    UNetBlock(std::int64_t in, std::int64_t out) : a(in, out), b(out, out) {}

    Tensor forward(const Tensor& x, Workspace& ws, bool train_mode) {
        return b.forward(a.forward(x, ws, train_mode), ws, train_mode);
    }

    Tensor backward(const Tensor& dy, Workspace& ws) {
        return a.backward(b.backward(dy, ws), ws);
    }

    void set_save(bool save) {
        a.set_save(save);
        b.set_save(save);
    }
};

}  // namespace detail

/// The 3D U-Net: `depth` contraction blocks (each two conv3-BN-ReLU units)
/// joined by 2x2x2 max-pools, a mirrored expansion path joined by 2x2x2
/// stride-2 transposed convolutions that halve channels, addition skip
/// connections from each contraction block's pre-pool output, and a 1x1x1
/// softmax classification head. Channels double at every level from
/// base_channels. Single-writer during training; eval-mode forward is
/// side-effect free and safe for concurrent reads.
class UNet3D {
  public:
    UNet3D() = default;

    UNet3D(const ModelConfig& config, std::uint64_t seed) : cfg_(config) {
        validate(cfg_);
        const int D = cfg_.depth;
        std::int64_t prev = cfg_.in_channels;
        for (int l = 0; l < D; ++l) {
            const std::int64_t ch = static_cast<std::int64_t>(cfg_.base_channels) << l;
            down_.emplace_back(prev, ch);
            prev = ch;
        }
        pools_.resize(static_cast<std::size_t>(D - 1));
        for (int l = D - 2; l >= 0; --l) {
            const std::int64_t ch = static_cast<std::int64_t>(cfg_.base_channels) << l;
            ups_.emplace_back(ch * 2, ch);
            up_blocks_.emplace_back(ch, ch);
        }
        head_ = Conv1(static_cast<std::int64_t>(cfg_.base_channels), cfg_.num_classes);
        init_parameters(seed);
        set_train(false);
    }

    const ModelConfig& config() const { return cfg_; }
    bool is_train() const { return train_mode_; }

    void set_train(bool train_mode) {
        train_mode_ = train_mode;
        for (auto& b : down_) b.set_save(train_mode);
        for (auto& b : up_blocks_) b.set_save(train_mode);
        for (auto& p : pools_) p.save_input = train_mode;
        for (auto& u : ups_) u.save_input = train_mode;
        head_.save_input = train_mode;
    }

    /// Forward pass to per-voxel class probabilities (N, C, X, Y, Z).
    Tensor forward(const Tensor& x) { return ops::softmax_channels(forward_logits(x)); }

    /// Forward pass without the softmax head applied.
    Tensor forward_logits(const Tensor& x) {
        ops::check_5d(x, "model input");
        if (x.dim(1) != cfg_.in_channels) throw ShapeError("input channel count mismatch");
        for (int d = 2; d < 5; ++d)
            if (x.dim(d) % cfg_.pool_factor() != 0)
                throw ShapeError("spatial dims must be divisible by " +
                                 std::to_string(cfg_.pool_factor()));

        const int D = cfg_.depth;
        skips_.assign(static_cast<std::size_t>(D), Tensor{});
        Tensor cur = x;
        for (int l = 0; l < D; ++l) {
            cur = down_[static_cast<std::size_t>(l)].forward(cur, ws_, train_mode_);
            if (l < D - 1) {
                skips_[static_cast<std::size_t>(l)] = cur;
                cur = pools_[static_cast<std::size_t>(l)].forward(cur);
            }
        }
        for (int i = 0; i < D - 1; ++i) {
            const int l = D - 2 - i;
            Tensor up = ups_[static_cast<std::size_t>(i)].forward(cur, ws_);
            const Tensor& skip = skips_[static_cast<std::size_t>(l)];
            if (!up.same_shape(skip)) throw ShapeError("skip connection shape mismatch");
            for (std::int64_t j = 0; j < up.numel(); ++j) up[j] += skip[j];
            cur = up_blocks_[static_cast<std::size_t>(i)].forward(up, ws_, train_mode_);
        }
        return head_.forward(cur);
    }

    /// Backward pass from dL/dlogits; accumulates parameter gradients.
    /// Requires a preceding train-mode forward on the same input.
    void backward(const Tensor& dlogits) {
        if (!train_mode_) throw ConfigError("backward requires train mode");
        const int D = cfg_.depth;
        Tensor cur = head_.backward(dlogits);
        std::vector<Tensor> skip_grads(static_cast<std::size_t>(D));
        for (int i = D - 2; i >= 0; --i) {
            const int l = D - 2 - i;
            cur = up_blocks_[static_cast<std::size_t>(i)].backward(cur, ws_);
            skip_grads[static_cast<std::size_t>(l)] = cur;
            cur = ups_[static_cast<std::size_t>(i)].backward(cur, ws_);
        }
        for (int l = D - 1; l >= 0; --l) {
            if (l < D - 1) {
                Tensor pooled = pools_[static_cast<std::size_t>(l)].backward(cur);
                const Tensor& sg = skip_grads[static_cast<std::size_t>(l)];
                for (std::int64_t j = 0; j < pooled.numel(); ++j) pooled[j] += sg[j];
                cur = std::move(pooled);
            }
            cur = down_[static_cast<std::size_t>(l)].backward(cur, ws_);
        }
    }

    std::vector<ParamRef> parameters() {
        std::vector<ParamRef> refs;
        const auto add_cbr = [&](const std::string& prefix, detail::ConvBnRelu& u) {
            refs.push_back({prefix + ".conv.weight", &u.conv.w, &u.conv.dw});
            refs.push_back({prefix + ".bn.gamma", &u.bn.gamma, &u.bn.dgamma});
            refs.push_back({prefix + ".bn.beta", &u.bn.beta, &u.bn.dbeta});
        };
        for (std::size_t l = 0; l < down_.size(); ++l) {
            add_cbr("down" + std::to_string(l) + ".a", down_[l].a);
            add_cbr("down" + std::to_string(l) + ".b", down_[l].b);
        }
        for (std::size_t i = 0; i < ups_.size(); ++i) {
            const std::string prefix = "up" + std::to_string(cfg_.depth - 2 - static_cast<int>(i));
            refs.push_back({prefix + ".tconv.weight", &ups_[i].w, &ups_[i].dw});
            refs.push_back({prefix + ".tconv.bias", &ups_[i].b, &ups_[i].db});
            add_cbr(prefix + ".a", up_blocks_[i].a);
            add_cbr(prefix + ".b", up_blocks_[i].b);
        }
        refs.push_back({"head.weight", &head_.w, &head_.dw});
        refs.push_back({"head.bias", &head_.b, &head_.db});
        return refs;
    }

    std::vector<BufferRef> buffers() {
        std::vector<BufferRef> refs;
        const auto add_cbr = [&](const std::string& prefix, detail::ConvBnRelu& u) {
            refs.push_back({prefix + ".bn.running_mean", &u.bn.running_mean});
            refs.push_back({prefix + ".bn.running_var", &u.bn.running_var});
        };
        for (std::size_t l = 0; l < down_.size(); ++l) {
            add_cbr("down" + std::to_string(l) + ".a", down_[l].a);
            add_cbr("down" + std::to_string(l) + ".b", down_[l].b);
        }
        for (std::size_t i = 0; i < ups_.size(); ++i) {
            const std::string prefix = "up" + std::to_string(cfg_.depth - 2 - static_cast<int>(i));
            add_cbr(prefix + ".a", up_blocks_[i].a);
            add_cbr(prefix + ".b", up_blocks_[i].b);
        }
        return refs;
    }

    std::int64_t parameter_count() {
        std::int64_t total = 0;
        for (const auto& p : parameters()) total += p.value->numel();
        return total;
    }

    void zero_grad() {
        for (auto& p : parameters()) p.grad->zero();
    }

  private:
    // He-normal fan-in initialization for all convolution kernels, zero
    // biases, identity batch-norm, drawn in registry order from one stream.
    void init_parameters(std::uint64_t seed) {
        CounterRng rng(seed);
        for (auto& p : parameters()) {
            Tensor& t = *p.value;
            if (p.name.find("conv.weight") != std::string::npos ||
                p.name == "head.weight") {
                std::int64_t fan_in = 1;
                for (std::size_t d = 1; d < t.ndim(); ++d)
                    fan_in *= t.dim(static_cast<std::int64_t>(d));
                if (p.name.find("tconv") != std::string::npos)
                    fan_in = t.dim(0) * t.dim(2) * t.dim(3) * t.dim(4);
                const float sd = std::sqrt(2.0f / static_cast<float>(fan_in));
                for (std::int64_t i = 0; i < t.numel(); ++i)
                    t[i] = sd * static_cast<float>(rng.normal());
            }
            // biases stay zero, bn gamma/beta keep their identity init
        }
    }

    ModelConfig cfg_;
    std::vector<detail::UNetBlock> down_;
    std::vector<MaxPool2> pools_;
    std::vector<TConv2> ups_;
    std::vector<detail::UNetBlock> up_blocks_;
    Conv1 head_;
    std::vector<Tensor> skips_;
    Workspace ws_;
    bool train_mode_ = false;
};

/// Builds a He-initialized U-Net. Two builds with equal config and seed
/// produce bit-identical parameters.
inline UNet3D build_model(const ModelConfig& config, std::uint64_t seed) {
    return UNet3D(config, seed);
}

}  // namespace hetseg
