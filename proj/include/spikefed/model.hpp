#pragma once

#include <functional>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "spikefed/layers.hpp"
#include "spikefed/partition.hpp"
#include "spikefed/rng.hpp"

namespace spikefed {

// ---- model fragment -------------------------------------------------------

// A sequential stack of layers plus the time-accumulation of its final
// output. Three roles share this type: a monolithic model or no-split client
// (head is a bare output linear), a split-mode bottom (binary spikes of the
// cut layer, summed over steps), and the server-side top model.
template <typename Real>
struct FragmentT {
    std::string name;
    std::vector<std::unique_ptr<LayerT<Real>>> layers;
    std::vector<int> input_shape;  // per sample, {C, H, W} or {F}
    int output_width = 0;          // accumulated output is [B, output_width]
    int steps = 1;

    int batch = 0;  // of the pass in flight

    // provider(t) yields the step-t input, t in [1, steps]. Returns the
    // output accumulated over all steps, [B, output_width].
    TensorT<Real> forward(const std::function<TensorT<Real>(int)>& provider,
                          RunMode mode, SpikeMode smode) {
        TensorT<Real> x = provider(1);
        batch = x.dim(0);
        for (auto& l : layers) l->begin_forward(batch, steps, mode, smode);
        TensorT<Real> acc({batch, output_width});
        for (int t = 1; t <= steps; ++t) {
            if (t > 1) x = provider(t);
            for (auto& l : layers) x = l->forward_step(x, t);
            if (x.rank() != 2 || x.dim(1) != output_width)
                detail::fail(name + ": step output " + detail::shape_str(x.shape()) +
                             " does not match declared width " +
                             std::to_string(output_width));
            axpy_inplace(acc, x, Real(1));
        }
        return acc;
    }

    // grad_acc is d loss / d accumulated output. Accumulates parameter
    // gradients and returns the summed gradient w.r.t. the per-step input.
    TensorT<Real> backward(const TensorT<Real>& grad_acc) {
        if (grad_acc.rank() != 2 || grad_acc.dim(0) != batch ||
            grad_acc.dim(1) != output_width)
            detail::fail(name + ": gradient shape " +
                         detail::shape_str(grad_acc.shape()) +
                         " does not match the forward pass ([" +
                         std::to_string(batch) + ", " +
                         std::to_string(output_width) + "])");
        for (auto& l : layers) l->begin_backward();
        TensorT<Real> input_grad;
        for (int t = steps; t >= 1; --t) {
            TensorT<Real> g = grad_acc;
            for (auto it = layers.rbegin(); it != layers.rend(); ++it)
                g = (*it)->backward_step(g, t);
            if (input_grad.empty())
                input_grad = std::move(g);
            else
                axpy_inplace(input_grad, g, Real(1));
        }
        return input_grad;
    }

    std::vector<ParamT<Real>*> params() {
        std::vector<ParamT<Real>*> out;
        for (auto& l : layers) l->collect_params(out);
        return out;
    }

    void zero_grads() {
        for (auto* p : params()) p->zero_grad();
    }

    void apply_sgd(Real lr, Real momentum, Real weight_decay) {
        for (auto* p : params()) sgd_update(*p, lr, momentum, weight_decay);
    }

    std::int64_t param_count() const {
        std::int64_t n = 0;
        for (const auto& l : layers) n += l->param_count();
        return n;
    }

    std::vector<typename LayerT<Real>::LedgerUnit> ledger_units() const {
        std::vector<typename LayerT<Real>::LedgerUnit> out;
        for (const auto& l : layers) l->collect_ledger(out, name + "/");
        return out;
    }

    void reset_spike_counters() {
        for (auto& l : layers) l->reset_spike_counters();
    }
};

using Fragment = FragmentT<float>;

// ---- topology specification -------------------------------------------------

struct ConvSpec {
    int out_channels, k, pad, stride;
};
struct PoolSpec {
    int k, stride;
};
struct LinearSpec {
    int out_features;
};
struct ResBlockSpec {
    int channels;
    bool skip = true;
    int stride = 1;
};

using LayerSpec = std::variant<ConvSpec, PoolSpec, LinearSpec, ResBlockSpec>;

// Ordered layer descriptors; the final descriptor must be the linear output
// head producing the class logits.
struct TopologySpec {
    std::string name;
    int in_channels = 3;
    int in_h = 0, in_w = 0;
    int classes = 0;
    std::vector<LayerSpec> layers;
};

enum class NetMode { snn, ann };

namespace presets {
TopologySpec vgg_mini(int classes, int in_h, int in_w);
TopologySpec res_mini(int classes, int in_h, int in_w);
TopologySpec vgg9(int classes, int in_h, int in_w);
TopologySpec resnet18(int classes, int in_h, int in_w);
// Known names: vgg-mini, res-mini, vgg9, resnet18. Throws on anything else.
TopologySpec by_name(const std::string& name, int classes, int in_h, int in_w);
}  // namespace presets

// Builds a monolithic model. Weights are Kaiming-uniform (fan-in scaled),
// drawn deterministically from the seed; the same (spec, lif, seed) always
// yields bitwise-identical weights.
Fragment build_model(const TopologySpec& spec, NetMode mode,
                     const LifConfig& lif, std::uint64_t seed);

struct SplitModel {
    std::vector<Fragment> bottoms;
    Fragment top;
    std::vector<int> bottom_widths;
    int cut_layer = 0;
};

// Count of weighted (conv/linear) primitives; cut positions index into this
// sequence.
int weighted_layer_count(const TopologySpec& spec);

// Default cut: after the last convolutional primitive (the linear head and
// any hidden linear layers form the top model).
int default_cut_layer(const TopologySpec& spec);

// Splits the topology at a cut counted in weighted primitives: each client
// gets the sub-network up to the cut sized for its partition region, the top
// model consumes the channel-wise concatenation of the bottoms' outputs.
SplitModel split_model(const TopologySpec& spec, int cut_layer,
                       const PartitionSpec& partition, NetMode mode,
                       const LifConfig& lif, std::uint64_t seed);

}  // namespace spikefed
