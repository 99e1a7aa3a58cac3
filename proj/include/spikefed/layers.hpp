#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "spikefed/tensor.hpp"

namespace spikefed {

enum class RunMode { train, eval };

// `hard` is the production path: binary threshold forward, triangle
// surrogate in the backward pass, reset treated as stop-gradient.
// `relaxed` is a testing-only path that replaces the threshold with the
// surrogate's C1 primitive so the analytic backward pass is the exact
// derivative of the forward pass and finite differencing is valid.
enum class SpikeMode { hard, relaxed };

enum class Activation { lif, relu, none };

// Triangle surrogate for the threshold derivative, and its primitive.
template <typename Real>
struct SurrogateT {
    Real threshold = Real(1);
    Real width = Real(1);

    // max(0, 1 - |v - threshold| / width) / width; unit integral over v.
    Real grad(Real v) const {
        const Real a = std::abs(v - threshold);
        if (a >= width) return Real(0);
        return (Real(1) - a / width) / width;
    }

    // Ramp from 0 to 1 over [threshold - width, threshold + width] whose
    // derivative is grad().
    Real ramp(Real v) const {
        const Real d = v - threshold;
        if (d <= -width) return Real(0);
        if (d >= width) return Real(1);
        if (d < Real(0)) {
            const Real u = d + width;
            return u * u / (Real(2) * width * width);
        }
        const Real u = width - d;
        return Real(1) - u * u / (Real(2) * width * width);
    }
};

template <typename Real>
TensorT<Real> surrogate_spike_grad(const TensorT<Real>& v, Real threshold,
                                   Real width) {
    if (!(width > Real(0)))
        detail::fail("surrogate_spike_grad: width must be positive");
    SurrogateT<Real> s{threshold, width};
    TensorT<Real> g(v.shape());
    for (std::size_t i = 0; i < v.size(); ++i) g[i] = s.grad(v[i]);
    return g;
}

template <typename Real>
struct LifConfigT {
    Real leak = Real(0.99);
    Real threshold = Real(1);
    Real surrogate_width = Real(1);
    int steps = 1;

    void validate() const {
        if (leak < Real(0) || leak > Real(1))
            detail::fail("lif: leak factor must be in [0, 1]");
        if (!(threshold > Real(0))) detail::fail("lif: threshold must be positive");
        if (steps < 1) detail::fail("lif: steps must be >= 1");
    }
};

using LifConfig = LifConfigT<float>;

// ---- parameters and SGD ------------------------------------------------------

template <typename Real>
struct ParamT {
    TensorT<Real> value, grad, vel;

    ParamT() = default;
    explicit ParamT(std::vector<int> shape)
        : value(shape), grad(shape), vel(std::move(shape)) {}

    std::size_t count() const { return value.size(); }
    void zero_grad() { grad.fill(Real(0)); }
};

// vel = momentum * vel + grad + wd * value;  value -= lr * vel
template <typename Real>
void sgd_update(ParamT<Real>& p, Real lr, Real momentum, Real weight_decay) {
    if (!p.value.same_shape(p.grad))
        detail::fail("sgd: parameter/gradient shape mismatch");
    if constexpr (std::is_same_v<Real, float>)
        kernels::table().sgd_step(p.value.data(), p.vel.data(), p.grad.data(), lr,
                                  momentum, weight_decay, p.value.size());
    else
        kernels::ref::sgd_step(p.value.data(), p.vel.data(), p.grad.data(), lr,
                               momentum, weight_decay, p.value.size());
}

// ---- batch normalization through time ----------------------------------------

// Per-time-step batch normalization: one learnable scale per channel per
// step; batch statistics in training, exponential-moving-average statistics
// in evaluation. The scale-only form has no shift term; the relu regime adds
// a conventional learnable shift.
template <typename Real>
struct BnttT {
    int steps = 0;
    int channels = 0;
    Real eps = Real(1e-5);
    Real ema_momentum = Real(0.1);
    bool affine_shift = false;

    ParamT<Real> gamma;  // [steps, channels]
    ParamT<Real> beta;   // [steps, channels], only when affine_shift
    TensorT<Real> running_mean, running_var;  // [steps, channels]
    bool initialized = false;

    // per-pass tape, index t-1
    std::vector<std::vector<Real>> tape_mean, tape_inv_std;

    void init(int steps_, int channels_, bool shift) {
        steps = steps_;
        channels = channels_;
        affine_shift = shift;
        gamma = ParamT<Real>({steps, channels});
        gamma.value.fill(Real(1));
        if (shift) beta = ParamT<Real>({steps, channels});
        running_mean = TensorT<Real>({steps, channels});
        running_var = TensorT<Real>::full({steps, channels}, Real(1));
        initialized = false;
    }
};

namespace detail {

// Biased per-channel moments over batch and inner dims of [B, C, inner].
template <typename Real>
void channel_moments(const TensorT<Real>& z, int batch, int channels, int inner,
                     std::vector<Real>& mean, std::vector<Real>& var) {
    mean.assign(static_cast<std::size_t>(channels), Real(0));
    var.assign(static_cast<std::size_t>(channels), Real(0));
    const double inv_n = 1.0 / (static_cast<double>(batch) * inner);
    for (int c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (int b = 0; b < batch; ++b) {
            const Real* p = z.data() + (static_cast<std::size_t>(b) * channels + c) * inner;
            for (int i = 0; i < inner; ++i) acc += static_cast<double>(p[i]);
        }
        const double m = acc * inv_n;
        double acc2 = 0.0;
        for (int b = 0; b < batch; ++b) {
            const Real* p = z.data() + (static_cast<std::size_t>(b) * channels + c) * inner;
            for (int i = 0; i < inner; ++i) {
                const double d = static_cast<double>(p[i]) - m;
                acc2 += d * d;
            }
        }
        mean[static_cast<std::size_t>(c)] = static_cast<Real>(m);
        var[static_cast<std::size_t>(c)] = static_cast<Real>(acc2 * inv_n);
    }
}

template <typename Real>
void apply_norm(const TensorT<Real>& z, const std::vector<Real>& mean,
                const std::vector<Real>& inv_std, const Real* gamma_row,
                int batch, int channels, int inner, TensorT<Real>& xhat,
                TensorT<Real>& out) {
    if constexpr (std::is_same_v<Real, float>)
        kernels::table().bntt_apply(xhat.data(), out.data(), z.data(), mean.data(),
                                    inv_std.data(), gamma_row, batch, channels,
                                    inner);
    else
        kernels::ref::bntt_apply(xhat.data(), out.data(), z.data(), mean.data(),
                                 inv_std.data(), gamma_row, batch, channels,
                                 inner);
}

}  // namespace detail

// ---- layer interface ----------------------------------------------------------

// One layer of a model fragment. forward_step/backward_step are called once
// per time step; a layer owns its recurrent state (membrane potential,
// gradient carry) and its per-pass tape. A layer instance belongs to one
// worker at a time.
template <typename Real>
class LayerT {
public:
    explicit LayerT(std::string name) : name_(std::move(name)) {}
    virtual ~LayerT() = default;

    virtual void begin_forward(int batch, int steps, RunMode mode,
                               SpikeMode smode) = 0;
    virtual TensorT<Real> forward_step(const TensorT<Real>& in, int t) = 0;
    virtual void begin_backward() = 0;
    virtual TensorT<Real> backward_step(const TensorT<Real>& grad_out, int t) = 0;

    virtual void collect_params(std::vector<ParamT<Real>*>& out) {}
    virtual std::int64_t param_count() const { return 0; }

    // per-sample output shape, e.g. {C, H, W} or {F}
    virtual const std::vector<int>& out_shape() const = 0;

    struct LedgerUnit {
        std::string id;
        std::int64_t ops;      // multiply-accumulate positions per sample
        std::int64_t neurons;  // output units
        std::uint64_t spikes;  // emitted since the last counter reset
    };
    virtual void collect_ledger(std::vector<LedgerUnit>& out,
                                const std::string& prefix) const {}
    virtual void reset_spike_counters() {}

    const std::string& name() const { return name_; }

protected:
    std::string name_;
};

// ---- shared spiking/relu activation core --------------------------------------

namespace detail {

// Normalization + activation over the pre-activation z of one step.
// Handles the membrane recurrence for lif, plain thresholding of relu, and
// the gradient carry between steps in the backward sweep.
template <typename Real>
struct ActivationCore {
    Activation act = Activation::lif;
    LifConfigT<Real> lif;
    bool normalize = true;
    BnttT<Real> bntt;
    int channels = 0, inner = 0;

    RunMode mode = RunMode::train;
    SpikeMode smode = SpikeMode::hard;
    int batch = 0, steps = 0;

    TensorT<Real> membrane;  // [B, C, inner]
    std::uint64_t spike_count = 0;

    std::vector<TensorT<Real>> tape_xhat, tape_vpre, tape_out;
    TensorT<Real> gv_carry;

    void init(int channels_, int inner_, Activation act_, const LifConfigT<Real>& lif_,
              bool normalize_, int steps_) {
        channels = channels_;
        inner = inner_;
        act = act_;
        lif = lif_;
        normalize = normalize_;
        if (normalize) bntt.init(steps_, channels, act == Activation::relu);
    }

    void begin_forward(int batch_, int steps_, RunMode mode_, SpikeMode smode_) {
        batch = batch_;
        steps = steps_;
        mode = mode_;
        smode = smode_;
        if (normalize && steps != bntt.steps)
            detail::fail("bntt: configured for " + std::to_string(bntt.steps) +
                         " steps but forward pass uses " + std::to_string(steps));
        if (normalize && mode == RunMode::train && batch < 2)
            detail::fail("bntt: training requires batch size >= 2, got " +
                         std::to_string(batch));
        if (normalize && mode == RunMode::eval && !bntt.initialized)
            detail::fail("bntt: evaluation before any training step; running "
                         "statistics are uninitialized");
        membrane = TensorT<Real>({batch, channels, inner});
        if (mode == RunMode::train) {
            tape_xhat.assign(static_cast<std::size_t>(steps), TensorT<Real>());
            tape_vpre.assign(static_cast<std::size_t>(steps), TensorT<Real>());
            tape_out.assign(static_cast<std::size_t>(steps), TensorT<Real>());
            if (normalize) {
                bntt.tape_mean.assign(static_cast<std::size_t>(steps), {});
                bntt.tape_inv_std.assign(static_cast<std::size_t>(steps), {});
            }
        }
    }

    // z and the optional injection are [B, C, inner]; returns the layer
    // output for this step (binary spikes for lif/hard).
    TensorT<Real> forward_step(const TensorT<Real>& z, int t,
                               const TensorT<Real>* inject) {
        const bool train = mode == RunMode::train;
        TensorT<Real> drive;
        if (normalize) {
            std::vector<Real> mean, var, inv_std;
            if (train) {
                detail::channel_moments(z, batch, channels, inner, mean, var);
                for (int c = 0; c < channels; ++c) {
                    Real& rm = bntt.running_mean.at2(t - 1, c);
                    Real& rv = bntt.running_var.at2(t - 1, c);
                    rm = (Real(1) - bntt.ema_momentum) * rm + bntt.ema_momentum * mean[c];
                    rv = (Real(1) - bntt.ema_momentum) * rv + bntt.ema_momentum * var[c];
                }
                bntt.initialized = true;
            } else {
                mean.resize(static_cast<std::size_t>(channels));
                var.resize(static_cast<std::size_t>(channels));
                for (int c = 0; c < channels; ++c) {
                    mean[c] = bntt.running_mean.at2(t - 1, c);
                    var[c] = bntt.running_var.at2(t - 1, c);
                }
            }
            inv_std.resize(static_cast<std::size_t>(channels));
            for (int c = 0; c < channels; ++c)
                inv_std[c] = Real(1) / std::sqrt(var[c] + bntt.eps);

            TensorT<Real> xhat(z.shape());
            drive = TensorT<Real>(z.shape());
            detail::apply_norm(z, mean, inv_std,
                               bntt.gamma.value.data() +
                                   static_cast<std::size_t>(t - 1) * channels,
                               batch, channels, inner, xhat, drive);
            if (bntt.affine_shift) {
                const Real* beta_row =
                    bntt.beta.value.data() + static_cast<std::size_t>(t - 1) * channels;
                for (int b = 0; b < batch; ++b)
                    for (int c = 0; c < channels; ++c) {
                        Real* p = drive.data() +
                                  (static_cast<std::size_t>(b) * channels + c) * inner;
                        for (int i = 0; i < inner; ++i) p[i] += beta_row[c];
                    }
            }
            if (train) {
                bntt.tape_mean[static_cast<std::size_t>(t - 1)] = std::move(mean);
                bntt.tape_inv_std[static_cast<std::size_t>(t - 1)] = std::move(inv_std);
                tape_xhat[static_cast<std::size_t>(t - 1)] = std::move(xhat);
            }
        } else {
            drive = z;
        }
        if (inject) axpy_inplace(drive, *inject, Real(1));

        TensorT<Real> out(z.shape());
        if (act == Activation::relu) {
            if constexpr (std::is_same_v<Real, float>)
                kernels::table().relu(out.data(), drive.data(), drive.size());
            else
                kernels::ref::relu(out.data(), drive.data(), drive.size());
            if (train) tape_vpre[static_cast<std::size_t>(t - 1)] = std::move(drive);
        } else {
            TensorT<Real> vpre(z.shape());
            if (smode == SpikeMode::hard) {
                std::uint64_t fired;
                if constexpr (std::is_same_v<Real, float>)
                    fired = kernels::table().lif_step(membrane.data(), vpre.data(),
                                                      out.data(), drive.data(),
                                                      lif.leak, lif.threshold,
                                                      drive.size());
                else
                    fired = kernels::ref::lif_step(membrane.data(), vpre.data(),
                                                   out.data(), drive.data(), lif.leak,
                                                   lif.threshold, drive.size());
                if (mode == RunMode::train) spike_count += fired;
            } else {
                const SurrogateT<Real> sur{lif.threshold, lif.surrogate_width};
                for (std::size_t i = 0; i < drive.size(); ++i) {
                    const Real v = lif.leak * membrane[i] + drive[i];
                    vpre[i] = v;
                    const Real s = sur.ramp(v);
                    out[i] = s;
                    membrane[i] = (Real(1) - s) * v;
                }
            }
            if (train) {
                tape_vpre[static_cast<std::size_t>(t - 1)] = std::move(vpre);
            }
        }
        if (train) tape_out[static_cast<std::size_t>(t - 1)] = out;
        return out;
    }

    void begin_backward() {
        if (mode != RunMode::train)
            detail::fail("backward requires a preceding train-mode forward pass");
        gv_carry = TensorT<Real>({batch, channels, inner});
    }

    // Returns the gradient w.r.t. the pre-normalization z of step t; if
    // grad_inject is non-null it receives the gradient w.r.t. the injected
    // drive of step t.
    TensorT<Real> backward_step(const TensorT<Real>& grad_out, int t,
                                TensorT<Real>* grad_inject) {
        const std::size_t ti = static_cast<std::size_t>(t - 1);
        if (ti >= tape_out.size() || tape_out[ti].empty())
            detail::fail("backward: no tape recorded for step " + std::to_string(t));
        if (!grad_out.same_shape(tape_out[ti]))
            detail::fail("backward: gradient shape " +
                         detail::shape_str(grad_out.shape()) +
                         " does not match tape shape " +
                         detail::shape_str(tape_out[ti].shape()));

        TensorT<Real> ga(grad_out.shape());
        if (act == Activation::relu) {
            const TensorT<Real>& pre = tape_vpre[ti];
            if constexpr (std::is_same_v<Real, float>)
                kernels::table().relu_grad(ga.data(), grad_out.data(), pre.data(),
                                           pre.size());
            else
                kernels::ref::relu_grad(ga.data(), grad_out.data(), pre.data(),
                                        pre.size());
        } else {
            const SurrogateT<Real> sur{lif.threshold, lif.surrogate_width};
            const TensorT<Real>& vpre = tape_vpre[ti];
            const TensorT<Real>& s = tape_out[ti];
            for (std::size_t i = 0; i < ga.size(); ++i) {
                const Real sg = sur.grad(vpre[i]);
                // Reset path: stop-gradient through the spike decision in the
                // hard mode, exact product rule in the relaxed mode.
                const Real reset_pass =
                    smode == SpikeMode::hard
                        ? (Real(1) - s[i])
                        : (Real(1) - s[i]) - vpre[i] * sg;
                const Real gv = grad_out[i] * sg + gv_carry[i] * reset_pass;
                ga[i] = gv;
                gv_carry[i] = lif.leak * gv;
            }
        }
        if (grad_inject) *grad_inject = ga;

        if (!normalize) return ga;

        // Backprop through the per-step batch statistics.
        const TensorT<Real>& xhat = tape_xhat[ti];
        const std::vector<Real>& inv_std = bntt.tape_inv_std[ti];
        const Real* gamma_row =
            bntt.gamma.value.data() + ti * static_cast<std::size_t>(channels);
        Real* ggamma_row =
            bntt.gamma.grad.data() + ti * static_cast<std::size_t>(channels);
        Real* gbeta_row = bntt.affine_shift
                              ? bntt.beta.grad.data() + ti * static_cast<std::size_t>(channels)
                              : nullptr;

        TensorT<Real> gz(ga.shape());
        const double inv_n = 1.0 / (static_cast<double>(batch) * inner);
        for (int c = 0; c < channels; ++c) {
            double sum_g = 0.0, sum_gx = 0.0, sum_ga = 0.0;
            for (int b = 0; b < batch; ++b) {
                const std::size_t base =
                    (static_cast<std::size_t>(b) * channels + c) * inner;
                for (int i = 0; i < inner; ++i) {
                    const double gxh =
                        static_cast<double>(ga[base + i]) * gamma_row[c];
                    sum_g += gxh;
                    sum_gx += gxh * static_cast<double>(xhat[base + i]);
                    sum_ga += static_cast<double>(ga[base + i]) *
                              static_cast<double>(xhat[base + i]);
                }
            }
            ggamma_row[c] += static_cast<Real>(sum_ga);
            if (gbeta_row) {
                double sb = 0.0;
                for (int b = 0; b < batch; ++b) {
                    const std::size_t base =
                        (static_cast<std::size_t>(b) * channels + c) * inner;
                    for (int i = 0; i < inner; ++i)
                        sb += static_cast<double>(ga[base + i]);
                }
                gbeta_row[c] += static_cast<Real>(sb);
            }
            const double mean_g = sum_g * inv_n;
            const double mean_gx = sum_gx * inv_n;
            const double is = static_cast<double>(inv_std[c]);
            for (int b = 0; b < batch; ++b) {
                const std::size_t base =
                    (static_cast<std::size_t>(b) * channels + c) * inner;
                for (int i = 0; i < inner; ++i) {
                    const double gxh =
                        static_cast<double>(ga[base + i]) * gamma_row[c];
                    gz[base + i] = static_cast<Real>(
                        is * (gxh - mean_g -
                              static_cast<double>(xhat[base + i]) * mean_gx));
                }
            }
        }
        return gz;
    }
};

}  // namespace detail

// ---- concrete layers -----------------------------------------------------------

// Convolution followed by per-step normalization and a lif or relu
// activation (or neither for bare projections). Weight layout [O, I, k, k].
template <typename Real>
class ConvLayerT : public LayerT<Real> {
public:
    ConvLayerT(std::string name, int in_ch, int in_h, int in_w, int out_ch, int k,
               int pad, int stride, Activation act, const LifConfigT<Real>& lif,
               bool normalize = true)
        : LayerT<Real>(std::move(name)),
          in_ch_(in_ch),
          in_h_(in_h),
          in_w_(in_w),
          out_ch_(out_ch),
          k_(k),
          pad_(pad),
          stride_(stride),
          weight_({out_ch, in_ch, k, k}) {
        out_h_ = conv_out_size(in_h, k, pad, stride);
        out_w_ = conv_out_size(in_w, k, pad, stride);
        out_shape_ = {out_ch_, out_h_, out_w_};
        core_.init(out_ch_, out_h_ * out_w_, act, lif,
                   normalize && act != Activation::none, lif.steps);
    }

    void begin_forward(int batch, int steps, RunMode mode, SpikeMode smode) override {
        batch_ = batch;
        core_.begin_forward(batch, steps, mode, smode);
        if (mode == RunMode::train)
            tape_in_.assign(static_cast<std::size_t>(steps), TensorT<Real>());
    }

    TensorT<Real> forward_step(const TensorT<Real>& in, int t) override {
        return forward_impl(in, t, nullptr);
    }

    // Residual support: `inject` is added to the membrane drive before
    // thresholding; shape [B, O, out_h, out_w].
    TensorT<Real> forward_step_injected(const TensorT<Real>& in,
                                        const TensorT<Real>& inject, int t) {
        const TensorT<Real> inj3 = inject.reshaped({batch_, out_ch_, out_h_ * out_w_});
        return forward_impl(in, t, &inj3);
    }

    void begin_backward() override { core_.begin_backward(); }

    TensorT<Real> backward_step(const TensorT<Real>& grad_out, int t) override {
        return backward_impl(grad_out, t, nullptr);
    }

    // Returns {grad_in, grad_inject}.
    std::pair<TensorT<Real>, TensorT<Real>> backward_step_injected(
        const TensorT<Real>& grad_out, int t) {
        TensorT<Real> ginj;
        TensorT<Real> gin = backward_impl(grad_out, t, &ginj);
        return {std::move(gin),
                ginj.reshaped({batch_, out_ch_, out_h_, out_w_})};
    }

    void collect_params(std::vector<ParamT<Real>*>& out) override {
        out.push_back(&weight_);
        if (core_.normalize) {
            out.push_back(&core_.bntt.gamma);
            if (core_.bntt.affine_shift) out.push_back(&core_.bntt.beta);
        }
    }

    std::int64_t param_count() const override {
        std::int64_t n = static_cast<std::int64_t>(weight_.count());
        if (core_.normalize) {
            n += static_cast<std::int64_t>(core_.bntt.gamma.count());
            if (core_.bntt.affine_shift)
                n += static_cast<std::int64_t>(core_.bntt.beta.count());
        }
        return n;
    }

    const std::vector<int>& out_shape() const override { return out_shape_; }

    void collect_ledger(std::vector<typename LayerT<Real>::LedgerUnit>& out,
                        const std::string& prefix) const override {
        out.push_back({prefix + this->name_,
                       static_cast<std::int64_t>(out_h_) * out_w_ * in_ch_ * k_ *
                           k_ * out_ch_,
                       static_cast<std::int64_t>(out_ch_) * out_h_ * out_w_,
                       core_.spike_count});
    }
    void reset_spike_counters() override { core_.spike_count = 0; }

    ParamT<Real>& weight() { return weight_; }
    detail::ActivationCore<Real>& core() { return core_; }
    const detail::ActivationCore<Real>& core() const { return core_; }
    int pad() const { return pad_; }
    int stride() const { return stride_; }

private:
    TensorT<Real> forward_impl(const TensorT<Real>& in, int t,
                               const TensorT<Real>* inj3) {
        if (in.rank() != 4 || in.dim(1) != in_ch_ || in.dim(2) != in_h_ ||
            in.dim(3) != in_w_)
            detail::fail(this->name_ + ": input shape " +
                         detail::shape_str(in.shape()) + " does not match [B, " +
                         std::to_string(in_ch_) + ", " + std::to_string(in_h_) +
                         ", " + std::to_string(in_w_) + "]");
        const TensorT<Real> z4 = conv2d(in, weight_.value, pad_, stride_);
        const TensorT<Real> z3 = z4.reshaped({batch_, out_ch_, out_h_ * out_w_});
        if (core_.mode == RunMode::train)
            tape_in_[static_cast<std::size_t>(t - 1)] = in;
        if (core_.act == Activation::none) {
            // bare linear map (projection / output head)
            TensorT<Real> out = z3;
            if (inj3) axpy_inplace(out, *inj3, Real(1));
            return out.reshaped({batch_, out_ch_, out_h_, out_w_});
        }
        TensorT<Real> out = core_.forward_step(z3, t, inj3);
        return out.reshaped({batch_, out_ch_, out_h_, out_w_});
    }

    TensorT<Real> backward_impl(const TensorT<Real>& grad_out, int t,
                                TensorT<Real>* ginj) {
        const TensorT<Real> g3 =
            grad_out.reshaped({batch_, out_ch_, out_h_ * out_w_});
        TensorT<Real> gz3;
        if (core_.act == Activation::none) {
            gz3 = g3;
            if (ginj) *ginj = g3;
        } else {
            gz3 = core_.backward_step(g3, t, ginj);
        }
        const TensorT<Real> gz4 = gz3.reshaped({batch_, out_ch_, out_h_, out_w_});
        const TensorT<Real>& in = tape_in_[static_cast<std::size_t>(t - 1)];
        conv2d_grad_weight(in, gz4, pad_, stride_, weight_.grad);
        return conv2d_grad_input(gz4, weight_.value, in.shape(), pad_, stride_);
    }

    int in_ch_, in_h_, in_w_, out_ch_, k_, pad_, stride_;
    int out_h_ = 0, out_w_ = 0;
    int batch_ = 0;
    ParamT<Real> weight_;
    detail::ActivationCore<Real> core_;
    std::vector<TensorT<Real>> tape_in_;
    std::vector<int> out_shape_;
};

// Fully connected layer; weight layout [in, out]. Activation::none makes it
// the accumulating output head (no normalization, no threshold).
template <typename Real>
class LinearLayerT : public LayerT<Real> {
public:
    LinearLayerT(std::string name, int in_features, int out_features,
                 Activation act, const LifConfigT<Real>& lif, bool normalize = true)
        : LayerT<Real>(std::move(name)),
          in_features_(in_features),
          out_features_(out_features),
          weight_({in_features, out_features}),
          out_shape_{out_features} {
        core_.init(out_features, 1, act, lif, act != Activation::none && normalize,
                   lif.steps);
    }

    void begin_forward(int batch, int steps, RunMode mode, SpikeMode smode) override {
        batch_ = batch;
        core_.begin_forward(batch, steps, mode, smode);
        if (mode == RunMode::train)
            tape_in_.assign(static_cast<std::size_t>(steps), TensorT<Real>());
    }

    TensorT<Real> forward_step(const TensorT<Real>& in, int t) override {
        if (in.rank() != 2 || in.dim(1) != in_features_)
            detail::fail(this->name_ + ": input shape " +
                         detail::shape_str(in.shape()) + " does not match [B, " +
                         std::to_string(in_features_) + "]");
        if (core_.mode == RunMode::train)
            tape_in_[static_cast<std::size_t>(t - 1)] = in;
        TensorT<Real> z = matmul(in, weight_.value);
        if (core_.act == Activation::none) return z;
        const TensorT<Real> z3 = z.reshaped({batch_, out_features_, 1});
        return core_.forward_step(z3, t, nullptr).reshaped({batch_, out_features_});
    }

    void begin_backward() override {
        if (core_.act != Activation::none) core_.begin_backward();
    }

    TensorT<Real> backward_step(const TensorT<Real>& grad_out, int t) override {
        TensorT<Real> gz;
        if (core_.act == Activation::none) {
            gz = grad_out;
        } else {
            const TensorT<Real> g3 = grad_out.reshaped({batch_, out_features_, 1});
            gz = core_.backward_step(g3, t, nullptr)
                     .reshaped({batch_, out_features_});
        }
        const TensorT<Real>& in = tape_in_[static_cast<std::size_t>(t - 1)];
        if (in.empty())
            detail::fail(this->name_ + ": no tape recorded for step " +
                         std::to_string(t));
        matmul_into(weight_.grad, transpose2d(in), gz, true);
        return matmul(gz, transpose2d(weight_.value));
    }

    void collect_params(std::vector<ParamT<Real>*>& out) override {
        out.push_back(&weight_);
        if (core_.normalize) {
            out.push_back(&core_.bntt.gamma);
            if (core_.bntt.affine_shift) out.push_back(&core_.bntt.beta);
        }
    }

    std::int64_t param_count() const override {
        std::int64_t n = static_cast<std::int64_t>(weight_.count());
        if (core_.normalize) {
            n += static_cast<std::int64_t>(core_.bntt.gamma.count());
            if (core_.bntt.affine_shift)
                n += static_cast<std::int64_t>(core_.bntt.beta.count());
        }
        return n;
    }

    const std::vector<int>& out_shape() const override { return out_shape_; }

    void collect_ledger(std::vector<typename LayerT<Real>::LedgerUnit>& out,
                        const std::string& prefix) const override {
        out.push_back({prefix + this->name_,
                       static_cast<std::int64_t>(in_features_) * out_features_,
                       out_features_, core_.spike_count});
    }
    void reset_spike_counters() override { core_.spike_count = 0; }

    ParamT<Real>& weight() { return weight_; }
    detail::ActivationCore<Real>& core() { return core_; }
    const detail::ActivationCore<Real>& core() const { return core_; }

private:
    int in_features_, out_features_;
    int batch_ = 0;
    ParamT<Real> weight_;
    detail::ActivationCore<Real> core_;
    std::vector<TensorT<Real>> tape_in_;
    std::vector<int> out_shape_;
};

// Average pooling; keeps rate semantics for binary spike inputs.
template <typename Real>
class AvgPoolT : public LayerT<Real> {
public:
    AvgPoolT(std::string name, int channels, int in_h, int in_w, int k, int stride)
        : LayerT<Real>(std::move(name)),
          channels_(channels),
          in_h_(in_h),
          in_w_(in_w),
          k_(k),
          stride_(stride) {
        out_h_ = conv_out_size(in_h, k, 0, stride);
        out_w_ = conv_out_size(in_w, k, 0, stride);
        out_shape_ = {channels_, out_h_, out_w_};
    }

    void begin_forward(int batch, int, RunMode, SpikeMode) override { batch_ = batch; }

    TensorT<Real> forward_step(const TensorT<Real>& in, int) override {
        TensorT<Real> out({batch_, channels_, out_h_, out_w_});
        const Real inv = Real(1) / static_cast<Real>(k_ * k_);
        for (int b = 0; b < batch_; ++b)
            for (int c = 0; c < channels_; ++c)
                for (int oy = 0; oy < out_h_; ++oy)
                    for (int ox = 0; ox < out_w_; ++ox) {
                        Real acc = Real(0);
                        for (int dy = 0; dy < k_; ++dy)
                            for (int dx = 0; dx < k_; ++dx)
                                acc += in.at4(b, c, oy * stride_ + dy, ox * stride_ + dx);
                        out.at4(b, c, oy, ox) = acc * inv;
                    }
        return out;
    }

    void begin_backward() override {}

    TensorT<Real> backward_step(const TensorT<Real>& grad_out, int) override {
        TensorT<Real> gin({batch_, channels_, in_h_, in_w_});
        const Real inv = Real(1) / static_cast<Real>(k_ * k_);
        for (int b = 0; b < batch_; ++b)
            for (int c = 0; c < channels_; ++c)
                for (int oy = 0; oy < out_h_; ++oy)
                    for (int ox = 0; ox < out_w_; ++ox) {
                        const Real g = grad_out.at4(b, c, oy, ox) * inv;
                        for (int dy = 0; dy < k_; ++dy)
                            for (int dx = 0; dx < k_; ++dx)
                                gin.at4(b, c, oy * stride_ + dy, ox * stride_ + dx) += g;
                    }
        return gin;
    }

    const std::vector<int>& out_shape() const override { return out_shape_; }

private:
    int channels_, in_h_, in_w_, k_, stride_;
    int out_h_, out_w_;
    int batch_ = 0;
    std::vector<int> out_shape_;
};

template <typename Real>
class FlattenT : public LayerT<Real> {
public:
    FlattenT(std::string name, std::vector<int> in_shape)
        : LayerT<Real>(std::move(name)), in_shape_(std::move(in_shape)) {
        int f = 1;
        for (int d : in_shape_) f *= d;
        out_shape_ = {f};
    }

    void begin_forward(int batch, int, RunMode, SpikeMode) override { batch_ = batch; }
    TensorT<Real> forward_step(const TensorT<Real>& in, int) override {
        return in.reshaped({batch_, out_shape_[0]});
    }
    void begin_backward() override {}
    TensorT<Real> backward_step(const TensorT<Real>& grad_out, int) override {
        std::vector<int> s;
        s.push_back(batch_);
        for (int d : in_shape_) s.push_back(d);
        return grad_out.reshaped(s);
    }
    const std::vector<int>& out_shape() const override { return out_shape_; }

private:
    std::vector<int> in_shape_;
    std::vector<int> out_shape_;
    int batch_ = 0;
};

// Two 3x3 convolutions with an identity (or 1x1-projection) skip that joins
// the second convolution's membrane drive before thresholding. The block is
// atomic: model splitting may not cut between its convolutions.
template <typename Real>
class ResBlockT : public LayerT<Real> {
public:
    ResBlockT(std::string name, int in_ch, int in_h, int in_w, int channels,
              int stride, bool skip, Activation act, const LifConfigT<Real>& lif)
        : LayerT<Real>(std::move(name)), skip_(skip), stride_(stride) {
        conv_a_ = std::make_unique<ConvLayerT<Real>>(
            this->name_ + ".conv_a", in_ch, in_h, in_w, channels, 3, 1, stride, act,
            lif);
        const auto& mid = conv_a_->out_shape();
        conv_b_ = std::make_unique<ConvLayerT<Real>>(
            this->name_ + ".conv_b", channels, mid[1], mid[2], channels, 3, 1, 1,
            act, lif);
        out_shape_ = conv_b_->out_shape();
        if (skip_ && (in_ch != channels || stride != 1)) {
            proj_ = std::make_unique<ConvLayerT<Real>>(
                this->name_ + ".proj", in_ch, in_h, in_w, channels, 1, 0, stride,
                Activation::none, lif, false);
        }
    }

    void begin_forward(int batch, int steps, RunMode mode, SpikeMode smode) override {
        conv_a_->begin_forward(batch, steps, mode, smode);
        conv_b_->begin_forward(batch, steps, mode, smode);
        if (proj_) proj_->begin_forward(batch, steps, mode, smode);
    }

    TensorT<Real> forward_step(const TensorT<Real>& in, int t) override {
        const TensorT<Real> mid = conv_a_->forward_step(in, t);
        if (!skip_) return conv_b_->forward_step(mid, t);
        const TensorT<Real> inject = proj_ ? proj_->forward_step(in, t) : in;
        return conv_b_->forward_step_injected(mid, inject, t);
    }

    void begin_backward() override {
        conv_a_->begin_backward();
        conv_b_->begin_backward();
        if (proj_) proj_->begin_backward();
    }

    TensorT<Real> backward_step(const TensorT<Real>& grad_out, int t) override {
        if (!skip_) return conv_a_->backward_step(conv_b_->backward_step(grad_out, t), t);
        auto [g_mid, g_inj] = conv_b_->backward_step_injected(grad_out, t);
        TensorT<Real> gin = conv_a_->backward_step(g_mid, t);
        if (proj_) {
            axpy_inplace(gin, proj_->backward_step(g_inj, t), Real(1));
        } else {
            axpy_inplace(gin, g_inj, Real(1));
        }
        return gin;
    }

    void collect_params(std::vector<ParamT<Real>*>& out) override {
        conv_a_->collect_params(out);
        conv_b_->collect_params(out);
        if (proj_) proj_->collect_params(out);
    }

    std::int64_t param_count() const override {
        return conv_a_->param_count() + conv_b_->param_count() +
               (proj_ ? proj_->param_count() : 0);
    }

    const std::vector<int>& out_shape() const override { return out_shape_; }

    void collect_ledger(std::vector<typename LayerT<Real>::LedgerUnit>& out,
                        const std::string& prefix) const override {
        conv_a_->collect_ledger(out, prefix);
        conv_b_->collect_ledger(out, prefix);
        if (proj_) proj_->collect_ledger(out, prefix);
    }
    void reset_spike_counters() override {
        conv_a_->reset_spike_counters();
        conv_b_->reset_spike_counters();
    }

    ConvLayerT<Real>& conv_a() { return *conv_a_; }
    ConvLayerT<Real>& conv_b() { return *conv_b_; }

private:
    bool skip_;
    int stride_;
    std::unique_ptr<ConvLayerT<Real>> conv_a_, conv_b_, proj_;
    std::vector<int> out_shape_;
};

// ---- loss ----------------------------------------------------------------------

template <typename Real>
struct LossResultT {
    Real loss;                // mean cross-entropy over the batch
    TensorT<Real> dlogits;    // gradient of the mean loss
};

template <typename Real>
LossResultT<Real> cross_entropy(const TensorT<Real>& logits,
                                const std::vector<int>& labels) {
    if (logits.rank() != 2)
        detail::fail("cross_entropy: logits must be [batch, classes]");
    const int batch = logits.dim(0), classes = logits.dim(1);
    if (static_cast<int>(labels.size()) != batch)
        detail::fail("cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch of " + std::to_string(batch));
    LossResultT<Real> r;
    r.dlogits = TensorT<Real>(logits.shape());
    double loss = 0.0;
    for (int b = 0; b < batch; ++b) {
        const int y = labels[static_cast<std::size_t>(b)];
        if (y < 0 || y >= classes)
            detail::fail("cross_entropy: label " + std::to_string(y) +
                         " outside [0, " + std::to_string(classes) + ")");
        Real mx = logits.at2(b, 0);
        for (int c = 1; c < classes; ++c) mx = std::max(mx, logits.at2(b, c));
        double denom = 0.0;
        for (int c = 0; c < classes; ++c)
            denom += std::exp(static_cast<double>(logits.at2(b, c) - mx));
        const double log_denom = std::log(denom);
        loss += log_denom - static_cast<double>(logits.at2(b, y) - mx);
        for (int c = 0; c < classes; ++c) {
            const double p =
                std::exp(static_cast<double>(logits.at2(b, c) - mx)) / denom;
            r.dlogits.at2(b, c) =
                static_cast<Real>((p - (c == y ? 1.0 : 0.0)) / batch);
        }
    }
    r.loss = static_cast<Real>(loss / batch);
    return r;
}

}  // namespace spikefed
