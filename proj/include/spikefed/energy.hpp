#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "spikefed/tensor.hpp"

namespace spikefed {

// Per-operation energy estimates in picojoules (32-bit arithmetic, 45 nm
// process). A multiply-accumulate costs one multiply plus one add; an
// accumulate-only op costs a single add.
struct EnergyConstants {
    double e_mult = 3.1;
    double e_add = 0.1;
    double e_mac = 3.2;
    double e_ac = 0.1;

    void validate() const {
        if (std::abs(e_mac - (e_mult + e_add)) > 1e-12 * std::abs(e_mac))
            detail::fail("energy: e_mac must equal e_mult + e_add");
        if (e_mult < 0 || e_add < 0 || e_ac < 0)
            detail::fail("energy: constants must be non-negative");
    }
};

// Multiply-accumulate positions of a conv layer on a square N_I x N_I input:
// M^2 * I * k^2 * O with M = floor((N_I - k + 2p)/s) + 1.
inline std::int64_t ops_conv(int n_i, int k, int pad, int stride, int in_ch,
                             int out_ch) {
    if (in_ch < 1 || out_ch < 1)
        detail::fail("ops_conv: channel counts must be positive");
    const std::int64_t m = conv_out_size(n_i, k, pad, stride);
    return m * m * in_ch * static_cast<std::int64_t>(k) * k * out_ch;
}

// Rectangular variant used for partitioned inputs; equals ops_conv when
// h == w.
inline std::int64_t ops_conv_rect(int h, int w, int k, int pad, int stride,
                                  int in_ch, int out_ch) {
    if (in_ch < 1 || out_ch < 1)
        detail::fail("ops_conv: channel counts must be positive");
    const std::int64_t mh = conv_out_size(h, k, pad, stride);
    const std::int64_t mw = conv_out_size(w, k, pad, stride);
    return mh * mw * in_ch * static_cast<std::int64_t>(k) * k * out_ch;
}

inline std::int64_t ops_fc(int in_features, int out_features) {
    if (in_features < 1 || out_features < 1)
        detail::fail("ops_fc: feature counts must be positive");
    return static_cast<std::int64_t>(in_features) * out_features;
}

inline double energy_ann(std::int64_t ops, const EnergyConstants& c = {}) {
    if (ops < 0) detail::fail("energy_ann: negative op count");
    return static_cast<double>(ops) * c.e_mac;
}

inline double energy_snn(std::int64_t ops, double rate, int steps,
                         const EnergyConstants& c = {}) {
    if (ops < 0) detail::fail("energy_snn: negative op count");
    if (rate < 0) detail::fail("energy_snn: spike rate must be >= 0");
    if (steps < 1) detail::fail("energy_snn: steps must be >= 1");
    return static_cast<double>(ops) * rate * steps * c.e_ac;
}

// One energy-ledger entry: operation count and spike statistics of one
// weighted layer over the samples seen this epoch.
struct LedgerRow {
    std::string layer_id;
    std::int64_t ops = 0;
    std::uint64_t spikes = 0;
    std::int64_t neurons = 0;
    std::int64_t samples = 0;
    double spike_rate = 0.0;  // spikes / (samples * neurons), in [0, steps]
    double e_ann_pj = 0.0;
    double e_snn_pj = 0.0;
};

inline LedgerRow ledger_row(std::string layer_id, std::int64_t ops,
                            std::uint64_t spikes, std::int64_t neurons,
                            std::int64_t samples, int steps,
                            const EnergyConstants& c) {
    LedgerRow r;
    r.layer_id = std::move(layer_id);
    r.ops = ops;
    r.spikes = spikes;
    r.neurons = neurons;
    r.samples = samples;
    r.spike_rate = (samples > 0 && neurons > 0)
                       ? static_cast<double>(spikes) /
                             (static_cast<double>(samples) * neurons)
                       : 0.0;
    if (r.spike_rate > static_cast<double>(steps))
        detail::fail("ledger: spike rate " + std::to_string(r.spike_rate) +
                     " exceeds the step count; counters are inconsistent");
    r.e_ann_pj = energy_ann(ops, c);
    r.e_snn_pj = energy_snn(ops, r.spike_rate, steps, c);
    return r;
}

}  // namespace spikefed
