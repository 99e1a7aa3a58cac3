#pragma once

#include <cstdint>
#include <vector>

#include "spikefed/rng.hpp"
#include "spikefed/tensor.hpp"

namespace spikefed {

// Binary spike train over [steps, ...feature dims]. Elements are exactly
// 0.0 or 1.0.
template <typename Real>
struct SpikeTrainT {
    int steps = 0;
    TensorT<Real> values;
};

using SpikeTrain = SpikeTrainT<float>;

// One Bernoulli draw per element for a single time step: spike with
// probability equal to the intensity. The draw for element i uses counter i
// of `step_stream`, so results do not depend on evaluation order.
template <typename Real>
TensorT<Real> poisson_step(const TensorT<Real>& pixels, const RngStream& step_stream) {
    TensorT<Real> spikes(pixels.shape());
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const Real p = pixels[i];
        if (p < Real(0) || p > Real(1))
            detail::fail("poisson_encode: intensity " + std::to_string(static_cast<double>(p)) +
                         " at flat index " + std::to_string(i) +
                         " is outside [0, 1]; normalize inputs first");
        spikes[i] = step_stream.uniform(i) < static_cast<double>(p) ? Real(1) : Real(0);
    }
    return spikes;
}

// Rate coding: expected firing rate over the train equals the intensity.
// Step t of the train uses substream rng.derive(t).
template <typename Real>
SpikeTrainT<Real> poisson_encode(const TensorT<Real>& pixels, int steps,
                                 const RngStream& rng) {
    if (steps < 1) detail::fail("poisson_encode: steps must be >= 1");
    std::vector<int> shape;
    shape.push_back(steps);
    for (int d : pixels.shape()) shape.push_back(d);
    SpikeTrainT<Real> train;
    train.steps = steps;
    train.values = TensorT<Real>(shape);
    const std::size_t stride = pixels.size();
    for (int t = 1; t <= steps; ++t) {
        const TensorT<Real> s = poisson_step(pixels, rng.derive(static_cast<std::uint64_t>(t)));
        std::memcpy(train.values.data() + static_cast<std::size_t>(t - 1) * stride,
                    s.data(), stride * sizeof(Real));
    }
    return train;
}

template <typename Real>
struct DecodedT {
    TensorT<Real> rates;          // accumulated / steps, [B, C]
    std::vector<int> predictions; // argmax per row, lowest index wins ties
};

using Decoded = DecodedT<float>;

// Rate decoding of the accumulated output-layer potential.
template <typename Real>
DecodedT<Real> decode_rate(const TensorT<Real>& accumulated, int steps) {
    if (steps <= 0) detail::fail("decode_rate: steps must be positive");
    if (accumulated.rank() != 2)
        detail::fail("decode_rate: expected [batch, classes], got " +
                     detail::shape_str(accumulated.shape()));
    DecodedT<Real> out;
    out.rates = elementwise(EwOp::div, accumulated, static_cast<Real>(steps));
    const int batch = accumulated.dim(0), classes = accumulated.dim(1);
    out.predictions.resize(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) {
        int best = 0;
        for (int c = 1; c < classes; ++c)
            if (out.rates.at2(b, c) > out.rates.at2(b, best)) best = c;
        out.predictions[static_cast<std::size_t>(b)] = best;
    }
    return out;
}

}  // namespace spikefed
