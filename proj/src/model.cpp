#include "spikefed/model.hpp"

#include <cmath>

namespace spikefed {

namespace presets {

TopologySpec vgg_mini(int classes, int in_h, int in_w) {
    TopologySpec s;
    s.name = "vgg-mini";
    s.in_channels = 3;
    s.in_h = in_h;
    s.in_w = in_w;
    s.classes = classes;
    s.layers = {ConvSpec{16, 3, 1, 1}, PoolSpec{2, 2}, ConvSpec{32, 3, 1, 1},
                PoolSpec{2, 2},        ConvSpec{32, 3, 1, 1},
                LinearSpec{classes}};
    return s;
}

TopologySpec res_mini(int classes, int in_h, int in_w) {
    TopologySpec s;
    s.name = "res-mini";
    s.in_channels = 3;
    s.in_h = in_h;
    s.in_w = in_w;
    s.classes = classes;
    s.layers = {ResBlockSpec{16, true, 1}, PoolSpec{2, 2},
                ResBlockSpec{32, true, 1}, PoolSpec{2, 2}, LinearSpec{classes}};
    return s;
}

TopologySpec vgg9(int classes, int in_h, int in_w) {
    TopologySpec s;
    s.name = "vgg9";
    s.in_channels = 3;
    s.in_h = in_h;
    s.in_w = in_w;
    s.classes = classes;
    s.layers = {ConvSpec{64, 3, 1, 1},  ConvSpec{64, 3, 1, 1},  PoolSpec{2, 2},
                ConvSpec{128, 3, 1, 1}, ConvSpec{128, 3, 1, 1}, PoolSpec{2, 2},
                ConvSpec{256, 3, 1, 1}, ConvSpec{256, 3, 1, 1},
                ConvSpec{256, 3, 1, 1}, PoolSpec{2, 2},
                LinearSpec{1024},       LinearSpec{classes}};
    return s;
}

TopologySpec resnet18(int classes, int in_h, int in_w) {
    TopologySpec s;
    s.name = "resnet18";
    s.in_channels = 3;
    s.in_h = in_h;
    s.in_w = in_w;
    s.classes = classes;
    s.layers = {ConvSpec{64, 3, 1, 1},
                ResBlockSpec{64, true, 1},  ResBlockSpec{64, true, 1},
                ResBlockSpec{128, true, 2}, ResBlockSpec{128, true, 1},
                ResBlockSpec{256, true, 2}, ResBlockSpec{256, true, 1},
                ResBlockSpec{512, true, 2}, ResBlockSpec{512, true, 1},
                PoolSpec{4, 4},             LinearSpec{classes}};
    return s;
}

TopologySpec by_name(const std::string& name, int classes, int in_h, int in_w) {
    if (name == "vgg-mini") return vgg_mini(classes, in_h, in_w);
    if (name == "res-mini") return res_mini(classes, in_h, in_w);
    if (name == "vgg9") return vgg9(classes, in_h, in_w);
    if (name == "resnet18") return resnet18(classes, in_h, in_w);
    detail::fail("model: unknown preset '" + name + "'");
}

}  // namespace presets

namespace {

void init_kaiming_uniform(ParamT<float>& w, int fan_in, const RngStream& stream) {
    const double bound = std::sqrt(6.0 / fan_in);
    for (std::size_t i = 0; i < w.value.size(); ++i)
        w.value[i] =
            static_cast<float>((2.0 * stream.uniform(i) - 1.0) * bound);
}

struct Builder {
    const TopologySpec& spec;
    NetMode mode;
    LifConfig lif;
    RngStream init_stream;  // derived per fragment

    std::vector<std::unique_ptr<LayerT<float>>> layers;
    std::vector<int> shape;  // per-sample shape in flight
    int conv_n = 0, pool_n = 0, fc_n = 0, block_n = 0;
    int weighted_ordinal = 0;

    Activation hidden_act() const {
        return mode == NetMode::snn ? Activation::lif : Activation::relu;
    }

    void require_spatial(std::size_t idx, const char* what) const {
        if (shape.size() != 3)
            detail::fail(spec.name + ": layer " + std::to_string(idx) + " (" + what +
                         ") needs a [channels, height, width] input but gets " +
                         detail::shape_str(shape));
    }

    void add_conv(std::size_t idx, const ConvSpec& c) {
        require_spatial(idx, "conv");
        if (c.k > shape[1] + 2 * c.pad || c.k > shape[2] + 2 * c.pad)
            detail::fail(spec.name + ": layer " + std::to_string(idx) +
                         " (conv): kernel " + std::to_string(c.k) +
                         " exceeds padded input " + detail::shape_str(shape));
        auto layer = std::make_unique<ConvLayerT<float>>(
            "conv" + std::to_string(++conv_n), shape[0], shape[1], shape[2],
            c.out_channels, c.k, c.pad, c.stride, hidden_act(), lif);
        init_kaiming_uniform(layer->weight(), shape[0] * c.k * c.k,
                             init_stream.derive(++weighted_ordinal));
        shape = layer->out_shape();
        layers.push_back(std::move(layer));
    }

    void add_pool(std::size_t idx, const PoolSpec& p) {
        require_spatial(idx, "pool");
        if (p.k > shape[1] || p.k > shape[2])
            detail::fail(spec.name + ": layer " + std::to_string(idx) +
                         " (pool): window " + std::to_string(p.k) +
                         " exceeds input " + detail::shape_str(shape));
        auto layer = std::make_unique<AvgPoolT<float>>(
            "pool" + std::to_string(++pool_n), shape[0], shape[1], shape[2], p.k,
            p.stride);
        shape = layer->out_shape();
        layers.push_back(std::move(layer));
    }

    void add_block(std::size_t idx, const ResBlockSpec& r) {
        require_spatial(idx, "residual-block");
        auto layer = std::make_unique<ResBlockT<float>>(
            "block" + std::to_string(++block_n), shape[0], shape[1], shape[2],
            r.channels, r.stride, r.skip, hidden_act(), lif);
        const RngStream s = init_stream.derive(++weighted_ordinal);
        init_kaiming_uniform(layer->conv_a().weight(), shape[0] * 9, s.derive(1));
        ++weighted_ordinal;
        init_kaiming_uniform(layer->conv_b().weight(), r.channels * 9, s.derive(2));
        if (r.skip && (shape[0] != r.channels || r.stride != 1)) {
            // projection weight lives inside the block
            std::vector<ParamT<float>*> ps;
            layer->collect_params(ps);
            init_kaiming_uniform(*ps.back(), shape[0], s.derive(3));
        }
        shape = layer->out_shape();
        layers.push_back(std::move(layer));
    }

    void flatten_if_needed() {
        if (shape.size() == 3) {
            auto layer = std::make_unique<FlattenT<float>>("flatten", shape);
            shape = layer->out_shape();
            layers.push_back(std::move(layer));
        }
    }

    void add_linear(std::size_t idx, const LinearSpec& l, bool is_output_head) {
        flatten_if_needed();
        if (shape.size() != 1)
            detail::fail(spec.name + ": layer " + std::to_string(idx) +
                         " (linear): unexpected input " + detail::shape_str(shape));
        const Activation act = is_output_head ? Activation::none : hidden_act();
        auto layer = std::make_unique<LinearLayerT<float>>(
            is_output_head ? "out" : "fc" + std::to_string(++fc_n), shape[0],
            l.out_features, act, lif);
        init_kaiming_uniform(layer->weight(), shape[0],
                             init_stream.derive(++weighted_ordinal));
        shape = layer->out_shape();
        layers.push_back(std::move(layer));
    }
};

void validate_spec(const TopologySpec& spec) {
    if (spec.layers.empty()) detail::fail(spec.name + ": empty topology");
    if (!std::holds_alternative<LinearSpec>(spec.layers.back()))
        detail::fail(spec.name +
                     ": the final layer must be the linear output head");
    if (std::get<LinearSpec>(spec.layers.back()).out_features != spec.classes)
        detail::fail(spec.name + ": output head has " +
                     std::to_string(std::get<LinearSpec>(spec.layers.back()).out_features) +
                     " units but the topology declares " +
                     std::to_string(spec.classes) + " classes");
    if (spec.classes < 2) detail::fail(spec.name + ": need at least 2 classes");
    if (spec.in_h < 1 || spec.in_w < 1 || spec.in_channels < 1)
        detail::fail(spec.name + ": invalid input dimensions");
}

Fragment build_range(const TopologySpec& spec, std::size_t from, std::size_t to,
                     int in_c, int in_h, int in_w, NetMode mode,
                     const LifConfig& lif, const RngStream& init_stream,
                     const std::string& frag_name, bool with_head,
                     bool append_flatten) {
    Builder b{spec, mode, lif, init_stream};
    b.shape = {in_c, in_h, in_w};
    for (std::size_t i = from; i < to; ++i) {
        const LayerSpec& ls = spec.layers[i];
        const bool is_head = with_head && i + 1 == to;
        if (std::holds_alternative<ConvSpec>(ls))
            b.add_conv(i, std::get<ConvSpec>(ls));
        else if (std::holds_alternative<PoolSpec>(ls))
            b.add_pool(i, std::get<PoolSpec>(ls));
        else if (std::holds_alternative<ResBlockSpec>(ls))
            b.add_block(i, std::get<ResBlockSpec>(ls));
        else
            b.add_linear(i, std::get<LinearSpec>(ls), is_head);
    }
    if (append_flatten) b.flatten_if_needed();
    if (b.shape.size() != 1)
        detail::fail(spec.name + ": fragment '" + frag_name +
                     "' does not end in a flat output");
    Fragment f;
    f.name = frag_name;
    f.layers = std::move(b.layers);
    f.input_shape = {in_c, in_h, in_w};
    f.output_width = b.shape[0];
    f.steps = lif.steps;
    return f;
}

}  // namespace

Fragment build_model(const TopologySpec& spec, NetMode mode, const LifConfig& lif,
                     std::uint64_t seed) {
    validate_spec(spec);
    lif.validate();
    const RngStream s = RngStream(seed).derive(stream_tag::init).derive(0);
    return build_range(spec, 0, spec.layers.size(), spec.in_channels, spec.in_h,
                       spec.in_w, mode, lif, s, "model", true, false);
}

int weighted_layer_count(const TopologySpec& spec) {
    int n = 0;
    for (const auto& l : spec.layers) {
        if (std::holds_alternative<ConvSpec>(l) ||
            std::holds_alternative<LinearSpec>(l))
            ++n;
        else if (std::holds_alternative<ResBlockSpec>(l))
            n += 2;
    }
    return n;
}

int default_cut_layer(const TopologySpec& spec) {
    int n = 0, last_spatial = 0;
    for (const auto& l : spec.layers) {
        if (std::holds_alternative<ConvSpec>(l)) last_spatial = ++n;
        else if (std::holds_alternative<ResBlockSpec>(l)) last_spatial = (n += 2);
        else if (std::holds_alternative<LinearSpec>(l)) ++n;
    }
    return last_spatial;
}

SplitModel split_model(const TopologySpec& spec, int cut_layer,
                       const PartitionSpec& partition, NetMode mode,
                       const LifConfig& lif, std::uint64_t seed) {
    validate_spec(spec);
    const int total = weighted_layer_count(spec);
    if (cut_layer < 1 || cut_layer >= total)
        detail::fail(spec.name + ": cut layer " + std::to_string(cut_layer) +
                     " outside [1, " + std::to_string(total - 1) + "]");

    // Find the descriptor boundary for the cut; residual blocks are atomic.
    std::size_t boundary = 0;
    int seen = 0;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        int w = 0;
        if (std::holds_alternative<ConvSpec>(l) ||
            std::holds_alternative<LinearSpec>(l))
            w = 1;
        else if (std::holds_alternative<ResBlockSpec>(l))
            w = 2;
        if (w == 2 && seen < cut_layer && cut_layer < seen + 2)
            detail::fail(spec.name + ": cut layer " + std::to_string(cut_layer) +
                         " falls inside a residual block; blocks are atomic");
        seen += w;
        if (w > 0 && seen == cut_layer) {
            boundary = i + 1;
            // trailing pools stay with the bottoms
            while (boundary < spec.layers.size() &&
                   std::holds_alternative<PoolSpec>(spec.layers[boundary]))
                ++boundary;
            break;
        }
        if (seen > cut_layer) break;
    }
    if (boundary == 0 || boundary >= spec.layers.size())
        detail::fail(spec.name + ": cut layer " + std::to_string(cut_layer) +
                     " leaves no top model");
    for (std::size_t i = boundary; i < spec.layers.size(); ++i)
        if (!std::holds_alternative<LinearSpec>(spec.layers[i]))
            detail::fail(spec.name +
                         ": the top model must consist of linear layers (it "
                         "consumes the flat concatenation of bottom outputs); "
                         "move the cut after the last spatial layer");

    SplitModel out;
    out.cut_layer = cut_layer;
    const RngStream base = RngStream(seed).derive(stream_tag::init);
    int concat_width = 0;
    for (int k = 0; k < partition.clients; ++k) {
        const Rect& r = partition.regions[static_cast<std::size_t>(k)];
        Fragment bottom = build_range(
            spec, 0, boundary, spec.in_channels, r.h, r.w, mode, lif,
            base.derive(100 + static_cast<std::uint64_t>(k)),
            "client" + std::to_string(k), false, true);
        concat_width += bottom.output_width;
        out.bottom_widths.push_back(bottom.output_width);
        out.bottoms.push_back(std::move(bottom));
    }

    // top model: linear stack over the concatenated width
    {
        Builder b{spec, mode, lif, base.derive(999)};
        b.shape = {concat_width};
        for (std::size_t i = boundary; i < spec.layers.size(); ++i)
            b.add_linear(i, std::get<LinearSpec>(spec.layers[i]),
                         i + 1 == spec.layers.size());
        Fragment top;
        top.name = "top";
        top.layers = std::move(b.layers);
        top.input_shape = {concat_width};
        top.output_width = spec.classes;
        top.steps = lif.steps;
        out.top = std::move(top);
    }
    return out;
}

}  // namespace spikefed
