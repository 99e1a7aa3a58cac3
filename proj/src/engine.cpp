#include "spikefed/engine.hpp"

#include <future>
#include <numeric>

namespace spikefed {

void TrainConfig::validate() const {
    if (epochs < 1) detail::fail("config: epochs must be >= 1");
    if (steps < 1) detail::fail("config: steps must be >= 1");
    if (!(lr_bottom > 0)) detail::fail("config: bottom learning rate must be > 0");
    if (!(lr_top > 0)) detail::fail("config: top learning rate must be > 0");
    if (batch < 1) detail::fail("config: batch size must be >= 1");
    if (momentum < 0 || momentum >= 1) detail::fail("config: momentum must be in [0, 1)");
    if (weight_decay < 0) detail::fail("config: weight decay must be >= 0");
    if (leak < 0 || leak > 1) detail::fail("config: leak factor must be in [0, 1]");
    if (activation == NetMode::ann && steps != 1)
        detail::fail("config: ann mode runs a single step; set steps to 1");
}

PartitionedData make_partitioned(const Dataset& ds, const PartitionSpec& spec) {
    PartitionedData pd;
    pd.views = partition(ds, spec);
    pd.labels = &ds.labels;
    pd.n = ds.n();
    pd.classes = ds.classes;
    return pd;
}

Engine::Engine(TrainConfig cfg, EnergyConstants energy)
    : cfg_(cfg), energy_(energy) {
    cfg_.validate();
    energy_.validate();
}

std::vector<std::vector<int>> Engine::train_batches(int n, int epoch) const {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    const RngStream s = RngStream(cfg_.seed)
                            .derive(stream_tag::shuffle)
                            .derive(static_cast<std::uint64_t>(epoch));
    std::uint64_t counter = 0;
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(s.below(counter++, static_cast<std::uint64_t>(i) + 1));
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    // full batches only; per-step batch statistics need a fixed batch size
    const int nb = n / cfg_.batch;
    std::vector<std::vector<int>> batches;
    batches.reserve(static_cast<std::size_t>(nb));
    for (int b = 0; b < nb; ++b)
        batches.emplace_back(order.begin() + static_cast<long>(b) * cfg_.batch,
                             order.begin() + static_cast<long>(b + 1) * cfg_.batch);
    return batches;
}

std::vector<std::vector<int>> Engine::eval_batches(int n) const {
    std::vector<std::vector<int>> batches;
    for (int start = 0; start < n; start += cfg_.batch) {
        const int stop = std::min(n, start + cfg_.batch);
        std::vector<int> idx(static_cast<std::size_t>(stop - start));
        std::iota(idx.begin(), idx.end(), start);
        batches.push_back(std::move(idx));
    }
    return batches;
}

RngStream Engine::encode_stream(std::uint64_t tag, int client, int epoch,
                                int batch) const {
    return RngStream(cfg_.seed)
        .derive(tag)
        .derive(static_cast<std::uint64_t>(client))
        .derive(static_cast<std::uint64_t>(epoch))
        .derive(static_cast<std::uint64_t>(batch));
}

std::function<Tensor(int)> Engine::make_provider(Tensor pixels,
                                                 RngStream enc) const {
    if (cfg_.activation == NetMode::ann)
        return [px = std::move(pixels)](int) { return px; };
    return [px = std::move(pixels), enc](int t) {
        return poisson_step(px, enc.derive(static_cast<std::uint64_t>(t)));
    };
}

void Engine::for_each_client(int clients,
                             const std::function<void(int)>& fn) const {
    if (!cfg_.parallel_clients || clients == 1) {
        for (int k = 0; k < clients; ++k) fn(k);
        return;
    }
    std::vector<std::future<void>> futures;
    futures.reserve(static_cast<std::size_t>(clients));
    for (int k = 0; k < clients; ++k)
        futures.push_back(std::async(std::launch::async, [&fn, k] { fn(k); }));
    for (auto& f : futures) f.get();
}

namespace {

std::vector<int> gather_labels(const std::vector<int>& labels,
                               const std::vector<int>& idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(labels[static_cast<std::size_t>(i)]);
    return out;
}

Tensor gather_full(const Dataset& ds, const std::vector<int>& idx) {
    const VerticalView full(ds, Rect{0, 0, ds.width(), ds.height()});
    return full.gather(idx);
}

void append_energy(std::vector<LedgerRow>& rows, const Fragment& frag,
                   std::int64_t samples, int steps, const EnergyConstants& c) {
    for (const auto& u : frag.ledger_units())
        rows.push_back(ledger_row(u.id, u.ops, u.spikes, u.neurons, samples,
                                  steps, c));
}

}  // namespace

EpochReport Engine::train_epoch_nosplit(std::vector<Fragment>& clients,
                                        const PartitionedData& data, int epoch) {
    const int K = static_cast<int>(clients.size());
    if (K != static_cast<int>(data.views.size()))
        detail::fail("engine: " + std::to_string(K) + " client models for " +
                     std::to_string(data.views.size()) + " views");
    for (auto& c : clients) {
        if (c.steps != cfg_.steps)
            detail::fail("engine: fragment '" + c.name + "' configured for " +
                         std::to_string(c.steps) + " steps, config says " +
                         std::to_string(cfg_.steps));
        c.reset_spike_counters();
    }

    EpochReport report;
    report.epoch = epoch;
    const auto batches = train_batches(data.n, epoch);
    std::int64_t correct = 0, seen = 0;
    double loss_sum = 0.0;

    for (int b = 0; b < static_cast<int>(batches.size()); ++b) {
        const std::vector<int>& idx = batches[static_cast<std::size_t>(b)];
        const std::vector<int> labels_b = gather_labels(*data.labels, idx);

        // client forward passes, possibly in parallel
        std::vector<Tensor> outs(static_cast<std::size_t>(K));
        for_each_client(K, [&](int k) {
            const Tensor region = data.views[static_cast<std::size_t>(k)].gather(idx);
            const auto provider =
                make_provider(region, encode_stream(stream_tag::encode, k, epoch, b));
            outs[static_cast<std::size_t>(k)] = clients[static_cast<std::size_t>(k)]
                                                    .forward(provider, RunMode::train,
                                                             cfg_.spike_mode);
        });
        for (int k = 0; k < K; ++k)
            channel_.send_output({k, b, std::move(outs[static_cast<std::size_t>(k)])});

        // server: aggregate by summation, loss on rate-decoded logits
        auto msgs = channel_.collect_outputs(b, K);
        for (int k = 0; k < K; ++k) {
            const Tensor& o = msgs[static_cast<std::size_t>(k)].output;
            if (o.dim(1) != clients[static_cast<std::size_t>(k)].output_width)
                detail::fail("engine: client " + std::to_string(k) + " output width " +
                             std::to_string(o.dim(1)) + " does not match declared " +
                             std::to_string(clients[static_cast<std::size_t>(k)].output_width));
        }
        Tensor o_sum({static_cast<int>(idx.size()), data.classes});
        for (int k = 0; k < K; ++k)
            axpy_inplace(o_sum, msgs[static_cast<std::size_t>(k)].output, 1.0f);
        const Tensor logits = scale(o_sum, 1.0f / static_cast<float>(cfg_.steps));
        const auto lr = cross_entropy(logits, labels_b);
        report.batch_losses.push_back(lr.loss);
        loss_sum += lr.loss;

        // the sum rule makes every client's gradient identical
        const Tensor g = scale(lr.dlogits, 1.0f / static_cast<float>(cfg_.steps));
        for (int k = 0; k < K; ++k) channel_.send_gradient({k, b, g});

        std::vector<GradientMessage> grads;
        grads.reserve(static_cast<std::size_t>(K));
        for (int k = 0; k < K; ++k) grads.push_back(channel_.take_gradient(k, b));
        for_each_client(K, [&](int k) {
            Fragment& c = clients[static_cast<std::size_t>(k)];
            c.zero_grads();
            c.backward(grads[static_cast<std::size_t>(k)].grad);
            c.apply_sgd(cfg_.lr_bottom, cfg_.momentum, cfg_.weight_decay);
        });

        const auto decoded = decode_rate(o_sum, cfg_.steps);
        for (std::size_t i = 0; i < labels_b.size(); ++i)
            if (decoded.predictions[i] == labels_b[i]) ++correct;
        seen += static_cast<std::int64_t>(labels_b.size());
    }

    report.train_loss = batches.empty() ? 0.0 : loss_sum / batches.size();
    report.train_accuracy = seen ? static_cast<double>(correct) / seen : 0.0;
    for (const auto& c : clients)
        append_energy(report.energy, c, seen, cfg_.steps, energy_);
    return report;
}

EpochReport Engine::train_epoch_split(std::vector<Fragment>& bottoms,
                                      Fragment& top, const PartitionedData& data,
                                      int epoch) {
    const int K = static_cast<int>(bottoms.size());
    if (K != static_cast<int>(data.views.size()))
        detail::fail("engine: " + std::to_string(K) + " bottom models for " +
                     std::to_string(data.views.size()) + " views");
    for (auto& c : bottoms) c.reset_spike_counters();
    top.reset_spike_counters();

    EpochReport report;
    report.epoch = epoch;
    const auto batches = train_batches(data.n, epoch);
    std::int64_t correct = 0, seen = 0;
    double loss_sum = 0.0;
    const float inv_t = 1.0f / static_cast<float>(cfg_.steps);

    for (int b = 0; b < static_cast<int>(batches.size()); ++b) {
        const std::vector<int>& idx = batches[static_cast<std::size_t>(b)];
        const std::vector<int> labels_b = gather_labels(*data.labels, idx);
        const int B = static_cast<int>(idx.size());

        std::vector<Tensor> outs(static_cast<std::size_t>(K));
        for_each_client(K, [&](int k) {
            const Tensor region = data.views[static_cast<std::size_t>(k)].gather(idx);
            const auto provider =
                make_provider(region, encode_stream(stream_tag::encode, k, epoch, b));
            outs[static_cast<std::size_t>(k)] = bottoms[static_cast<std::size_t>(k)]
                                                    .forward(provider, RunMode::train,
                                                             cfg_.spike_mode);
        });
        for (int k = 0; k < K; ++k)
            channel_.send_output({k, b, std::move(outs[static_cast<std::size_t>(k)])});

        // server: concatenate bottom outputs along the feature axis
        auto msgs = channel_.collect_outputs(b, K);
        int concat_width = 0;
        for (int k = 0; k < K; ++k) {
            const Tensor& o = msgs[static_cast<std::size_t>(k)].output;
            if (o.dim(1) != bottoms[static_cast<std::size_t>(k)].output_width)
                detail::fail("engine: client " + std::to_string(k) + " output width " +
                             std::to_string(o.dim(1)) + " does not match declared " +
                             std::to_string(bottoms[static_cast<std::size_t>(k)].output_width));
            concat_width += o.dim(1);
        }
        Tensor o_all({B, concat_width});
        for (int i = 0; i < B; ++i) {
            int off = 0;
            for (int k = 0; k < K; ++k) {
                const Tensor& o = msgs[static_cast<std::size_t>(k)].output;
                for (int j = 0; j < o.dim(1); ++j) o_all.at2(i, off + j) = o.at2(i, j);
                off += o.dim(1);
            }
        }

        // the top model is unrolled over the same horizon; each step replays
        // the rate-normalized concatenation
        const Tensor replay = scale(o_all, inv_t);
        const Tensor acc_top =
            top.forward([&replay](int) { return replay; }, RunMode::train,
                        cfg_.spike_mode);
        const Tensor logits = scale(acc_top, inv_t);
        const auto lr = cross_entropy(logits, labels_b);
        report.batch_losses.push_back(lr.loss);
        loss_sum += lr.loss;

        top.zero_grads();
        const Tensor dreplay = top.backward(scale(lr.dlogits, inv_t));
        top.apply_sgd(cfg_.lr_top, cfg_.momentum, cfg_.weight_decay);

        // fan-out: slice d loss / d concat at the bottom-output boundaries
        const Tensor d_o_all = scale(dreplay, inv_t);
        int off = 0;
        for (int k = 0; k < K; ++k) {
            const int w = bottoms[static_cast<std::size_t>(k)].output_width;
            Tensor gk({B, w});
            for (int i = 0; i < B; ++i)
                for (int j = 0; j < w; ++j) gk.at2(i, j) = d_o_all.at2(i, off + j);
            off += w;
            channel_.send_gradient({k, b, std::move(gk)});
        }

        std::vector<GradientMessage> grads;
        grads.reserve(static_cast<std::size_t>(K));
        for (int k = 0; k < K; ++k) grads.push_back(channel_.take_gradient(k, b));
        for_each_client(K, [&](int k) {
            Fragment& c = bottoms[static_cast<std::size_t>(k)];
            c.zero_grads();
            c.backward(grads[static_cast<std::size_t>(k)].grad);
            c.apply_sgd(cfg_.lr_bottom, cfg_.momentum, cfg_.weight_decay);
        });

        const auto decoded = decode_rate(acc_top, cfg_.steps);
        for (std::size_t i = 0; i < labels_b.size(); ++i)
            if (decoded.predictions[i] == labels_b[i]) ++correct;
        seen += static_cast<std::int64_t>(labels_b.size());
    }

    report.train_loss = batches.empty() ? 0.0 : loss_sum / batches.size();
    report.train_accuracy = seen ? static_cast<double>(correct) / seen : 0.0;
    for (const auto& c : bottoms)
        append_energy(report.energy, c, seen, cfg_.steps, energy_);
    append_energy(report.energy, top, seen, cfg_.steps, energy_);
    return report;
}

EpochReport Engine::train_epoch_centralized(Fragment& model, const Dataset& data,
                                            int epoch) {
    model.reset_spike_counters();
    EpochReport report;
    report.epoch = epoch;
    const auto batches = train_batches(data.n(), epoch);
    std::int64_t correct = 0, seen = 0;
    double loss_sum = 0.0;

    for (int b = 0; b < static_cast<int>(batches.size()); ++b) {
        const std::vector<int>& idx = batches[static_cast<std::size_t>(b)];
        const std::vector<int> labels_b = gather_labels(data.labels, idx);
        const Tensor pixels = gather_full(data, idx);
        const auto provider =
            make_provider(pixels, encode_stream(stream_tag::encode, 0, epoch, b));
        const Tensor acc = model.forward(provider, RunMode::train, cfg_.spike_mode);
        const Tensor logits = scale(acc, 1.0f / static_cast<float>(cfg_.steps));
        const auto lr = cross_entropy(logits, labels_b);
        report.batch_losses.push_back(lr.loss);
        loss_sum += lr.loss;

        model.zero_grads();
        model.backward(scale(lr.dlogits, 1.0f / static_cast<float>(cfg_.steps)));
        model.apply_sgd(cfg_.lr_bottom, cfg_.momentum, cfg_.weight_decay);

        const auto decoded = decode_rate(acc, cfg_.steps);
        for (std::size_t i = 0; i < labels_b.size(); ++i)
            if (decoded.predictions[i] == labels_b[i]) ++correct;
        seen += static_cast<std::int64_t>(labels_b.size());
    }

    report.train_loss = batches.empty() ? 0.0 : loss_sum / batches.size();
    report.train_accuracy = seen ? static_cast<double>(correct) / seen : 0.0;
    append_energy(report.energy, model, seen, cfg_.steps, energy_);
    return report;
}

MetricsReport Engine::evaluate_nosplit(std::vector<Fragment>& clients,
                                       const PartitionedData& data,
                                       int epoch_tag) {
    if (data.n == 0) detail::fail("evaluate: empty dataset");
    const int K = static_cast<int>(clients.size());
    std::vector<int> preds, labels;
    double loss_sum = 0.0;
    const auto batches = eval_batches(data.n);
    for (int b = 0; b < static_cast<int>(batches.size()); ++b) {
        const std::vector<int>& idx = batches[static_cast<std::size_t>(b)];
        std::vector<Tensor> outs(static_cast<std::size_t>(K));
        for_each_client(K, [&](int k) {
            const Tensor region = data.views[static_cast<std::size_t>(k)].gather(idx);
            const auto provider = make_provider(
                region, encode_stream(stream_tag::eval, k, epoch_tag, b));
            outs[static_cast<std::size_t>(k)] = clients[static_cast<std::size_t>(k)]
                                                    .forward(provider, RunMode::eval,
                                                             SpikeMode::hard);
        });
        for (int k = 0; k < K; ++k)
            channel_.send_output({k, b, std::move(outs[static_cast<std::size_t>(k)])});
        auto msgs = channel_.collect_outputs(b, K);
        Tensor o_sum({static_cast<int>(idx.size()), data.classes});
        for (int k = 0; k < K; ++k)
            axpy_inplace(o_sum, msgs[static_cast<std::size_t>(k)].output, 1.0f);
        const auto decoded = decode_rate(o_sum, cfg_.steps);
        const std::vector<int> labels_b = gather_labels(*data.labels, idx);
        loss_sum += static_cast<double>(cross_entropy(decoded.rates, labels_b).loss) *
                    static_cast<double>(idx.size());
        preds.insert(preds.end(), decoded.predictions.begin(),
                     decoded.predictions.end());
        labels.insert(labels.end(), labels_b.begin(), labels_b.end());
    }
    MetricsReport r = compute_metrics(preds, labels, data.classes);
    r.loss = loss_sum / data.n;
    return r;
}

MetricsReport Engine::evaluate_split(std::vector<Fragment>& bottoms, Fragment& top,
                                     const PartitionedData& data, int epoch_tag) {
    if (data.n == 0) detail::fail("evaluate: empty dataset");
    const int K = static_cast<int>(bottoms.size());
    const float inv_t = 1.0f / static_cast<float>(cfg_.steps);
    std::vector<int> preds, labels;
    double loss_sum = 0.0;
    const auto batches = eval_batches(data.n);
    for (int b = 0; b < static_cast<int>(batches.size()); ++b) {
        const std::vector<int>& idx = batches[static_cast<std::size_t>(b)];
        const int B = static_cast<int>(idx.size());
        std::vector<Tensor> outs(static_cast<std::size_t>(K));
        for_each_client(K, [&](int k) {
            const Tensor region = data.views[static_cast<std::size_t>(k)].gather(idx);
            const auto provider = make_provider(
                region, encode_stream(stream_tag::eval, k, epoch_tag, b));
            outs[static_cast<std::size_t>(k)] = bottoms[static_cast<std::size_t>(k)]
                                                    .forward(provider, RunMode::eval,
                                                             SpikeMode::hard);
        });
        for (int k = 0; k < K; ++k)
            channel_.send_output({k, b, std::move(outs[static_cast<std::size_t>(k)])});
        auto msgs = channel_.collect_outputs(b, K);
        int concat_width = 0;
        for (int k = 0; k < K; ++k)
            concat_width += msgs[static_cast<std::size_t>(k)].output.dim(1);
        Tensor o_all({B, concat_width});
        for (int i = 0; i < B; ++i) {
            int off = 0;
            for (int k = 0; k < K; ++k) {
                const Tensor& o = msgs[static_cast<std::size_t>(k)].output;
                for (int j = 0; j < o.dim(1); ++j) o_all.at2(i, off + j) = o.at2(i, j);
                off += o.dim(1);
            }
        }
        const Tensor replay = scale(o_all, inv_t);
        const Tensor acc_top = top.forward([&replay](int) { return replay; },
                                           RunMode::eval, SpikeMode::hard);
        const auto decoded = decode_rate(acc_top, cfg_.steps);
        const std::vector<int> labels_b = gather_labels(*data.labels, idx);
        loss_sum += static_cast<double>(cross_entropy(decoded.rates, labels_b).loss) *
                    static_cast<double>(idx.size());
        preds.insert(preds.end(), decoded.predictions.begin(),
                     decoded.predictions.end());
        labels.insert(labels.end(), labels_b.begin(), labels_b.end());
    }
    MetricsReport r = compute_metrics(preds, labels, data.classes);
    r.loss = loss_sum / data.n;
    return r;
}

MetricsReport Engine::evaluate_centralized(Fragment& model, const Dataset& data,
                                           int epoch_tag) {
    if (data.n() == 0) detail::fail("evaluate: empty dataset");
    std::vector<int> preds, labels;
    double loss_sum = 0.0;
    const auto batches = eval_batches(data.n());
    for (int b = 0; b < static_cast<int>(batches.size()); ++b) {
        const std::vector<int>& idx = batches[static_cast<std::size_t>(b)];
        const Tensor pixels = gather_full(data, idx);
        const auto provider =
            make_provider(pixels, encode_stream(stream_tag::eval, 0, epoch_tag, b));
        const Tensor acc = model.forward(provider, RunMode::eval, SpikeMode::hard);
        const auto decoded = decode_rate(acc, cfg_.steps);
        const std::vector<int> labels_b = gather_labels(data.labels, idx);
        loss_sum += static_cast<double>(cross_entropy(decoded.rates, labels_b).loss) *
                    static_cast<double>(idx.size());
        preds.insert(preds.end(), decoded.predictions.begin(),
                     decoded.predictions.end());
        labels.insert(labels.end(), labels_b.begin(), labels_b.end());
    }
    MetricsReport r = compute_metrics(preds, labels, data.classes);
    r.loss = loss_sum / data.n();
    return r;
}

}  // namespace spikefed
