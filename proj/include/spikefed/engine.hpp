#pragma once

#include <cstdint>
#include <vector>

#include "spikefed/channel.hpp"
#include "spikefed/codec.hpp"
#include "spikefed/data.hpp"
#include "spikefed/energy.hpp"
#include "spikefed/metrics.hpp"
#include "spikefed/model.hpp"

namespace spikefed {

enum class Topology { split, no_split };

struct TrainConfig {
    int epochs = 1;
    int steps = 1;             // simulation horizon T
    float lr_bottom = 0.1f;    // client-side learning rate
    float lr_top = 0.1f;       // server-side learning rate (split mode)
    int batch = 32;
    float momentum = 0.95f;
    float weight_decay = 1e-4f;
    Topology topology = Topology::no_split;
    NetMode activation = NetMode::snn;
    float leak = 0.99f;
    std::uint64_t seed = 1;
    bool parallel_clients = false;
    SpikeMode spike_mode = SpikeMode::hard;

    void validate() const;
    LifConfig lif() const {
        LifConfig l;
        l.leak = leak;
        l.threshold = 1.0f;
        l.surrogate_width = 1.0f;
        l.steps = steps;
        return l;
    }
};

struct EpochReport {
    int epoch = 0;
    std::vector<float> batch_losses;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    MetricsReport test;
    std::vector<LedgerRow> energy;
};

// Client-side views plus the server-held labels. Only the server context
// ever touches `labels`.
struct PartitionedData {
    std::vector<VerticalView> views;
    const std::vector<int>* labels = nullptr;
    int n = 0;
    int classes = 0;
};

PartitionedData make_partitioned(const Dataset& ds, const PartitionSpec& spec);

// Orchestrates one experiment's training and evaluation over an in-process
// message channel. Client work within a batch may run in parallel; the
// server-side aggregation is the per-batch synchronization barrier, and all
// reductions run in ascending client order so results do not depend on
// scheduling.
class Engine {
public:
    explicit Engine(TrainConfig cfg, EnergyConstants energy = {});

    const TrainConfig& config() const { return cfg_; }
    MessageChannel& channel() { return channel_; }

    EpochReport train_epoch_nosplit(std::vector<Fragment>& clients,
                                    const PartitionedData& data, int epoch);
    EpochReport train_epoch_split(std::vector<Fragment>& bottoms, Fragment& top,
                                  const PartitionedData& data, int epoch);
    // Oracle path: plain single-model training with the client-0 encoding
    // streams, no message channel.
    EpochReport train_epoch_centralized(Fragment& model, const Dataset& data,
                                        int epoch);

    MetricsReport evaluate_nosplit(std::vector<Fragment>& clients,
                                   const PartitionedData& data, int epoch_tag);
    MetricsReport evaluate_split(std::vector<Fragment>& bottoms, Fragment& top,
                                 const PartitionedData& data, int epoch_tag);
    MetricsReport evaluate_centralized(Fragment& model, const Dataset& data,
                                       int epoch_tag);

private:
    std::vector<std::vector<int>> train_batches(int n, int epoch) const;
    std::vector<std::vector<int>> eval_batches(int n) const;
    RngStream encode_stream(std::uint64_t tag, int client, int epoch,
                            int batch) const;
    std::function<Tensor(int)> make_provider(Tensor pixels, RngStream enc) const;
    void for_each_client(int clients, const std::function<void(int)>& fn) const;

    TrainConfig cfg_;
    EnergyConstants energy_;
    MessageChannel channel_;
};

}  // namespace spikefed
