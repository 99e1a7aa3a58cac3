#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spikefed/partition.hpp"
#include "spikefed/tensor.hpp"

namespace spikefed {

// Images in [0, 1] plus integer labels. Immutable after load.
struct Dataset {
    Tensor images;  // [N, 3, H, W]
    std::vector<int> labels;
    int classes = 0;

    int n() const { return static_cast<int>(labels.size()); }
    int channels() const { return images.empty() ? 0 : images.dim(1); }
    int height() const { return images.empty() ? 0 : images.dim(2); }
    int width() const { return images.empty() ? 0 : images.dim(3); }
};

enum class CifarFormat { cifar10, cifar100 };

// CIFAR binary layout: per record, 1 label byte (cifar10) or coarse+fine
// label bytes (cifar100, the fine label is used), then 3072 pixel bytes in
// channel-planar R,G,B order. Pixels are scaled to [0, 1] by /255.
Dataset load_cifar_binary(const std::string& path, CifarFormat format);

struct SynthParams {
    int n = 2000;
    int classes = 4;
    int h = 16, w = 16;
    float noise = 0.25f;
    std::uint64_t seed = 1;
};

// Class-conditional images: class c carries a bright rectangle at a
// class-specific grid cell over a dark background, plus uniform noise.
// Deterministic in the seed.
Dataset synth_dataset(const SynthParams& p);

// Read-only window onto one client's pixel region. Holds no reference to
// label data, so a view cannot leak labels by construction.
class VerticalView {
public:
    VerticalView(const Dataset& parent, Rect region)
        : images_(&parent.images), region_(region) {}

    int channels() const { return images_->dim(1); }
    int height() const { return region_.h; }
    int width() const { return region_.w; }
    const Rect& region() const { return region_; }

    // Crops the region for the given sample indices; [B, C, h, w].
    Tensor gather(const std::vector<int>& indices) const;

private:
    const Tensor* images_;
    Rect region_;
};

std::vector<VerticalView> partition(const Dataset& ds, const PartitionSpec& spec);

// ---- metrics CSV -------------------------------------------------------------

// One CSV row. Scope rows ("train"/"test") carry the metric columns; energy
// rows ("energy", one per layer per epoch) carry the ledger columns. Absent
// fields serialize as empty cells; reals use 6 fractional digits.
struct MetricsRow {
    int epoch = 0;
    std::string split;
    std::optional<double> accuracy, macro_precision, macro_recall, macro_f1, loss;
    std::optional<std::string> layer_id;
    std::optional<std::int64_t> ops;
    std::optional<std::uint64_t> spikes;
    std::optional<std::int64_t> neurons, samples;
    std::optional<double> spike_rate, e_ann_pj, e_snn_pj;
};

std::string metrics_csv_header();
std::string metrics_csv_string(const std::vector<MetricsRow>& rows);
void write_metrics_csv(const std::vector<MetricsRow>& rows,
                       const std::string& path);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

}  // namespace spikefed
