#include "spikefed/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "spikefed/rng.hpp"

namespace spikefed {

Dataset load_cifar_binary(const std::string& path, CifarFormat format) {
    std::ifstream in(path, std::ios::binary);
    if (!in) detail::fail("cifar: cannot open '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    const std::size_t label_bytes = format == CifarFormat::cifar10 ? 1 : 2;
    const std::size_t record = label_bytes + 3072;
    if (bytes.size() % record != 0)
        detail::fail("cifar: '" + path + "' has " + std::to_string(bytes.size()) +
                     " bytes, not a multiple of the " + std::to_string(record) +
                     "-byte record; truncated file?");
    const std::size_t n = bytes.size() / record;

    Dataset ds;
    ds.classes = format == CifarFormat::cifar10 ? 10 : 100;
    if (n == 0) return ds;

    ds.images = Tensor({static_cast<int>(n), 3, 32, 32});
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* rec = bytes.data() + i * record;
        int label;
        if (format == CifarFormat::cifar10) {
            label = rec[0];
        } else {
            if (rec[0] >= 20)
                detail::fail("cifar: record " + std::to_string(i) +
                             " coarse label " + std::to_string(rec[0]) +
                             " out of range");
            label = rec[1];
        }
        if (label >= ds.classes)
            detail::fail("cifar: record " + std::to_string(i) + " label " +
                         std::to_string(label) + " out of range [0, " +
                         std::to_string(ds.classes) + ")");
        ds.labels[i] = label;
        float* dst = ds.images.data() + i * std::size_t(3072);
        const unsigned char* px = rec + label_bytes;
        for (std::size_t j = 0; j < 3072; ++j)
            dst[j] = static_cast<float>(px[j]) / 255.0f;
    }
    return ds;
}

Dataset synth_dataset(const SynthParams& p) {
    if (p.classes < 2) detail::fail("synth: need at least 2 classes");
    if (p.h < 4 || p.w < 4) detail::fail("synth: image too small");
    if (p.noise < 0.0f) detail::fail("synth: noise amplitude must be >= 0");

    // one grid cell per class; the class rectangle fills the cell interior
    int grid = 1;
    while (grid * grid < p.classes) ++grid;
    const int cell_h = p.h / grid, cell_w = p.w / grid;
    if (cell_h < 2 || cell_w < 2)
        detail::fail("synth: " + std::to_string(p.classes) +
                     " classes do not fit a " + std::to_string(p.h) + "x" +
                     std::to_string(p.w) + " image");

    Dataset ds;
    ds.classes = p.classes;
    ds.images = Tensor({p.n, 3, p.h, p.w});
    ds.labels.resize(static_cast<std::size_t>(p.n));
    const RngStream base = RngStream(p.seed).derive(stream_tag::synth);
    const float bg = 0.1f, fg = 0.9f;
    for (int i = 0; i < p.n; ++i) {
        const int c = i % p.classes;
        ds.labels[static_cast<std::size_t>(i)] = c;
        const int cy = (c / grid) * cell_h, cx = (c % grid) * cell_w;
        const RngStream s = base.derive(static_cast<std::uint64_t>(i));
        std::uint64_t counter = 0;
        for (int ch = 0; ch < 3; ++ch)
            for (int y = 0; y < p.h; ++y)
                for (int x = 0; x < p.w; ++x) {
                    const bool in_rect = y >= cy && y < cy + cell_h && x >= cx &&
                                         x < cx + cell_w;
                    float v = in_rect ? fg : bg;
                    if (p.noise > 0.0f) {
                        const float u = static_cast<float>(s.uniform(counter));
                        v += p.noise * (2.0f * u - 1.0f);
                    }
                    ++counter;
                    ds.images.at4(i, ch, y, x) = std::clamp(v, 0.0f, 1.0f);
                }
    }
    return ds;
}

Tensor VerticalView::gather(const std::vector<int>& indices) const {
    if (indices.empty()) detail::fail("view: empty index set");
    const int b = static_cast<int>(indices.size());
    const int c = images_->dim(1);
    Tensor out({b, c, region_.h, region_.w});
    for (int i = 0; i < b; ++i) {
        const int idx = indices[static_cast<std::size_t>(i)];
        if (idx < 0 || idx >= images_->dim(0))
            detail::fail("view: sample index " + std::to_string(idx) +
                         " out of range");
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < region_.h; ++y)
                for (int x = 0; x < region_.w; ++x)
                    out.at4(i, ch, y, x) =
                        images_->at4(idx, ch, region_.y0 + y, region_.x0 + x);
    }
    return out;
}

std::vector<VerticalView> partition(const Dataset& ds, const PartitionSpec& spec) {
    if (ds.n() == 0) detail::fail("partition: empty dataset");
    spec.validate(ds.height(), ds.width());
    std::vector<VerticalView> views;
    views.reserve(spec.regions.size());
    for (const Rect& r : spec.regions) views.emplace_back(ds, r);
    return views;
}

// ---- metrics CSV -------------------------------------------------------------

namespace {

std::string fmt_fixed6(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v,
                                   std::chars_format::fixed, 6);
    return std::string(buf, res.ptr);
}

template <typename T>
std::string fmt_opt_int(const std::optional<T>& v) {
    return v ? std::to_string(*v) : std::string();
}

std::string fmt_opt_real(const std::optional<double>& v) {
    return v ? fmt_fixed6(*v) : std::string();
}

}  // namespace

std::string metrics_csv_header() {
    return "epoch,split,accuracy,macro_precision,macro_recall,macro_f1,loss,"
           "layer_id,ops,spikes,neurons,samples,spike_rate,e_ann_pj,e_snn_pj";
}

std::string metrics_csv_string(const std::vector<MetricsRow>& rows) {
    std::string out = metrics_csv_header();
    out += '\n';
    for (const MetricsRow& r : rows) {
        out += std::to_string(r.epoch);
        out += ',';
        out += r.split;
        out += ',';
        out += fmt_opt_real(r.accuracy);
        out += ',';
        out += fmt_opt_real(r.macro_precision);
        out += ',';
        out += fmt_opt_real(r.macro_recall);
        out += ',';
        out += fmt_opt_real(r.macro_f1);
        out += ',';
        out += fmt_opt_real(r.loss);
        out += ',';
        out += r.layer_id ? *r.layer_id : std::string();
        out += ',';
        out += fmt_opt_int(r.ops);
        out += ',';
        out += fmt_opt_int(r.spikes);
        out += ',';
        out += fmt_opt_int(r.neurons);
        out += ',';
        out += fmt_opt_int(r.samples);
        out += ',';
        out += fmt_opt_real(r.spike_rate);
        out += ',';
        out += fmt_opt_real(r.e_ann_pj);
        out += ',';
        out += fmt_opt_real(r.e_snn_pj);
        out += '\n';
    }
    return out;
}

void write_metrics_csv(const std::vector<MetricsRow>& rows,
                       const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) detail::fail("metrics: cannot write '" + path + "'");
    out << metrics_csv_string(rows);
    if (!out) detail::fail("metrics: write to '" + path + "' failed");
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) detail::fail("metrics: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) detail::fail("metrics: empty file '" + path + "'");
    if (line != metrics_csv_header())
        detail::fail("metrics: unexpected header in '" + path + "'");

    auto split_fields = [](const std::string& s) {
        std::vector<std::string> f;
        std::string cur;
        for (char ch : s) {
            if (ch == ',') {
                f.push_back(cur);
                cur.clear();
            } else {
                cur += ch;
            }
        }
        f.push_back(cur);
        return f;
    };
    auto opt_real = [](const std::string& s) -> std::optional<double> {
        if (s.empty()) return std::nullopt;
        return std::stod(s);
    };

    std::vector<MetricsRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_fields(line);
        if (f.size() != 15)
            detail::fail("metrics: row with " + std::to_string(f.size()) +
                         " fields in '" + path + "'");
        MetricsRow r;
        r.epoch = std::stoi(f[0]);
        r.split = f[1];
        r.accuracy = opt_real(f[2]);
        r.macro_precision = opt_real(f[3]);
        r.macro_recall = opt_real(f[4]);
        r.macro_f1 = opt_real(f[5]);
        r.loss = opt_real(f[6]);
        if (!f[7].empty()) r.layer_id = f[7];
        if (!f[8].empty()) r.ops = std::stoll(f[8]);
        if (!f[9].empty()) r.spikes = std::stoull(f[9]);
        if (!f[10].empty()) r.neurons = std::stoll(f[10]);
        if (!f[11].empty()) r.samples = std::stoll(f[11]);
        r.spike_rate = opt_real(f[12]);
        r.e_ann_pj = opt_real(f[13]);
        r.e_snn_pj = opt_real(f[14]);
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace spikefed
