#include "spikefed/partition.hpp"

#include <algorithm>

namespace spikefed {

const char* scheme_name(PartitionScheme s) {
    switch (s) {
        case PartitionScheme::vertical_strips: return "vertical-strips";
        case PartitionScheme::left_right_halves: return "left-right-halves";
        case PartitionScheme::quadrants: return "quadrants";
    }
    return "?";
}

PartitionScheme scheme_from_name(const std::string& name) {
    if (name == "vertical-strips") return PartitionScheme::vertical_strips;
    if (name == "left-right-halves") return PartitionScheme::left_right_halves;
    if (name == "quadrants") return PartitionScheme::quadrants;
    detail::fail("partition: unknown scheme '" + name + "'");
}

PartitionSpec PartitionSpec::make(PartitionScheme scheme, int clients,
                                  int image_h, int image_w) {
    PartitionSpec spec;
    spec.scheme = scheme;
    spec.clients = clients;
    if (clients < 1) detail::fail("partition: client count must be >= 1");
    switch (scheme) {
        case PartitionScheme::left_right_halves:
            if (clients != 2)
                detail::fail("partition: left-right-halves requires exactly 2 "
                             "clients, got " + std::to_string(clients));
            [[fallthrough]];
        case PartitionScheme::vertical_strips: {
            if (image_w % clients != 0)
                detail::fail("partition: image width " + std::to_string(image_w) +
                             " is not divisible by " + std::to_string(clients) +
                             " clients");
            const int sw = image_w / clients;
            for (int k = 0; k < clients; ++k)
                spec.regions.push_back({k * sw, 0, sw, image_h});
            break;
        }
        case PartitionScheme::quadrants: {
            if (clients != 4)
                detail::fail("partition: quadrants requires exactly 4 clients, got " +
                             std::to_string(clients));
            if (image_w % 2 != 0 || image_h % 2 != 0)
                detail::fail("partition: quadrants requires even image dimensions");
            const int hw = image_w / 2, hh = image_h / 2;
            spec.regions.push_back({0, 0, hw, hh});
            spec.regions.push_back({hw, 0, hw, hh});
            spec.regions.push_back({0, hh, hw, hh});
            spec.regions.push_back({hw, hh, hw, hh});
            break;
        }
    }
    spec.validate(image_h, image_w);
    return spec;
}

void PartitionSpec::validate(int image_h, int image_w) const {
    if (static_cast<int>(regions.size()) != clients)
        detail::fail("partition: " + std::to_string(regions.size()) +
                     " regions for " + std::to_string(clients) + " clients");
    // disjoint and covering: every pixel claimed exactly once
    std::vector<int> owner(static_cast<std::size_t>(image_h) * image_w, -1);
    for (std::size_t k = 0; k < regions.size(); ++k) {
        const Rect& r = regions[k];
        if (r.x0 < 0 || r.y0 < 0 || r.w <= 0 || r.h <= 0 ||
            r.x0 + r.w > image_w || r.y0 + r.h > image_h)
            detail::fail("partition: region " + std::to_string(k) +
                         " does not fit a " + std::to_string(image_h) + "x" +
                         std::to_string(image_w) + " image");
        for (int y = r.y0; y < r.y0 + r.h; ++y)
            for (int x = r.x0; x < r.x0 + r.w; ++x) {
                int& o = owner[static_cast<std::size_t>(y) * image_w + x];
                if (o != -1)
                    detail::fail("partition: regions " + std::to_string(o) + " and " +
                                 std::to_string(k) + " overlap at pixel (" +
                                 std::to_string(x) + ", " + std::to_string(y) + ")");
                o = static_cast<int>(k);
            }
    }
    if (std::any_of(owner.begin(), owner.end(), [](int o) { return o == -1; }))
        detail::fail("partition: regions do not cover the full image");
}

}  // namespace spikefed
