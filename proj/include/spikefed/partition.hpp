#pragma once

#include <string>
#include <vector>

#include "spikefed/tensor.hpp"

namespace spikefed {

struct Rect {
    int x0 = 0, y0 = 0, w = 0, h = 0;
};

enum class PartitionScheme { vertical_strips, left_right_halves, quadrants };

// Which pixel region of every image each client holds. Regions are disjoint
// and tile the full image; that invariant is checked at construction.
struct PartitionSpec {
    int clients = 1;
    PartitionScheme scheme = PartitionScheme::vertical_strips;
    std::vector<Rect> regions;

    static PartitionSpec make(PartitionScheme scheme, int clients, int image_h,
                              int image_w);

    void validate(int image_h, int image_w) const;
};

const char* scheme_name(PartitionScheme s);
PartitionScheme scheme_from_name(const std::string& name);

}  // namespace spikefed
