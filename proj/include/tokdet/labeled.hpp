#pragma once

// Category-labeled geometry wrappers shared by the reward functions and the
// evaluation metrics.

#include <string>

#include "tokdet/geometry.hpp"

namespace tokdet {

struct LabeledBox {
    Box box;
    std::string category;
};

struct LabeledPoint {
    Point point;
    std::string category;
};

// Non-owning: the mask lives in the ground-truth set (or a test fixture).
struct LabeledMask {
    const Mask* mask = nullptr;
    std::string category;
};

} // namespace tokdet
