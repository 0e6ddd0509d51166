#pragma once

// Shared helpers for the test binaries: a tiny deterministic RNG that does
// not depend on implementation-defined standard-library distributions, a
// random record generator, and slow-but-obviously-correct reference
// implementations (scanline rasterizer, exhaustive assignment search) used
// as oracles against the library's fast paths.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tokdet/geometry.hpp"
#include "tokdet/labeled.hpp"
#include "tokdet/seq_format.hpp"

namespace testutil {

// splitmix64: tiny, seedable, identical everywhere.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [lo, hi] inclusive.
    int next_int(int lo, int hi) {
        return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

private:
    std::uint64_t state_;
};

inline tokdet::Box random_box(Rng& rng, double extent = 1000.0) {
    double x0 = rng.uniform(0.0, extent * 0.9);
    double y0 = rng.uniform(0.0, extent * 0.9);
    double w = rng.uniform(1.0, extent - x0);
    double h = rng.uniform(1.0, extent - y0);
    return tokdet::Box{x0, y0, x0 + w, y0 + h};
}

inline std::string random_phrase(Rng& rng) {
    static const char* kPhrases[] = {"ant",  "bee",   "cat",    "dog",   "elk",
                                     "fox",  "gnu",   "hen",    "ibex",  "jay",
                                     "red car", "blue mug", "tall lamp", "old book", "wet leaf"};
    return kPhrases[rng.next_int(0, 14)];
}

// A structurally valid record of the requested kind with random bins.
inline tokdet::PredictionRecord random_record(Rng& rng, tokdet::PayloadKind kind) {
    tokdet::PredictionRecord rec;
    rec.phrase = random_phrase(rng);
    rec.kind = kind;
    auto bin = [&] { return tokdet::Bin(rng.next_int(0, 999)); };
    switch (kind) {
    case tokdet::PayloadKind::Box: {
        if (rng.next_int(0, 9) == 0) {
            rec.absent = true;
            break;
        }
        int groups = rng.next_int(1, 4);
        for (int g = 0; g < groups; ++g) {
            tokdet::QuantGeometry geom;
            for (int i = 0; i < 4; ++i) geom.bins.push_back(bin());
            rec.geometries.push_back(std::move(geom));
        }
        break;
    }
    case tokdet::PayloadKind::Point: {
        if (rng.next_int(0, 9) == 0) {
            rec.absent = true;
            break;
        }
        int groups = rng.next_int(1, 5);
        for (int g = 0; g < groups; ++g) {
            tokdet::QuantGeometry geom;
            geom.bins.push_back(bin());
            geom.bins.push_back(bin());
            rec.geometries.push_back(std::move(geom));
        }
        break;
    }
    case tokdet::PayloadKind::Polygon: {
        tokdet::QuantGeometry geom;
        int pairs = rng.next_int(4, 10);
        for (int i = 0; i < 2 * pairs; ++i) geom.bins.push_back(bin());
        rec.geometries.push_back(std::move(geom));
        break;
    }
    case tokdet::PayloadKind::KeypointJson: {
        tokdet::QuantGeometry geom;
        for (int i = 0; i < 4; ++i) geom.bins.push_back(bin());
        rec.geometries.push_back(std::move(geom));
        static const char* kJoints[] = {"nose", "eye", "ear", "paw", "tail"};
        int n = rng.next_int(1, 5);
        for (int i = 0; i < n; ++i) {
            rec.keypoints.push_back(tokdet::NamedKeypoint{kJoints[i], bin(), bin()});
        }
        break;
    }
    }
    return rec;
}

// Reference rasterizer: even-odd scanline fill evaluated at pixel centers,
// written directly from the crossing-parity definition.
inline tokdet::Mask scanline_rasterize(const tokdet::Polygon& poly, int width, int height) {
    tokdet::Mask mask(width, height);
    if (poly.size() < 3) return mask;
    for (int iy = 0; iy < height; ++iy) {
        double py = iy + 0.5;
        // Crossing x-positions of every edge with this scanline.
        std::vector<double> xs;
        for (std::size_t i = 0; i < poly.size(); ++i) {
            const tokdet::Point& a = poly[i];
            const tokdet::Point& b = poly[(i + 1) % poly.size()];
            if ((a.y > py) == (b.y > py)) continue;
            xs.push_back(a.x + (py - a.y) / (b.y - a.y) * (b.x - a.x));
        }
        std::sort(xs.begin(), xs.end());
        // Between the (2k)-th and (2k+1)-th crossings the parity is odd.
        for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
            for (int ix = 0; ix < width; ++ix) {
                double px = ix + 0.5;
                if (px > xs[k] && px < xs[k + 1]) mask.set(ix, iy, true);
            }
        }
    }
    return mask;
}

// Exhaustive maximum-total-weight one-to-one assignment for small problems.
// Recursion over rows; each row either stays unassigned or takes any free
// column. Returns the best achievable credit sum.
inline double brute_force_assignment(const std::vector<std::vector<double>>& weights) {
    std::size_t rows = weights.size();
    std::size_t cols = rows == 0 ? 0 : weights[0].size();
    std::vector<bool> used(cols, false);
    double best = 0.0;
    auto rec = [&](auto&& self, std::size_t row, double acc) -> void {
        if (row == rows) {
            best = std::max(best, acc);
            return;
        }
        self(self, row + 1, acc); // leave this row unmatched
        for (std::size_t c = 0; c < cols; ++c) {
            if (used[c]) continue;
            used[c] = true;
            self(self, row + 1, acc + weights[row][c]);
            used[c] = false;
        }
    };
    rec(rec, 0, 0.0);
    return best;
}

} // namespace testutil
