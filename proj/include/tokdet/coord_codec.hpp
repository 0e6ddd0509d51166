#pragma once

// Coordinate quantization and the mapping between quantized bins and the
// dedicated coordinate block at the end of a token vocabulary.
//
// A continuous coordinate x in [0, extent) maps to one of 1000 integer bins;
// decoding returns the bin center, so the worst-case round-trip error for an
// in-range coordinate is extent / 2000. The 1000 bins occupy the final 1000
// ids of the vocabulary: token_id = vocab_size - 1000 + bin.

#include <cstdint>
#include <optional>

#include "tokdet/errors.hpp"

namespace tokdet {

inline constexpr int kNumBins = 1000;

// A validated quantized coordinate in [0, 999].
class Bin {
public:
    // Throws InvalidInputError unless 0 <= value < 1000.
    explicit Bin(int value);

    int value() const { return value_; }

    friend bool operator==(Bin a, Bin b) { return a.value_ == b.value_; }
    friend bool operator!=(Bin a, Bin b) { return a.value_ != b.value_; }
    friend bool operator<(Bin a, Bin b) { return a.value_ < b.value_; }

private:
    int value_;
};

// Quantize a coordinate against an image extent (width or height).
//
// bin = clamp(floor(x / extent * 1000), 0, 999)
//
// Out-of-range x is clamped to the nearest edge bin rather than rejected:
// model-free callers feed raw detector output, and saturation is the
// fault-tolerant choice. extent must be strictly positive and finite.
Bin quantize(double x, double extent);

// Decode a bin back to continuous space as the bin's center:
// x = (bin + 0.5) * extent / 1000. extent must be strictly positive and finite.
double dequantize(Bin bin, double extent);

// The mapping between bins and the trailing coordinate block of a vocabulary.
class VocabMap {
public:
    // vocab_size must be at least 1000 so the coordinate block fits.
    explicit VocabMap(std::int64_t vocab_size);

    std::int64_t vocab_size() const { return vocab_size_; }

    // First token id of the coordinate block: vocab_size - 1000.
    std::int64_t coord_base() const { return coord_base_; }

    std::int64_t bin_to_token(Bin bin) const { return coord_base_ + bin.value(); }

    // Throws NotACoordinateError for ids outside the coordinate block.
    Bin token_to_bin(std::int64_t token_id) const;

    // Non-throwing variant for parser-side probing.
    std::optional<Bin> try_token_to_bin(std::int64_t token_id) const;

    bool is_coordinate(std::int64_t token_id) const {
        return token_id >= coord_base_ && token_id < vocab_size_;
    }

private:
    std::int64_t vocab_size_;
    std::int64_t coord_base_;
};

} // namespace tokdet
