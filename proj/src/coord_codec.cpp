#include "tokdet/coord_codec.hpp"

#include <cmath>
#include <string>

namespace tokdet {

namespace {

void require_valid_extent(double extent) {
    if (!(extent > 0.0) || !std::isfinite(extent)) {
        throw InvalidInputError("extent must be a finite positive number, got " +
                                std::to_string(extent));
    }
}

} // namespace

Bin::Bin(int value) : value_(value) {
    if (value < 0 || value >= kNumBins) {
        throw InvalidInputError("bin out of range [0, 1000): " + std::to_string(value));
    }
}

Bin quantize(double x, double extent) {
    require_valid_extent(extent);
    if (std::isnan(x)) {
        throw InvalidInputError("cannot quantize NaN coordinate");
    }
    double scaled = std::floor(x / extent * static_cast<double>(kNumBins));
    if (scaled < 0.0) return Bin(0);
    if (scaled > static_cast<double>(kNumBins - 1)) return Bin(kNumBins - 1);
    return Bin(static_cast<int>(scaled));
}

double dequantize(Bin bin, double extent) {
    require_valid_extent(extent);
    return (static_cast<double>(bin.value()) + 0.5) * extent /
           static_cast<double>(kNumBins);
}

VocabMap::VocabMap(std::int64_t vocab_size) : vocab_size_(vocab_size) {
    if (vocab_size < kNumBins) {
        throw InvalidInputError("vocab_size must be >= 1000 to hold the coordinate block, got " +
                                std::to_string(vocab_size));
    }
    coord_base_ = vocab_size_ - kNumBins;
}

Bin VocabMap::token_to_bin(std::int64_t token_id) const {
    if (!is_coordinate(token_id)) {
        throw NotACoordinateError("token id " + std::to_string(token_id) +
                                  " is outside the coordinate block [" +
                                  std::to_string(coord_base_) + ", " +
                                  std::to_string(vocab_size_) + ")");
    }
    return Bin(static_cast<int>(token_id - coord_base_));
}

std::optional<Bin> VocabMap::try_token_to_bin(std::int64_t token_id) const {
    if (!is_coordinate(token_id)) return std::nullopt;
    return Bin(static_cast<int>(token_id - coord_base_));
}

} // namespace tokdet
