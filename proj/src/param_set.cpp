#include "fedzmg/param_set.hpp"

#include <cmath>
#include <string>

#include "fedzmg/errors.hpp"

namespace fedzmg {

LayerLayout LayerLayout::matrix(std::size_t in_dim, std::size_t out_dim, std::size_t offset) {
    if (in_dim == 0 || out_dim == 0) throw DimensionError("matrix segment with zero dimension");
    return {SegmentKind::Matrix, in_dim, out_dim, offset, in_dim * out_dim};
}

LayerLayout LayerLayout::bias(std::size_t dim, std::size_t offset) {
    if (dim == 0) throw DimensionError("bias segment with zero dimension");
    return {SegmentKind::Bias, 0, dim, offset, dim};
}

ParamSet::ParamSet(std::vector<double> values, std::vector<LayerLayout> layouts)
    : values_(std::move(values)), layouts_(std::move(layouts)) {
    validate();
}

ParamSet ParamSet::zeros_like(const std::vector<LayerLayout>& layouts) {
    std::size_t total = 0;
    for (const auto& l : layouts) total += l.length;
    return ParamSet(std::vector<double>(total, 0.0), layouts);
}

std::span<double> ParamSet::segment(std::size_t i) noexcept {
    const auto& l = layouts_[i];
    return std::span<double>(values_).subspan(l.offset, l.length);
}

std::span<const double> ParamSet::segment(std::size_t i) const noexcept {
    const auto& l = layouts_[i];
    return std::span<const double>(values_).subspan(l.offset, l.length);
}

void ParamSet::validate() const {
    std::size_t expected_offset = 0;
    for (std::size_t i = 0; i < layouts_.size(); ++i) {
        const auto& l = layouts_[i];
        const std::size_t want = l.is_matrix() ? l.in_dim * l.out_dim : l.out_dim;
        if (l.length != want || l.length == 0) {
            throw LayoutError("segment " + std::to_string(i) + " has inconsistent length");
        }
        if (l.offset != expected_offset) {
            throw LayoutError("segment " + std::to_string(i) + " is not contiguous");
        }
        expected_offset += l.length;
    }
    if (expected_offset != values_.size()) {
        throw LayoutError("layouts cover " + std::to_string(expected_offset) + " values but storage holds " +
                          std::to_string(values_.size()));
    }
}

void ParamSet::require_finite(const char* what) const {
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (!std::isfinite(values_[i])) {
            throw NumericError(std::string(what) + ": non-finite entry at index " + std::to_string(i));
        }
    }
}

std::uint64_t ParamSet::checksum() const noexcept {
    return fnv1a(values_.data(), values_.size() * sizeof(double));
}

void require_same_shape(const ParamSet& a, const ParamSet& b, const char* what) {
    if (!a.same_shape(b)) throw LayoutError(std::string(what) + ": parameter layouts differ");
}

double squared_norm(std::span<const double> v) noexcept {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("squared_distance: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t seed) noexcept {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace fedzmg
