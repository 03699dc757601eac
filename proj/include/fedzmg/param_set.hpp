#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace fedzmg {

enum class SegmentKind { Matrix, Bias };

// One contiguous segment of a flattened parameter vector. Matrix segments are
// stored row-major with rows indexing the input dimension, so column j of an
// in_dim x out_dim weight holds entries offset + i * out_dim + j.
struct LayerLayout {
    SegmentKind kind = SegmentKind::Bias;
    std::size_t in_dim = 0;   // rows (matrix only)
    std::size_t out_dim = 0;  // columns (matrix), or bias length
    std::size_t offset = 0;
    std::size_t length = 0;

    static LayerLayout matrix(std::size_t in_dim, std::size_t out_dim, std::size_t offset);
    static LayerLayout bias(std::size_t dim, std::size_t offset);

    bool is_matrix() const noexcept { return kind == SegmentKind::Matrix; }

    friend bool operator==(const LayerLayout&, const LayerLayout&) = default;
};

// Flat model parameters plus their segment layout. Also used as the gradient
// and momentum container, so everything that touches weights shares one shape
// contract.
class ParamSet {
public:
    ParamSet() = default;
    ParamSet(std::vector<double> values, std::vector<LayerLayout> layouts);

    // Zero-filled parameters for the given layout.
    static ParamSet zeros_like(const std::vector<LayerLayout>& layouts);
    static ParamSet zeros_like(const ParamSet& other) { return zeros_like(other.layouts_); }

    std::size_t size() const noexcept { return values_.size(); }
    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }
    const std::vector<double>& data() const noexcept { return values_; }
    const std::vector<LayerLayout>& layouts() const noexcept { return layouts_; }

    std::span<double> segment(std::size_t i) noexcept;
    std::span<const double> segment(std::size_t i) const noexcept;

    double& operator[](std::size_t i) noexcept { return values_[i]; }
    double operator[](std::size_t i) const noexcept { return values_[i]; }

    bool same_shape(const ParamSet& other) const noexcept { return layouts_ == other.layouts_; }

    // Throws LayoutError if the layouts are not contiguous or do not cover
    // the storage exactly.
    void validate() const;
    // Throws NumericError on the first NaN/Inf entry.
    void require_finite(const char* what) const;

    // FNV-1a over the raw IEEE bytes; used for checksums in round logs.
    std::uint64_t checksum() const noexcept;

    friend bool operator==(const ParamSet&, const ParamSet&) = default;

private:
    std::vector<double> values_;
    std::vector<LayerLayout> layouts_;
};

void require_same_shape(const ParamSet& a, const ParamSet& b, const char* what);

double squared_norm(std::span<const double> v) noexcept;
double squared_distance(std::span<const double> a, std::span<const double> b);

std::uint64_t fnv1a(const void* data, std::size_t bytes,
                    std::uint64_t seed = 0xcbf29ce484222325ULL) noexcept;

}  // namespace fedzmg
