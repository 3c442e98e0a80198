#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace handy {

// Unscrambled Sobol' sequence (Joe-Kuo direction numbers, Gray-code order).
// The origin is skipped, so the first returned point is (0.5, ..., 0.5).
class SobolSequence {
public:
    static constexpr unsigned kBits = 32;
    static constexpr std::size_t kSkip = 1;

    explicit SobolSequence(std::size_t dim);

    static std::size_t max_dim();
    std::size_t dim() const { return dim_; }

    // next point in [0, 1)^dim
    std::vector<double> next();
    void next(double* out);

private:
    void advance();

    std::size_t dim_;
    std::uint64_t index_ = 0;  // index of the point held in x_
    std::vector<std::array<std::uint32_t, kBits>> v_;
    std::vector<std::uint32_t> x_;
};

}  // namespace handy
