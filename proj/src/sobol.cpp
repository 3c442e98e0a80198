#include "handy/sobol.hpp"

#include <bit>
#include <string>

#include "handy/errors.hpp"

namespace handy {

namespace {

struct SobolPolynomial {
    unsigned s;
    unsigned a;
    unsigned m[18];
};

#include "sobol_directions.inc"

}  // namespace

std::size_t SobolSequence::max_dim() { return kSobolTableDims; }

SobolSequence::SobolSequence(std::size_t dim) : dim_(dim), v_(dim), x_(dim, 0) {
    if (dim < 1 || dim > max_dim())
        throw ConfigurationError("Sobol dimension " + std::to_string(dim) + " unsupported (max " +
                                 std::to_string(max_dim()) + ")");
    for (unsigned k = 0; k < kBits; ++k) v_[0][k] = 1u << (kBits - 1 - k);
    for (std::size_t d = 1; d < dim; ++d) {
        const SobolPolynomial& p = kSobolPolynomials[d - 1];
        auto& v = v_[d];
        for (unsigned k = 0; k < p.s && k < kBits; ++k) v[k] = p.m[k] << (kBits - 1 - k);
        for (unsigned k = p.s; k < kBits; ++k) {
            std::uint32_t x = v[k - p.s] ^ (v[k - p.s] >> p.s);
            for (unsigned i = 1; i < p.s; ++i)
                if ((p.a >> (p.s - 1 - i)) & 1u) x ^= v[k - i];
            v[k] = x;
        }
    }
    for (std::size_t i = 0; i < kSkip; ++i) advance();
}

void SobolSequence::advance() {
    // position of the lowest zero bit of the current index
    const unsigned c = static_cast<unsigned>(std::countr_one(index_));
    if (c >= kBits) throw ConfigurationError("Sobol sequence exhausted");
    for (std::size_t d = 0; d < dim_; ++d) x_[d] ^= v_[d][c];
    ++index_;
}

void SobolSequence::next(double* out) {
    constexpr double scale = 1.0 / 4294967296.0;
    for (std::size_t d = 0; d < dim_; ++d) out[d] = static_cast<double>(x_[d]) * scale;
    advance();
}

std::vector<double> SobolSequence::next() {
    std::vector<double> p(dim_);
    next(p.data());
    return p;
}

}  // namespace handy
