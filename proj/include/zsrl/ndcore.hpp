#ifndef ZSRL_NDCORE_HPP
#define ZSRL_NDCORE_HPP

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace zsrl {

/// Dense row-major matrix of doubles. Every public op leaves the contents
/// finite; ops that could produce NaN/Inf validate and throw NumericError.
class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);

/// y = A x
std::vector<double> matvec(const Matrix& a, std::span<const double> x);

/// y = A^T x
std::vector<double> matvec_transposed(const Matrix& a, std::span<const double> x);

/// Numerically stable softmax (max subtraction). Throws ArgumentError on
/// empty input, NumericError on non-finite input.
std::vector<double> softmax(std::span<const double> v);

/// Squared L2 distance. The losses use squared distances throughout; no
/// square root is taken anywhere.
double sq_euclidean(std::span<const double> a, std::span<const double> b);

bool all_finite(std::span<const double> v);

/// Deterministic xoshiro256++ generator seeded through splitmix64.
/// Pure 64-bit integer arithmetic, so integer and uniform draws are
/// byte-identical across platforms for a given seed.
class Rng {
  public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64();

    /// Uniform in [0,1) with 53 random mantissa bits.
    double uniform();

    double uniform(double lo, double hi);

    /// Uniform integer in [0, n), unbiased via rejection. n must be > 0.
    std::uint64_t uniform_int(std::uint64_t n);

    /// Standard normal via the Marsaglia polar method (second value cached).
    double normal();

    void fill_normal(std::span<double> out, double mean = 0.0, double stddev = 1.0);

  private:
    std::uint64_t seed_ = 0;
    std::uint64_t state_[4] = {};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Stage seed derivation: FNV-1a of the tag folded into the base seed and
/// finished with a splitmix64 mix. Every stage of a run draws from its own
/// derived stream so stages stay independent under one top-level seed.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);

}  // namespace zsrl

#endif  // ZSRL_NDCORE_HPP
