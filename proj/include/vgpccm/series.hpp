#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace vgpccm {

// A scalar time series. Values are dimensionless after standardization.
struct TimeSeries {
    std::vector<double> values;

    TimeSeries() = default;
    explicit TimeSeries(std::vector<double> v) : values(std::move(v)) {}

    std::size_t size() const { return values.size(); }
    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }
};

// Delay-coordinate embedding parameters. The embedding vector has m+1
// coordinates; a series of length N yields d = N - tau*m rows.
struct EmbeddingConfig {
    int m = 3;
    int tau = 1;

    int dim() const { return m + 1; }
    long rows_for(long n) const { return n - static_cast<long>(tau) * m; }
};

// State-space reconstruction of a series: row r is
// (x_i, x_{i-tau}, ..., x_{i-m*tau}) with i = start_index + r.
struct EmbeddedSeries {
    Eigen::MatrixXd rows;    // d x (m+1), coordinates ordered current-to-oldest
    EmbeddingConfig config;
    long source_length = 0;  // N of the series this was built from
    long start_index = 0;    // earliest source index with a full lag history

    long count() const { return rows.rows(); }
    int dim() const { return static_cast<int>(rows.cols()); }
    // The current-value coordinate of every row, i.e. the tail of the source.
    Eigen::VectorXd current_values() const { return rows.col(0); }
};

// Rescales to empirical mean 0 and unit population (1/N) variance.
// Throws TooShortError for length < 2, ConstantSeriesError for zero variance.
TimeSeries standardize(const TimeSeries& series);

// Throws InsufficientLengthError when fewer than two embedding rows fit.
EmbeddedSeries delay_embed(const TimeSeries& series, const EmbeddingConfig& cfg);

// Truncates both embeddings to the common latest-index range so they share
// the same row count and time alignment. Requires equal source lengths.
std::pair<EmbeddedSeries, EmbeddedSeries> align_pair(const EmbeddedSeries& a,
                                                     const EmbeddedSeries& b);

// Seeded Fisher-Yates shuffle of the raw samples; preserves the multiset of
// values exactly and is deterministic given the seed.
TimeSeries permute_series(const TimeSeries& series, std::uint64_t seed);

}  // namespace vgpccm
