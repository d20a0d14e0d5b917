#include "vgpccm/series.hpp"

#include <cmath>
#include <numeric>

#include "vgpccm/errors.hpp"
#include "vgpccm/rng.hpp"

namespace vgpccm {

namespace {

void check_finite(const TimeSeries& s) {
    for (double v : s.values) {
        if (!std::isfinite(v)) {
            throw ValidationError("time series contains a non-finite value");
        }
    }
}

}  // namespace

TimeSeries standardize(const TimeSeries& series) {
    const std::size_t n = series.size();
    if (n < 2) {
        throw TooShortError("standardize requires at least 2 samples, got " +
                            std::to_string(n));
    }
    check_finite(series);

    const double mean =
        std::accumulate(series.values.begin(), series.values.end(), 0.0) /
        static_cast<double>(n);
    double var = 0.0;
    for (double v : series.values) {
        var += (v - mean) * (v - mean);
    }
    var /= static_cast<double>(n);  // population variance
    if (var <= 0.0) {
        throw ConstantSeriesError("cannot standardize a constant series");
    }

    const double inv_std = 1.0 / std::sqrt(var);
    TimeSeries out;
    out.values.reserve(n);
    for (double v : series.values) {
        out.values.push_back((v - mean) * inv_std);
    }
    return out;
}

EmbeddedSeries delay_embed(const TimeSeries& series, const EmbeddingConfig& cfg) {
    if (cfg.m < 0) {
        throw ValidationError("embedding dimension count m must be >= 0");
    }
    if (cfg.tau < 1) {
        throw ValidationError("embedding delay tau must be >= 1");
    }
    check_finite(series);

    const long n = static_cast<long>(series.size());
    const long start = static_cast<long>(cfg.tau) * cfg.m;
    const long d = n - start;
    if (d < 2) {
        throw InsufficientLengthError(
            "series of length " + std::to_string(n) + " yields " +
            std::to_string(d) + " embedding rows for m=" + std::to_string(cfg.m) +
            ", tau=" + std::to_string(cfg.tau) + "; need at least 2");
    }

    EmbeddedSeries out;
    out.config = cfg;
    out.source_length = n;
    out.start_index = start;
    out.rows.resize(d, cfg.dim());
    for (long r = 0; r < d; ++r) {
        const long i = start + r;
        for (int k = 0; k <= cfg.m; ++k) {
            out.rows(r, k) = series.values[static_cast<std::size_t>(i - static_cast<long>(cfg.tau) * k)];
        }
    }
    return out;
}

std::pair<EmbeddedSeries, EmbeddedSeries> align_pair(const EmbeddedSeries& a,
                                                     const EmbeddedSeries& b) {
    if (a.source_length != b.source_length) {
        throw IncompatibleLengthsError(
            "embeddings built from series of different lengths: " +
            std::to_string(a.source_length) + " vs " +
            std::to_string(b.source_length));
    }
    const long start = std::max(a.start_index, b.start_index);
    const long d = a.source_length - start;

    auto truncate = [&](const EmbeddedSeries& e) {
        EmbeddedSeries out = e;
        out.start_index = start;
        out.rows = e.rows.bottomRows(d).eval();
        return out;
    };
    return {truncate(a), truncate(b)};
}

TimeSeries permute_series(const TimeSeries& series, std::uint64_t seed) {
    TimeSeries out = series;
    Rng rng(seed);
    for (std::size_t i = out.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(out.values[i - 1], out.values[j]);
    }
    return out;
}

}  // namespace vgpccm
