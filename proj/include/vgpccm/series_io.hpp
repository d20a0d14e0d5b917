#pragma once

#include <cstdint>
#include <string>

#include "vgpccm/series.hpp"
#include "vgpccm/simulate.hpp"

namespace vgpccm {

// Single-column CSV with header "value".
void write_series_csv(const std::string& path, const TimeSeries& series);
TimeSeries read_series_csv(const std::string& path);

// Plain JSON array of numbers.
void write_series_json(const std::string& path, const TimeSeries& series);
TimeSeries read_series_json(const std::string& path);

// One column per channel plus a metadata sidecar at <path>.meta.json
// carrying channel names, dt, seed and the config hash.
void write_realization_csv(const std::string& path, const Realization& realization);
Realization read_realization_csv(const std::string& path);

// FNV-1a over a canonical string; used to stamp configs into records.
std::uint64_t fnv1a64(const std::string& text);
std::string hash_hex(std::uint64_t h);

}  // namespace vgpccm
