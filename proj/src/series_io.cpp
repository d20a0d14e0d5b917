#include "vgpccm/series_io.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "vgpccm/errors.hpp"

namespace vgpccm {

namespace {

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError("cannot open " + path);
    }
    return in;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write " + path);
    }
    out << std::setprecision(17);
    return out;
}

double parse_number(const std::string& token, const std::string& path, long line) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(token, &pos);
        while (pos < token.size() && std::isspace(static_cast<unsigned char>(token[pos]))) {
            ++pos;
        }
        if (pos != token.size()) {
            throw std::invalid_argument(token);
        }
        return v;
    } catch (const std::exception&) {
        throw ParseError(path + ":" + std::to_string(line) + ": not a number: '" +
                         token + "'");
    }
}

}  // namespace

void write_series_csv(const std::string& path, const TimeSeries& series) {
    auto out = open_out(path);
    out << "value\n";
    for (double v : series.values) {
        out << v << '\n';
    }
}

TimeSeries read_series_csv(const std::string& path) {
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line) || line.find("value") == std::string::npos) {
        throw ParseError(path + ": expected a 'value' header row");
    }
    TimeSeries series;
    long line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        series.values.push_back(parse_number(line, path, line_no));
    }
    return series;
}

void write_series_json(const std::string& path, const TimeSeries& series) {
    nlohmann::json j = series.values;
    open_out(path) << j.dump() << '\n';
}

TimeSeries read_series_json(const std::string& path) {
    nlohmann::json j;
    try {
        open_in(path) >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    if (!j.is_array()) {
        throw ParseError(path + ": expected a JSON array of numbers");
    }
    TimeSeries series;
    for (const auto& v : j) {
        if (!v.is_number()) {
            throw ParseError(path + ": non-numeric array element");
        }
        series.values.push_back(v.get<double>());
    }
    return series;
}

void write_realization_csv(const std::string& path, const Realization& realization) {
    auto out = open_out(path);
    for (std::size_t c = 0; c < realization.channel_names.size(); ++c) {
        out << (c ? "," : "") << realization.channel_names[c];
    }
    out << '\n';
    for (long r = 0; r < realization.channels.rows(); ++r) {
        for (long c = 0; c < realization.channels.cols(); ++c) {
            out << (c ? "," : "") << realization.channels(r, c);
        }
        out << '\n';
    }

    nlohmann::ordered_json meta;
    meta["channels"] = realization.channel_names;
    meta["dt_out"] = realization.dt_out;
    meta["seed"] = realization.seed;
    meta["config_hash"] = hash_hex(realization.config_hash);
    open_out(path + ".meta.json") << meta.dump(2) << '\n';
}

Realization read_realization_csv(const std::string& path) {
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line)) {
        throw ParseError(path + ": empty file");
    }
    Realization out;
    {
        std::stringstream header(line);
        std::string name;
        while (std::getline(header, name, ',')) {
            out.channel_names.push_back(name);
        }
    }
    const long cols = static_cast<long>(out.channel_names.size());
    if (cols == 0) {
        throw ParseError(path + ": no channels in header");
    }

    std::vector<double> flat;
    long line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream row(line);
        std::string token;
        long c = 0;
        while (std::getline(row, token, ',')) {
            flat.push_back(parse_number(token, path, line_no));
            ++c;
        }
        if (c != cols) {
            throw ParseError(path + ":" + std::to_string(line_no) +
                             ": expected " + std::to_string(cols) + " columns");
        }
    }
    const long rows = static_cast<long>(flat.size()) / cols;
    out.channels.resize(rows, cols);
    for (long r = 0; r < rows; ++r) {
        for (long c = 0; c < cols; ++c) {
            out.channels(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
        }
    }

    std::ifstream meta_in(path + ".meta.json");
    if (meta_in) {
        nlohmann::json meta;
        try {
            meta_in >> meta;
            out.dt_out = meta.value("dt_out", 0.0);
            out.seed = meta.value("seed", std::uint64_t{0});
            if (meta.contains("config_hash")) {
                out.config_hash =
                    std::stoull(meta["config_hash"].get<std::string>(), nullptr, 16);
            }
        } catch (const std::exception& e) {
            throw ParseError(path + ".meta.json: " + e.what());
        }
    }
    return out;
}

std::uint64_t fnv1a64(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hash_hex(std::uint64_t h) {
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << h;
    return out.str();
}

}  // namespace vgpccm
