#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vshm/error.hpp"

namespace vshm {

//! Uniformly sampled real-valued signal. The I/O currency of the whole toolkit.
struct TimeSeries {
    std::vector<double> samples;
    double sample_rate_hz = 0.0;
    double start_time_s = 0.0;

    std::size_t size() const { return samples.size(); }
    double dt() const { return 1.0 / sample_rate_hz; }
    double time_at(std::size_t k) const { return start_time_s + static_cast<double>(k) / sample_rate_hz; }

    void validate() const {
        require(!samples.empty(), "TimeSeries: samples must be non-empty");
        require(sample_rate_hz > 0.0, "TimeSeries: sample_rate_hz must be > 0");
        for (double v : samples)
            require(std::isfinite(v), "TimeSeries: all samples must be finite");
    }

    double mean_square() const {
        double acc = 0.0;
        for (double v : samples) acc += v * v;
        return acc / static_cast<double>(samples.size());
    }

    double rms() const { return std::sqrt(mean_square()); }
};

// CSV format shared by all commands: header `time_s,value`, one row per
// sample, '.' decimal separator, LF line endings. Values are written with
// 17 significant digits so a read-back reproduces the doubles bit-exactly.
inline void write_csv(const TimeSeries& ts, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "time_s,value\n";
    char buf[64];
    for (std::size_t k = 0; k < ts.samples.size(); ++k) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", ts.time_at(k), ts.samples[k]);
        out << buf;
    }
    if (!out) throw IoError("write failed: " + path.string());
}

inline TimeSeries read_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty CSV: " + path.string());

    TimeSeries ts;
    std::vector<double> times;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw IoError("malformed CSV row in " + path.string());
        times.push_back(std::stod(line.substr(0, comma)));
        ts.samples.push_back(std::stod(line.substr(comma + 1)));
    }
    if (times.size() < 2) throw IoError("CSV needs at least two rows: " + path.string());
    ts.start_time_s = times.front();
    ts.sample_rate_hz = 1.0 / ((times.back() - times.front()) / static_cast<double>(times.size() - 1));
    return ts;
}

} // namespace vshm
