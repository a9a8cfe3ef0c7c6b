#include "relforge/metrics.hpp"

#include <chrono>
#include <cmath>
#include <iostream>
#include <stdexcept>

namespace relforge {

namespace {

void sanitize(nlohmann::json& j, const std::string& event, bool& warned) {
    if (j.is_number_float()) {
        const double v = j.get<double>();
        if (!std::isfinite(v)) {
            if (!warned) {
                std::cerr << "warning: non-finite metric in event '" << event
                          << "' written as null\n";
                warned = true;
            }
            j = nullptr;
        }
        return;
    }
    if (j.is_object() || j.is_array())
        for (auto& child : j) sanitize(child, event, warned);
}

} // namespace

MetricsWriter::MetricsWriter(const std::string& path) : path_(path), out_(path) {
    if (!out_) throw std::runtime_error("cannot open metrics log: " + path);
}

void MetricsWriter::write(const std::string& event, nlohmann::json fields) {
    const auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::system_clock::now().time_since_epoch())
                         .count();
    if (!fields.is_null() && !fields.is_object())
        throw std::invalid_argument("metric fields must be a JSON object");
    bool warned = false;
    sanitize(fields, event, warned);
    nlohmann::json record;
    record["event"] = event;
    record["wall_ms"] = now;
    if (fields.is_object())
        for (auto& [key, value] : fields.items()) record[key] = std::move(value);

    std::lock_guard<std::mutex> lock(mu_);
    out_ << record.dump() << '\n';
    out_.flush();
}

} // namespace relforge
