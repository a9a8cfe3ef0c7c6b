#pragma once

#include <json.hpp>

#include <fstream>
#include <mutex>
#include <string>

namespace relforge {

// Append-only JSON-lines metrics log. Thread-safe; each record is flushed
// as one line. Non-finite numbers are replaced by null with a warning on
// stderr so the log stays machine-readable.
class MetricsWriter {
public:
    explicit MetricsWriter(const std::string& path);

    // Writes {"event": event, "wall_ms": ..., ...fields} as one line.
    void write(const std::string& event, nlohmann::json fields);

    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::ofstream out_;
    std::mutex mu_;
};

} // namespace relforge
