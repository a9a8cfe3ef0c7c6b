#pragma once

#include "relforge/tensor.hpp"

#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace relforge {

struct OptimConfig {
    enum class Kind { RMSprop, Adam };
    Kind kind = Kind::Adam;
    double lr = 1e-4;
    double weight_decay = 0.0; // decoupled: applied to params, not folded into grads
    double rms_alpha = 0.99;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double eps = 1e-8;
};

// Named parameter registry. Registration order is fixed, which keeps
// optimizer sweeps and checkpoint layout deterministic.
class ParamStore {
public:
    Tensor& add(const std::string& name, std::vector<int64_t> shape);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const;

    std::vector<std::string> names() const;
    size_t size() const { return entries_.size(); }
    int64_t total_params() const;

    void zero_grads();
    bool grads_finite() const;

    // Sums the other store's grads into this one; shapes must match by name.
    void add_grads_from(const ParamStore& other);
    void copy_params_from(const ParamStore& other);

    // Deep copy of params only (fresh optimizer state, zero grads).
    ParamStore clone() const;

    // One optimizer step over every entry, then grads are zeroed.
    void step(const OptimConfig& cfg);

    template <typename Fn>
    void for_each(Fn&& fn) {
        for (auto& e : entries_) fn(e->name, e->tensor);
    }
    template <typename Fn>
    void for_each(Fn&& fn) const {
        for (const auto& e : entries_) fn(e->name, e->tensor);
    }

private:
    struct Entry {
        std::string name;
        Tensor tensor;
        std::vector<double> m1; // RMSprop mean-square / Adam first moment
        std::vector<double> m2; // Adam second moment
    };
    std::vector<std::unique_ptr<Entry>> entries_;
    std::unordered_map<std::string, size_t> index_;
    int64_t step_count_ = 0;
};

// Versioned binary snapshot of named tensors, little-endian throughout.
struct Checkpoint {
    std::vector<std::pair<std::string, Tensor>> entries;

    static Checkpoint from_stores(const std::vector<const ParamStore*>& stores);
    static Checkpoint read(const std::string& path);
    void write(const std::string& path) const;

    bool has_prefix(const std::string& prefix) const;
    const Tensor* find(const std::string& name) const;
    // Copies values into matching params; a missing or mis-shaped name is an error.
    void load_into(ParamStore& store) const;
};

} // namespace relforge
