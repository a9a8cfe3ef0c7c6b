#include "relforge/param_store.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace relforge {

Tensor& ParamStore::add(const std::string& name, std::vector<int64_t> shape) {
    if (index_.count(name))
        throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
    auto e = std::make_unique<Entry>();
    e->name = name;
    e->tensor = Tensor(std::move(shape));
    entries_.push_back(std::move(e));
    index_[name] = entries_.size() - 1;
    return entries_.back()->tensor;
}

Tensor& ParamStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end())
        throw std::invalid_argument("ParamStore: unknown parameter '" + name + "'");
    return entries_[it->second]->tensor;
}

const Tensor& ParamStore::get(const std::string& name) const {
    return const_cast<ParamStore*>(this)->get(name);
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) > 0; }

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e->name);
    return out;
}

int64_t ParamStore::total_params() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += e->tensor.numel();
    return n;
}

void ParamStore::zero_grads() {
    for (auto& e : entries_) e->tensor.zero_grad();
}

bool ParamStore::grads_finite() const {
    for (const auto& e : entries_)
        for (double g : e->tensor.grad_values())
            if (!std::isfinite(g)) return false;
    return true;
}

void ParamStore::add_grads_from(const ParamStore& other) {
    for (const auto& oe : other.entries_) {
        if (!oe->tensor.has_grad()) continue;
        Tensor& mine = get(oe->name);
        if (!mine.same_shape(oe->tensor)) shape_error("add_grads_from", mine, oe->tensor);
        double* g = mine.grad();
        const auto& og = oe->tensor.grad_values();
        for (int64_t i = 0; i < mine.numel(); ++i) g[i] += og[static_cast<size_t>(i)];
    }
}

void ParamStore::copy_params_from(const ParamStore& other) {
    for (const auto& oe : other.entries_) {
        Tensor& mine = get(oe->name);
        if (!mine.same_shape(oe->tensor)) shape_error("copy_params_from", mine, oe->tensor);
        mine.values() = oe->tensor.values();
    }
}

ParamStore ParamStore::clone() const {
    ParamStore out;
    for (const auto& e : entries_) {
        Tensor& t = out.add(e->name, e->tensor.shape());
        t.values() = e->tensor.values();
    }
    return out;
}

void ParamStore::step(const OptimConfig& cfg) {
    ++step_count_;
    for (auto& e : entries_) {
        Tensor& t = e->tensor;
        if (!t.has_grad())
            throw std::runtime_error("optimizer step: missing gradient for '" + e->name + "'");
        const auto& g = t.grad_values();
        double* p = t.data();
        const size_t n = static_cast<size_t>(t.numel());
        if (cfg.kind == OptimConfig::Kind::RMSprop) {
            if (e->m1.empty()) e->m1.assign(n, 0.0);
            for (size_t i = 0; i < n; ++i) {
                e->m1[i] = cfg.rms_alpha * e->m1[i] + (1.0 - cfg.rms_alpha) * g[i] * g[i];
                p[i] -= cfg.lr * g[i] / (std::sqrt(e->m1[i]) + cfg.eps);
                p[i] -= cfg.lr * cfg.weight_decay * p[i];
            }
        } else {
            if (e->m1.empty()) e->m1.assign(n, 0.0);
            if (e->m2.empty()) e->m2.assign(n, 0.0);
            const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step_count_));
            const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step_count_));
            for (size_t i = 0; i < n; ++i) {
                e->m1[i] = cfg.adam_beta1 * e->m1[i] + (1.0 - cfg.adam_beta1) * g[i];
                e->m2[i] = cfg.adam_beta2 * e->m2[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
                const double mhat = e->m1[i] / bc1;
                const double vhat = e->m2[i] / bc2;
                p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
                p[i] -= cfg.lr * cfg.weight_decay * p[i];
            }
        }
        t.zero_grad();
    }
}

namespace {

constexpr char kMagic[] = "RELFORGE1"; // 9 bytes, no terminator on disk
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<char*>(b), 8);
}

void put_f64(std::ostream& os, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(os, bits);
}

uint32_t get_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error("checkpoint '" + path + "': truncated");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

uint64_t get_u64(std::istream& is, const std::string& path) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8))
        throw std::runtime_error("checkpoint '" + path + "': truncated");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& is, const std::string& path) {
    uint64_t bits = get_u64(is, path);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

} // namespace

Checkpoint Checkpoint::from_stores(const std::vector<const ParamStore*>& stores) {
    Checkpoint ck;
    for (const ParamStore* s : stores)
        s->for_each([&](const std::string& name, const Tensor& t) {
            ck.entries.emplace_back(name, t);
        });
    return ck;
}

void Checkpoint::write(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    os.write(kMagic, 9);
    put_u32(os, kVersion);
    put_u64(os, entries.size());
    for (const auto& [name, t] : entries) {
        put_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(os, static_cast<uint32_t>(t.rank()));
        for (int64_t d : t.shape()) put_u64(os, static_cast<uint64_t>(d));
        for (double v : t.values()) put_f64(os, v);
    }
    if (!os) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

Checkpoint Checkpoint::read(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    char magic[9];
    if (!is.read(magic, 9) || std::memcmp(magic, kMagic, 9) != 0)
        throw std::runtime_error("checkpoint '" + path + "': not a relforge checkpoint");
    const uint32_t version = get_u32(is, path);
    if (version != kVersion)
        throw std::runtime_error("checkpoint '" + path + "': unsupported format version " +
                                 std::to_string(version));
    const uint64_t count = get_u64(is, path);
    Checkpoint ck;
    ck.entries.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        const uint32_t name_len = get_u32(is, path);
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len))
            throw std::runtime_error("checkpoint '" + path + "': truncated");
        const uint32_t rank = get_u32(is, path);
        std::vector<int64_t> shape(rank);
        for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int64_t>(get_u64(is, path));
        Tensor t(shape);
        for (int64_t k = 0; k < t.numel(); ++k) t[k] = get_f64(is, path);
        ck.entries.emplace_back(std::move(name), std::move(t));
    }
    return ck;
}

bool Checkpoint::has_prefix(const std::string& prefix) const {
    for (const auto& [name, t] : entries)
        if (name.rfind(prefix, 0) == 0) return true;
    return false;
}

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : entries)
        if (n == name) return &t;
    return nullptr;
}

void Checkpoint::load_into(ParamStore& store) const {
    store.for_each([&](const std::string& name, Tensor& t) {
        const Tensor* src = find(name);
        if (!src)
            throw std::runtime_error("checkpoint: missing parameter '" + name + "'");
        if (!src->same_shape(t))
            throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': file has " +
                                     src->shape_str() + ", model expects " + t.shape_str());
        t.values() = src->values();
    });
}

} // namespace relforge
