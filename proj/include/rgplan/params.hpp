#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "rgplan/rng.hpp"
#include "rgplan/tensor.hpp"

namespace rgplan {

// Ordered collection of named parameter tensors. Order is creation order and
// defines both the serialized byte layout and the seeded-initialization draw
// order, so a (seed, architecture) pair always produces the same parameters.
class ParamStore {
  public:
    void add(const std::string& id, Tensor t) {
        if (index_.count(id)) throw std::invalid_argument("ParamStore: duplicate id " + id);
        index_[id] = names_.size();
        names_.push_back(id);
        values_.push_back(std::move(t));
    }

    bool has(const std::string& id) const { return index_.count(id) != 0; }

    Tensor& at(const std::string& id) { return values_[idx(id)]; }
    const Tensor& at(const std::string& id) const { return values_[idx(id)]; }

    const std::vector<std::string>& names() const { return names_; }
    std::size_t count() const { return names_.size(); }

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& t : values_) n += t.size();
        return n;
    }

    bool same_values(const ParamStore& o) const {
        if (names_ != o.names_) return false;
        for (std::size_t i = 0; i < values_.size(); ++i)
            if (values_[i].data() != o.values_[i].data()) return false;
        return true;
    }

    // Uniform init in +-sqrt(1/fan_in).
    static Tensor init_uniform(Rng& rng, std::vector<std::size_t> shape, std::size_t fan_in) {
        Tensor t(std::move(shape));
        double b = std::sqrt(1.0 / static_cast<double>(fan_in));
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-b, b);
        return t;
    }

    // Flat little-endian float64 blob plus a JSON manifest with ids, shapes
    // and byte offsets. `meta` carries caller-owned fields (architecture,
    // normalization constants, ...).
    void save(const std::string& path_prefix, const nlohmann::json& meta = {}) const {
        nlohmann::json manifest;
        manifest["schema_version"] = 1;
        manifest["dtype"] = "float64-le";
        manifest["meta"] = meta;
        std::uint64_t offset = 0;
        for (std::size_t i = 0; i < names_.size(); ++i) {
            nlohmann::json p;
            p["id"] = names_[i];
            p["shape"] = values_[i].shape();
            p["byte_offset"] = offset;
            offset += values_[i].size() * sizeof(double);
            manifest["params"].push_back(p);
        }
        manifest["total_bytes"] = offset;
        std::ofstream mf(path_prefix + ".json");
        if (!mf) throw std::runtime_error("ParamStore::save: cannot open " + path_prefix + ".json");
        mf << manifest.dump(2) << "\n";
        std::ofstream bf(path_prefix + ".bin", std::ios::binary);
        if (!bf) throw std::runtime_error("ParamStore::save: cannot open " + path_prefix + ".bin");
        for (const auto& t : values_)
            bf.write(reinterpret_cast<const char*>(t.ptr()),
                     static_cast<std::streamsize>(t.size() * sizeof(double)));
    }

    static ParamStore load(const std::string& path_prefix, nlohmann::json* meta_out = nullptr) {
        std::ifstream mf(path_prefix + ".json");
        if (!mf) throw std::runtime_error("ParamStore::load: missing " + path_prefix + ".json");
        nlohmann::json manifest = nlohmann::json::parse(mf);
        if (manifest.at("schema_version").get<int>() != 1)
            throw std::runtime_error("ParamStore::load: unsupported schema version");
        if (meta_out) *meta_out = manifest.value("meta", nlohmann::json::object());
        std::ifstream bf(path_prefix + ".bin", std::ios::binary);
        if (!bf) throw std::runtime_error("ParamStore::load: missing " + path_prefix + ".bin");
        ParamStore ps;
        for (const auto& p : manifest.at("params")) {
            std::vector<std::size_t> shape = p.at("shape").get<std::vector<std::size_t>>();
            Tensor t(shape);
            bf.seekg(static_cast<std::streamoff>(p.at("byte_offset").get<std::uint64_t>()));
            bf.read(reinterpret_cast<char*>(t.ptr()),
                    static_cast<std::streamsize>(t.size() * sizeof(double)));
            if (!bf) throw std::runtime_error("ParamStore::load: truncated blob for " +
                                              p.at("id").get<std::string>());
            check_finite(t, "ParamStore::load(" + p.at("id").get<std::string>() + ")");
            ps.add(p.at("id").get<std::string>(), std::move(t));
        }
        return ps;
    }

  private:
    std::size_t idx(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw std::invalid_argument("ParamStore: unknown id " + id);
        return it->second;
    }

    std::vector<std::string> names_;
    std::vector<Tensor> values_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Adam with bias correction; state is keyed by parameter id.
class AdamOptimizer {
  public:
    explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamStore& params, const std::map<std::string, Tensor>& grads) {
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (const auto& [id, g] : grads) {
            Tensor& p = params.at(id);
            auto& [m, v] = state_[id];
            if (m.size() != p.size()) {
                m = Tensor(p.shape());
                v = Tensor(p.shape());
            }
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
                double mhat = m[i] / bc1;
                double vhat = v[i] / bc2;
                p[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

  private:
    double lr_, beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
    std::map<std::string, std::pair<Tensor, Tensor>> state_;
};

}  // namespace rgplan
