#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rgplan/tensor.hpp"

namespace rgplan {

// A plan/rollout window: H rows of [state | action] channels. Values may be
// in world units or normalized units depending on context; NormStats maps
// between the two.
struct Trajectory {
    std::size_t horizon = 0;
    std::size_t state_dim = 0;
    std::size_t action_dim = 0;
    Tensor values;  // (H, ds+da)

    Trajectory() = default;
    Trajectory(std::size_t H, std::size_t ds, std::size_t da)
        : horizon(H), state_dim(ds), action_dim(da), values({H, ds + da}) {}

    std::size_t channels() const { return state_dim + action_dim; }
    std::size_t element_count() const { return horizon * channels(); }
};

// Per-channel affine map to [-1,1] built from dataset min/max.
struct NormStats {
    std::vector<double> lo, hi;

    static NormStats from_data(const std::vector<Trajectory>& trajs) {
        if (trajs.empty()) throw std::invalid_argument("NormStats: empty dataset");
        std::size_t C = trajs[0].channels();
        NormStats s;
        s.lo.assign(C, 1e300);
        s.hi.assign(C, -1e300);
        for (const auto& t : trajs)
            for (std::size_t h = 0; h < t.horizon; ++h)
                for (std::size_t c = 0; c < C; ++c) {
                    double v = t.values.at2(h, c);
                    s.lo[c] = std::min(s.lo[c], v);
                    s.hi[c] = std::max(s.hi[c], v);
                }
        return s;
    }

    double to_norm(double v, std::size_t c) const {
        double span = hi[c] - lo[c];
        if (span <= 0.0) return 0.0;
        return 2.0 * (v - lo[c]) / span - 1.0;
    }

    double to_world(double v, std::size_t c) const {
        double span = hi[c] - lo[c];
        if (span <= 0.0) return lo[c];
        return lo[c] + (v + 1.0) * 0.5 * span;
    }

    Trajectory normalize(const Trajectory& t) const {
        Trajectory out = t;
        for (std::size_t h = 0; h < t.horizon; ++h)
            for (std::size_t c = 0; c < t.channels(); ++c)
                out.values.at2(h, c) = to_norm(t.values.at2(h, c), c);
        return out;
    }

    Trajectory denormalize(const Trajectory& t) const {
        Trajectory out = t;
        for (std::size_t h = 0; h < t.horizon; ++h)
            for (std::size_t c = 0; c < t.channels(); ++c)
                out.values.at2(h, c) = to_world(t.values.at2(h, c), c);
        return out;
    }
};

// ---- container file: 'RGTJ' magic, u32 LE header length, JSON header,
// then count*H*(ds+da) little-endian float64, then (optional) count*H
// rewards. ----

struct TrajectoryFile {
    std::vector<Trajectory> trajectories;
    std::vector<std::vector<double>> rewards;  // empty or one vector of length H per trajectory
    nlohmann::json header;                     // includes H, ds, da, norm stats, seed provenance
};

inline void write_trajectory_file(const std::string& path, const TrajectoryFile& tf) {
    if (tf.trajectories.empty()) throw std::invalid_argument("write_trajectory_file: no trajectories");
    const auto& t0 = tf.trajectories.front();
    nlohmann::json h = tf.header;
    h["version"] = 1;
    h["count"] = tf.trajectories.size();
    h["H"] = t0.horizon;
    h["ds"] = t0.state_dim;
    h["da"] = t0.action_dim;
    h["has_rewards"] = !tf.rewards.empty();
    std::string hs = h.dump();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_trajectory_file: cannot open " + path);
    f.write("RGTJ", 4);
    std::uint32_t len = static_cast<std::uint32_t>(hs.size());
    f.write(reinterpret_cast<const char*>(&len), 4);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& t : tf.trajectories) {
        if (t.horizon != t0.horizon || t.channels() != t0.channels())
            throw std::invalid_argument("write_trajectory_file: inhomogeneous trajectories");
        f.write(reinterpret_cast<const char*>(t.values.ptr()),
                static_cast<std::streamsize>(t.values.size() * sizeof(double)));
    }
    for (const auto& r : tf.rewards) {
        if (r.size() != t0.horizon) throw std::invalid_argument("write_trajectory_file: bad reward length");
        f.write(reinterpret_cast<const char*>(r.data()),
                static_cast<std::streamsize>(r.size() * sizeof(double)));
    }
}

inline TrajectoryFile read_trajectory_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_trajectory_file: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "RGTJ", 4) != 0)
        throw std::runtime_error("read_trajectory_file: bad magic in " + path);
    std::uint32_t len = 0;
    f.read(reinterpret_cast<char*>(&len), 4);
    std::string hs(len, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(len));
    TrajectoryFile tf;
    tf.header = nlohmann::json::parse(hs);
    std::size_t count = tf.header.at("count").get<std::size_t>();
    std::size_t H = tf.header.at("H").get<std::size_t>();
    std::size_t ds = tf.header.at("ds").get<std::size_t>();
    std::size_t da = tf.header.at("da").get<std::size_t>();
    bool has_rewards = tf.header.value("has_rewards", false);
    tf.trajectories.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Trajectory t(H, ds, da);
        f.read(reinterpret_cast<char*>(t.values.ptr()),
               static_cast<std::streamsize>(t.values.size() * sizeof(double)));
        if (!f) throw std::runtime_error("read_trajectory_file: truncated data in " + path);
        tf.trajectories.push_back(std::move(t));
    }
    if (has_rewards) {
        tf.rewards.resize(count);
        for (auto& r : tf.rewards) {
            r.resize(H);
            f.read(reinterpret_cast<char*>(r.data()), static_cast<std::streamsize>(H * sizeof(double)));
            if (!f) throw std::runtime_error("read_trajectory_file: truncated rewards in " + path);
        }
    }
    return tf;
}

inline nlohmann::json norm_stats_to_json(const NormStats& s) {
    return nlohmann::json{{"lo", s.lo}, {"hi", s.hi}};
}

inline NormStats norm_stats_from_json(const nlohmann::json& j) {
    NormStats s;
    s.lo = j.at("lo").get<std::vector<double>>();
    s.hi = j.at("hi").get<std::vector<double>>();
    return s;
}

}  // namespace rgplan
