#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rgplan/autodiff.hpp"
#include "rgplan/params.hpp"

namespace rgplan {

// Temporal U-shaped 1-D conv network over (H, C) trajectories: two
// downsampling levels plus a bottleneck block, residual conv blocks with
// group norm, SiLU and additive sinusoidal time conditioning. The down path
// (down1..down3 plus the time MLP) doubles as the frozen feature extractor
// for the gap predictor.
struct UNetConfig {
    std::size_t horizon = 64;
    std::size_t channels = 6;
    std::vector<std::size_t> widths = {16, 32, 64};
    std::size_t kernel = 5;
    std::size_t groups = 8;
    std::size_t time_dim = 16;

    void validate() const {
        if (horizon % 4 != 0) throw std::invalid_argument("UNetConfig: horizon must be divisible by 4");
        if (widths.size() != 3) throw std::invalid_argument("UNetConfig: expects 3 channel widths");
        if (kernel % 2 == 0) throw std::invalid_argument("UNetConfig: kernel must be odd");
        if (time_dim % 2 != 0) throw std::invalid_argument("UNetConfig: time_dim must be even");
    }

    nlohmann::json to_json() const {
        return nlohmann::json{{"horizon", horizon}, {"channels", channels}, {"widths", widths},
                              {"kernel", kernel},   {"groups", groups},     {"time_dim", time_dim}};
    }

    static UNetConfig from_json(const nlohmann::json& j) {
        UNetConfig c;
        c.horizon = j.at("horizon").get<std::size_t>();
        c.channels = j.at("channels").get<std::size_t>();
        c.widths = j.at("widths").get<std::vector<std::size_t>>();
        c.kernel = j.at("kernel").get<std::size_t>();
        c.groups = j.at("groups").get<std::size_t>();
        c.time_dim = j.at("time_dim").get<std::size_t>();
        return c;
    }
};

namespace detail {

inline std::size_t gn_groups(std::size_t channels, std::size_t preferred) {
    std::size_t g = preferred > channels ? channels : preferred;
    while (g > 1 && channels % g != 0) --g;
    return g;
}

inline void init_resblock(ParamStore& ps, Rng& rng, const std::string& prefix, std::size_t cin,
                          std::size_t cout, std::size_t K, std::size_t time_dim) {
    ps.add(prefix + ".conv1.w", ParamStore::init_uniform(rng, {cout, K, cin}, K * cin));
    ps.add(prefix + ".conv1.b", ParamStore::init_uniform(rng, {cout}, K * cin));
    ps.add(prefix + ".gn1.gamma", Tensor::full({cout}, 1.0));
    ps.add(prefix + ".gn1.beta", Tensor::zeros({cout}));
    ps.add(prefix + ".time.w", ParamStore::init_uniform(rng, {cout, time_dim}, time_dim));
    ps.add(prefix + ".time.b", ParamStore::init_uniform(rng, {cout}, time_dim));
    ps.add(prefix + ".conv2.w", ParamStore::init_uniform(rng, {cout, K, cout}, K * cout));
    ps.add(prefix + ".conv2.b", ParamStore::init_uniform(rng, {cout}, K * cout));
    ps.add(prefix + ".gn2.gamma", Tensor::full({cout}, 1.0));
    ps.add(prefix + ".gn2.beta", Tensor::zeros({cout}));
    if (cin != cout) {
        ps.add(prefix + ".skip.w", ParamStore::init_uniform(rng, {cout, 1, cin}, cin));
        ps.add(prefix + ".skip.b", ParamStore::init_uniform(rng, {cout}, cin));
    }
}

struct UNetCtx {
    Tape& tape;
    const ParamStore& ps;
    const UNetConfig& cfg;
    Tape::NodeId temb;  // shared time-MLP output

    Tape::NodeId P(const std::string& id) { return tape.param(id, ps.at(id)); }

    Tape::NodeId resblock(Tape::NodeId x, const std::string& prefix, std::size_t cin,
                          std::size_t cout) {
        std::size_t g = gn_groups(cout, cfg.groups);
        Tape::NodeId h = tape.conv1d(x, P(prefix + ".conv1.w"), P(prefix + ".conv1.b"));
        h = tape.group_norm(h, P(prefix + ".gn1.gamma"), P(prefix + ".gn1.beta"), g);
        h = tape.silu(h);
        Tape::NodeId tproj = tape.dense(temb, P(prefix + ".time.w"), P(prefix + ".time.b"));
        h = tape.add_rows(h, tproj);
        h = tape.conv1d(h, P(prefix + ".conv2.w"), P(prefix + ".conv2.b"));
        h = tape.group_norm(h, P(prefix + ".gn2.gamma"), P(prefix + ".gn2.beta"), g);
        h = tape.silu(h);
        Tape::NodeId skip = (cin == cout) ? x : tape.conv1d(x, P(prefix + ".skip.w"), P(prefix + ".skip.b"));
        return tape.add(h, skip);
    }
};

inline Tape::NodeId time_mlp(Tape& tape, const ParamStore& ps, const UNetConfig& cfg, double t) {
    Tape::NodeId emb = tape.leaf(sinusoidal_time_embedding(t, cfg.time_dim));
    Tape::NodeId h = tape.dense(emb, tape.param("time.fc.w", ps.at("time.fc.w")),
                                tape.param("time.fc.b", ps.at("time.fc.b")));
    return tape.silu(h);
}

}  // namespace detail

inline ParamStore init_unet_params(const UNetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ParamStore ps;
    auto [c1, c2, c3] = std::tuple(cfg.widths[0], cfg.widths[1], cfg.widths[2]);
    ps.add("time.fc.w", ParamStore::init_uniform(rng, {cfg.time_dim, cfg.time_dim}, cfg.time_dim));
    ps.add("time.fc.b", ParamStore::init_uniform(rng, {cfg.time_dim}, cfg.time_dim));
    detail::init_resblock(ps, rng, "down1", cfg.channels, c1, cfg.kernel, cfg.time_dim);
    detail::init_resblock(ps, rng, "down2", c1, c2, cfg.kernel, cfg.time_dim);
    detail::init_resblock(ps, rng, "down3", c2, c3, cfg.kernel, cfg.time_dim);
    detail::init_resblock(ps, rng, "mid", c3, c3, cfg.kernel, cfg.time_dim);
    detail::init_resblock(ps, rng, "up2", c3 + c2, c2, cfg.kernel, cfg.time_dim);
    detail::init_resblock(ps, rng, "up1", c2 + c1, c1, cfg.kernel, cfg.time_dim);
    // Final projection starts at zero so an untrained model predicts zero
    // noise; training breaks the symmetry through the upstream gradients.
    ps.add("final.w", Tensor::zeros({cfg.channels, cfg.kernel, c1}));
    ps.add("final.b", Tensor::zeros({cfg.channels}));
    return ps;
}

// Identifiers of the down-path parameters reused as the gap predictor's
// frozen feature extractor.
inline std::vector<std::string> unet_down_param_ids(const ParamStore& ps) {
    std::vector<std::string> out;
    for (const auto& n : ps.names())
        if (n.rfind("time.", 0) == 0 || n.rfind("down", 0) == 0) out.push_back(n);
    return out;
}

// Full forward pass: (H,C) -> (H,C).
inline Tape::NodeId unet_forward(Tape& tape, const ParamStore& ps, const UNetConfig& cfg,
                                 Tape::NodeId x, double t) {
    auto [c1, c2, c3] = std::tuple(cfg.widths[0], cfg.widths[1], cfg.widths[2]);
    detail::UNetCtx ctx{tape, ps, cfg, detail::time_mlp(tape, ps, cfg, t)};
    Tape::NodeId d1 = ctx.resblock(x, "down1", cfg.channels, c1);
    Tape::NodeId p1 = tape.avgpool2_rows(d1);
    Tape::NodeId d2 = ctx.resblock(p1, "down2", c1, c2);
    Tape::NodeId p2 = tape.avgpool2_rows(d2);
    Tape::NodeId d3 = ctx.resblock(p2, "down3", c2, c3);
    Tape::NodeId m = ctx.resblock(d3, "mid", c3, c3);
    Tape::NodeId u2 = tape.concat_cols(tape.upsample2_rows(m), d2);
    u2 = ctx.resblock(u2, "up2", c3 + c2, c2);
    Tape::NodeId u1 = tape.concat_cols(tape.upsample2_rows(u2), d1);
    u1 = ctx.resblock(u1, "up1", c2 + c1, c1);
    return tape.conv1d(u1, ctx.P("final.w"), ctx.P("final.b"));
}

// Down path only: (H,C) -> (H/4, c3) deepest feature map.
inline Tape::NodeId unet_down_features(Tape& tape, const ParamStore& ps, const UNetConfig& cfg,
                                       Tape::NodeId x, double t) {
    auto [c1, c2, c3] = std::tuple(cfg.widths[0], cfg.widths[1], cfg.widths[2]);
    detail::UNetCtx ctx{tape, ps, cfg, detail::time_mlp(tape, ps, cfg, t)};
    Tape::NodeId d1 = ctx.resblock(x, "down1", cfg.channels, c1);
    Tape::NodeId d2 = ctx.resblock(tape.avgpool2_rows(d1), "down2", c1, c2);
    return ctx.resblock(tape.avgpool2_rows(d2), "down3", c2, c3);
}

}  // namespace rgplan
