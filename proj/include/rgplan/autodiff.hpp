#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rgplan/tensor.hpp"

namespace rgplan {

// Reverse-mode tape over dense tensors. Nodes are appended in evaluation
// order, so creation order is already topological; backward() walks the tape
// in reverse from a scalar root. Leaves created via param() are tied to a
// stable identifier so parameter gradients can be collected by name.
//
// The tape may be extended after a backward pass and differentiated again
// from a new root (used for attribution-map regularization); every backward
// call re-zeros all gradients first.
class Tape {
  public:
    using NodeId = int;

    NodeId leaf(Tensor v) {
        check_finite(v, "Tape::leaf");
        return push(std::move(v), {}, nullptr, "leaf");
    }

    NodeId param(const std::string& id, Tensor v) {
        check_finite(v, "Tape::param(" + id + ")");
        NodeId n = push(std::move(v), {}, nullptr, "param");
        param_nodes_.emplace_back(id, n);
        return n;
    }

    const Tensor& value(NodeId n) const { return nodes_[static_cast<std::size_t>(n)].value; }
    const Tensor& grad(NodeId n) const { return nodes_[static_cast<std::size_t>(n)].grad; }
    std::size_t num_nodes() const { return nodes_.size(); }

    // ---- elementwise ----

    NodeId add(NodeId a, NodeId b) {
        require_same_shape("add", a, b);
        Tensor out = value(a);
        const Tensor& vb = value(b);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
        return push(std::move(out), {a, b}, [](Tape& t, const Node& n) {
            t.axpy(n.in[0], 1.0, n.grad);
            t.axpy(n.in[1], 1.0, n.grad);
        }, "add");
    }

    NodeId sub(NodeId a, NodeId b) {
        require_same_shape("sub", a, b);
        Tensor out = value(a);
        const Tensor& vb = value(b);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= vb[i];
        return push(std::move(out), {a, b}, [](Tape& t, const Node& n) {
            t.axpy(n.in[0], 1.0, n.grad);
            t.axpy(n.in[1], -1.0, n.grad);
        }, "sub");
    }

    NodeId mul(NodeId a, NodeId b) {
        require_same_shape("mul", a, b);
        Tensor out = value(a);
        const Tensor& vb = value(b);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
        return push(std::move(out), {a, b}, [](Tape& t, const Node& n) {
            const Tensor& va = t.value(n.in[0]);
            const Tensor& vb2 = t.value(n.in[1]);
            Tensor& ga = t.gref(n.in[0]);
            Tensor& gb = t.gref(n.in[1]);
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                ga[i] += n.grad[i] * vb2[i];
                gb[i] += n.grad[i] * va[i];
            }
        }, "mul");
    }

    NodeId scale(NodeId a, double c) {
        Tensor out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
        return push(std::move(out), {a}, [c](Tape& t, const Node& n) {
            t.axpy(n.in[0], c, n.grad);
        }, "scale");
    }

    // Elementwise product with a plain (non-differentiated) tensor.
    NodeId mul_const(NodeId a, Tensor c) {
        if (!value(a).same_shape(c))
            throw std::invalid_argument("mul_const: shape mismatch " +
                                        Tensor::shape_str(value(a).shape()) + " vs " +
                                        Tensor::shape_str(c.shape()));
        Tensor out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i];
        auto cc = std::make_shared<Tensor>(std::move(c));
        return push(std::move(out), {a}, [cc](Tape& t, const Node& n) {
            Tensor& ga = t.gref(n.in[0]);
            for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * (*cc)[i];
        }, "mul_const");
    }

    NodeId silu(NodeId a) {
        Tensor out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) {
            double s = 1.0 / (1.0 + std::exp(-out[i]));
            out[i] = out[i] * s;
        }
        return push(std::move(out), {a}, [](Tape& t, const Node& n) {
            const Tensor& x = t.value(n.in[0]);
            Tensor& gx = t.gref(n.in[0]);
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                double s = 1.0 / (1.0 + std::exp(-x[i]));
                gx[i] += n.grad[i] * s * (1.0 + x[i] * (1.0 - s));
            }
        }, "silu");
    }

    NodeId relu(NodeId a) {
        Tensor out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
        return push(std::move(out), {a}, [](Tape& t, const Node& n) {
            const Tensor& x = t.value(n.in[0]);
            Tensor& gx = t.gref(n.in[0]);
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                if (x[i] > 0.0) gx[i] += n.grad[i];
        }, "relu");
    }

    // ---- linear layers ----

    // y = W x + b, x:(In), W:(Out,In), b:(Out).
    NodeId dense(NodeId x, NodeId W, NodeId b) {
        const Tensor& vx = value(x);
        const Tensor& vW = value(W);
        const Tensor& vb = value(b);
        std::size_t in = vx.size(), out = vb.size();
        if (vW.ndim() != 2 || vW.dim(0) != out || vW.dim(1) != in)
            throw std::invalid_argument("dense: weight shape " + Tensor::shape_str(vW.shape()) +
                                        " incompatible with input " + Tensor::shape_str(vx.shape()) +
                                        " and bias " + Tensor::shape_str(vb.shape()));
        Tensor y({out});
        for (std::size_t o = 0; o < out; ++o) {
            double acc = vb[o];
            const double* wr = vW.ptr() + o * in;
            for (std::size_t i = 0; i < in; ++i) acc += wr[i] * vx[i];
            y[o] = acc;
        }
        return push(std::move(y), {x, W, b}, [](Tape& t, const Node& n) {
            const Tensor& vx2 = t.value(n.in[0]);
            const Tensor& vW2 = t.value(n.in[1]);
            Tensor& gx = t.gref(n.in[0]);
            Tensor& gW = t.gref(n.in[1]);
            Tensor& gb = t.gref(n.in[2]);
            std::size_t in = vx2.size(), out = n.grad.size();
            for (std::size_t o = 0; o < out; ++o) {
                double d = n.grad[o];
                gb[o] += d;
                const double* wr = vW2.ptr() + o * in;
                double* gwr = gW.ptr() + o * in;
                for (std::size_t i = 0; i < in; ++i) {
                    gx[i] += d * wr[i];
                    gwr[i] += d * vx2[i];
                }
            }
        }, "dense");
    }

    // 1-D convolution along the row (horizon) axis with zero padding, stride 1.
    // x:(H,Cin), W:(Cout,K,Cin), b:(Cout) -> y:(H,Cout). K must be odd.
    NodeId conv1d(NodeId x, NodeId W, NodeId b) {
        const Tensor& vx = value(x);
        const Tensor& vW = value(W);
        const Tensor& vb = value(b);
        if (vx.ndim() != 2 || vW.ndim() != 3)
            throw std::invalid_argument("conv1d: expects x:(H,Cin), W:(Cout,K,Cin)");
        std::size_t H = vx.dim(0), Cin = vx.dim(1);
        std::size_t Cout = vW.dim(0), K = vW.dim(1);
        if (vW.dim(2) != Cin || vb.size() != Cout || K % 2 == 0)
            throw std::invalid_argument("conv1d: weight shape " + Tensor::shape_str(vW.shape()) +
                                        " incompatible with input " + Tensor::shape_str(vx.shape()));
        std::size_t P = (K - 1) / 2;
        Tensor y({H, Cout});
        for (std::size_t h = 0; h < H; ++h) {
            double* yr = y.ptr() + h * Cout;
            for (std::size_t co = 0; co < Cout; ++co) yr[co] = vb[co];
            for (std::size_t k = 0; k < K; ++k) {
                std::ptrdiff_t g = static_cast<std::ptrdiff_t>(h + k) - static_cast<std::ptrdiff_t>(P);
                if (g < 0 || g >= static_cast<std::ptrdiff_t>(H)) continue;
                const double* xr = vx.ptr() + static_cast<std::size_t>(g) * Cin;
                for (std::size_t co = 0; co < Cout; ++co) {
                    const double* wr = vW.ptr() + (co * K + k) * Cin;
                    double acc = 0.0;
                    for (std::size_t ci = 0; ci < Cin; ++ci) acc += xr[ci] * wr[ci];
                    yr[co] += acc;
                }
            }
        }
        return push(std::move(y), {x, W, b}, [](Tape& t, const Node& n) {
            const Tensor& vx2 = t.value(n.in[0]);
            const Tensor& vW2 = t.value(n.in[1]);
            Tensor& gx = t.gref(n.in[0]);
            Tensor& gW = t.gref(n.in[1]);
            Tensor& gb = t.gref(n.in[2]);
            std::size_t H = vx2.dim(0), Cin = vx2.dim(1);
            std::size_t Cout = vW2.dim(0), K = vW2.dim(1);
            std::size_t P = (K - 1) / 2;
            for (std::size_t h = 0; h < H; ++h) {
                const double* dyr = n.grad.ptr() + h * Cout;
                for (std::size_t co = 0; co < Cout; ++co) gb[co] += dyr[co];
                for (std::size_t k = 0; k < K; ++k) {
                    std::ptrdiff_t g = static_cast<std::ptrdiff_t>(h + k) - static_cast<std::ptrdiff_t>(P);
                    if (g < 0 || g >= static_cast<std::ptrdiff_t>(H)) continue;
                    const double* xr = vx2.ptr() + static_cast<std::size_t>(g) * Cin;
                    double* gxr = gx.ptr() + static_cast<std::size_t>(g) * Cin;
                    for (std::size_t co = 0; co < Cout; ++co) {
                        double d = dyr[co];
                        if (d == 0.0) continue;
                        const double* wr = vW2.ptr() + (co * K + k) * Cin;
                        double* gwr = gW.ptr() + (co * K + k) * Cin;
                        for (std::size_t ci = 0; ci < Cin; ++ci) {
                            gxr[ci] += d * wr[ci];
                            gwr[ci] += d * xr[ci];
                        }
                    }
                }
            }
        }, "conv1d");
    }

    // Group normalization over channels for x:(H,C): statistics are taken per
    // group over all rows and the group's channels. gamma,beta:(C).
    NodeId group_norm(NodeId x, NodeId gamma, NodeId beta, std::size_t groups, double eps = 1e-5) {
        const Tensor& vx = value(x);
        if (vx.ndim() != 2) throw std::invalid_argument("group_norm: expects (H,C)");
        std::size_t H = vx.dim(0), C = vx.dim(1);
        if (groups == 0 || C % groups != 0)
            throw std::invalid_argument("group_norm: channels " + std::to_string(C) +
                                        " not divisible by groups " + std::to_string(groups));
        if (value(gamma).size() != C || value(beta).size() != C)
            throw std::invalid_argument("group_norm: gamma/beta must have C entries");
        std::size_t Cg = C / groups;
        auto stats = std::make_shared<std::vector<double>>(2 * groups);  // mean, inv_std per group
        Tensor y({H, C});
        const Tensor& vg = value(gamma);
        const Tensor& vbeta = value(beta);
        for (std::size_t g = 0; g < groups; ++g) {
            double m = 0.0, m2 = 0.0;
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t c = g * Cg; c < (g + 1) * Cg; ++c) {
                    double v = vx.at2(h, c);
                    m += v;
                    m2 += v * v;
                }
            double n = static_cast<double>(H * Cg);
            m /= n;
            double var = m2 / n - m * m;
            double inv = 1.0 / std::sqrt(var + eps);
            (*stats)[2 * g] = m;
            (*stats)[2 * g + 1] = inv;
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t c = g * Cg; c < (g + 1) * Cg; ++c)
                    y.at2(h, c) = vg[c] * (vx.at2(h, c) - m) * inv + vbeta[c];
        }
        return push(std::move(y), {x, gamma, beta}, [groups, stats](Tape& t, const Node& n) {
            const Tensor& vx2 = t.value(n.in[0]);
            const Tensor& vg2 = t.value(n.in[1]);
            Tensor& gx = t.gref(n.in[0]);
            Tensor& gg = t.gref(n.in[1]);
            Tensor& gb = t.gref(n.in[2]);
            std::size_t H = vx2.dim(0), C = vx2.dim(1), Cg = C / groups;
            double cnt = static_cast<double>(H * Cg);
            for (std::size_t g = 0; g < groups; ++g) {
                double m = (*stats)[2 * g], inv = (*stats)[2 * g + 1];
                // dxhat = dy*gamma; reduce sums for the mean/var chain.
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (std::size_t h = 0; h < H; ++h)
                    for (std::size_t c = g * Cg; c < (g + 1) * Cg; ++c) {
                        double xhat = (vx2.at2(h, c) - m) * inv;
                        double dy = n.grad.at2(h, c);
                        double dxhat = dy * vg2[c];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                        gg[c] += dy * xhat;
                        gb[c] += dy;
                    }
                for (std::size_t h = 0; h < H; ++h)
                    for (std::size_t c = g * Cg; c < (g + 1) * Cg; ++c) {
                        double xhat = (vx2.at2(h, c) - m) * inv;
                        double dxhat = n.grad.at2(h, c) * vg2[c];
                        gx.at2(h, c) += inv * (dxhat - sum_dxhat / cnt - xhat * sum_dxhat_xhat / cnt);
                    }
            }
        }, "group_norm");
    }

    // ---- shape ops ----

    // (H,C) + (C) broadcast over rows.
    NodeId add_rows(NodeId x, NodeId v) {
        const Tensor& vx = value(x);
        const Tensor& vv = value(v);
        if (vx.ndim() != 2 || vv.size() != vx.dim(1))
            throw std::invalid_argument("add_rows: expects (H,C) and (C)");
        Tensor out = vx;
        std::size_t H = vx.dim(0), C = vx.dim(1);
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t c = 0; c < C; ++c) out.at2(h, c) += vv[c];
        return push(std::move(out), {x, v}, [](Tape& t, const Node& n) {
            Tensor& gx = t.gref(n.in[0]);
            Tensor& gv = t.gref(n.in[1]);
            std::size_t H = n.grad.dim(0), C = n.grad.dim(1);
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t c = 0; c < C; ++c) {
                    gx.at2(h, c) += n.grad.at2(h, c);
                    gv[c] += n.grad.at2(h, c);
                }
        }, "add_rows");
    }

    NodeId concat_cols(NodeId a, NodeId b) {
        const Tensor& va = value(a);
        const Tensor& vb = value(b);
        if (va.ndim() != 2 || vb.ndim() != 2 || va.dim(0) != vb.dim(0))
            throw std::invalid_argument("concat_cols: row counts differ");
        std::size_t H = va.dim(0), Ca = va.dim(1), Cb = vb.dim(1);
        Tensor out({H, Ca + Cb});
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t c = 0; c < Ca; ++c) out.at2(h, c) = va.at2(h, c);
            for (std::size_t c = 0; c < Cb; ++c) out.at2(h, Ca + c) = vb.at2(h, c);
        }
        return push(std::move(out), {a, b}, [Ca](Tape& t, const Node& n) {
            Tensor& ga = t.gref(n.in[0]);
            Tensor& gb = t.gref(n.in[1]);
            std::size_t H = n.grad.dim(0), Cb2 = gb.dim(1);
            for (std::size_t h = 0; h < H; ++h) {
                for (std::size_t c = 0; c < Ca; ++c) ga.at2(h, c) += n.grad.at2(h, c);
                for (std::size_t c = 0; c < Cb2; ++c) gb.at2(h, c) += n.grad.at2(h, Ca + c);
            }
        }, "concat_cols");
    }

    // (H,C) -> (H/2,C) mean of adjacent row pairs; H must be even.
    NodeId avgpool2_rows(NodeId x) {
        const Tensor& vx = value(x);
        if (vx.ndim() != 2 || vx.dim(0) % 2 != 0)
            throw std::invalid_argument("avgpool2_rows: needs even row count, got " +
                                        Tensor::shape_str(vx.shape()));
        std::size_t H = vx.dim(0), C = vx.dim(1);
        Tensor out({H / 2, C});
        for (std::size_t h = 0; h < H / 2; ++h)
            for (std::size_t c = 0; c < C; ++c)
                out.at2(h, c) = 0.5 * (vx.at2(2 * h, c) + vx.at2(2 * h + 1, c));
        return push(std::move(out), {x}, [](Tape& t, const Node& n) {
            Tensor& gx = t.gref(n.in[0]);
            std::size_t Hh = n.grad.dim(0), C = n.grad.dim(1);
            for (std::size_t h = 0; h < Hh; ++h)
                for (std::size_t c = 0; c < C; ++c) {
                    gx.at2(2 * h, c) += 0.5 * n.grad.at2(h, c);
                    gx.at2(2 * h + 1, c) += 0.5 * n.grad.at2(h, c);
                }
        }, "avgpool2_rows");
    }

    // (H,C) -> (2H,C) nearest-neighbor row upsampling.
    NodeId upsample2_rows(NodeId x) {
        const Tensor& vx = value(x);
        if (vx.ndim() != 2) throw std::invalid_argument("upsample2_rows: expects (H,C)");
        std::size_t H = vx.dim(0), C = vx.dim(1);
        Tensor out({2 * H, C});
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t c = 0; c < C; ++c) {
                out.at2(2 * h, c) = vx.at2(h, c);
                out.at2(2 * h + 1, c) = vx.at2(h, c);
            }
        return push(std::move(out), {x}, [](Tape& t, const Node& n) {
            Tensor& gx = t.gref(n.in[0]);
            std::size_t H = gx.dim(0), C = gx.dim(1);
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t c = 0; c < C; ++c)
                    gx.at2(h, c) += n.grad.at2(2 * h, c) + n.grad.at2(2 * h + 1, c);
        }, "upsample2_rows");
    }

    // ---- reductions ----

    NodeId sum_all(NodeId x) {
        double acc = 0.0;
        for (std::size_t i = 0; i < value(x).size(); ++i) acc += value(x)[i];
        return push(Tensor::scalar(acc), {x}, [](Tape& t, const Node& n) {
            Tensor& gx = t.gref(n.in[0]);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += n.grad[0];
        }, "sum_all");
    }

    NodeId mean_all(NodeId x) {
        std::size_t n = value(x).size();
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += value(x)[i];
        return push(Tensor::scalar(acc / static_cast<double>(n)), {x}, [](Tape& t, const Node& n2) {
            Tensor& gx = t.gref(n2.in[0]);
            double d = n2.grad[0] / static_cast<double>(gx.size());
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += d;
        }, "mean_all");
    }

    // (H,C) -> (C) mean over rows.
    NodeId mean_rows(NodeId x) {
        const Tensor& vx = value(x);
        if (vx.ndim() != 2) throw std::invalid_argument("mean_rows: expects (H,C)");
        std::size_t H = vx.dim(0), C = vx.dim(1);
        Tensor out({C});
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t c = 0; c < C; ++c) out[c] += vx.at2(h, c);
        for (std::size_t c = 0; c < C; ++c) out[c] /= static_cast<double>(H);
        return push(std::move(out), {x}, [](Tape& t, const Node& n) {
            Tensor& gx = t.gref(n.in[0]);
            std::size_t H = gx.dim(0), C = gx.dim(1);
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t c = 0; c < C; ++c)
                    gx.at2(h, c) += n.grad[c] / static_cast<double>(H);
        }, "mean_rows");
    }

    // (H,C) -> (H) sum over channels.
    NodeId sum_cols(NodeId x) {
        const Tensor& vx = value(x);
        if (vx.ndim() != 2) throw std::invalid_argument("sum_cols: expects (H,C)");
        std::size_t H = vx.dim(0), C = vx.dim(1);
        Tensor out({H});
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t c = 0; c < C; ++c) out[h] += vx.at2(h, c);
        return push(std::move(out), {x}, [](Tape& t, const Node& n) {
            Tensor& gx = t.gref(n.in[0]);
            std::size_t H = gx.dim(0), C = gx.dim(1);
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t c = 0; c < C; ++c) gx.at2(h, c) += n.grad[h];
        }, "sum_cols");
    }

    // Mean squared error over all elements -> scalar.
    NodeId mse(NodeId a, NodeId b) {
        require_same_shape("mse", a, b);
        const Tensor& va = value(a);
        const Tensor& vb = value(b);
        double acc = 0.0;
        for (std::size_t i = 0; i < va.size(); ++i) {
            double d = va[i] - vb[i];
            acc += d * d;
        }
        acc /= static_cast<double>(va.size());
        return push(Tensor::scalar(acc), {a, b}, [](Tape& t, const Node& n) {
            const Tensor& va2 = t.value(n.in[0]);
            const Tensor& vb2 = t.value(n.in[1]);
            Tensor& ga = t.gref(n.in[0]);
            Tensor& gb = t.gref(n.in[1]);
            double c = 2.0 * n.grad[0] / static_cast<double>(va2.size());
            for (std::size_t i = 0; i < va2.size(); ++i) {
                double d = c * (va2[i] - vb2[i]);
                ga[i] += d;
                gb[i] -= d;
            }
        }, "mse");
    }

    // Total variation of a vector: sum_h |v[h+1]-v[h]| -> scalar.
    NodeId tv_abs(NodeId x) {
        const Tensor& vx = value(x);
        if (vx.ndim() != 1) throw std::invalid_argument("tv_abs: expects a vector");
        double acc = 0.0;
        for (std::size_t h = 0; h + 1 < vx.size(); ++h) acc += std::fabs(vx[h + 1] - vx[h]);
        return push(Tensor::scalar(acc), {x}, [](Tape& t, const Node& n) {
            const Tensor& v = t.value(n.in[0]);
            Tensor& gv = t.gref(n.in[0]);
            for (std::size_t h = 0; h + 1 < v.size(); ++h) {
                double d = v[h + 1] - v[h];
                double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                gv[h + 1] += s * n.grad[0];
                gv[h] -= s * n.grad[0];
            }
        }, "tv_abs");
    }

    // ---- backward ----

    // Resets all gradients, then accumulates d(root)/d(node) for every node
    // reachable from the scalar root.
    void backward(NodeId root) {
        Node& r = nodes_[static_cast<std::size_t>(root)];
        if (r.value.size() != 1)
            throw std::invalid_argument("backward: root must be scalar, got shape " +
                                        Tensor::shape_str(r.value.shape()));
        std::vector<char> marked(nodes_.size(), 0);
        std::vector<NodeId> stack{root};
        marked[static_cast<std::size_t>(root)] = 1;
        while (!stack.empty()) {
            NodeId u = stack.back();
            stack.pop_back();
            for (NodeId v : nodes_[static_cast<std::size_t>(u)].in)
                if (!marked[static_cast<std::size_t>(v)]) {
                    marked[static_cast<std::size_t>(v)] = 1;
                    stack.push_back(v);
                }
        }
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (marked[i]) {
                nodes_[i].grad = Tensor(nodes_[i].value.shape());
            } else {
                nodes_[i].grad = Tensor();
            }
        }
        r.grad[0] = 1.0;
        for (NodeId u = root; u >= 0; --u) {
            Node& n = nodes_[static_cast<std::size_t>(u)];
            if (marked[static_cast<std::size_t>(u)] && n.back) n.back(*this, n);
        }
    }

    // Gradient for every registered parameter; parameters never touched by
    // the root's subgraph come back as zeros.
    std::map<std::string, Tensor> param_grads() const {
        std::map<std::string, Tensor> out;
        for (const auto& [id, node] : param_nodes_) {
            const Tensor& g = grad(node);
            out[id] = g.size() ? g : Tensor(value(node).shape());
        }
        return out;
    }

    Tensor input_grad(NodeId input) const {
        const Tensor& g = grad(input);
        if (g.size() == 0)
            throw std::invalid_argument("input_grad: node not reached by backward (not on tape path)");
        return g;
    }

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<NodeId> in;
        std::function<void(Tape&, const Node&)> back;
        const char* op;
    };

    Tensor& gref(NodeId n) { return nodes_[static_cast<std::size_t>(n)].grad; }

    void axpy(NodeId dst, double a, const Tensor& src) {
        Tensor& g = gref(dst);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += a * src[i];
    }

    void require_same_shape(const char* op, NodeId a, NodeId b) const {
        if (!value(a).same_shape(value(b)))
            throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                        Tensor::shape_str(value(a).shape()) + " vs " +
                                        Tensor::shape_str(value(b).shape()));
    }

    NodeId push(Tensor v, std::vector<NodeId> in, std::function<void(Tape&, const Node&)> back,
                const char* op) {
        nodes_.push_back(Node{std::move(v), Tensor(), std::move(in), std::move(back), op});
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    std::vector<Node> nodes_;
    std::vector<std::pair<std::string, NodeId>> param_nodes_;
};

// Sinusoidal embedding of a scalar time value; not differentiated (time is
// an index, not an optimization variable).
inline Tensor sinusoidal_time_embedding(double t, std::size_t dim) {
    Tensor e({dim});
    std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                               static_cast<double>(half > 1 ? half - 1 : 1));
        e[2 * i] = std::sin(1000.0 * t * freq);
        e[2 * i + 1] = std::cos(1000.0 * t * freq);
    }
    return e;
}

}  // namespace rgplan
