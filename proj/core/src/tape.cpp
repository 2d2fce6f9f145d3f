#include "octofold/tape.hpp"

#include <cmath>
#include <cstring>

#include "octofold/errors.hpp"
#include "octofold/parallel.hpp"

namespace octofold {

namespace {

void require(bool ok, const std::string& message) {
    if (!ok) throw DimensionError(message);
}

std::int64_t fold_rows(const Tensor& t) { return t.size() / t.dim(t.rank() - 1); }

}  // namespace

NodeId Tape::push(Node&& n) {
    for (NodeId in : n.inputs) {
        if (node(in).requires_grad) {
            n.requires_grad = true;
            break;
        }
    }
    nodes_.push_back(std::move(n));
    return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor& Tape::grad_buffer(NodeId id) {
    Node& n = node(id);
    if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
    return n.grad;
}

NodeId Tape::leaf(Tensor value, bool requires_grad, std::string name) {
    Node n;
    n.value = std::move(value);
    n.value.check_finite(name.empty() ? "leaf" : name.c_str());
    n.requires_grad = requires_grad;
    n.name = std::move(name);
    return push(std::move(n));
}

NodeId Tape::dense(NodeId x, NodeId weight, NodeId bias) {
    const Tensor& xv = node(x).value;
    const Tensor& wv = node(weight).value;
    const Tensor& bv = node(bias).value;
    require(xv.rank() >= 2, "dense: input rank must be >= 2, got " + xv.shape_str());
    require(wv.rank() == 2, "dense: weight must be rank 2, got " + wv.shape_str());
    const std::int64_t din = wv.dim(0);
    const std::int64_t dout = wv.dim(1);
    require(xv.dim(xv.rank() - 1) == din,
            "dense: input depth " + xv.shape_str() + " does not match weight " + wv.shape_str());
    require(bv.rank() == 1 && bv.dim(0) == dout,
            "dense: bias " + bv.shape_str() + " does not match weight " + wv.shape_str());

    std::vector<std::int64_t> out_shape = xv.shape();
    out_shape.back() = dout;
    Tensor out(out_shape);
    const std::int64_t rows = fold_rows(xv);
    const float* xp = xv.data();
    const float* wp = wv.data();
    const float* bp = bv.data();
    float* op = out.data();
    parallel_for(rows, [&](std::int64_t r0, std::int64_t r1) {
        std::vector<double> acc(static_cast<std::size_t>(dout));
        for (std::int64_t r = r0; r < r1; ++r) {
            for (std::int64_t j = 0; j < dout; ++j) acc[j] = bp[j];
            const float* xr = xp + r * din;
            for (std::int64_t i = 0; i < din; ++i) {
                const double xi = xr[i];
                if (xi == 0.0) continue;
                const float* wr = wp + i * dout;
                for (std::int64_t j = 0; j < dout; ++j) acc[j] += xi * wr[j];
            }
            float* orow = op + r * dout;
            for (std::int64_t j = 0; j < dout; ++j) orow[j] = static_cast<float>(acc[j]);
        }
    });
    out.check_finite("dense");

    Node n;
    n.value = std::move(out);
    n.inputs = {x, weight, bias};
    n.backward_fn = [rows, din, dout](Tape& t, const Node& self) {
        const float* gy = self.grad.data();
        const Tensor& xv = t.node(self.inputs[0]).value;
        const Tensor& wv = t.node(self.inputs[1]).value;
        if (t.wants_grad(self.inputs[0])) {
            float* gx = t.grad_buffer(self.inputs[0]).data();
            const float* wp = wv.data();
            parallel_for(rows, [&](std::int64_t r0, std::int64_t r1) {
                for (std::int64_t r = r0; r < r1; ++r) {
                    const float* gr = gy + r * dout;
                    float* gxr = gx + r * din;
                    for (std::int64_t i = 0; i < din; ++i) {
                        const float* wr = wp + i * dout;
                        double acc = 0.0;
                        for (std::int64_t j = 0; j < dout; ++j) acc += gr[j] * static_cast<double>(wr[j]);
                        gxr[i] += static_cast<float>(acc);
                    }
                }
            });
        }
        if (t.wants_grad(self.inputs[1])) {
            float* gw = t.grad_buffer(self.inputs[1]).data();
            const float* xp = xv.data();
            parallel_for(din, [&](std::int64_t i0, std::int64_t i1) {
                std::vector<double> acc(static_cast<std::size_t>(dout));
                for (std::int64_t i = i0; i < i1; ++i) {
                    std::fill(acc.begin(), acc.end(), 0.0);
                    for (std::int64_t r = 0; r < rows; ++r) {
                        const double xi = xp[r * din + i];
                        if (xi == 0.0) continue;
                        const float* gr = gy + r * dout;
                        for (std::int64_t j = 0; j < dout; ++j) acc[j] += xi * gr[j];
                    }
                    float* gwr = gw + i * dout;
                    for (std::int64_t j = 0; j < dout; ++j) gwr[j] += static_cast<float>(acc[j]);
                }
            });
        }
        if (t.wants_grad(self.inputs[2])) {
            float* gb = t.grad_buffer(self.inputs[2]).data();
            std::vector<double> acc(static_cast<std::size_t>(dout));
            for (std::int64_t r = 0; r < rows; ++r) {
                const float* gr = gy + r * dout;
                for (std::int64_t j = 0; j < dout; ++j) acc[j] += gr[j];
            }
            for (std::int64_t j = 0; j < dout; ++j) gb[j] += static_cast<float>(acc[j]);
        }
    };
    return push(std::move(n));
}

NodeId Tape::conv1d(NodeId x, NodeId filters, NodeId bias) {
    const Tensor& xv = node(x).value;
    const Tensor& fv = node(filters).value;
    const Tensor& bv = node(bias).value;
    require(xv.rank() == 3, "conv1d: input must be [batch, length, depth], got " + xv.shape_str());
    require(fv.rank() == 3, "conv1d: filters must be [width, in, out], got " + fv.shape_str());
    const std::int64_t B = xv.dim(0), L = xv.dim(1), din = xv.dim(2);
    const std::int64_t K = fv.dim(0), dout = fv.dim(2);
    require(K % 2 == 1, "conv1d: filter width must be odd, got " + std::to_string(K));
    require(fv.dim(1) == din,
            "conv1d: filters " + fv.shape_str() + " do not match input " + xv.shape_str());
    require(bv.rank() == 1 && bv.dim(0) == dout,
            "conv1d: bias " + bv.shape_str() + " does not match filters " + fv.shape_str());
    const std::int64_t pad = (K - 1) / 2;

    Tensor out({B, L, dout});
    const float* xp = xv.data();
    const float* fp = fv.data();
    const float* bp = bv.data();
    float* op = out.data();
    parallel_for(B * L, [&](std::int64_t p0, std::int64_t p1) {
        std::vector<double> acc(static_cast<std::size_t>(dout));
        for (std::int64_t p = p0; p < p1; ++p) {
            const std::int64_t b = p / L, t = p % L;
            for (std::int64_t o = 0; o < dout; ++o) acc[o] = bp[o];
            for (std::int64_t k = 0; k < K; ++k) {
                const std::int64_t s = t + k - pad;
                if (s < 0 || s >= L) continue;
                const float* xr = xp + (b * L + s) * din;
                const float* fk = fp + k * din * dout;
                for (std::int64_t i = 0; i < din; ++i) {
                    const double xi = xr[i];
                    if (xi == 0.0) continue;
                    const float* fr = fk + i * dout;
                    for (std::int64_t o = 0; o < dout; ++o) acc[o] += xi * fr[o];
                }
            }
            float* orow = op + p * dout;
            for (std::int64_t o = 0; o < dout; ++o) orow[o] = static_cast<float>(acc[o]);
        }
    });
    out.check_finite("conv1d");

    Node n;
    n.value = std::move(out);
    n.inputs = {x, filters, bias};
    n.backward_fn = [B, L, din, dout, K, pad](Tape& t, const Node& self) {
        const float* gy = self.grad.data();
        const Tensor& xv = t.node(self.inputs[0]).value;
        const Tensor& fv = t.node(self.inputs[1]).value;
        if (t.wants_grad(self.inputs[0])) {
            float* gx = t.grad_buffer(self.inputs[0]).data();
            const float* fp = fv.data();
            parallel_for(B * L, [&](std::int64_t p0, std::int64_t p1) {
                for (std::int64_t p = p0; p < p1; ++p) {
                    const std::int64_t b = p / L, s = p % L;
                    float* gxr = gx + p * din;
                    for (std::int64_t k = 0; k < K; ++k) {
                        const std::int64_t tt = s - k + pad;
                        if (tt < 0 || tt >= L) continue;
                        const float* gr = gy + (b * L + tt) * dout;
                        const float* fk = fp + k * din * dout;
                        for (std::int64_t i = 0; i < din; ++i) {
                            const float* fr = fk + i * dout;
                            double acc = 0.0;
                            for (std::int64_t o = 0; o < dout; ++o)
                                acc += gr[o] * static_cast<double>(fr[o]);
                            gxr[i] += static_cast<float>(acc);
                        }
                    }
                }
            });
        }
        if (t.wants_grad(self.inputs[1])) {
            float* gf = t.grad_buffer(self.inputs[1]).data();
            const float* xp = xv.data();
            parallel_for(K * din, [&](std::int64_t q0, std::int64_t q1) {
                std::vector<double> acc(static_cast<std::size_t>(dout));
                for (std::int64_t q = q0; q < q1; ++q) {
                    const std::int64_t k = q / din, i = q % din;
                    std::fill(acc.begin(), acc.end(), 0.0);
                    for (std::int64_t b = 0; b < B; ++b) {
                        for (std::int64_t tt = 0; tt < L; ++tt) {
                            const std::int64_t s = tt + k - pad;
                            if (s < 0 || s >= L) continue;
                            const double xi = xp[(b * L + s) * din + i];
                            if (xi == 0.0) continue;
                            const float* gr = gy + (b * L + tt) * dout;
                            for (std::int64_t o = 0; o < dout; ++o) acc[o] += xi * gr[o];
                        }
                    }
                    float* gfr = gf + q * dout;
                    for (std::int64_t o = 0; o < dout; ++o) gfr[o] += static_cast<float>(acc[o]);
                }
            });
        }
        if (t.wants_grad(self.inputs[2])) {
            float* gb = t.grad_buffer(self.inputs[2]).data();
            std::vector<double> acc(static_cast<std::size_t>(dout));
            for (std::int64_t p = 0; p < B * L; ++p) {
                const float* gr = gy + p * dout;
                for (std::int64_t o = 0; o < dout; ++o) acc[o] += gr[o];
            }
            for (std::int64_t o = 0; o < dout; ++o) gb[o] += static_cast<float>(acc[o]);
        }
    };
    return push(std::move(n));
}

NodeId Tape::multiscale(NodeId x, const std::vector<std::pair<NodeId, NodeId>>& banks) {
    require(!banks.empty(), "multiscale: needs at least one filter bank");
    std::vector<NodeId> outs;
    outs.reserve(banks.size());
    for (const auto& [filters, bias] : banks) outs.push_back(conv1d(x, filters, bias));
    return outs.size() == 1 ? outs[0] : depth_concat(outs);
}

NodeId Tape::depth_concat(const std::vector<NodeId>& xs) {
    require(!xs.empty(), "depth_concat: needs at least one input");
    const Tensor& first = node(xs[0]).value;
    require(first.rank() == 3, "depth_concat: inputs must be [batch, length, depth], got " + first.shape_str());
    const std::int64_t B = first.dim(0), L = first.dim(1);
    std::int64_t total = 0;
    std::vector<std::int64_t> depths(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const Tensor& v = node(xs[i]).value;
        require(v.rank() == 3 && v.dim(0) == B && v.dim(1) == L,
                "depth_concat: input " + std::to_string(i) + " has shape " + v.shape_str() +
                    ", expected grid of " + first.shape_str());
        depths[i] = v.dim(2);
        total += depths[i];
    }

    Tensor out({B, L, total});
    float* op = out.data();
    std::int64_t offset = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const float* src = node(xs[i]).value.data();
        const std::int64_t d = depths[i];
        for (std::int64_t p = 0; p < B * L; ++p)
            std::memcpy(op + p * total + offset, src + p * d, static_cast<std::size_t>(d) * sizeof(float));
        offset += d;
    }

    Node n;
    n.value = std::move(out);
    n.inputs = xs;
    n.backward_fn = [B, L, total, depths](Tape& t, const Node& self) {
        const float* gy = self.grad.data();
        std::int64_t offset = 0;
        for (std::size_t i = 0; i < self.inputs.size(); ++i) {
            const std::int64_t d = depths[i];
            if (t.wants_grad(self.inputs[i])) {
                float* gx = t.grad_buffer(self.inputs[i]).data();
                for (std::int64_t p = 0; p < B * L; ++p) {
                    const float* src = gy + p * total + offset;
                    float* dst = gx + p * d;
                    for (std::int64_t c = 0; c < d; ++c) dst[c] += src[c];
                }
            }
            offset += d;
        }
    };
    return push(std::move(n));
}

NodeId Tape::relu(NodeId x) {
    const Tensor& xv = node(x).value;
    Tensor out(xv.shape());
    const float* xp = xv.data();
    float* op = out.data();
    const std::int64_t count = xv.size();
    for (std::int64_t i = 0; i < count; ++i) op[i] = xp[i] > 0.0f ? xp[i] : 0.0f;

    Node n;
    n.value = std::move(out);
    n.inputs = {x};
    n.backward_fn = [count](Tape& t, const Node& self) {
        if (!t.wants_grad(self.inputs[0])) return;
        const float* xp = t.node(self.inputs[0]).value.data();
        const float* gy = self.grad.data();
        float* gx = t.grad_buffer(self.inputs[0]).data();
        for (std::int64_t i = 0; i < count; ++i)
            if (xp[i] > 0.0f) gx[i] += gy[i];
    };
    return push(std::move(n));
}

NodeId Tape::dropout(NodeId x, double rate, Mode mode, RngStream& rng) {
    if (rate < 0.0 || rate >= 1.0)
        throw ConfigError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
    if (mode == Mode::kInfer || rate == 0.0) return x;

    const Tensor& xv = node(x).value;
    const std::int64_t count = xv.size();
    const float keep_scale = static_cast<float>(1.0 / (1.0 - rate));
    Tensor mask(xv.shape());
    Tensor out(xv.shape());
    const float* xp = xv.data();
    float* mp = mask.data();
    float* op = out.data();
    for (std::int64_t i = 0; i < count; ++i) {
        mp[i] = rng.uniform() < rate ? 0.0f : keep_scale;
        op[i] = xp[i] * mp[i];
    }
    out.check_finite("dropout");

    Node n;
    n.value = std::move(out);
    n.aux = std::move(mask);
    n.inputs = {x};
    n.backward_fn = [count](Tape& t, const Node& self) {
        if (!t.wants_grad(self.inputs[0])) return;
        const float* gy = self.grad.data();
        const float* mp = self.aux.data();
        float* gx = t.grad_buffer(self.inputs[0]).data();
        for (std::int64_t i = 0; i < count; ++i) gx[i] += gy[i] * mp[i];
    };
    return push(std::move(n));
}

NodeId Tape::batchnorm(NodeId x, NodeId gamma, NodeId beta, Mode mode,
                       Tensor& running_mean, Tensor& running_var,
                       const Tensor* valid_mask, double momentum, double epsilon) {
    const Tensor& xv = node(x).value;
    const Tensor& gv = node(gamma).value;
    const Tensor& bv = node(beta).value;
    require(xv.rank() == 3, "batchnorm: input must be [batch, length, channels], got " + xv.shape_str());
    const std::int64_t B = xv.dim(0), L = xv.dim(1), C = xv.dim(2);
    require(gv.rank() == 1 && gv.dim(0) == C, "batchnorm: gamma " + gv.shape_str() + " does not match input " + xv.shape_str());
    require(bv.rank() == 1 && bv.dim(0) == C, "batchnorm: beta " + bv.shape_str() + " does not match input " + xv.shape_str());
    require(running_mean.rank() == 1 && running_mean.dim(0) == C, "batchnorm: running mean " + running_mean.shape_str() + " does not match input");
    require(running_var.rank() == 1 && running_var.dim(0) == C, "batchnorm: running var " + running_var.shape_str() + " does not match input");
    const std::int64_t rows = B * L;
    if (valid_mask != nullptr)
        require(valid_mask->size() == rows, "batchnorm: mask " + valid_mask->shape_str() + " does not cover input " + xv.shape_str());

    // Rows flagged valid contribute to the statistics; every row (padding
    // included) is still normalized so downstream shapes stay rectangular.
    std::vector<char> valid(static_cast<std::size_t>(rows), 1);
    std::int64_t m = rows;
    if (valid_mask != nullptr) {
        m = 0;
        const float* mk = valid_mask->data();
        for (std::int64_t p = 0; p < rows; ++p) {
            valid[static_cast<std::size_t>(p)] = mk[p] != 0.0f;
            m += valid[static_cast<std::size_t>(p)];
        }
        if (m == 0) throw NumericError("batchnorm: mask selects no positions");
    }

    std::vector<double> mean(static_cast<std::size_t>(C)), inv(static_cast<std::size_t>(C));
    const float* xp = xv.data();
    if (mode == Mode::kTrain) {
        if (m < 2)
            throw NumericError("batchnorm: train-mode statistics need at least 2 positions, got " +
                               std::to_string(m));
        std::vector<double> var(static_cast<std::size_t>(C));
        for (std::int64_t p = 0; p < rows; ++p) {
            if (!valid[static_cast<std::size_t>(p)]) continue;
            const float* xr = xp + p * C;
            for (std::int64_t c = 0; c < C; ++c) mean[c] += xr[c];
        }
        for (std::int64_t c = 0; c < C; ++c) mean[c] /= static_cast<double>(m);
        for (std::int64_t p = 0; p < rows; ++p) {
            if (!valid[static_cast<std::size_t>(p)]) continue;
            const float* xr = xp + p * C;
            for (std::int64_t c = 0; c < C; ++c) {
                const double d = xr[c] - mean[c];
                var[c] += d * d;
            }
        }
        for (std::int64_t c = 0; c < C; ++c) {
            var[c] /= static_cast<double>(m);
            inv[c] = 1.0 / std::sqrt(var[c] + epsilon);
        }
        for (std::int64_t c = 0; c < C; ++c) {
            running_mean.at(c) = static_cast<float>(momentum * running_mean.at(c) + (1.0 - momentum) * mean[c]);
            running_var.at(c) = static_cast<float>(momentum * running_var.at(c) + (1.0 - momentum) * var[c]);
        }
    } else {
        for (std::int64_t c = 0; c < C; ++c) {
            mean[c] = running_mean.at(c);
            inv[c] = 1.0 / std::sqrt(static_cast<double>(running_var.at(c)) + epsilon);
        }
    }

    Tensor xhat(xv.shape());
    Tensor out(xv.shape());
    float* hp = xhat.data();
    float* op = out.data();
    const float* gp = gv.data();
    const float* bp = bv.data();
    for (std::int64_t p = 0; p < rows; ++p) {
        const float* xr = xp + p * C;
        float* hr = hp + p * C;
        float* orow = op + p * C;
        for (std::int64_t c = 0; c < C; ++c) {
            const double h = (xr[c] - mean[c]) * inv[c];
            hr[c] = static_cast<float>(h);
            orow[c] = static_cast<float>(h * gp[c] + bp[c]);
        }
    }
    out.check_finite("batchnorm");

    Node n;
    n.value = std::move(out);
    n.aux = std::move(xhat);
    n.inputs = {x, gamma, beta};
    const bool train = mode == Mode::kTrain;
    n.backward_fn = [rows, C, m, inv, valid, train](Tape& t, const Node& self) {
        const float* gy = self.grad.data();
        const float* hp = self.aux.data();
        const float* gp = t.node(self.inputs[1]).value.data();
        if (t.wants_grad(self.inputs[1])) {
            float* gg = t.grad_buffer(self.inputs[1]).data();
            std::vector<double> acc(static_cast<std::size_t>(C));
            for (std::int64_t p = 0; p < rows; ++p)
                for (std::int64_t c = 0; c < C; ++c)
                    acc[c] += static_cast<double>(gy[p * C + c]) * hp[p * C + c];
            for (std::int64_t c = 0; c < C; ++c) gg[c] += static_cast<float>(acc[c]);
        }
        if (t.wants_grad(self.inputs[2])) {
            float* gb = t.grad_buffer(self.inputs[2]).data();
            std::vector<double> acc(static_cast<std::size_t>(C));
            for (std::int64_t p = 0; p < rows; ++p)
                for (std::int64_t c = 0; c < C; ++c) acc[c] += gy[p * C + c];
            for (std::int64_t c = 0; c < C; ++c) gb[c] += static_cast<float>(acc[c]);
        }
        if (!t.wants_grad(self.inputs[0])) return;
        float* gx = t.grad_buffer(self.inputs[0]).data();
        if (!train) {
            // Running statistics are constants, so the map is affine per channel.
            for (std::int64_t p = 0; p < rows; ++p)
                for (std::int64_t c = 0; c < C; ++c)
                    gx[p * C + c] += static_cast<float>(gy[p * C + c] * static_cast<double>(gp[c]) * inv[c]);
            return;
        }
        // Batch statistics depend on the valid rows, giving
        //   dx_q = inv * (dxhat_q - [q valid] * (s1 + xhat_q * s2) / m)
        // with s1 = sum_p dxhat_p and s2 = sum_p dxhat_p * xhat_p taken over
        // all rows (padding rows were normalized with the same statistics).
        std::vector<double> s1(static_cast<std::size_t>(C)), s2(static_cast<std::size_t>(C));
        for (std::int64_t p = 0; p < rows; ++p) {
            for (std::int64_t c = 0; c < C; ++c) {
                const double dh = static_cast<double>(gy[p * C + c]) * gp[c];
                s1[c] += dh;
                s2[c] += dh * hp[p * C + c];
            }
        }
        for (std::int64_t p = 0; p < rows; ++p) {
            const bool v = valid[static_cast<std::size_t>(p)];
            for (std::int64_t c = 0; c < C; ++c) {
                const double dh = static_cast<double>(gy[p * C + c]) * gp[c];
                double g = dh;
                if (v) g -= (s1[c] + static_cast<double>(hp[p * C + c]) * s2[c]) / static_cast<double>(m);
                gx[p * C + c] += static_cast<float>(g * inv[c]);
            }
        }
    };
    return push(std::move(n));
}

NodeId Tape::window_gather(NodeId x, int window) {
    const Tensor& xv = node(x).value;
    require(xv.rank() == 3, "window_gather: input must be [batch, length, depth], got " + xv.shape_str());
    require(window >= 1 && window % 2 == 1,
            "window_gather: window must be odd and positive, got " + std::to_string(window));
    const std::int64_t B = xv.dim(0), L = xv.dim(1), D = xv.dim(2);
    const std::int64_t W = window, off = (window - 1) / 2;

    Tensor out({B, L, W * D});
    const float* xp = xv.data();
    float* op = out.data();
    parallel_for(B * L, [&](std::int64_t p0, std::int64_t p1) {
        for (std::int64_t p = p0; p < p1; ++p) {
            const std::int64_t b = p / L, t = p % L;
            float* orow = op + p * W * D;
            for (std::int64_t j = 0; j < W; ++j) {
                const std::int64_t s = t + j - off;
                if (s >= 0 && s < L)
                    std::memcpy(orow + j * D, xp + (b * L + s) * D, static_cast<std::size_t>(D) * sizeof(float));
            }
        }
    });

    Node n;
    n.value = std::move(out);
    n.inputs = {x};
    n.backward_fn = [B, L, D, W, off](Tape& t, const Node& self) {
        if (!t.wants_grad(self.inputs[0])) return;
        const float* gy = self.grad.data();
        float* gx = t.grad_buffer(self.inputs[0]).data();
        parallel_for(B * L, [&](std::int64_t p0, std::int64_t p1) {
            for (std::int64_t p = p0; p < p1; ++p) {
                const std::int64_t b = p / L, s = p % L;
                float* gxr = gx + p * D;
                for (std::int64_t j = 0; j < W; ++j) {
                    const std::int64_t tt = s - j + off;
                    if (tt < 0 || tt >= L) continue;
                    const float* gr = gy + (b * L + tt) * W * D + j * D;
                    for (std::int64_t d = 0; d < D; ++d) gxr[d] += gr[d];
                }
            }
        });
    };
    return push(std::move(n));
}

NodeId Tape::softmax_xent_masked(NodeId logits, const std::vector<int>& labels, const Tensor& mask) {
    const Tensor& lv = node(logits).value;
    require(lv.rank() == 3, "softmax_xent: logits must be [batch, length, classes], got " + lv.shape_str());
    const std::int64_t B = lv.dim(0), L = lv.dim(1), C = lv.dim(2);
    const std::int64_t rows = B * L;
    require(mask.size() == rows, "softmax_xent: mask " + mask.shape_str() + " does not cover logits " + lv.shape_str());
    require(static_cast<std::int64_t>(labels.size()) == rows,
            "softmax_xent: got " + std::to_string(labels.size()) + " labels for " + std::to_string(rows) + " positions");

    std::vector<char> valid(static_cast<std::size_t>(rows));
    std::int64_t nvalid = 0;
    const float* mp = mask.data();
    for (std::int64_t p = 0; p < rows; ++p) {
        valid[static_cast<std::size_t>(p)] = mp[p] != 0.0f;
        if (!valid[static_cast<std::size_t>(p)]) continue;
        ++nvalid;
        if (labels[static_cast<std::size_t>(p)] < 0 || labels[static_cast<std::size_t>(p)] >= C)
            throw DimensionError("softmax_xent: label " + std::to_string(labels[static_cast<std::size_t>(p)]) +
                                 " at position " + std::to_string(p) + " outside [0, " + std::to_string(C) + ")");
    }
    if (nvalid == 0) throw NumericError("softmax_xent: mask selects no positions");

    Tensor probs(lv.shape());
    const float* lp = lv.data();
    float* pp = probs.data();
    double loss = 0.0;
    for (std::int64_t p = 0; p < rows; ++p) {
        const float* lr = lp + p * C;
        float* pr = pp + p * C;
        double mx = lr[0];
        for (std::int64_t c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(lr[c]));
        double sum = 0.0;
        for (std::int64_t c = 0; c < C; ++c) sum += std::exp(lr[c] - mx);
        const double log_sum = std::log(sum);
        for (std::int64_t c = 0; c < C; ++c)
            pr[c] = static_cast<float>(std::exp(lr[c] - mx - log_sum));
        if (valid[static_cast<std::size_t>(p)])
            loss -= lr[labels[static_cast<std::size_t>(p)]] - mx - log_sum;
    }
    loss /= static_cast<double>(nvalid);
    if (!std::isfinite(loss)) throw NumericError("softmax_xent: loss is not finite");

    Node n;
    n.value = Tensor::from({1}, {static_cast<float>(loss)});
    n.scalar_value = loss;
    n.is_scalar = true;
    n.aux = std::move(probs);
    n.inputs = {logits};
    n.backward_fn = [rows, C, nvalid, labels, valid](Tape& t, const Node& self) {
        if (!t.wants_grad(self.inputs[0])) return;
        const double gs = self.grad.at(0) / static_cast<double>(nvalid);
        const float* pp = self.aux.data();
        float* gl = t.grad_buffer(self.inputs[0]).data();
        for (std::int64_t p = 0; p < rows; ++p) {
            if (!valid[static_cast<std::size_t>(p)]) continue;
            const float* pr = pp + p * C;
            float* gr = gl + p * C;
            const int y = labels[static_cast<std::size_t>(p)];
            for (std::int64_t c = 0; c < C; ++c)
                gr[c] += static_cast<float>(gs * (pr[c] - (c == y ? 1.0 : 0.0)));
        }
    };
    return push(std::move(n));
}

NodeId Tape::weighted_sum(NodeId x, Tensor coeffs) {
    const Tensor& xv = node(x).value;
    require(coeffs.same_shape(xv),
            "weighted_sum: coefficients " + coeffs.shape_str() + " do not match input " + xv.shape_str());
    const float* xp = xv.data();
    const float* cp = coeffs.data();
    double sum = 0.0;
    const std::int64_t count = xv.size();
    for (std::int64_t i = 0; i < count; ++i) sum += static_cast<double>(xp[i]) * cp[i];
    if (!std::isfinite(sum)) throw NumericError("weighted_sum: result is not finite");

    Node n;
    n.value = Tensor::from({1}, {static_cast<float>(sum)});
    n.scalar_value = sum;
    n.is_scalar = true;
    n.aux = std::move(coeffs);
    n.inputs = {x};
    n.backward_fn = [count](Tape& t, const Node& self) {
        if (!t.wants_grad(self.inputs[0])) return;
        const double gs = self.grad.at(0);
        const float* cp = self.aux.data();
        float* gx = t.grad_buffer(self.inputs[0]).data();
        for (std::int64_t i = 0; i < count; ++i) gx[i] += static_cast<float>(gs * cp[i]);
    };
    return push(std::move(n));
}

double Tape::scalar(NodeId id) const {
    const Node& n = node(id);
    require(n.is_scalar, "scalar: node does not hold a scalar value");
    return n.scalar_value;
}

const Tensor& Tape::softmax_probs(NodeId xent) const {
    const Node& n = node(xent);
    require(n.is_scalar && !n.aux.empty(), "softmax_probs: node is not a cross-entropy node");
    return n.aux;
}

void Tape::backward(NodeId loss) {
    Node& ln = node(loss);
    require(ln.is_scalar, "backward: root node is not a scalar");
    for (Node& n : nodes_) n.grad = Tensor();
    ln.grad = Tensor::from({1}, {1.0f});
    for (std::int64_t i = loss.index; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.grad.empty() || !n.backward_fn) continue;
        n.grad.check_finite(n.name.empty() ? "backward" : n.name.c_str());
        n.backward_fn(*this, n);
    }
    for (const Node& n : nodes_)
        if (n.requires_grad && !n.grad.empty() && n.inputs.empty())
            n.grad.check_finite(n.name.empty() ? "gradient" : n.name.c_str());
}

Tensor Tape::grad(NodeId id) const {
    const Node& n = node(id);
    return n.grad.empty() ? Tensor::zeros(n.value.shape()) : n.grad;
}

std::map<std::string, Tensor> Tape::named_grads() const {
    std::map<std::string, Tensor> out;
    for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        if (n.requires_grad && n.inputs.empty() && !n.name.empty())
            out.emplace(n.name, grad(NodeId{i}));
    }
    return out;
}

}  // namespace octofold
