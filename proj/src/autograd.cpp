#include "rdd/autograd.hpp"

#include "rdd/error.hpp"
#include "rdd/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace rdd::nn {

namespace {

thread_local bool t_grad_enabled = true;

bool any_requires_grad(std::initializer_list<const Var*> vars) {
    if (!t_grad_enabled) return false;
    return std::any_of(vars.begin(), vars.end(), [](const Var* v) { return v->requires_grad(); });
}

/// Wraps an op result; records parents and the closure only when needed.
Var make_result(Tensor value, std::initializer_list<const Var*> inputs,
                std::function<void(Node&)> backward_fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (any_requires_grad(inputs)) {
        node->requires_grad = true;
        for (const Var* v : inputs) node->parents.push_back(v->ptr());
        node->backward = std::move(backward_fn);
    }
    return Var(std::move(node));
}

} // namespace

void Node::accumulate(const Tensor& g) {
    if (grad.empty()) {
        grad = g;
    } else {
        grad += g;
    }
}

Tensor& Node::grad_buffer() {
    if (grad.empty()) grad = Tensor(value.shape());
    return grad;
}

Var Var::constant(Tensor t) {
    auto node = std::make_shared<Node>();
    node->value = std::move(t);
    return Var(std::move(node));
}

Var Var::input(Tensor t, bool requires_grad) {
    auto node = std::make_shared<Node>();
    node->value = std::move(t);
    node->requires_grad = requires_grad;
    return Var(std::move(node));
}

Var Var::leaf(Param& p) {
    auto node = std::make_shared<Node>();
    node->value = p.value;
    if (p.trainable && t_grad_enabled) {
        node->requires_grad = true;
        node->sink = &p;
    }
    return Var(std::move(node));
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

void backward(std::span<const std::pair<Var, Tensor>> seeds) {
    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    for (const auto& [var, grad] : seeds) {
        Node* root = var.node();
        RDD_REQUIRE(root != nullptr, "null seed");
        RDD_REQUIRE(grad.shape() == root->value.shape(), "seed gradient shape mismatch");
        if (!root->requires_grad) continue;
        root->accumulate(grad);
        if (visited.count(root)) continue;
        visited.insert(root);
        stack.emplace_back(root, 0);
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                Node* parent = node->parents[next++].get();
                if (parent->requires_grad && !visited.count(parent)) {
                    visited.insert(parent);
                    stack.emplace_back(parent, 0);
                }
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->grad.empty()) continue;
        if (node->backward) node->backward(*node);
        if (node->sink) node->sink->grad += node->grad;
    }
}

void backward(const Var& root, const Tensor& seed) {
    const std::pair<Var, Tensor> one[] = {{root, seed}};
    backward(one);
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    RDD_REQUIRE(ws.c == xs.c, "conv2d channel mismatch: input " + xs.str() + " weight " + ws.str());
    RDD_REQUIRE(ws.h == ws.w, "conv2d expects square kernels");
    RDD_REQUIRE(bias.value().size() == std::size_t(ws.n), "conv2d bias size mismatch");
    kernels::ConvGeometry g{xs.c, xs.h, xs.w, ws.h, stride, pad};
    Tensor y(Shape{xs.n, ws.n, g.out_height(), g.out_width()});
    kernels::conv2d_forward(g, xs.n, ws.n, x.value().data(), weight.value().data(),
                            bias.value().data(), y.data());
    return make_result(std::move(y), {&x, &weight, &bias}, [g, xs, ws](Node& self) {
        Node& xn = *self.parents[0];
        Node& wn = *self.parents[1];
        Node& bn = *self.parents[2];
        Tensor dx = xn.requires_grad ? Tensor(xs) : Tensor();
        Tensor dw = wn.requires_grad ? Tensor(ws) : Tensor();
        Tensor db = bn.requires_grad ? Tensor(bn.value.shape()) : Tensor();
        kernels::conv2d_backward(g, xs.n, ws.n, xn.value.data(), wn.value.data(), self.grad.data(),
                                 xn.requires_grad ? dx.data() : nullptr,
                                 wn.requires_grad ? dw.data() : nullptr,
                                 bn.requires_grad ? db.data() : nullptr);
        if (xn.requires_grad) xn.accumulate(dx);
        if (wn.requires_grad) wn.accumulate(dw);
        if (bn.requires_grad) bn.accumulate(db);
    });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    const int n = xs.n;
    const int f = int(xs.per_item());
    const int o = ws.n;
    RDD_REQUIRE(int(ws.per_item()) == f, "linear feature mismatch");
    RDD_REQUIRE(bias.value().size() == std::size_t(o), "linear bias size mismatch");
    Tensor y(Shape{n, o, 1, 1});
    kernels::gemm(kernels::Trans::no, kernels::Trans::yes, n, o, f, 1.0f, x.value().data(), f,
                  weight.value().data(), f, 0.0f, y.data(), o);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < o; ++j) y[std::size_t(i) * o + j] += bias.value()[j];
    }
    return make_result(std::move(y), {&x, &weight, &bias}, [n, f, o](Node& self) {
        Node& xn = *self.parents[0];
        Node& wn = *self.parents[1];
        Node& bn = *self.parents[2];
        const float* dy = self.grad.data();
        if (xn.requires_grad) {
            Tensor dx(xn.value.shape());
            kernels::gemm(kernels::Trans::no, kernels::Trans::no, n, f, o, 1.0f, dy, o,
                          wn.value.data(), f, 0.0f, dx.data(), f);
            xn.accumulate(dx);
        }
        if (wn.requires_grad) {
            Tensor dw(wn.value.shape());
            kernels::gemm(kernels::Trans::yes, kernels::Trans::no, o, f, n, 1.0f, dy, o,
                          xn.value.data(), f, 0.0f, dw.data(), f);
            wn.accumulate(dw);
        }
        if (bn.requires_grad) {
            Tensor db(bn.value.shape());
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < o; ++j) db[j] += dy[std::size_t(i) * o + j];
            }
            bn.accumulate(db);
        }
    });
}

Var relu(const Var& x) {
    Tensor y = x.value();
    for (float& v : y.vec()) v = v > 0.0f ? v : 0.0f;
    return make_result(std::move(y), {&x}, [](Node& self) {
        Node& xn = *self.parents[0];
        Tensor dx = self.grad;
        for (std::size_t i = 0; i < dx.size(); ++i) {
            if (!(xn.value[i] > 0.0f)) dx[i] = 0.0f;
        }
        xn.accumulate(dx);
    });
}

Var silu(const Var& x) {
    Tensor y = x.value();
    for (float& v : y.vec()) v = v / (1.0f + std::exp(-v));
    return make_result(std::move(y), {&x}, [](Node& self) {
        Node& xn = *self.parents[0];
        Tensor dx = self.grad;
        for (std::size_t i = 0; i < dx.size(); ++i) {
            const float v = xn.value[i];
            const float s = 1.0f / (1.0f + std::exp(-v));
            dx[i] *= s * (1.0f + v * (1.0f - s));
        }
        xn.accumulate(dx);
    });
}

Var add(const Var& a, const Var& b) {
    RDD_REQUIRE(a.shape() == b.shape(), "add shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    Tensor y = a.value();
    y += b.value();
    return make_result(std::move(y), {&a, &b}, [](Node& self) {
        for (auto& p : self.parents) {
            if (p->requires_grad) p->accumulate(self.grad);
        }
    });
}

Var add_channel_bias(const Var& x, const Var& e) {
    const Shape xs = x.shape();
    RDD_REQUIRE(e.shape() == (Shape{xs.n, xs.c, 1, 1}), "channel bias shape mismatch");
    Tensor y = x.value();
    const int hw = xs.spatial();
    for (int nc = 0; nc < xs.n * xs.c; ++nc) {
        const float b = e.value()[nc];
        float* row = y.data() + std::size_t(nc) * hw;
        for (int i = 0; i < hw; ++i) row[i] += b;
    }
    return make_result(std::move(y), {&x, &e}, [xs, hw](Node& self) {
        Node& xn = *self.parents[0];
        Node& en = *self.parents[1];
        if (xn.requires_grad) xn.accumulate(self.grad);
        if (en.requires_grad) {
            Tensor de(en.value.shape());
            for (int nc = 0; nc < xs.n * xs.c; ++nc) {
                const float* row = self.grad.data() + std::size_t(nc) * hw;
                float acc = 0.0f;
                for (int i = 0; i < hw; ++i) acc += row[i];
                de[nc] = acc;
            }
            en.accumulate(de);
        }
    });
}

Var upsample2(const Var& x) {
    const Shape xs = x.shape();
    Tensor y(Shape{xs.n, xs.c, xs.h * 2, xs.w * 2});
    for (int nc = 0; nc < xs.n * xs.c; ++nc) {
        const float* src = x.value().data() + std::size_t(nc) * xs.spatial();
        float* dst = y.data() + std::size_t(nc) * xs.spatial() * 4;
        for (int i = 0; i < xs.h * 2; ++i) {
            for (int j = 0; j < xs.w * 2; ++j) dst[i * xs.w * 2 + j] = src[(i / 2) * xs.w + j / 2];
        }
    }
    return make_result(std::move(y), {&x}, [xs](Node& self) {
        Node& xn = *self.parents[0];
        Tensor dx(xs);
        for (int nc = 0; nc < xs.n * xs.c; ++nc) {
            const float* src = self.grad.data() + std::size_t(nc) * xs.spatial() * 4;
            float* dst = dx.data() + std::size_t(nc) * xs.spatial();
            for (int i = 0; i < xs.h * 2; ++i) {
                for (int j = 0; j < xs.w * 2; ++j) dst[(i / 2) * xs.w + j / 2] += src[i * xs.w * 2 + j];
            }
        }
        xn.accumulate(dx);
    });
}

Var concat_channels(const Var& a, const Var& b) {
    const Shape as = a.shape();
    const Shape bs = b.shape();
    RDD_REQUIRE(as.n == bs.n && as.h == bs.h && as.w == bs.w, "concat shape mismatch");
    Tensor y(Shape{as.n, as.c + bs.c, as.h, as.w});
    for (int n = 0; n < as.n; ++n) {
        std::copy_n(a.value().item(n), as.per_item(), y.item(n));
        std::copy_n(b.value().item(n), bs.per_item(), y.item(n) + as.per_item());
    }
    return make_result(std::move(y), {&a, &b}, [as, bs](Node& self) {
        Node& an = *self.parents[0];
        Node& bn = *self.parents[1];
        if (an.requires_grad) {
            Tensor da(as);
            for (int n = 0; n < as.n; ++n) std::copy_n(self.grad.item(n), as.per_item(), da.item(n));
            an.accumulate(da);
        }
        if (bn.requires_grad) {
            Tensor db(bs);
            for (int n = 0; n < bs.n; ++n) {
                std::copy_n(self.grad.item(n) + as.per_item(), bs.per_item(), db.item(n));
            }
            bn.accumulate(db);
        }
    });
}

Var global_avg_pool(const Var& x) {
    const Shape xs = x.shape();
    const int hw = xs.spatial();
    Tensor y(Shape{xs.n, xs.c, 1, 1});
    for (int nc = 0; nc < xs.n * xs.c; ++nc) {
        const float* row = x.value().data() + std::size_t(nc) * hw;
        double acc = 0.0;
        for (int i = 0; i < hw; ++i) acc += row[i];
        y[nc] = float(acc / hw);
    }
    return make_result(std::move(y), {&x}, [xs, hw](Node& self) {
        Node& xn = *self.parents[0];
        Tensor dx(xs);
        for (int nc = 0; nc < xs.n * xs.c; ++nc) {
            const float g = self.grad[nc] / float(hw);
            float* row = dx.data() + std::size_t(nc) * hw;
            for (int i = 0; i < hw; ++i) row[i] = g;
        }
        xn.accumulate(dx);
    });
}

Var l2_normalize_channels(const Var& x) {
    const Shape xs = x.shape();
    const int hw = xs.spatial();
    Tensor y(xs);
    std::vector<float> norms(std::size_t(xs.n) * hw);
    for (int n = 0; n < xs.n; ++n) {
        const float* src = x.value().item(n);
        float* dst = y.item(n);
        for (int p = 0; p < hw; ++p) {
            double sq = 0.0;
            for (int c = 0; c < xs.c; ++c) sq += double(src[c * hw + p]) * src[c * hw + p];
            const float norm = float(std::sqrt(sq));
            norms[std::size_t(n) * hw + p] = norm;
            for (int c = 0; c < xs.c; ++c) dst[c * hw + p] = norm > 0.0f ? src[c * hw + p] / norm : 0.0f;
        }
    }
    Tensor y_copy = y;
    return make_result(std::move(y), {&x}, [xs, hw, norms = std::move(norms), y = std::move(y_copy)](Node& self) {
        Node& xn = *self.parents[0];
        Tensor dx(xs);
        for (int n = 0; n < xs.n; ++n) {
            const float* g = self.grad.item(n);
            const float* yn = y.item(n);
            float* d = dx.item(n);
            for (int p = 0; p < hw; ++p) {
                const float norm = norms[std::size_t(n) * hw + p];
                if (norm == 0.0f) continue;
                double dot = 0.0;
                for (int c = 0; c < xs.c; ++c) dot += double(yn[c * hw + p]) * g[c * hw + p];
                for (int c = 0; c < xs.c; ++c) {
                    d[c * hw + p] = float((g[c * hw + p] - yn[c * hw + p] * dot) / norm);
                }
            }
        }
        xn.accumulate(dx);
    });
}

Var per_item_axpby(std::span<const double> a, const Var& x, std::span<const double> b, const Var& y) {
    const Shape s = x.shape();
    RDD_REQUIRE(s == y.shape(), "axpby shape mismatch");
    RDD_REQUIRE(a.size() == std::size_t(s.n) && b.size() == std::size_t(s.n), "axpby coefficient count");
    std::vector<double> ac(a.begin(), a.end());
    std::vector<double> bc(b.begin(), b.end());
    Tensor out(s);
    const std::size_t m = s.per_item();
    for (int n = 0; n < s.n; ++n) {
        const float* xi = x.value().item(n);
        const float* yi = y.value().item(n);
        float* o = out.item(n);
        for (std::size_t i = 0; i < m; ++i) o[i] = float(ac[n] * xi[i] + bc[n] * yi[i]);
    }
    return make_result(std::move(out), {&x, &y}, [s, m, ac, bc](Node& self) {
        for (int which = 0; which < 2; ++which) {
            Node& p = *self.parents[which];
            if (!p.requires_grad) continue;
            const auto& coef = which == 0 ? ac : bc;
            Tensor d(s);
            for (int n = 0; n < s.n; ++n) {
                const float* g = self.grad.item(n);
                float* dn = d.item(n);
                for (std::size_t i = 0; i < m; ++i) dn[i] = float(coef[n] * g[i]);
            }
            p.accumulate(d);
        }
    });
}

Var embedding(const Var& table, std::span<const int> ids) {
    const Shape ts = table.shape();
    const int dim = int(ts.per_item());
    Tensor y(Shape{int(ids.size()), dim, 1, 1});
    std::vector<int> idx(ids.begin(), ids.end());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        RDD_REQUIRE(idx[i] >= 0 && idx[i] < ts.n, "embedding id out of range");
        std::copy_n(table.value().item(idx[i]), dim, y.item(int(i)));
    }
    return make_result(std::move(y), {&table}, [ts, dim, idx = std::move(idx)](Node& self) {
        Node& tn = *self.parents[0];
        Tensor d(ts);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            float* dst = d.item(idx[i]);
            const float* g = self.grad.item(int(i));
            for (int k = 0; k < dim; ++k) dst[k] += g[k];
        }
        tn.accumulate(d);
    });
}

Var batch_norm(const Var& x, BatchNormState& state, bool training, double momentum, double eps) {
    const Shape xs = x.shape();
    const int hw = xs.spatial();
    const int channels = xs.c;
    const double count = double(xs.n) * hw;
    RDD_REQUIRE(state.gamma.value.size() == std::size_t(channels), "batch_norm channel mismatch");

    std::vector<double> mean(channels);
    std::vector<double> inv_std(channels);
    if (training) {
        RDD_REQUIRE(count > 1, "batch_norm training needs more than one value per channel");
        for (int c = 0; c < channels; ++c) {
            double s = 0.0;
            for (int n = 0; n < xs.n; ++n) {
                const float* row = x.value().item(n) + std::size_t(c) * hw;
                for (int i = 0; i < hw; ++i) s += row[i];
            }
            mean[c] = s / count;
            double v = 0.0;
            for (int n = 0; n < xs.n; ++n) {
                const float* row = x.value().item(n) + std::size_t(c) * hw;
                for (int i = 0; i < hw; ++i) v += (row[i] - mean[c]) * (row[i] - mean[c]);
            }
            const double var = v / count;
            inv_std[c] = 1.0 / std::sqrt(var + eps);
            if (grad_enabled()) {
                float& rm = state.running_mean.value[c];
                float& rv = state.running_var.value[c];
                rm = float((1.0 - momentum) * rm + momentum * mean[c]);
                rv = float((1.0 - momentum) * rv + momentum * v / (count - 1));
            }
        }
    } else {
        for (int c = 0; c < channels; ++c) {
            mean[c] = state.running_mean.value[c];
            inv_std[c] = 1.0 / std::sqrt(double(state.running_var.value[c]) + eps);
        }
    }

    Tensor xhat(xs);
    Tensor y(xs);
    for (int n = 0; n < xs.n; ++n) {
        for (int c = 0; c < channels; ++c) {
            const float* src = x.value().item(n) + std::size_t(c) * hw;
            float* xh = xhat.item(n) + std::size_t(c) * hw;
            float* dst = y.item(n) + std::size_t(c) * hw;
            const float gam = state.gamma.value[c];
            const float bet = state.beta.value[c];
            for (int i = 0; i < hw; ++i) {
                xh[i] = float((src[i] - mean[c]) * inv_std[c]);
                dst[i] = gam * xh[i] + bet;
            }
        }
    }

    Var gamma = Var::leaf(state.gamma);
    Var beta = Var::leaf(state.beta);
    return make_result(
        std::move(y), {&x, &gamma, &beta},
        [xs, hw, channels, count, training, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node& self) {
            Node& xn = *self.parents[0];
            Node& gn = *self.parents[1];
            Node& bn = *self.parents[2];
            std::vector<double> sum_dy(channels, 0.0);
            std::vector<double> sum_dy_xhat(channels, 0.0);
            for (int n = 0; n < xs.n; ++n) {
                for (int c = 0; c < channels; ++c) {
                    const float* g = self.grad.item(n) + std::size_t(c) * hw;
                    const float* xh = xhat.item(n) + std::size_t(c) * hw;
                    for (int i = 0; i < hw; ++i) {
                        sum_dy[c] += g[i];
                        sum_dy_xhat[c] += double(g[i]) * xh[i];
                    }
                }
            }
            if (gn.requires_grad) {
                Tensor dg(gn.value.shape());
                for (int c = 0; c < channels; ++c) dg[c] = float(sum_dy_xhat[c]);
                gn.accumulate(dg);
            }
            if (bn.requires_grad) {
                Tensor db(bn.value.shape());
                for (int c = 0; c < channels; ++c) db[c] = float(sum_dy[c]);
                bn.accumulate(db);
            }
            if (xn.requires_grad) {
                Tensor dx(xs);
                for (int n = 0; n < xs.n; ++n) {
                    for (int c = 0; c < channels; ++c) {
                        const float* g = self.grad.item(n) + std::size_t(c) * hw;
                        const float* xh = xhat.item(n) + std::size_t(c) * hw;
                        float* d = dx.item(n) + std::size_t(c) * hw;
                        const double gam = gn.value[c];
                        for (int i = 0; i < hw; ++i) {
                            if (training) {
                                d[i] = float(gam * inv_std[c] / count *
                                             (count * g[i] - sum_dy[c] - xh[i] * sum_dy_xhat[c]));
                            } else {
                                d[i] = float(gam * inv_std[c] * g[i]);
                            }
                        }
                    }
                }
                xn.accumulate(dx);
            }
        });
}

} // namespace rdd::nn
