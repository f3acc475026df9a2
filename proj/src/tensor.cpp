#include "mmsense/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace mmsense {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

std::size_t shape_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

NodePtr make_leaf(std::vector<std::size_t> shape, std::vector<double> data, bool requires_grad) {
    if (shape_size(shape) != data.size()) {
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    n->needs_grad = requires_grad;
    return n;
}

NodePtr make_op(std::vector<std::size_t> shape, std::vector<double> data,
                std::vector<NodePtr> parents, std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->parents = std::move(parents);
    for (const auto& p : n->parents) {
        if (p->needs_grad) { n->needs_grad = true; break; }
    }
    if (n->needs_grad) n->backward_fn = std::move(bw);
    return n;
}

void accumulate(Node& dst, std::size_t i, double v) {
    dst.grad[i] += v;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

}  // namespace

std::uint64_t hash_doubles(const std::vector<double>& values) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (double v : values) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        for (int s = 0; s < 64; s += 8) {
            h ^= (bits >> s) & 0xffULL;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    std::size_t n = shape_size(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
    std::size_t n = shape_size(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> data, bool requires_grad) {
    return Tensor(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor(make_leaf({1}, {value}, requires_grad));
}

double Tensor::value() const {
    if (size() != 1) {
        throw ShapeError("value() requires a one-element tensor, got " + shape_str(shape()));
    }
    return node_->data[0];
}

// ---- elementwise ---------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    auto pa = a.node(), pb = b.node();
    return Tensor(make_op(a.shape(), std::move(out), {pa, pb}, [pa, pb](Node& n) {
        if (pa->needs_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < n.size(); ++i) accumulate(*pa, i, n.grad[i]);
        }
        if (pb->needs_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < n.size(); ++i) accumulate(*pb, i, n.grad[i]);
        }
    }));
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    auto pa = a.node(), pb = b.node();
    return Tensor(make_op(a.shape(), std::move(out), {pa, pb}, [pa, pb](Node& n) {
        if (pa->needs_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < n.size(); ++i) accumulate(*pa, i, n.grad[i]);
        }
        if (pb->needs_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < n.size(); ++i) accumulate(*pb, i, -n.grad[i]);
        }
    }));
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    auto pa = a.node(), pb = b.node();
    return Tensor(make_op(a.shape(), std::move(out), {pa, pb}, [pa, pb](Node& n) {
        if (pa->needs_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < n.size(); ++i) accumulate(*pa, i, n.grad[i] * pb->data[i]);
        }
        if (pb->needs_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < n.size(); ++i) accumulate(*pb, i, n.grad[i] * pa->data[i]);
        }
    }));
}

Tensor scale(const Tensor& x, double c) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * c;
    auto px = x.node();
    return Tensor(make_op(x.shape(), std::move(out), {px}, [px, c](Node& n) {
        if (!px->needs_grad) return;
        px->ensure_grad();
        for (std::size_t i = 0; i < n.size(); ++i) accumulate(*px, i, n.grad[i] * c);
    }));
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
    if (s.size() != 1) throw ShapeError("scale_by: scaling factor must be one element");
    double c = s.data()[0];
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * c;
    auto px = x.node(), ps = s.node();
    return Tensor(make_op(x.shape(), std::move(out), {px, ps}, [px, ps](Node& n) {
        double c2 = ps->data[0];
        if (px->needs_grad) {
            px->ensure_grad();
            for (std::size_t i = 0; i < n.size(); ++i) accumulate(*px, i, n.grad[i] * c2);
        }
        if (ps->needs_grad) {
            ps->ensure_grad();
            double acc = 0.0;
            for (std::size_t i = 0; i < n.size(); ++i) acc += n.grad[i] * px->data[i];
            accumulate(*ps, 0, acc);
        }
    }));
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor exp_op(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.data()[i]);
    auto px = x.node();
    return Tensor(make_op(x.shape(), std::move(out), {px}, [px](Node& n) {
        if (!px->needs_grad) return;
        px->ensure_grad();
        for (std::size_t i = 0; i < n.size(); ++i) accumulate(*px, i, n.grad[i] * n.data[i]);
    }));
}

Tensor relu(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
    auto px = x.node();
    return Tensor(make_op(x.shape(), std::move(out), {px}, [px](Node& n) {
        if (!px->needs_grad) return;
        px->ensure_grad();
        for (std::size_t i = 0; i < n.size(); ++i) {
            if (px->data[i] > 0.0) accumulate(*px, i, n.grad[i]);
        }
    }));
}

Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = x.data()[i];
        out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                          : std::exp(v) / (1.0 + std::exp(v));
    }
    auto px = x.node();
    return Tensor(make_op(x.shape(), std::move(out), {px}, [px](Node& n) {
        if (!px->needs_grad) return;
        px->ensure_grad();
        for (std::size_t i = 0; i < n.size(); ++i) {
            accumulate(*px, i, n.grad[i] * n.data[i] * (1.0 - n.data[i]));
        }
    }));
}

// ---- matrix ops ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows()) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " * " +
                         shape_str(b.shape()));
    }
    std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    std::vector<double> out(n * m, 0.0);
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            double av = ad[i * k + kk];
            if (av == 0.0) continue;
            const double* brow = bd + kk * m;
            double* orow = out.data() + i * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
    auto pa = a.node(), pb = b.node();
    return Tensor(make_op({n, m}, std::move(out), {pa, pb}, [pa, pb, n, k, m](Node& nd) {
        // dA = dOut * B^T ; dB = A^T * dOut
        if (pa->needs_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t kk = 0; kk < k; ++kk) {
                    double acc = 0.0;
                    const double* grow = nd.grad.data() + i * m;
                    const double* brow = pb->data.data() + kk * m;
                    for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
                    accumulate(*pa, i * k + kk, acc);
                }
            }
        }
        if (pb->needs_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                const double* arow = pa->data.data() + i * k;
                const double* grow = nd.grad.data() + i * m;
                for (std::size_t kk = 0; kk < k; ++kk) {
                    double av = arow[kk];
                    if (av == 0.0) continue;
                    double* brow = pb->grad.data() + kk * m;
                    for (std::size_t j = 0; j < m; ++j) brow[j] += av * grow[j];
                }
            }
        }
    }));
}

Tensor transpose(const Tensor& x) {
    if (x.shape().size() != 2) throw ShapeError("transpose: expects a matrix");
    std::size_t n = x.rows(), m = x.cols();
    std::vector<double> out(n * m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out[j * n + i] = x.data()[i * m + j];
    auto px = x.node();
    return Tensor(make_op({m, n}, std::move(out), {px}, [px, n, m](Node& nd) {
        if (!px->needs_grad) return;
        px->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) accumulate(*px, i * m + j, nd.grad[j * n + i]);
    }));
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias) {
    if (x.shape().size() != 2 || w.shape().size() != 2 || x.cols() != w.rows()) {
        throw ShapeError("linear: inner dimensions disagree, x " + shape_str(x.shape()) +
                         " vs W " + shape_str(w.shape()));
    }
    Tensor out = matmul(x, w);
    if (bias == nullptr) return out;
    if (bias->shape().size() != 1 || bias->size() != w.cols()) {
        throw ShapeError("linear: bias " + shape_str(bias->shape()) + " does not match W " +
                         shape_str(w.shape()));
    }
    std::size_t n = out.rows(), m = out.cols();
    std::vector<double> data(out.data());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) data[i * m + j] += bias->data()[j];
    auto po = out.node(), pb = bias->node();
    return Tensor(make_op({n, m}, std::move(data), {po, pb}, [po, pb, n, m](Node& nd) {
        if (po->needs_grad) {
            po->ensure_grad();
            for (std::size_t i = 0; i < nd.size(); ++i) accumulate(*po, i, nd.grad[i]);
        }
        if (pb->needs_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) accumulate(*pb, j, nd.grad[i * m + j]);
        }
    }));
}

// ---- reductions / normalization -------------------------------------------

Tensor softmax(const Tensor& x, std::size_t axis) {
    const auto& shape = x.shape();
    if (axis >= shape.size()) {
        throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape));
    }
    for (double v : x.data()) {
        if (std::isnan(v)) throw NumericError("softmax: NaN in input");
    }
    std::size_t n = shape[axis];
    std::size_t inner = 1, outer = 1;
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];

    std::vector<double> out(x.size());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            std::size_t base = o * n * inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, x.data()[base + i * inner]);
            double denom = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double e = std::exp(x.data()[base + i * inner] - mx);
                out[base + i * inner] = e;
                denom += e;
            }
            for (std::size_t i = 0; i < n; ++i) out[base + i * inner] /= denom;
        }
    }
    auto px = x.node();
    return Tensor(make_op(shape, std::move(out), {px}, [px, n, inner, outer](Node& nd) {
        if (!px->needs_grad) return;
        px->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                std::size_t base = o * n * inner + in;
                double dot = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    dot += nd.grad[base + i * inner] * nd.data[base + i * inner];
                }
                for (std::size_t i = 0; i < n; ++i) {
                    std::size_t idx = base + i * inner;
                    accumulate(*px, idx, nd.data[idx] * (nd.grad[idx] - dot));
                }
            }
        }
    }));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
    if (x.shape().size() != 2) throw ShapeError("layer_norm: expects n×d input");
    std::size_t n = x.rows(), d = x.cols();
    if (gain.size() != d || shift.size() != d) {
        throw ShapeError("layer_norm: gain/shift length must equal feature dim " +
                         std::to_string(d));
    }
    if (eps <= 0.0) throw ConfigError("layer_norm: eps must be positive");

    std::vector<double> out(n * d);
    std::vector<double> means(n), inv_std(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = x.data().data() + i * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(d);
        means[i] = mean;
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            out[i * d + j] = gain.data()[j] * (row[j] - mean) * inv_std[i] + shift.data()[j];
        }
    }
    auto px = x.node(), pg = gain.node(), ps = shift.node();
    return Tensor(make_op({n, d}, std::move(out), {px, pg, ps},
                          [px, pg, ps, n, d, means, inv_std](Node& nd) {
        for (std::size_t i = 0; i < n; ++i) {
            const double* row = px->data.data() + i * d;
            const double* grow = nd.grad.data() + i * d;
            if (pg->needs_grad || ps->needs_grad) {
                if (pg->needs_grad) pg->ensure_grad();
                if (ps->needs_grad) ps->ensure_grad();
                for (std::size_t j = 0; j < d; ++j) {
                    double xhat = (row[j] - means[i]) * inv_std[i];
                    if (pg->needs_grad) accumulate(*pg, j, grow[j] * xhat);
                    if (ps->needs_grad) accumulate(*ps, j, grow[j]);
                }
            }
            if (px->needs_grad) {
                px->ensure_grad();
                // dL/dxhat_j = g_j * gain_j; standard layer-norm backward.
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    double xhat = (row[j] - means[i]) * inv_std[i];
                    double dxhat = grow[j] * pg->data[j];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
                double dn = static_cast<double>(d);
                for (std::size_t j = 0; j < d; ++j) {
                    double xhat = (row[j] - means[i]) * inv_std[i];
                    double dxhat = grow[j] * pg->data[j];
                    accumulate(*px, i * d + j,
                               inv_std[i] * (dxhat - sum_dxhat / dn - xhat * sum_dxhat_xhat / dn));
                }
            }
        }
    }));
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    auto px = x.node();
    return Tensor(make_op({1}, {acc}, {px}, [px](Node& nd) {
        if (!px->needs_grad) return;
        px->ensure_grad();
        for (std::size_t i = 0; i < px->data.size(); ++i) accumulate(*px, i, nd.grad[0]);
    }));
}

Tensor mean_all(const Tensor& x) {
    return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor mean_rows(const Tensor& x) {
    if (x.shape().size() != 2) throw ShapeError("mean_rows: expects n×d input");
    std::size_t n = x.rows(), d = x.cols();
    std::vector<double> out(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out[j] += x.data()[i * d + j];
    for (std::size_t j = 0; j < d; ++j) out[j] /= static_cast<double>(n);
    auto px = x.node();
    return Tensor(make_op({1, d}, std::move(out), {px}, [px, n, d](Node& nd) {
        if (!px->needs_grad) return;
        px->ensure_grad();
        double inv = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) accumulate(*px, i * d + j, nd.grad[j] * inv);
    }));
}

// ---- shape manipulation ----------------------------------------------------

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    std::size_t d = parts[0].cols();
    std::size_t total = 0;
    for (const Tensor& t : parts) {
        if (t.shape().size() != 2 || t.cols() != d) {
            throw ShapeError("concat_rows: column mismatch");
        }
        total += t.rows();
    }
    std::vector<double> out;
    out.reserve(total * d);
    std::vector<NodePtr> parents;
    for (const Tensor& t : parts) {
        out.insert(out.end(), t.data().begin(), t.data().end());
        parents.push_back(t.node());
    }
    auto ps = parents;
    return Tensor(make_op({total, d}, std::move(out), std::move(parents), [ps](Node& nd) {
        std::size_t off = 0;
        for (const auto& p : ps) {
            if (p->needs_grad) {
                p->ensure_grad();
                for (std::size_t i = 0; i < p->data.size(); ++i)
                    accumulate(*p, i, nd.grad[off + i]);
            }
            off += p->data.size();
        }
    }));
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    std::size_t n = parts[0].rows();
    std::size_t total = 0;
    for (const Tensor& t : parts) {
        if (t.shape().size() != 2 || t.rows() != n) throw ShapeError("concat_cols: row mismatch");
        total += t.cols();
    }
    std::vector<double> out(n * total);
    std::vector<NodePtr> parents;
    std::size_t off = 0;
    for (const Tensor& t : parts) {
        std::size_t m = t.cols();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) out[i * total + off + j] = t.data()[i * m + j];
        off += m;
        parents.push_back(t.node());
    }
    auto ps = parents;
    return Tensor(make_op({n, total}, std::move(out), std::move(parents), [ps, n, total](Node& nd) {
        std::size_t off2 = 0;
        for (const auto& p : ps) {
            std::size_t m = p->shape[1];
            if (p->needs_grad) {
                p->ensure_grad();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < m; ++j)
                        accumulate(*p, i * m + j, nd.grad[i * total + off2 + j]);
            }
            off2 += m;
        }
    }));
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
    if (x.shape().size() != 2 || start + count > x.cols()) {
        throw ShapeError("slice_cols: range out of bounds");
    }
    std::size_t n = x.rows(), m = x.cols();
    std::vector<double> out(n * count);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < count; ++j) out[i * count + j] = x.data()[i * m + start + j];
    auto px = x.node();
    return Tensor(make_op({n, count}, std::move(out), {px}, [px, n, m, start, count](Node& nd) {
        if (!px->needs_grad) return;
        px->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < count; ++j)
                accumulate(*px, i * m + start + j, nd.grad[i * count + j]);
    }));
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& indices) {
    if (x.shape().size() != 2) throw ShapeError("gather_rows: expects a matrix");
    std::size_t d = x.cols();
    std::vector<double> out;
    out.reserve(indices.size() * d);
    for (std::size_t idx : indices) {
        if (idx >= x.rows()) throw ShapeError("gather_rows: row index out of range");
        out.insert(out.end(), x.data().begin() + idx * d, x.data().begin() + (idx + 1) * d);
    }
    auto px = x.node();
    auto idxs = indices;
    return Tensor(make_op({indices.size(), d}, std::move(out), {px}, [px, idxs, d](Node& nd) {
        if (!px->needs_grad) return;
        px->ensure_grad();
        for (std::size_t r = 0; r < idxs.size(); ++r)
            for (std::size_t j = 0; j < d; ++j)
                accumulate(*px, idxs[r] * d + j, nd.grad[r * d + j]);
    }));
}

Tensor reshape(const Tensor& x, std::vector<std::size_t> shape) {
    if (shape_size(shape) != x.size()) {
        throw ShapeError("reshape: element count mismatch, " + shape_str(x.shape()) + " -> " +
                         shape_str(shape));
    }
    auto px = x.node();
    return Tensor(make_op(std::move(shape), x.data(), {px}, [px](Node& nd) {
        if (!px->needs_grad) return;
        px->ensure_grad();
        for (std::size_t i = 0; i < nd.size(); ++i) accumulate(*px, i, nd.grad[i]);
    }));
}

Tensor pick(const Tensor& x, std::size_t index) {
    if (index >= x.size()) throw ShapeError("pick: index out of range");
    auto px = x.node();
    return Tensor(make_op({1}, {x.data()[index]}, {px}, [px, index](Node& nd) {
        if (!px->needs_grad) return;
        px->ensure_grad();
        accumulate(*px, index, nd.grad[0]);
    }));
}

// ---- convolution -----------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride) {
    if (x.shape().size() != 3 || w.shape().size() != 4) {
        throw ShapeError("conv2d: expects C×H×W input and O×C×kh×kw kernel");
    }
    std::size_t c = x.shape()[0], h = x.shape()[1], wd = x.shape()[2];
    std::size_t o = w.shape()[0], kc = w.shape()[1], kh = w.shape()[2], kw = w.shape()[3];
    if (kc != c) {
        throw ShapeError("conv2d: channel mismatch, input has " + std::to_string(c) +
                         " channels, kernel expects " + std::to_string(kc));
    }
    if (bias.size() != o) throw ShapeError("conv2d: bias length must equal output channels");
    if (stride == 0) throw ConfigError("conv2d: stride must be >= 1");
    long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
    std::size_t oh = (h + 2 * (kh / 2) - kh) / stride + 1;
    std::size_t ow = (wd + 2 * (kw / 2) - kw) / stride + 1;

    std::vector<double> out(o * oh * ow, 0.0);
    for (std::size_t oc = 0; oc < o; ++oc) {
        for (std::size_t iy = 0; iy < oh; ++iy) {
            for (std::size_t ix = 0; ix < ow; ++ix) {
                double acc = bias.data()[oc];
                for (std::size_t ic = 0; ic < c; ++ic) {
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        long sy = static_cast<long>(iy * stride + ky) - ph;
                        if (sy < 0 || sy >= static_cast<long>(h)) continue;
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            long sx = static_cast<long>(ix * stride + kx) - pw;
                            if (sx < 0 || sx >= static_cast<long>(wd)) continue;
                            acc += x.data()[(ic * h + sy) * wd + sx] *
                                   w.data()[((oc * c + ic) * kh + ky) * kw + kx];
                        }
                    }
                }
                out[(oc * oh + iy) * ow + ix] = acc;
            }
        }
    }
    auto px = x.node(), pw_ = w.node(), pb = bias.node();
    return Tensor(make_op({o, oh, ow}, std::move(out), {px, pw_, pb},
                          [px, pw_, pb, c, h, wd, o, kh, kw, oh, ow, stride, ph, pw](Node& nd) {
        if (px->needs_grad) px->ensure_grad();
        if (pw_->needs_grad) pw_->ensure_grad();
        if (pb->needs_grad) pb->ensure_grad();
        for (std::size_t oc = 0; oc < o; ++oc) {
            for (std::size_t iy = 0; iy < oh; ++iy) {
                for (std::size_t ix = 0; ix < ow; ++ix) {
                    double g = nd.grad[(oc * oh + iy) * ow + ix];
                    if (g == 0.0) continue;
                    if (pb->needs_grad) accumulate(*pb, oc, g);
                    for (std::size_t ic = 0; ic < c; ++ic) {
                        for (std::size_t ky = 0; ky < kh; ++ky) {
                            long sy = static_cast<long>(iy * stride + ky) - ph;
                            if (sy < 0 || sy >= static_cast<long>(h)) continue;
                            for (std::size_t kx = 0; kx < kw; ++kx) {
                                long sx = static_cast<long>(ix * stride + kx) - pw;
                                if (sx < 0 || sx >= static_cast<long>(wd)) continue;
                                std::size_t xi = (ic * h + sy) * wd + sx;
                                std::size_t wi = ((oc * c + ic) * kh + ky) * kw + kx;
                                if (px->needs_grad) accumulate(*px, xi, g * pw_->data[wi]);
                                if (pw_->needs_grad) accumulate(*pw_, wi, g * px->data[xi]);
                            }
                        }
                    }
                }
            }
        }
    }));
}

// ---- losses -----------------------------------------------------------------

Tensor cross_entropy(const Tensor& logits, std::size_t label) {
    std::size_t n = logits.size();
    if (label >= n) {
        throw DataError("cross_entropy: label " + std::to_string(label) +
                        " out of range for " + std::to_string(n) + " classes");
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : logits.data()) mx = std::max(mx, v);
    double denom = 0.0;
    for (double v : logits.data()) denom += std::exp(v - mx);
    double lse = mx + std::log(denom);
    double loss = lse - logits.data()[label];
    auto px = logits.node();
    return Tensor(make_op({1}, {loss}, {px}, [px, label, mx, denom](Node& nd) {
        if (!px->needs_grad) return;
        px->ensure_grad();
        double g = nd.grad[0];
        for (std::size_t i = 0; i < px->data.size(); ++i) {
            double p = std::exp(px->data[i] - mx) / denom;
            accumulate(*px, i, g * (p - (i == label ? 1.0 : 0.0)));
        }
    }));
}

Tensor bce_with_logit(const Tensor& logit, double label) {
    if (logit.size() != 1) throw ShapeError("bce_with_logit: logit must be a scalar tensor");
    if (label != 0.0 && label != 1.0) throw DataError("bce_with_logit: label must be 0 or 1");
    double v = logit.data()[0];
    double loss = std::max(v, 0.0) - v * label + std::log1p(std::exp(-std::abs(v)));
    auto px = logit.node();
    return Tensor(make_op({1}, {loss}, {px}, [px, label](Node& nd) {
        if (!px->needs_grad) return;
        px->ensure_grad();
        double v2 = px->data[0];
        double sig = v2 >= 0.0 ? 1.0 / (1.0 + std::exp(-v2)) : std::exp(v2) / (1.0 + std::exp(v2));
        accumulate(*px, 0, nd.grad[0] * (sig - label));
    }));
}

Tensor mse_loss(const Tensor& pred, const std::vector<double>& target) {
    if (pred.size() != target.size()) {
        throw ShapeError("mse_loss: prediction has " + std::to_string(pred.size()) +
                         " values, target has " + std::to_string(target.size()));
    }
    std::size_t n = pred.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = pred.data()[i] - target[i];
        acc += d * d;
    }
    acc /= static_cast<double>(n);
    auto px = pred.node();
    auto tgt = target;
    return Tensor(make_op({1}, {acc}, {px}, [px, tgt, n](Node& nd) {
        if (!px->needs_grad) return;
        px->ensure_grad();
        double c = 2.0 * nd.grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            accumulate(*px, i, c * (px->data[i] - tgt[i]));
    }));
}

// ---- backward ---------------------------------------------------------------

namespace {

void topo_visit(const NodePtr& node, std::unordered_set<Node*>& seen,
                std::vector<NodePtr>& order) {
    if (seen.count(node.get())) return;
    seen.insert(node.get());
    for (const auto& p : node->parents) {
        if (p->needs_grad) topo_visit(p, seen, order);
    }
    order.push_back(node);
}

}  // namespace

void backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    std::unordered_set<Node*> seen;
    std::vector<NodePtr> order;
    topo_visit(loss.node(), seen, order);
    // Intermediates are transient per sweep; only leaves accumulate across calls.
    for (const auto& n : order) {
        if (n->backward_fn) n->grad.assign(n->data.size(), 0.0);
    }
    auto root = loss.node();
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node& n = **it;
        if (n.backward_fn && !n.grad.empty()) n.backward_fn(n);
    }
}

void zero_grad(std::span<const Tensor> params) {
    for (const Tensor& p : params) const_cast<Tensor&>(p).zero_grad();
}

double grad_check(const std::function<Tensor()>& f, std::span<const Tensor> params, double eps) {
    if (eps <= 0.0) throw ConfigError("grad_check: eps must be positive");
    double v1 = f().value();
    Tensor loss = f();
    if (std::abs(loss.value() - v1) > 1e-12) {
        throw NumericError("grad_check: f is not deterministic (" + std::to_string(v1) + " vs " +
                           std::to_string(loss.value()) + ")");
    }
    zero_grad(params);
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const Tensor& p : params) analytic.push_back(const_cast<Tensor&>(p).grad());

    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = const_cast<Tensor&>(params[pi]);
        for (std::size_t i = 0; i < p.size(); ++i) {
            double saved = p.data()[i];
            p.data()[i] = saved + eps;
            double fp = f().value();
            p.data()[i] = saved - eps;
            double fm = f().value();
            p.data()[i] = saved;
            double numeric = (fp - fm) / (2.0 * eps);
            double a = analytic[pi][i];
            double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace mmsense
