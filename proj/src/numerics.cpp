#include "transfir/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "transfir/error.hpp"

namespace transfir::numerics {

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const std::size_t n = shape_size(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (values.size() != shape_size(shape)) {
        throw ShapeError("tensor of shape " + shape_to_string(shape) + " cannot hold " +
                         std::to_string(values.size()) + " values");
    }
    auto s = std::make_shared<Storage>();
    s->shape = std::move(shape);
    s->values = std::move(values);
    s->requires_grad = requires_grad;
    return Tensor(std::move(s));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad) {
    const std::size_t n = rows.size();
    const std::size_t m = n ? rows.begin()->size() : 0;
    std::vector<double> values;
    values.reserve(n * m);
    for (const auto& row : rows) {
        if (row.size() != m) throw ShapeError("ragged matrix literal");
        values.insert(values.end(), row.begin(), row.end());
    }
    return from({n, m}, std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

Tensor::Storage& Tensor::storage() const {
    if (!storage_) throw ContractError("use of an undefined tensor");
    return *storage_;
}

const Shape& Tensor::shape() const { return storage().shape; }
std::size_t Tensor::size() const { return storage().values.size(); }
std::size_t Tensor::rows() const { return shape().empty() ? 1 : shape()[0]; }

std::size_t Tensor::cols() const {
    const Shape& s = shape();
    if (s.size() < 2) return 1;
    return shape_size(Shape(s.begin() + 1, s.end()));
}

std::span<const double> Tensor::values() const { return storage().values; }
std::span<double> Tensor::mutable_values() { return storage().values; }

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_to_string(shape()));
    return storage().values[0];
}

bool Tensor::requires_grad() const { return storage().requires_grad; }
bool Tensor::has_grad() const { return storage().has_grad; }

std::span<const double> Tensor::grad() const {
    auto& s = storage();
    if (!s.has_grad) throw ContractError("tensor has no gradient");
    return s.grad;
}

std::span<double> Tensor::grad_buffer() {
    auto& s = storage();
    if (!s.requires_grad) throw ContractError("gradient requested for a tensor that does not require one");
    if (!s.has_grad) {
        s.grad.assign(s.values.size(), 0.0);
        s.has_grad = true;
    }
    return s.grad;
}

void Tensor::zero_grad() {
    auto& s = storage();
    if (!s.requires_grad) return;
    s.grad.assign(s.values.size(), 0.0);
    s.has_grad = true;
}

void Tensor::clear_grad() {
    auto& s = storage();
    s.grad.clear();
    s.has_grad = false;
}

Tensor Tensor::detach() const { return from(shape(), storage().values, false); }
Tensor Tensor::clone() const { return from(shape(), storage().values, requires_grad()); }

// ---- Tape -------------------------------------------------------------------

bool Tape::should_record(std::initializer_list<const Tensor*> inputs) const {
    if (!enabled_) return false;
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor* t) { return t && t->defined() && t->requires_grad(); });
}

void Tape::record(Tensor output, std::function<void(std::span<const double>)> adjoint) {
    nodes_.push_back(Node{std::move(output), std::move(adjoint)});
}

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw ContractError("backward() needs a scalar loss, got shape " + shape_to_string(loss.shape()));
    }
    if (nodes_.empty()) {
        throw ContractError("backward() on an empty tape (already replayed or nothing recorded)");
    }
    if (!loss.requires_grad()) throw ContractError("backward() on a loss that does not require grad");
    Tensor seed = loss;
    seed.grad_buffer()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (!it->output.has_grad()) continue;
        it->adjoint(it->output.grad());
    }
    nodes_.clear();
}

// ---- helpers ----------------------------------------------------------------

namespace {

void require_matrix(const Tensor& t, const char* what) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(what) + " expects a matrix, got " + shape_to_string(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
    }
}

// Accumulates into t's gradient if it participates in differentiation.
template <typename Fn>
void accumulate(Tensor t, Fn&& fn) {
    if (!t.defined() || !t.requires_grad()) return;
    fn(t.grad_buffer());
}

Tensor make_output(Tape& tape, Shape shape, std::vector<double> values,
                   std::initializer_list<const Tensor*> inputs) {
    return Tensor::from(std::move(shape), std::move(values), tape.should_record(inputs));
}

void check_offsets(std::span<const std::size_t> offsets, std::size_t rows, const char* what) {
    if (offsets.empty() || offsets.front() != 0 || offsets.back() != rows ||
        !std::is_sorted(offsets.begin(), offsets.end())) {
        throw ShapeError(std::string(what) + ": segment offsets do not partition " + std::to_string(rows) +
                         " rows");
    }
}

}  // namespace

// ---- dense algebra ----------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    if (b.rows() != k) {
        throw ShapeError("matmul: inner dimensions differ, " + shape_to_string(a.shape()) + " · " +
                         shape_to_string(b.shape()));
    }
    std::vector<double> out(n * m, 0.0);
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = &bv[p * m];
            double* orow = &out[i * m];
            for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
        }
    }
    Tensor result = make_output(tape, {n, m}, std::move(out), {&a, &b});
    if (result.requires_grad()) {
        tape.record(result, [a, b, n, k, m](std::span<const double> g) {
            accumulate(a, [&](std::span<double> ga) {
                const auto bv = b.values();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * bv[p * m + j];
                        ga[i * k + p] += acc;
                    }
            });
            accumulate(b, [&](std::span<double> gb) {
                const auto av = a.values();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double aip = av[i * k + p];
                        if (aip == 0.0) continue;
                        for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += aip * g[i * m + j];
                    }
            });
        });
    }
    return result;
}

Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_nt");
    require_matrix(b, "matmul_nt");
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    if (b.cols() != k) {
        throw ShapeError("matmul_nt: inner dimensions differ, " + shape_to_string(a.shape()) + " · " +
                         shape_to_string(b.shape()) + "ᵀ");
    }
    std::vector<double> out(n * m, 0.0);
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += av[i * k + p] * bv[j * k + p];
            out[i * m + j] = acc;
        }
    Tensor result = make_output(tape, {n, m}, std::move(out), {&a, &b});
    if (result.requires_grad()) {
        tape.record(result, [a, b, n, k, m](std::span<const double> g) {
            accumulate(a, [&](std::span<double> ga) {
                const auto bv = b.values();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < m; ++j) {
                        const double gij = g[i * m + j];
                        if (gij == 0.0) continue;
                        for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gij * bv[j * k + p];
                    }
            });
            accumulate(b, [&](std::span<double> gb) {
                const auto av = a.values();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < m; ++j) {
                        const double gij = g[i * m + j];
                        if (gij == 0.0) continue;
                        for (std::size_t p = 0; p < k; ++p) gb[j * k + p] += gij * av[i * k + p];
                    }
            });
        });
    }
    return result;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_matrix(x, "linear");
    require_matrix(weight, "linear");
    if (x.cols() != weight.rows()) {
        throw ShapeError("linear: input " + shape_to_string(x.shape()) + " incompatible with weight " +
                         shape_to_string(weight.shape()));
    }
    const std::size_t n = x.rows(), a = x.cols(), b = weight.cols();
    if (bias.defined() && bias.size() != b) {
        throw ShapeError("linear: bias " + shape_to_string(bias.shape()) + " incompatible with weight " +
                         shape_to_string(weight.shape()));
    }
    std::vector<double> out(n * b, 0.0);
    const auto xv = x.values();
    const auto wv = weight.values();
    for (std::size_t i = 0; i < n; ++i) {
        double* orow = &out[i * b];
        if (bias.defined()) std::copy(bias.values().begin(), bias.values().end(), orow);
        for (std::size_t p = 0; p < a; ++p) {
            const double xip = xv[i * a + p];
            if (xip == 0.0) continue;
            const double* wrow = &wv[p * b];
            for (std::size_t j = 0; j < b; ++j) orow[j] += xip * wrow[j];
        }
    }
    Tensor result = make_output(tape, {n, b}, std::move(out), {&x, &weight, &bias});
    if (result.requires_grad()) {
        tape.record(result, [x, weight, bias, n, a, b](std::span<const double> g) {
            accumulate(x, [&](std::span<double> gx) {
                const auto wv = weight.values();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t p = 0; p < a; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < b; ++j) acc += g[i * b + j] * wv[p * b + j];
                        gx[i * a + p] += acc;
                    }
            });
            accumulate(weight, [&](std::span<double> gw) {
                const auto xv = x.values();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t p = 0; p < a; ++p) {
                        const double xip = xv[i * a + p];
                        if (xip == 0.0) continue;
                        for (std::size_t j = 0; j < b; ++j) gw[p * b + j] += xip * g[i * b + j];
                    }
            });
            accumulate(bias, [&](std::span<double> gb) {
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < b; ++j) gb[j] += g[i * b + j];
            });
        });
    }
    return result;
}

// ---- elementwise ------------------------------------------------------------

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.values().begin(), a.values().end());
    const auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    Tensor result = make_output(tape, a.shape(), std::move(out), {&a, &b});
    if (result.requires_grad()) {
        tape.record(result, [a, b](std::span<const double> g) {
            accumulate(a, [&](std::span<double> ga) { for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i]; });
            accumulate(b, [&](std::span<double> gb) { for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i]; });
        });
    }
    return result;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.values().begin(), a.values().end());
    const auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    Tensor result = make_output(tape, a.shape(), std::move(out), {&a, &b});
    if (result.requires_grad()) {
        tape.record(result, [a, b](std::span<const double> g) {
            accumulate(a, [&](std::span<double> ga) { for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i]; });
            accumulate(b, [&](std::span<double> gb) { for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i]; });
        });
    }
    return result;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    Tensor result = make_output(tape, a.shape(), std::move(out), {&a, &b});
    if (result.requires_grad()) {
        tape.record(result, [a, b](std::span<const double> g) {
            accumulate(a, [&](std::span<double> ga) {
                const auto bv = b.values();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
            });
            accumulate(b, [&](std::span<double> gb) {
                const auto av = a.values();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
            });
        });
    }
    return result;
}

Tensor scale(Tape& tape, const Tensor& x, double factor) {
    std::vector<double> out(x.values().begin(), x.values().end());
    for (double& v : out) v *= factor;
    Tensor result = make_output(tape, x.shape(), std::move(out), {&x});
    if (result.requires_grad()) {
        tape.record(result, [x, factor](std::span<const double> g) {
            accumulate(x, [&](std::span<double> gx) {
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
            });
        });
    }
    return result;
}

Tensor sum(Tape& tape, const Tensor& x) {
    const auto xv = x.values();
    const double total = std::accumulate(xv.begin(), xv.end(), 0.0);
    Tensor result = make_output(tape, {1}, {total}, {&x});
    if (result.requires_grad()) {
        tape.record(result, [x](std::span<const double> g) {
            accumulate(x, [&](std::span<double> gx) {
                for (double& v : gx) v += g[0];
            });
        });
    }
    return result;
}

namespace {

// y = f(x) elementwise, with dy/dx expressed through (x, y).
template <typename Fwd, typename Deriv>
Tensor unary(Tape& tape, const Tensor& x, Fwd fwd, Deriv deriv) {
    const auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
    Tensor result = make_output(tape, x.shape(), std::move(out), {&x});
    if (result.requires_grad()) {
        tape.record(result, [x, y = result.values(), deriv](std::span<const double> g) {
            accumulate(x, [&](std::span<double> gx) {
                const auto xv = x.values();
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i], y[i]);
            });
        });
    }
    return result;
}

}  // namespace

// The span captured by unary() stays valid: the tape node owns the output tensor.
Tensor tanh(Tape& tape, const Tensor& x) {
    return unary(tape, x, [](double v) { return std::tanh(v); },
                 [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
    return unary(
        tape, x,
        [](double v) {
            if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(Tape& tape, const Tensor& x) {
    return unary(tape, x, [](double v) { return v > 0.0 || std::isnan(v) ? v : 0.0; },
                 [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

// ---- normalizers ------------------------------------------------------------

Tensor softmax_rows(Tape& tape, const Tensor& x) {
    require_matrix(x, "softmax_rows");
    const std::size_t n = x.rows(), m = x.cols();
    if (m == 0) throw ShapeError("softmax_rows: rows must have at least one entry");
    const auto xv = x.values();
    std::vector<double> out(n * m);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = &xv[i * m];
        double mx = row[0];
        for (std::size_t j = 0; j < m; ++j) {
            if (std::isnan(row[j])) throw NumericError("softmax_rows: NaN input in row " + std::to_string(i));
            mx = std::max(mx, row[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < m; ++j) z += (out[i * m + j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= z;
    }
    Tensor result = make_output(tape, {n, m}, std::move(out), {&x});
    if (result.requires_grad()) {
        tape.record(result, [x, y = result.values(), n, m](std::span<const double> g) {
            accumulate(x, [&](std::span<double> gx) {
                for (std::size_t i = 0; i < n; ++i) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * y[i * m + j];
                    for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += y[i * m + j] * (g[i * m + j] - dot);
                }
            });
        });
    }
    return result;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
    require_matrix(x, "layer_norm");
    const std::size_t n = x.rows(), d = x.cols();
    if (d == 0) throw ShapeError("layer_norm: width must be at least 1");
    if (gain.size() != d || shift.size() != d) {
        throw ShapeError("layer_norm: gain/shift " + shape_to_string(gain.shape()) + "/" +
                         shape_to_string(shift.shape()) + " do not match input " + shape_to_string(x.shape()));
    }
    const auto xv = x.values();
    const auto gv = gain.values();
    const auto sv = shift.values();
    std::vector<double> xhat(n * d), inv_std(n), out(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += xv[i * d + j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = xv[i * d + j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[i * d + j] = (xv[i * d + j] - mean) * inv_std[i];
            out[i * d + j] = xhat[i * d + j] * gv[j] + sv[j];
        }
    }
    Tensor result = make_output(tape, {n, d}, std::move(out), {&x, &gain, &shift});
    if (result.requires_grad()) {
        tape.record(result, [x, gain, shift, xhat = std::move(xhat), inv_std = std::move(inv_std), n,
                             d](std::span<const double> g) {
            accumulate(gain, [&](std::span<double> gg) {
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * xhat[i * d + j];
            });
            accumulate(shift, [&](std::span<double> gs) {
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j) gs[j] += g[i * d + j];
            });
            accumulate(x, [&](std::span<double> gx) {
                const auto gv = gain.values();
                const double inv_d = 1.0 / static_cast<double>(d);
                for (std::size_t i = 0; i < n; ++i) {
                    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dxh = g[i * d + j] * gv[j];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xhat[i * d + j];
                    }
                    mean_dxhat *= inv_d;
                    mean_dxhat_xhat *= inv_d;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dxh = g[i * d + j] * gv[j];
                        gx[i * d + j] += inv_std[i] * (dxh - mean_dxhat - xhat[i * d + j] * mean_dxhat_xhat);
                    }
                }
            });
        });
    }
    return result;
}

// ---- indexing ---------------------------------------------------------------

Tensor gather_rows(Tape& tape, const Tensor& x, std::span<const std::size_t> index) {
    require_matrix(x, "gather_rows");
    const std::size_t n = x.rows(), m = x.cols();
    std::vector<double> out(index.size() * m);
    const auto xv = x.values();
    for (std::size_t r = 0; r < index.size(); ++r) {
        if (index[r] >= n) {
            throw IndexError("gather_rows: row " + std::to_string(index[r]) + " out of range for " +
                             shape_to_string(x.shape()));
        }
        std::copy_n(&xv[index[r] * m], m, &out[r * m]);
    }
    Tensor result = make_output(tape, {index.size(), m}, std::move(out), {&x});
    if (result.requires_grad()) {
        tape.record(result, [x, idx = std::vector<std::size_t>(index.begin(), index.end()),
                             m](std::span<const double> g) {
            accumulate(x, [&](std::span<double> gx) {
                for (std::size_t r = 0; r < idx.size(); ++r)
                    for (std::size_t j = 0; j < m; ++j) gx[idx[r] * m + j] += g[r * m + j];
            });
        });
    }
    return result;
}

Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t begin, std::size_t end) {
    require_matrix(x, "slice_rows");
    if (begin > end || end > x.rows()) {
        throw IndexError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of range for " + shape_to_string(x.shape()));
    }
    const std::size_t m = x.cols();
    std::vector<double> out(x.values().begin() + static_cast<std::ptrdiff_t>(begin * m),
                            x.values().begin() + static_cast<std::ptrdiff_t>(end * m));
    Tensor result = make_output(tape, {end - begin, m}, std::move(out), {&x});
    if (result.requires_grad()) {
        tape.record(result, [x, offset = begin * m](std::span<const double> g) {
            accumulate(x, [&](std::span<double> gx) {
                for (std::size_t i = 0; i < g.size(); ++i) gx[offset + i] += g[i];
            });
        });
    }
    return result;
}

Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t n = parts.front().rows();
    std::size_t width = 0;
    bool record = false;
    for (const auto& p : parts) {
        require_matrix(p, "concat_cols");
        if (p.rows() != n) {
            throw ShapeError("concat_cols: row counts differ, " + shape_to_string(parts.front().shape()) +
                             " vs " + shape_to_string(p.shape()));
        }
        width += p.cols();
        record = record || tape.should_record({&p});
    }
    std::vector<double> out(n * width);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t m = p.cols();
        const auto pv = p.values();
        for (std::size_t i = 0; i < n; ++i) std::copy_n(&pv[i * m], m, &out[i * width + offset]);
        offset += m;
    }
    Tensor result = Tensor::from({n, width}, std::move(out), record);
    if (record) {
        tape.record(result, [parts, n, width](std::span<const double> g) {
            std::size_t offset = 0;
            for (const auto& p : parts) {
                const std::size_t m = p.cols();
                accumulate(p, [&](std::span<double> gp) {
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < m; ++j) gp[i * m + j] += g[i * width + offset + j];
                });
                offset += m;
            }
        });
    }
    return result;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
    if (shape_size(shape) != x.size()) {
        throw ShapeError("reshape: cannot view " + shape_to_string(x.shape()) + " as " + shape_to_string(shape));
    }
    Tensor result = make_output(tape, std::move(shape), std::vector<double>(x.values().begin(), x.values().end()),
                                {&x});
    if (result.requires_grad()) {
        tape.record(result, [x](std::span<const double> g) {
            accumulate(x, [&](std::span<double> gx) {
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            });
        });
    }
    return result;
}

// ---- convolution ------------------------------------------------------------

Tensor conv_pairs(Tape& tape, const Tensor& first, const Tensor& second, const Tensor& kernels) {
    require_matrix(first, "conv_pairs");
    require_same_shape(first, second, "conv_pairs");
    if (kernels.rank() != 3 || kernels.shape()[1] != 2) {
        throw ShapeError("conv_pairs: kernels must be C×2×w, got " + shape_to_string(kernels.shape()));
    }
    const std::size_t channels = kernels.shape()[0], width = kernels.shape()[2];
    if (width % 2 == 0) throw ConfigError("conv_pairs: kernel width must be odd, got " + std::to_string(width));
    const std::size_t s_count = first.rows(), d = first.cols();
    const auto pad = static_cast<std::ptrdiff_t>((width - 1) / 2);
    const auto kv = kernels.values();
    const auto fv = first.values();
    const auto sv = second.values();
    const std::size_t out_w = channels * d;
    std::vector<double> out(s_count * out_w, 0.0);
    for (std::size_t s = 0; s < s_count; ++s) {
        const double* rows[2] = {&fv[s * d], &sv[s * d]};
        for (std::size_t c = 0; c < channels; ++c) {
            double* orow = &out[s * out_w + c * d];
            for (std::size_t r = 0; r < 2; ++r)
                for (std::size_t u = 0; u < width; ++u) {
                    const double kval = kv[(c * 2 + r) * width + u];
                    if (kval == 0.0) continue;
                    const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(u) - pad;
                    for (std::size_t j = 0; j < d; ++j) {
                        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(j) + shift;
                        if (src < 0 || src >= static_cast<std::ptrdiff_t>(d)) continue;
                        orow[j] += kval * rows[r][src];
                    }
                }
        }
    }
    Tensor result = make_output(tape, {s_count, out_w}, std::move(out), {&first, &second, &kernels});
    if (result.requires_grad()) {
        tape.record(result, [first, second, kernels, s_count, d, channels, width, pad,
                             out_w](std::span<const double> g) {
            const auto kv = kernels.values();
            const auto fv = first.values();
            const auto sv = second.values();
            const bool want_k = kernels.requires_grad();
            std::span<double> gk = want_k ? Tensor(kernels).grad_buffer() : std::span<double>{};
            std::span<double> gin[2] = {
                first.requires_grad() ? Tensor(first).grad_buffer() : std::span<double>{},
                second.requires_grad() ? Tensor(second).grad_buffer() : std::span<double>{}};
            for (std::size_t s = 0; s < s_count; ++s) {
                const double* rows[2] = {&fv[s * d], &sv[s * d]};
                for (std::size_t c = 0; c < channels; ++c) {
                    const double* grow = &g[s * out_w + c * d];
                    for (std::size_t r = 0; r < 2; ++r)
                        for (std::size_t u = 0; u < width; ++u) {
                            const std::size_t kidx = (c * 2 + r) * width + u;
                            const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(u) - pad;
                            double kacc = 0.0;
                            for (std::size_t j = 0; j < d; ++j) {
                                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(j) + shift;
                                if (src < 0 || src >= static_cast<std::ptrdiff_t>(d)) continue;
                                kacc += grow[j] * rows[r][src];
                                if (!gin[r].empty()) gin[r][s * d + static_cast<std::size_t>(src)] += grow[j] * kv[kidx];
                            }
                            if (want_k) gk[kidx] += kacc;
                        }
                }
            }
        });
    }
    return result;
}

Tensor conv_rows(Tape& tape, const Tensor& stack, const Tensor& kernels) {
    require_matrix(stack, "conv_rows");
    if (stack.rows() != 2) throw ShapeError("conv_rows: stack must have 2 rows, got " + shape_to_string(stack.shape()));
    const std::size_t d = stack.cols();
    Tensor out = conv_pairs(tape, slice_rows(tape, stack, 0, 1), slice_rows(tape, stack, 1, 2), kernels);
    return reshape(tape, out, {kernels.shape()[0], d});
}

// ---- losses -----------------------------------------------------------------

Tensor cross_entropy_logits(Tape& tape, const Tensor& logits, std::span<const std::size_t> target) {
    require_matrix(logits, "cross_entropy_logits");
    const std::size_t n = logits.rows(), m = logits.cols();
    if (target.size() != n) {
        throw ShapeError("cross_entropy_logits: " + std::to_string(target.size()) + " targets for " +
                         std::to_string(n) + " rows");
    }
    if (n == 0) throw ShapeError("cross_entropy_logits: no rows");
    const auto lv = logits.values();
    std::vector<double> probs(n * m);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (target[i] >= m) {
            throw IndexError("cross_entropy_logits: target " + std::to_string(target[i]) + " out of range for " +
                             std::to_string(m) + " classes");
        }
        const double* row = &lv[i * m];
        const double mx = *std::max_element(row, row + m);
        double z = 0.0;
        for (std::size_t j = 0; j < m; ++j) z += (probs[i * m + j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < m; ++j) probs[i * m + j] /= z;
        total += (std::log(z) + mx) - row[target[i]];
    }
    Tensor result = make_output(tape, {1}, {total / static_cast<double>(n)}, {&logits});
    if (result.requires_grad()) {
        tape.record(result, [logits, probs = std::move(probs), tgt = std::vector<std::size_t>(target.begin(), target.end()),
                             n, m](std::span<const double> g) {
            accumulate(logits, [&](std::span<double> gl) {
                const double f = g[0] / static_cast<double>(n);
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < m; ++j) gl[i * m + j] += f * probs[i * m + j];
                    gl[i * m + tgt[i]] -= f;
                }
            });
        });
    }
    return result;
}

// ---- segmented attention ----------------------------------------------------

Tensor segment_attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                         std::span<const std::size_t> offsets, std::size_t heads) {
    require_matrix(q, "segment_attention");
    require_same_shape(q, k, "segment_attention");
    require_same_shape(q, v, "segment_attention");
    const std::size_t rows = q.rows(), d = q.cols();
    check_offsets(offsets, rows, "segment_attention");
    if (heads == 0 || d % heads != 0) {
        throw ConfigError("segment_attention: " + std::to_string(heads) + " heads do not divide width " +
                          std::to_string(d));
    }
    const std::size_t dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto qv = q.values(), kv = k.values(), vv = v.values();

    // probs holds, per segment and head, an n×n row-stochastic block.
    std::vector<std::size_t> prob_offset(offsets.size(), 0);
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
        const std::size_t len = offsets[s + 1] - offsets[s];
        prob_offset[s + 1] = prob_offset[s] + heads * len * len;
    }
    std::vector<double> probs(prob_offset.back());
    std::vector<double> out(rows * d, 0.0);
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
        const std::size_t base = offsets[s], len = offsets[s + 1] - offsets[s];
        for (std::size_t h = 0; h < heads; ++h) {
            double* p = &probs[prob_offset[s] + h * len * len];
            const std::size_t c0 = h * dh;
            for (std::size_t i = 0; i < len; ++i) {
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < len; ++j) {
                    double dot = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) dot += qv[(base + i) * d + c0 + c] * kv[(base + j) * d + c0 + c];
                    p[i * len + j] = dot * inv_sqrt;
                    mx = std::max(mx, p[i * len + j]);
                }
                double z = 0.0;
                for (std::size_t j = 0; j < len; ++j) z += (p[i * len + j] = std::exp(p[i * len + j] - mx));
                for (std::size_t j = 0; j < len; ++j) {
                    p[i * len + j] /= z;
                    for (std::size_t c = 0; c < dh; ++c) out[(base + i) * d + c0 + c] += p[i * len + j] * vv[(base + j) * d + c0 + c];
                }
            }
        }
    }
    Tensor result = make_output(tape, {rows, d}, std::move(out), {&q, &k, &v});
    if (result.requires_grad()) {
        tape.record(result, [q, k, v, offs = std::vector<std::size_t>(offsets.begin(), offsets.end()),
                             probs = std::move(probs), prob_offset = std::move(prob_offset), heads, dh, d,
                             inv_sqrt](std::span<const double> g) {
            const auto qv = q.values(), kv = k.values(), vv = v.values();
            std::span<double> gq = q.requires_grad() ? Tensor(q).grad_buffer() : std::span<double>{};
            std::span<double> gk = k.requires_grad() ? Tensor(k).grad_buffer() : std::span<double>{};
            std::span<double> gv = v.requires_grad() ? Tensor(v).grad_buffer() : std::span<double>{};
            std::vector<double> dp;
            for (std::size_t s = 0; s + 1 < offs.size(); ++s) {
                const std::size_t base = offs[s], len = offs[s + 1] - offs[s];
                dp.assign(len, 0.0);
                for (std::size_t h = 0; h < heads; ++h) {
                    const double* p = &probs[prob_offset[s] + h * len * len];
                    const std::size_t c0 = h * dh;
                    for (std::size_t i = 0; i < len; ++i) {
                        const double* gi = &g[(base + i) * d + c0];
                        double dot = 0.0;
                        for (std::size_t j = 0; j < len; ++j) {
                            double acc = 0.0;
                            for (std::size_t c = 0; c < dh; ++c) acc += gi[c] * vv[(base + j) * d + c0 + c];
                            dp[j] = acc;
                            dot += p[i * len + j] * acc;
                            if (!gv.empty())
                                for (std::size_t c = 0; c < dh; ++c) gv[(base + j) * d + c0 + c] += p[i * len + j] * gi[c];
                        }
                        for (std::size_t j = 0; j < len; ++j) {
                            const double ds = p[i * len + j] * (dp[j] - dot) * inv_sqrt;
                            if (ds == 0.0) continue;
                            for (std::size_t c = 0; c < dh; ++c) {
                                if (!gq.empty()) gq[(base + i) * d + c0 + c] += ds * kv[(base + j) * d + c0 + c];
                                if (!gk.empty()) gk[(base + j) * d + c0 + c] += ds * qv[(base + i) * d + c0 + c];
                            }
                        }
                    }
                }
            }
        });
    }
    return result;
}

Tensor segment_softmax(Tape& tape, const Tensor& scores, std::span<const std::size_t> offsets) {
    if (scores.cols() != 1 || scores.rank() != 2) {
        throw ShapeError("segment_softmax: expects an N×1 column, got " + shape_to_string(scores.shape()));
    }
    const std::size_t rows = scores.rows();
    check_offsets(offsets, rows, "segment_softmax");
    const auto sv = scores.values();
    std::vector<double> out(rows);
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
        const std::size_t b = offsets[s], e = offsets[s + 1];
        if (b == e) continue;
        double mx = sv[b];
        for (std::size_t i = b; i < e; ++i) {
            if (std::isnan(sv[i])) throw NumericError("segment_softmax: NaN score");
            mx = std::max(mx, sv[i]);
        }
        double z = 0.0;
        for (std::size_t i = b; i < e; ++i) z += (out[i] = std::exp(sv[i] - mx));
        for (std::size_t i = b; i < e; ++i) out[i] /= z;
    }
    Tensor result = make_output(tape, {rows, 1}, std::move(out), {&scores});
    if (result.requires_grad()) {
        tape.record(result, [scores, y = result.values(),
                             offs = std::vector<std::size_t>(offsets.begin(), offsets.end())](std::span<const double> g) {
            accumulate(scores, [&](std::span<double> gs) {
                for (std::size_t s = 0; s + 1 < offs.size(); ++s) {
                    double dot = 0.0;
                    for (std::size_t i = offs[s]; i < offs[s + 1]; ++i) dot += g[i] * y[i];
                    for (std::size_t i = offs[s]; i < offs[s + 1]; ++i) gs[i] += y[i] * (g[i] - dot);
                }
            });
        });
    }
    return result;
}

Tensor segment_weighted_sum(Tape& tape, const Tensor& weights, const Tensor& x,
                            std::span<const std::size_t> offsets) {
    require_matrix(x, "segment_weighted_sum");
    if (weights.size() != x.rows()) {
        throw ShapeError("segment_weighted_sum: weights " + shape_to_string(weights.shape()) + " vs rows " +
                         shape_to_string(x.shape()));
    }
    check_offsets(offsets, x.rows(), "segment_weighted_sum");
    const std::size_t segs = offsets.size() - 1, d = x.cols();
    const auto wv = weights.values();
    const auto xv = x.values();
    std::vector<double> out(segs * d, 0.0);
    for (std::size_t s = 0; s < segs; ++s)
        for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i)
            for (std::size_t c = 0; c < d; ++c) out[s * d + c] += wv[i] * xv[i * d + c];
    Tensor result = make_output(tape, {segs, d}, std::move(out), {&weights, &x});
    if (result.requires_grad()) {
        tape.record(result, [weights, x, offs = std::vector<std::size_t>(offsets.begin(), offsets.end()),
                             d](std::span<const double> g) {
            const auto wv = weights.values();
            const auto xv = x.values();
            accumulate(weights, [&](std::span<double> gw) {
                for (std::size_t s = 0; s + 1 < offs.size(); ++s)
                    for (std::size_t i = offs[s]; i < offs[s + 1]; ++i) {
                        double acc = 0.0;
                        for (std::size_t c = 0; c < d; ++c) acc += g[s * d + c] * xv[i * d + c];
                        gw[i] += acc;
                    }
            });
            accumulate(x, [&](std::span<double> gx) {
                for (std::size_t s = 0; s + 1 < offs.size(); ++s)
                    for (std::size_t i = offs[s]; i < offs[s + 1]; ++i)
                        for (std::size_t c = 0; c < d; ++c) gx[i * d + c] += wv[i] * g[s * d + c];
            });
        });
    }
    return result;
}

// ---- parameters -------------------------------------------------------------

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng, Shape shape) {
    if (shape.empty()) shape = {fan_in, fan_out};
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> values(shape_size(shape));
    for (double& v : values) v = dist(rng);
    return Tensor::from(std::move(shape), std::move(values), true);
}

// ---- gradient checking ------------------------------------------------------

double finite_diff_check(const ScalarFn& f, Tensor param, double h) {
    if (!(h > 0.0)) throw ContractError("finite_diff_check: step must be positive");
    if (!param.requires_grad()) throw ContractError("finite_diff_check: parameter does not require grad");

    param.clear_grad();
    {
        Tape tape;
        Tensor loss = f(tape);
        if (!std::isfinite(loss.item())) throw NumericError("finite_diff_check: non-finite function value");
        tape.backward(loss);
    }
    const std::vector<double> analytic =
        param.has_grad() ? std::vector<double>(param.grad().begin(), param.grad().end())
                         : std::vector<double>(param.size(), 0.0);
    param.clear_grad();

    auto evaluate = [&]() {
        Tape tape(false);
        const double v = f(tape).item();
        if (!std::isfinite(v)) throw NumericError("finite_diff_check: non-finite function value");
        return v;
    };

    double worst = 0.0;
    auto values = param.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        values[i] = saved + h;
        const double up = evaluate();
        values[i] = saved - h;
        const double down = evaluate();
        values[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double err = std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + std::abs(numeric) + 1e-12);
        worst = std::max(worst, err);
    }
    return worst;
}

double finite_diff_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& x, double h) {
    Tensor param = Tensor::from(x.shape(), std::vector<double>(x.values().begin(), x.values().end()), true);
    return finite_diff_check([&](Tape& tape) { return f(tape, param); }, param, h);
}

}  // namespace transfir::numerics
