#include "msbwe/ad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <string>

#include <Eigen/Core>

#include "msbwe/error.hpp"

namespace msbwe::ad {

namespace {

constexpr double kPi = dsp::kPi;
constexpr double kTwoPi = dsp::kTwoPi;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw InvalidArgument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                              shape_string(b.shape()));
}

template <typename T>
bool wants_grad(const Node<T>& n, std::size_t parent) {
    return n.parents.size() > parent && n.parents[parent]->requires_grad;
}

// Element-wise unary op with a derivative expressed through input and output.
template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& x, F f, D dfdx) {
    std::vector<T> out(x.size());
    const auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
    return make_result<T>(x.shape(), std::move(out), {x}, [dfdx](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            p.grad[i] += self.grad[i] * dfdx(p.value[i], self.value[i]);
    });
}

// View of a tensor as [outer, C, inner] around `axis`.
struct AxisView {
    std::size_t outer = 1, channels = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size()) throw InvalidArgument("axis out of range for shape " + shape_string(shape));
    AxisView v;
    for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
    v.channels = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
    return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// element-wise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "add");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
        for (std::size_t k = 0; k < 2; ++k)
            if (wants_grad(self, k))
                for (std::size_t i = 0; i < self.grad.size(); ++i) self.parents[k]->grad[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "sub");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
        if (wants_grad(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) self.parents[0]->grad[i] += self.grad[i];
        if (wants_grad(self, 1))
            for (std::size_t i = 0; i < self.grad.size(); ++i) self.parents[1]->grad[i] -= self.grad[i];
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "mul");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
        Node<T>& pa = *self.parents[0];
        Node<T>& pb = *self.parents[1];
        if (pa.requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * pb.value[i];
        if (pb.requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.value[i];
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
    return unary(x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T offset) {
    return unary(x, [offset](T v) { return v + offset; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
    return unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
    return unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> sin(const Tensor<T>& x) {
    return unary(x, [](T v) { return std::sin(v); }, [](T v, T) { return std::cos(v); });
}

template <typename T>
Tensor<T> cos(const Tensor<T>& x) {
    return unary(x, [](T v) { return std::cos(v); }, [](T v, T) { return -std::sin(v); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return unary(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
    return unary(
        x, [slope](T v) { return v > T(0) ? v : slope * v; },
        [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    const T inv_sqrt2 = T(0.70710678118654752440);
    const T inv_sqrt2pi = T(0.39894228040143267794);
    return unary(
        x, [=](T v) { return v * T(0.5) * (T(1) + std::erf(v * inv_sqrt2)); },
        [=](T v, T) { return T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v); });
}

template <typename T>
Tensor<T> anti_wrap_abs(const Tensor<T>& x) {
    auto wrapped = [](T v) { return v - T(kTwoPi) * std::round(v / T(kTwoPi)); };
    return unary(
        x, [=](T v) { return std::abs(wrapped(v)); },
        [=](T v, T) {
            const T w = wrapped(v);
            return w > T(0) ? T(1) : (w < T(0) ? T(-1) : T(0));
        });
}

template <typename T>
Tensor<T> arctan2_phase(const Tensor<T>& pseudo_imag, const Tensor<T>& pseudo_real) {
    require_same_shape(pseudo_imag, pseudo_real, "arctan2_phase");
    std::vector<T> out(pseudo_imag.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T y = pseudo_imag[i];
        const T x = pseudo_real[i];
        if (y == T(0) && x == T(0)) {
            out[i] = T(0);
            continue;
        }
        T a = std::atan2(y, x);
        if (a <= -T(kPi)) a = T(kPi);
        out[i] = a;
    }
    return make_result<T>(pseudo_imag.shape(), std::move(out), {pseudo_imag, pseudo_real}, [](Node<T>& self) {
        Node<T>& pi = *self.parents[0];
        Node<T>& pr = *self.parents[1];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const T y = pi.value[i];
            const T x = pr.value[i];
            const T r2 = x * x + y * y;
            if (r2 == T(0)) continue;
            if (pi.requires_grad) pi.grad[i] += self.grad[i] * x / r2;
            if (pr.requires_grad) pr.grad[i] -= self.grad[i] * y / r2;
        }
    });
}

// ---------------------------------------------------------------------------
// reductions and shape

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = T(0);
    for (T v : x.data()) acc += v;
    return make_result<T>({1}, {acc}, {x}, [](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        for (auto& g : p.grad) g += self.grad[0];
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    if (x.size() == 0) throw InvalidArgument("mean of an empty tensor");
    T acc = T(0);
    for (T v : x.data()) acc += v;
    const T inv = T(1) / static_cast<T>(x.size());
    return make_result<T>({1}, {acc * inv}, {x}, [inv](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        const T g = self.grad[0] * inv;
        for (auto& pg : p.grad) pg += g;
    });
}

template <typename T>
Tensor<T> mean_per_sample(const Tensor<T>& x) {
    if (x.rank() < 1 || x.dim(0) == 0) throw InvalidArgument("mean_per_sample needs a leading batch axis");
    const std::size_t batch = x.dim(0);
    const std::size_t per = x.size() / batch;
    std::vector<T> out(batch, T(0));
    for (std::size_t b = 0; b < batch; ++b) {
        T acc = T(0);
        for (std::size_t i = 0; i < per; ++i) acc += x[b * per + i];
        out[b] = acc / static_cast<T>(per);
    }
    return make_result<T>({batch}, std::move(out), {x}, [per](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        for (std::size_t b = 0; b < self.grad.size(); ++b) {
            const T g = self.grad[b] / static_cast<T>(per);
            for (std::size_t i = 0; i < per; ++i) p.grad[b * per + i] += g;
        }
    });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_size(shape) != x.size())
        throw InvalidArgument("reshape " + shape_string(x.shape()) + " -> " + shape_string(shape));
    std::vector<T> out(x.data().begin(), x.data().end());
    return make_result<T>(std::move(shape), std::move(out), {x}, [](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis) {
    if (xs.empty()) throw InvalidArgument("concat of nothing");
    Shape shape = xs.front().shape();
    if (axis >= shape.size()) throw InvalidArgument("concat axis out of range");
    std::size_t total = 0;
    for (const auto& x : xs) {
        Shape s = x.shape();
        if (s.size() != shape.size()) throw InvalidArgument("concat: rank mismatch");
        total += s[axis];
        s[axis] = shape[axis];
        if (s != shape) throw InvalidArgument("concat: shapes differ outside the concat axis");
    }
    shape[axis] = total;
    const AxisView out_view = axis_view(shape, axis);
    std::vector<T> out(shape_size(shape));
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& x : xs) {
        offsets.push_back(off);
        const std::size_t c = x.dim(axis);
        const std::size_t block = c * out_view.inner;
        for (std::size_t o = 0; o < out_view.outer; ++o)
            std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(o * block), block,
                        out.begin() + static_cast<std::ptrdiff_t>(o * total * out_view.inner + off * out_view.inner));
        off += c;
    }
    return make_result<T>(std::move(shape), std::move(out), xs, [out_view, offsets, total](Node<T>& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            Node<T>& p = *self.parents[k];
            if (!p.requires_grad) continue;
            const std::size_t c = p.value.size() / (out_view.outer * out_view.inner);
            const std::size_t block = c * out_view.inner;
            for (std::size_t o = 0; o < out_view.outer; ++o) {
                const T* src = self.grad.data() + o * total * out_view.inner + offsets[k] * out_view.inner;
                T* dst = p.grad.data() + o * block;
                for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
            }
        }
    });
}

template <typename T>
Tensor<T> diff(const Tensor<T>& x, std::size_t axis) {
    const AxisView v = axis_view(x.shape(), axis);
    if (v.channels < 2) throw InvalidArgument("diff needs at least two entries along the axis");
    Shape shape = x.shape();
    shape[axis] -= 1;
    const std::size_t c_out = v.channels - 1;
    std::vector<T> out(shape_size(shape));
    const auto in = x.data();
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t c = 0; c < c_out; ++c)
            for (std::size_t i = 0; i < v.inner; ++i) {
                const std::size_t src = (o * v.channels + c) * v.inner + i;
                out[(o * c_out + c) * v.inner + i] = in[src + v.inner] - in[src];
            }
    return make_result<T>(std::move(shape), std::move(out), {x}, [v, c_out](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t c = 0; c < c_out; ++c)
                for (std::size_t i = 0; i < v.inner; ++i) {
                    const T g = self.grad[(o * c_out + c) * v.inner + i];
                    const std::size_t src = (o * v.channels + c) * v.inner + i;
                    p.grad[src + v.inner] += g;
                    p.grad[src] -= g;
                }
    });
}

// ---------------------------------------------------------------------------
// convolutions

std::size_t ConvSpec::output_length(std::size_t length) const {
    const std::ptrdiff_t span = static_cast<std::ptrdiff_t>(length + 2 * padding) -
                                static_cast<std::ptrdiff_t>(dilation * (kernel_size - 1)) - 1;
    if (span < 0) return 0;
    return static_cast<std::size_t>(span) / stride + 1;
}

void ConvSpec::validate() const {
    if (in_channels == 0 || out_channels == 0 || kernel_size == 0 || stride == 0 || dilation == 0 || groups == 0)
        throw InvalidArgument("conv spec fields must be positive");
    if (in_channels % groups != 0 || out_channels % groups != 0)
        throw InvalidArgument("conv groups (" + std::to_string(groups) + ") must divide in/out channels (" +
                              std::to_string(in_channels) + "/" + std::to_string(out_channels) + ")");
}

std::size_t ConvSpec2D::output_h(std::size_t h) const {
    const std::ptrdiff_t span = static_cast<std::ptrdiff_t>(h + 2 * padding_h) -
                                static_cast<std::ptrdiff_t>(dilation_h * (kernel_h - 1)) - 1;
    return span < 0 ? 0 : static_cast<std::size_t>(span) / stride_h + 1;
}

std::size_t ConvSpec2D::output_w(std::size_t w) const {
    const std::ptrdiff_t span = static_cast<std::ptrdiff_t>(w + 2 * padding_w) -
                                static_cast<std::ptrdiff_t>(dilation_w * (kernel_w - 1)) - 1;
    return span < 0 ? 0 : static_cast<std::size_t>(span) / stride_w + 1;
}

void ConvSpec2D::validate() const {
    if (in_channels == 0 || out_channels == 0 || kernel_h == 0 || kernel_w == 0 || stride_h == 0 || stride_w == 0 ||
        dilation_h == 0 || dilation_w == 0 || groups == 0)
        throw InvalidArgument("conv2d spec fields must be positive");
    if (in_channels % groups != 0 || out_channels % groups != 0)
        throw InvalidArgument("conv2d groups must divide in/out channels");
}

namespace {

// Both convolutions lower to the same grouped GEMM over an im2col buffer.
// A Geometry describes the lowering for one sample.
struct Geometry {
    std::size_t cin = 0, cout = 0, groups = 1;
    std::size_t patch = 0;    // (cin / groups) * kernel elements
    std::size_t in_size = 0;  // spatial size of one input channel
    std::size_t out_size = 0; // spatial size of one output channel
    // For each patch row r and output position o: input offset within the group's
    // channel block, or -1 for zero padding. Flattened [patch, out_size].
    std::vector<std::ptrdiff_t> gather;
    bool identity = false;  // kernel 1, stride 1, no padding: cols == input
};

template <typename T>
void im2col(const Geometry& g, const T* x_group, T* cols) {
    const std::size_t n = g.patch * g.out_size;
    for (std::size_t i = 0; i < n; ++i) {
        const std::ptrdiff_t src = g.gather[i];
        cols[i] = src < 0 ? T(0) : x_group[src];
    }
}

template <typename T>
void col2im(const Geometry& g, const T* cols, T* dx_group) {
    const std::size_t n = g.patch * g.out_size;
    for (std::size_t i = 0; i < n; ++i) {
        const std::ptrdiff_t dst = g.gather[i];
        if (dst >= 0) dx_group[dst] += cols[i];
    }
}

// Lowerings depend only on layer shape and input size, and the same handful
// recur every step, so they are built once per thread.
template <typename Build>
std::shared_ptr<const Geometry> cached_geometry(std::vector<std::size_t> key, Build&& build) {
    thread_local std::map<std::vector<std::size_t>, std::shared_ptr<const Geometry>> cache;
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    if (cache.size() >= 256) cache.clear();
    auto geo = std::make_shared<Geometry>();
    build(*geo);
    return cache.emplace(std::move(key), std::move(geo)).first->second;
}

// Per-thread scratch that keeps its capacity between calls.
template <typename T, int Slot>
std::vector<T>& scratch(std::size_t n) {
    thread_local std::vector<T> buf;
    buf.resize(n);
    return buf;
}

template <typename T>
Tensor<T> grouped_conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::shared_ptr<const Geometry> geo,
                       Shape out_shape) {
    const Geometry& g = *geo;
    const std::size_t batch = x.dim(0);
    const std::size_t cin_g = g.cin / g.groups;
    const std::size_t cout_g = g.cout / g.groups;
    std::vector<T> out(batch * g.cout * g.out_size);
    std::vector<T>& cols = scratch<T, 0>(g.identity ? 0 : g.patch * g.out_size);
    const T* xd = x.data().data();
    const T* wd = w.data().data();
    const T* bd = b.data().data();
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t grp = 0; grp < g.groups; ++grp) {
            const T* xg = xd + (n * g.cin + grp * cin_g) * g.in_size;
            const T* colp = xg;
            if (!g.identity) {
                im2col(g, xg, cols.data());
                colp = cols.data();
            }
            ConstMapMat<T> W(wd + grp * cout_g * g.patch, static_cast<Eigen::Index>(cout_g),
                             static_cast<Eigen::Index>(g.patch));
            ConstMapMat<T> C(colp, static_cast<Eigen::Index>(g.patch), static_cast<Eigen::Index>(g.out_size));
            MapMat<T> O(out.data() + (n * g.cout + grp * cout_g) * g.out_size, static_cast<Eigen::Index>(cout_g),
                        static_cast<Eigen::Index>(g.out_size));
            O.noalias() = W * C;
            for (std::size_t c = 0; c < cout_g; ++c) O.row(static_cast<Eigen::Index>(c)).array() += bd[grp * cout_g + c];
        }
    }
    return make_result<T>(std::move(out_shape), std::move(out), {x, w, b}, [geo, batch](Node<T>& self) {
        const Geometry& g = *geo;
        const std::size_t cin_g = g.cin / g.groups;
        const std::size_t cout_g = g.cout / g.groups;
        Node<T>& px = *self.parents[0];
        Node<T>& pw = *self.parents[1];
        Node<T>& pb = *self.parents[2];
        std::vector<T>& cols = scratch<T, 1>(g.identity ? 0 : g.patch * g.out_size);
        std::vector<T>& dcols = scratch<T, 2>(g.identity ? 0 : g.patch * g.out_size);
        for (std::size_t n = 0; n < batch; ++n) {
            for (std::size_t grp = 0; grp < g.groups; ++grp) {
                const T* gout = self.grad.data() + (n * g.cout + grp * cout_g) * g.out_size;
                ConstMapMat<T> G(gout, static_cast<Eigen::Index>(cout_g), static_cast<Eigen::Index>(g.out_size));
                if (pb.requires_grad) {
                    for (std::size_t c = 0; c < cout_g; ++c)
                        pb.grad[grp * cout_g + c] +=
                            std::accumulate(gout + c * g.out_size, gout + (c + 1) * g.out_size, T(0));
                }
                const std::size_t x_off = (n * g.cin + grp * cin_g) * g.in_size;
                if (pw.requires_grad) {
                    const T* colp = px.value.data() + x_off;
                    if (!g.identity) {
                        im2col(g, colp, cols.data());
                        colp = cols.data();
                    }
                    ConstMapMat<T> C(colp, static_cast<Eigen::Index>(g.patch), static_cast<Eigen::Index>(g.out_size));
                    MapMat<T> dW(pw.grad.data() + grp * cout_g * g.patch, static_cast<Eigen::Index>(cout_g),
                                 static_cast<Eigen::Index>(g.patch));
                    dW.noalias() += G * C.transpose();
                }
                if (px.requires_grad) {
                    ConstMapMat<T> W(pw.value.data() + grp * cout_g * g.patch, static_cast<Eigen::Index>(cout_g),
                                     static_cast<Eigen::Index>(g.patch));
                    if (g.identity) {
                        MapMat<T> dX(px.grad.data() + x_off, static_cast<Eigen::Index>(g.patch),
                                     static_cast<Eigen::Index>(g.out_size));
                        dX.noalias() += W.transpose() * G;
                    } else {
                        MapMat<T> dC(dcols.data(), static_cast<Eigen::Index>(g.patch),
                                     static_cast<Eigen::Index>(g.out_size));
                        dC.noalias() = W.transpose() * G;
                        col2im(g, dcols.data(), px.grad.data() + x_off);
                    }
                }
            }
        }
    });
}

template <typename T>
Tensor<T> depthwise_conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const ConvSpec& s,
                           std::size_t t_out) {
    const std::size_t batch = x.dim(0);
    const std::size_t channels = s.in_channels;
    const std::size_t t_in = x.dim(2);
    const std::size_t k = s.kernel_size;
    std::vector<T> out(batch * channels * t_out);
    const T* xd = x.data().data();
    const T* wd = w.data().data();
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t c = 0; c < channels; ++c) {
            const T* xc = xd + (n * channels + c) * t_in;
            const T* wc = wd + c * k;
            T* oc = out.data() + (n * channels + c) * t_out;
            for (std::size_t t = 0; t < t_out; ++t) oc[t] = b[c];
            for (std::size_t j = 0; j < k; ++j) {
                const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j * s.dilation) - static_cast<std::ptrdiff_t>(s.padding);
                for (std::size_t t = 0; t < t_out; ++t) {
                    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * s.stride) + shift;
                    if (src >= 0 && src < static_cast<std::ptrdiff_t>(t_in)) oc[t] += wc[j] * xc[src];
                }
            }
        }
    return make_result<T>({batch, channels, t_out}, std::move(out), {x, w, b}, [s, batch, channels, t_in, t_out](Node<T>& self) {
        Node<T>& px = *self.parents[0];
        Node<T>& pw = *self.parents[1];
        Node<T>& pb = *self.parents[2];
        const std::size_t k = s.kernel_size;
        for (std::size_t n = 0; n < batch; ++n)
            for (std::size_t c = 0; c < channels; ++c) {
                const T* g = self.grad.data() + (n * channels + c) * t_out;
                const T* xc = px.value.data() + (n * channels + c) * t_in;
                if (pb.requires_grad)
                    for (std::size_t t = 0; t < t_out; ++t) pb.grad[c] += g[t];
                for (std::size_t j = 0; j < k; ++j) {
                    const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j * s.dilation) - static_cast<std::ptrdiff_t>(s.padding);
                    T dw = T(0);
                    for (std::size_t t = 0; t < t_out; ++t) {
                        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * s.stride) + shift;
                        if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_in)) continue;
                        dw += g[t] * xc[src];
                        if (px.requires_grad) px.grad[(n * channels + c) * t_in + static_cast<std::size_t>(src)] += g[t] * pw.value[c * k + j];
                    }
                    if (pw.requires_grad) pw.grad[c * k + j] += dw;
                }
            }
    });
}

}  // namespace

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const ConvSpec& spec) {
    spec.validate();
    if (x.rank() != 3 || x.dim(1) != spec.in_channels)
        throw InvalidArgument("conv1d: input " + shape_string(x.shape()) + " does not have " +
                              std::to_string(spec.in_channels) + " channels");
    const Shape w_shape{spec.out_channels, spec.in_channels / spec.groups, spec.kernel_size};
    if (w.shape() != w_shape)
        throw InvalidArgument("conv1d: weight " + shape_string(w.shape()) + " expected " + shape_string(w_shape));
    if (b.shape() != Shape{spec.out_channels}) throw InvalidArgument("conv1d: bias shape " + shape_string(b.shape()));
    const std::size_t t_in = x.dim(2);
    const std::size_t t_out = spec.output_length(t_in);
    if (t_out == 0) throw InvalidArgument("conv1d: input length " + std::to_string(t_in) + " too short for kernel");

    if (spec.depthwise() && spec.groups > 1) return depthwise_conv1d(x, w, b, spec, t_out);

    auto geo = cached_geometry({spec.in_channels, spec.out_channels, spec.groups, spec.kernel_size, spec.stride,
                                spec.dilation, spec.padding, t_in},
                               [&](Geometry& g) {
        g.cin = spec.in_channels;
        g.cout = spec.out_channels;
        g.groups = spec.groups;
        g.patch = (spec.in_channels / spec.groups) * spec.kernel_size;
        g.in_size = t_in;
        g.out_size = t_out;
        g.identity = spec.kernel_size == 1 && spec.stride == 1 && spec.padding == 0;
        if (!g.identity) {
            g.gather.resize(g.patch * t_out);
            const std::size_t cin_g = spec.in_channels / spec.groups;
            for (std::size_t ci = 0; ci < cin_g; ++ci)
                for (std::size_t j = 0; j < spec.kernel_size; ++j)
                    for (std::size_t t = 0; t < t_out; ++t) {
                        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * spec.stride + j * spec.dilation) -
                                                   static_cast<std::ptrdiff_t>(spec.padding);
                        const bool inside = src >= 0 && src < static_cast<std::ptrdiff_t>(t_in);
                        g.gather[(ci * spec.kernel_size + j) * t_out + t] =
                            inside ? static_cast<std::ptrdiff_t>(ci * t_in) + src : -1;
                    }
        }
    });
    return grouped_conv(x, w, b, geo, {x.dim(0), spec.out_channels, t_out});
}

// Direct 2-D convolution for dense layers with few channels and unit row
// stride, where im2col plus GEMM spends its time on the gather. The padded
// input is split into column phases (one per column stride) so that every
// kernel tap becomes a contiguous axpy over a "wide" output plane of Wq
// columns, of which the first w_out are kept.
struct PhaseLayout {
    std::size_t batch, cin, cout, kh, kw, stride, pad_h, pad_w;
    std::size_t h_in, w_in, h_out, w_out;
    std::size_t wq, plane, phase_stride, wide;

    std::size_t tap_offset(std::size_t r, std::size_t c) const { return r * wq + c / stride; }
    std::size_t phase_index(std::size_t n, std::size_t ci, std::size_t c) const {
        return ((n * cin + ci) * stride + c % stride) * phase_stride;
    }
    // Calls f(phase, first input column, its slot in the phase row) per phase.
    template <typename F>
    void for_each_phase(F&& f) const {
        for (std::size_t ph = 0; ph < stride; ++ph) {
            const std::size_t iw0 = (ph + stride - pad_w % stride) % stride;
            f(ph, iw0, (iw0 + pad_w) / stride);
        }
    }
};

constexpr std::size_t kTile = 1024;

template <typename T>
void axpy(T a, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

// y[i] += sum_c w[c] * x[c][i] for all taps of one kernel row, one pass over y.
template <std::size_t K, typename T>
void fused_taps(const T* w, const T* const* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        T acc = y[i];
        for (std::size_t c = 0; c < K; ++c) acc += w[c] * x[c][i];
        y[i] = acc;
    }
}

// Dot product with a fixed accumulation order, independent of how the
// operands happen to be aligned, so training stays bitwise reproducible.
template <typename T>
T fixed_dot(const T* a, const T* b, std::size_t n) {
    constexpr std::size_t kLanes = 16;
    T acc[kLanes] = {};
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes)
        for (std::size_t l = 0; l < kLanes; ++l) acc[l] += a[i + l] * b[i + l];
    T total = 0;
    for (std::size_t l = 0; l < kLanes; ++l) total += acc[l];
    for (; i < n; ++i) total += a[i] * b[i];
    return total;
}

template <typename T>
void row_taps(const T* w, const T* const* x, std::size_t k, T* y, std::size_t n) {
    switch (k) {
        case 9: return fused_taps<9>(w, x, y, n);
        case 5: return fused_taps<5>(w, x, y, n);
        case 3: return fused_taps<3>(w, x, y, n);
        default:
            for (std::size_t c = 0; c < k; ++c) axpy(w[c], x[c], y, n);
    }
}

template <typename T>
Tensor<T> direct_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const ConvSpec2D& s,
                        std::size_t h_out, std::size_t w_out) {
    PhaseLayout L{x.dim(0), s.in_channels, s.out_channels, s.kernel_h, s.kernel_w, s.stride_w, s.padding_h,
                  s.padding_w, x.dim(2), x.dim(3), h_out, w_out, 0, 0, 0, 0};
    const std::size_t hp = L.h_in + 2 * L.pad_h, wp = L.w_in + 2 * L.pad_w;
    L.wq = (wp + L.stride - 1) / L.stride;
    L.plane = hp * L.wq;
    L.phase_stride = L.plane + (L.kw - 1) / L.stride + 1;
    L.wide = h_out * L.wq;

    auto phases = std::make_shared<std::vector<T>>(L.batch * L.cin * L.stride * L.phase_stride, T(0));
    const T* xd = x.data().data();
    for (std::size_t n = 0; n < L.batch; ++n)
        for (std::size_t ci = 0; ci < L.cin; ++ci)
            for (std::size_t ih = 0; ih < L.h_in; ++ih)
                L.for_each_phase([&](std::size_t ph, std::size_t iw0, std::size_t j0) {
                    const T* src = xd + ((n * L.cin + ci) * L.h_in + ih) * L.w_in;
                    T* dst = phases->data() + L.phase_index(n, ci, ph) + (ih + L.pad_h) * L.wq;
                    for (std::size_t iw = iw0, j = j0; iw < L.w_in; iw += L.stride, ++j) dst[j] = src[iw];
                });

    const T* wd = w.data().data();
    const T* bd = b.data().data();
    std::vector<T> out(L.batch * L.cout * h_out * w_out);
    std::vector<T> wide(L.wide);
    std::vector<const T*> src(L.kw);
    for (std::size_t n = 0; n < L.batch; ++n)
        for (std::size_t co = 0; co < L.cout; ++co) {
            std::fill(wide.begin(), wide.end(), bd[co]);
            for (std::size_t q0 = 0; q0 < L.wide; q0 += kTile) {
                const std::size_t len = std::min(kTile, L.wide - q0);
                for (std::size_t ci = 0; ci < L.cin; ++ci)
                    for (std::size_t r = 0; r < L.kh; ++r) {
                        for (std::size_t c = 0; c < L.kw; ++c)
                            src[c] = phases->data() + L.phase_index(n, ci, c) + L.tap_offset(r, c) + q0;
                        row_taps(wd + ((co * L.cin + ci) * L.kh + r) * L.kw, src.data(), L.kw, wide.data() + q0, len);
                    }
            }
            T* op = out.data() + (n * L.cout + co) * h_out * w_out;
            for (std::size_t oh = 0; oh < h_out; ++oh)
                std::copy_n(wide.data() + oh * L.wq, w_out, op + oh * w_out);
        }

    return make_result<T>({L.batch, L.cout, h_out, w_out}, std::move(out), {x, w, b}, [L, phases](Node<T>& self) {
        Node<T>& px = *self.parents[0];
        Node<T>& pw = *self.parents[1];
        Node<T>& pb = *self.parents[2];
        const std::size_t plane_out = L.h_out * L.w_out;
        if (pb.requires_grad)
            for (std::size_t n = 0; n < L.batch; ++n)
                for (std::size_t co = 0; co < L.cout; ++co) {
                    const T* g = self.grad.data() + (n * L.cout + co) * plane_out;
                    pb.grad[co] += std::accumulate(g, g + plane_out, T(0));
                }
        if (!pw.requires_grad && !px.requires_grad) return;

        // Output gradient on the wide grid, zero in the discarded columns and in
        // `pad` guard cells either side, so input gradients can be gathered.
        const std::size_t pad = (L.kw - 1) / L.stride, gstride = L.wide + 2 * pad;
        std::vector<T> gpadded(L.batch * L.cout * gstride, T(0));
        for (std::size_t nc = 0; nc < L.batch * L.cout; ++nc)
            for (std::size_t oh = 0; oh < L.h_out; ++oh)
                std::copy_n(self.grad.data() + nc * plane_out + oh * L.w_out, L.w_out,
                            gpadded.data() + nc * gstride + pad + oh * L.wq);

        if (pw.requires_grad)
            for (std::size_t n = 0; n < L.batch; ++n)
                for (std::size_t co = 0; co < L.cout; ++co) {
                    const T* g = gpadded.data() + (n * L.cout + co) * gstride + pad;
                    for (std::size_t ci = 0; ci < L.cin; ++ci)
                        for (std::size_t r = 0; r < L.kh; ++r)
                            for (std::size_t c = 0; c < L.kw; ++c)
                                pw.grad[((co * L.cin + ci) * L.kh + r) * L.kw + c] += fixed_dot(
                                    g, phases->data() + L.phase_index(n, ci, c) + L.tap_offset(r, c), L.wide);
                }

        if (px.requires_grad) {
            // Taps c = ph + m * stride of phase ph land at offset m, so each
            // (row, phase) is a short correlation of the padded gradient.
            std::vector<T> dphase(L.cin * L.stride * L.phase_stride);
            std::vector<T> wm(L.kw);
            std::vector<const T*> src(L.kw);
            for (std::size_t n = 0; n < L.batch; ++n) {
                std::fill(dphase.begin(), dphase.end(), T(0));
                for (std::size_t co = 0; co < L.cout; ++co) {
                    const T* g = gpadded.data() + (n * L.cout + co) * gstride + pad;
                    for (std::size_t ci = 0; ci < L.cin; ++ci)
                        for (std::size_t r = 0; r < L.kh; ++r)
                            for (std::size_t ph = 0; ph < std::min(L.stride, L.kw); ++ph) {
                                const std::size_t taps = (L.kw - ph + L.stride - 1) / L.stride;
                                for (std::size_t m = 0; m < taps; ++m)
                                    wm[m] = pw.value[((co * L.cin + ci) * L.kh + r) * L.kw + ph + m * L.stride];
                                T* dst = dphase.data() + L.phase_index(0, ci, ph) + r * L.wq;
                                const std::size_t span = L.wide + taps - 1;
                                for (std::size_t p0 = 0; p0 < span; p0 += kTile) {
                                    const std::size_t len = std::min(kTile, span - p0);
                                    for (std::size_t m = 0; m < taps; ++m) src[m] = g - m + p0;
                                    row_taps(wm.data(), src.data(), taps, dst + p0, len);
                                }
                            }
                }
                for (std::size_t ci = 0; ci < L.cin; ++ci)
                    for (std::size_t ih = 0; ih < L.h_in; ++ih)
                        L.for_each_phase([&](std::size_t ph, std::size_t iw0, std::size_t j0) {
                            T* dst = px.grad.data() + ((n * L.cin + ci) * L.h_in + ih) * L.w_in;
                            const T* src = dphase.data() + L.phase_index(0, ci, ph) + (ih + L.pad_h) * L.wq;
                            for (std::size_t iw = iw0, j = j0; iw < L.w_in; iw += L.stride, ++j) dst[iw] += src[j];
                        });
            }
        }
    });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const ConvSpec2D& spec) {
    spec.validate();
    if (x.rank() != 4 || x.dim(1) != spec.in_channels)
        throw InvalidArgument("conv2d: input " + shape_string(x.shape()) + " does not have " +
                              std::to_string(spec.in_channels) + " channels");
    const Shape w_shape{spec.out_channels, spec.in_channels / spec.groups, spec.kernel_h, spec.kernel_w};
    if (w.shape() != w_shape)
        throw InvalidArgument("conv2d: weight " + shape_string(w.shape()) + " expected " + shape_string(w_shape));
    if (b.shape() != Shape{spec.out_channels}) throw InvalidArgument("conv2d: bias shape " + shape_string(b.shape()));
    const std::size_t h_in = x.dim(2), w_in = x.dim(3);
    const std::size_t h_out = spec.output_h(h_in), w_out = spec.output_w(w_in);
    if (h_out == 0 || w_out == 0) throw InvalidArgument("conv2d: input too small for kernel");
    if (spec.groups == 1 && spec.dilation_h == 1 && spec.dilation_w == 1 && spec.stride_h == 1 &&
        spec.in_channels * spec.out_channels <= 256)
        return direct_conv2d(x, w, b, spec, h_out, w_out);

    auto geo = cached_geometry({0, spec.in_channels, spec.out_channels, spec.groups, spec.kernel_h, spec.kernel_w,
                                spec.stride_h, spec.stride_w, spec.dilation_h, spec.dilation_w, spec.padding_h,
                                spec.padding_w, h_in, w_in},
                               [&](Geometry& g) {
        g.cin = spec.in_channels;
        g.cout = spec.out_channels;
        g.groups = spec.groups;
        g.patch = (spec.in_channels / spec.groups) * spec.kernel_h * spec.kernel_w;
        g.in_size = h_in * w_in;
        g.out_size = h_out * w_out;
        g.identity = spec.kernel_h == 1 && spec.kernel_w == 1 && spec.stride_h == 1 && spec.stride_w == 1 &&
                        spec.padding_h == 0 && spec.padding_w == 0;
        if (!g.identity) {
            g.gather.resize(g.patch * g.out_size);
            const std::size_t cin_g = spec.in_channels / spec.groups;
            std::size_t row = 0;
            for (std::size_t ci = 0; ci < cin_g; ++ci)
                for (std::size_t kh = 0; kh < spec.kernel_h; ++kh)
                    for (std::size_t kw = 0; kw < spec.kernel_w; ++kw, ++row)
                        for (std::size_t oh = 0; oh < h_out; ++oh) {
                            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * spec.stride_h + kh * spec.dilation_h) -
                                                      static_cast<std::ptrdiff_t>(spec.padding_h);
                            for (std::size_t ow = 0; ow < w_out; ++ow) {
                                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * spec.stride_w + kw * spec.dilation_w) -
                                                          static_cast<std::ptrdiff_t>(spec.padding_w);
                                const bool inside = ih >= 0 && ih < static_cast<std::ptrdiff_t>(h_in) && iw >= 0 &&
                                                    iw < static_cast<std::ptrdiff_t>(w_in);
                                g.gather[row * g.out_size + oh * w_out + ow] =
                                    inside ? static_cast<std::ptrdiff_t>(ci * g.in_size) + ih * static_cast<std::ptrdiff_t>(w_in) + iw
                                           : -1;
                            }
                        }
        }
    });
    return grouped_conv(x, w, b, geo, {x.dim(0), spec.out_channels, h_out, w_out});
}

// ---------------------------------------------------------------------------
// normalisation

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, std::size_t axis, T eps) {
    const AxisView v = axis_view(x.shape(), axis);
    if (v.channels < 1) throw InvalidArgument("layer_norm over an empty axis");
    if (gamma.shape() != Shape{v.channels} || beta.shape() != Shape{v.channels})
        throw InvalidArgument("layer_norm: gamma/beta must have shape [" + std::to_string(v.channels) + "]");
    const std::size_t positions = v.outer * v.inner;
    // Saved for backward: normalised input and reciprocal std per position.
    auto xhat = std::make_shared<std::vector<T>>(x.size());
    auto rstd = std::make_shared<std::vector<T>>(positions);
    std::vector<T> out(x.size());
    const auto in = x.data();
    std::vector<T> mu(v.inner), var(v.inner);
    const T inv_c = T(1) / static_cast<T>(v.channels);
    for (std::size_t o = 0; o < v.outer; ++o) {
        const std::size_t base = o * v.channels * v.inner;
        std::fill(mu.begin(), mu.end(), T(0));
        std::fill(var.begin(), var.end(), T(0));
        for (std::size_t c = 0; c < v.channels; ++c)
            for (std::size_t i = 0; i < v.inner; ++i) mu[i] += in[base + c * v.inner + i];
        for (auto& m : mu) m *= inv_c;
        for (std::size_t c = 0; c < v.channels; ++c)
            for (std::size_t i = 0; i < v.inner; ++i) {
                const T d = in[base + c * v.inner + i] - mu[i];
                var[i] += d * d;
            }
        for (std::size_t i = 0; i < v.inner; ++i) (*rstd)[o * v.inner + i] = T(1) / std::sqrt(var[i] * inv_c + eps);
        for (std::size_t c = 0; c < v.channels; ++c)
            for (std::size_t i = 0; i < v.inner; ++i) {
                const std::size_t k = base + c * v.inner + i;
                const T h = (in[k] - mu[i]) * (*rstd)[o * v.inner + i];
                (*xhat)[k] = h;
                out[k] = h * gamma[c] + beta[c];
            }
    }
    return make_result<T>(x.shape(), std::move(out), {x, gamma, beta}, [v, xhat, rstd](Node<T>& self) {
        Node<T>& px = *self.parents[0];
        Node<T>& pg = *self.parents[1];
        Node<T>& pb = *self.parents[2];
        const T inv_c = T(1) / static_cast<T>(v.channels);
        std::vector<T> m1(v.inner), m2(v.inner);
        for (std::size_t o = 0; o < v.outer; ++o) {
            const std::size_t base = o * v.channels * v.inner;
            std::fill(m1.begin(), m1.end(), T(0));
            std::fill(m2.begin(), m2.end(), T(0));
            for (std::size_t c = 0; c < v.channels; ++c) {
                const T gam = pg.value[c];
                T dg = T(0), db = T(0);
                for (std::size_t i = 0; i < v.inner; ++i) {
                    const std::size_t k = base + c * v.inner + i;
                    const T gy = self.grad[k];
                    dg += gy * (*xhat)[k];
                    db += gy;
                    const T dh = gy * gam;
                    m1[i] += dh;
                    m2[i] += dh * (*xhat)[k];
                }
                if (pg.requires_grad) pg.grad[c] += dg;
                if (pb.requires_grad) pb.grad[c] += db;
            }
            if (!px.requires_grad) continue;
            for (std::size_t c = 0; c < v.channels; ++c) {
                const T gam = pg.value[c];
                for (std::size_t i = 0; i < v.inner; ++i) {
                    const std::size_t k = base + c * v.inner + i;
                    const T dh = self.grad[k] * gam;
                    px.grad[k] += (*rstd)[o * v.inner + i] * (dh - m1[i] * inv_c - (*xhat)[k] * m2[i] * inv_c);
                }
            }
        }
    });
}

template <typename T>
Tensor<T> grn(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    if (x.rank() != 3) throw InvalidArgument("grn expects [B, C, T], got " + shape_string(x.shape()));
    const std::size_t batch = x.dim(0), channels = x.dim(1), len = x.dim(2);
    if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels})
        throw InvalidArgument("grn: gamma/beta must have shape [" + std::to_string(channels) + "]");
    auto norms = std::make_shared<std::vector<T>>(batch * channels);
    auto denom = std::make_shared<std::vector<T>>(batch);  // mean_c g + eps
    std::vector<T> out(x.size());
    const auto in = x.data();
    for (std::size_t n = 0; n < batch; ++n) {
        T total = T(0);
        for (std::size_t c = 0; c < channels; ++c) {
            T ss = T(0);
            const std::size_t base = (n * channels + c) * len;
            for (std::size_t t = 0; t < len; ++t) ss += in[base + t] * in[base + t];
            (*norms)[n * channels + c] = std::sqrt(ss);
            total += (*norms)[n * channels + c];
        }
        (*denom)[n] = total / static_cast<T>(channels) + eps;
        for (std::size_t c = 0; c < channels; ++c) {
            const T nc = (*norms)[n * channels + c] / (*denom)[n];
            const std::size_t base = (n * channels + c) * len;
            for (std::size_t t = 0; t < len; ++t)
                out[base + t] = gamma[c] * in[base + t] * nc + beta[c] + in[base + t];
        }
    }
    return make_result<T>(x.shape(), std::move(out), {x, gamma, beta},
                          [batch, channels, len, norms, denom](Node<T>& self) {
        Node<T>& px = *self.parents[0];
        Node<T>& pg = *self.parents[1];
        Node<T>& pb = *self.parents[2];
        std::vector<T> dn(channels);
        for (std::size_t n = 0; n < batch; ++n) {
            const T d = (*denom)[n];
            for (std::size_t c = 0; c < channels; ++c) {
                const std::size_t base = (n * channels + c) * len;
                const T nc = (*norms)[n * channels + c] / d;
                const T gam = pg.value[c];
                T acc_gx = T(0), acc_g = T(0);
                for (std::size_t t = 0; t < len; ++t) {
                    const T gy = self.grad[base + t];
                    acc_gx += gy * px.value[base + t];
                    acc_g += gy;
                    if (px.requires_grad) px.grad[base + t] += gy * (gam * nc + T(1));
                }
                if (pg.requires_grad) pg.grad[c] += acc_gx * nc;
                if (pb.requires_grad) pb.grad[c] += acc_g;
                dn[c] = acc_gx * gam;
            }
            if (!px.requires_grad) continue;
            // n_c = g_c / d with d = mean(g) + eps.
            T dmean = T(0);
            for (std::size_t c = 0; c < channels; ++c) dmean -= dn[c] * (*norms)[n * channels + c] / (d * d);
            const T dmean_per = dmean / static_cast<T>(channels);
            for (std::size_t c = 0; c < channels; ++c) {
                const T gc = (*norms)[n * channels + c];
                if (gc == T(0)) continue;
                const T dg = dn[c] / d + dmean_per;
                const std::size_t base = (n * channels + c) * len;
                for (std::size_t t = 0; t < len; ++t) px.grad[base + t] += dg * px.value[base + t] / gc;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// differentiable iSTFT

template <typename T>
Tensor<T> istft(const Tensor<T>& real, const Tensor<T>& imag, const dsp::StftConfig& cfg,
                std::optional<std::size_t> length) {
    cfg.validate();
    require_same_shape(real, imag, "istft");
    if (real.rank() != 3 || real.dim(1) != static_cast<std::size_t>(cfg.bins()))
        throw InvalidArgument("istft expects [B, " + std::to_string(cfg.bins()) + ", T], got " +
                              shape_string(real.shape()));
    const std::size_t batch = real.dim(0), bins = real.dim(1), frames = real.dim(2);
    if (frames == 0) throw InvalidArgument("istft of zero frames");
    const std::size_t hop = static_cast<std::size_t>(cfg.hop);
    const std::size_t win = static_cast<std::size_t>(cfg.win_len);
    const std::size_t pad = win / 2;
    const std::size_t n_out = length.value_or((frames - 1) * hop);
    auto window = std::make_shared<std::vector<double>>(cfg.window());
    auto env = std::make_shared<std::vector<double>>(dsp::window_envelope(frames, cfg, *window));

    std::vector<T> out(batch * n_out, T(0));
    std::vector<std::complex<double>> half(bins);
    std::vector<double> frame(win);
    std::vector<double> acc(env->size());
    for (std::size_t n = 0; n < batch; ++n) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const std::size_t base = n * bins * frames;
        for (std::size_t t = 0; t < frames; ++t) {
            for (std::size_t f = 0; f < bins; ++f)
                half[f] = {static_cast<double>(real[base + f * frames + t]), static_cast<double>(imag[base + f * frames + t])};
            dsp::synthesize_frame(half, cfg, *window, frame);
            for (std::size_t k = 0; k < win; ++k) acc[t * hop + k] += frame[k];
        }
        for (std::size_t i = 0; i < n_out && i + pad < acc.size(); ++i) {
            const double e = (*env)[i + pad];
            out[n * n_out + i] = e > 1e-10 ? static_cast<T>(acc[i + pad] / e) : T(0);
        }
    }
    return make_result<T>({batch, n_out}, std::move(out), {real, imag},
                          [cfg, batch, bins, frames, n_out, window, env](Node<T>& self) {
        const std::size_t hop = static_cast<std::size_t>(cfg.hop);
        const std::size_t win = static_cast<std::size_t>(cfg.win_len);
        const std::size_t pad = win / 2;
        Node<T>& pr = *self.parents[0];
        Node<T>& pi = *self.parents[1];
        std::vector<double> gpad(env->size());
        std::vector<std::complex<double>> ghalf(bins);
        for (std::size_t n = 0; n < batch; ++n) {
            std::fill(gpad.begin(), gpad.end(), 0.0);
            for (std::size_t i = 0; i < n_out && i + pad < gpad.size(); ++i) {
                const double e = (*env)[i + pad];
                if (e > 1e-10) gpad[i + pad] = static_cast<double>(self.grad[n * n_out + i]) / e;
            }
            const std::size_t base = n * bins * frames;
            for (std::size_t t = 0; t < frames; ++t) {
                dsp::analyze_frame_adjoint(std::span<const double>(gpad.data() + t * hop, win), cfg, *window, ghalf);
                for (std::size_t f = 0; f < bins; ++f) {
                    if (pr.requires_grad) pr.grad[base + f * frames + t] += static_cast<T>(ghalf[f].real());
                    if (pi.requires_grad) pi.grad[base + f * frames + t] += static_cast<T>(ghalf[f].imag());
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// grad_check

GradCheckResult grad_check(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& op,
                           const std::vector<Tensor<double>>& inputs, double perturbation, unsigned seed) {
    std::vector<Tensor<double>> args = inputs;
    for (auto& a : args) a.zero_grad();
    Tensor<double> out = op(args);
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> dist(0.5, 1.5);
    std::vector<double> weights(out.size());
    for (auto& w : weights) w = dist(rng) * ((rng() & 1u) ? 1.0 : -1.0);
    Tensor<double> wt = Tensor<double>::from(out.shape(), weights);
    sum(mul(out, wt)).backward();

    auto objective = [&]() {
        NoGradGuard guard;
        Tensor<double> y = op(args);
        double acc = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) acc += weights[i] * y[i];
        return acc;
    };

    GradCheckResult result;
    for (auto& a : args) {
        if (!a.requires_grad()) continue;
        std::vector<double> analytic(a.grad().begin(), a.grad().end());
        if (analytic.empty()) analytic.assign(a.size(), 0.0);
        auto data = a.mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            data[i] = saved + perturbation;
            const double up = objective();
            data[i] = saved - perturbation;
            const double down = objective();
            data[i] = saved;
            const double numeric = (up - down) / (2.0 * perturbation);
            const double scale_ref = std::max(std::abs(numeric), std::abs(analytic[i]));
            const double err = std::abs(numeric - analytic[i]) / (scale_ref < 1e-6 ? 1.0 : scale_ref);
            result.max_rel_error = std::max(result.max_rel_error, err);
            ++result.checked;
        }
    }
    for (auto& a : args) a.zero_grad();
    return result;
}

// ---------------------------------------------------------------------------

#define MSBWE_INSTANTIATE(T)                                                                                   \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                                \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                \
    template Tensor<T> scale(const Tensor<T>&, T);                                                             \
    template Tensor<T> add_scalar(const Tensor<T>&, T);                                                        \
    template Tensor<T> square(const Tensor<T>&);                                                               \
    template Tensor<T> exp(const Tensor<T>&);                                                                  \
    template Tensor<T> sin(const Tensor<T>&);                                                                  \
    template Tensor<T> cos(const Tensor<T>&);                                                                  \
    template Tensor<T> relu(const Tensor<T>&);                                                                 \
    template Tensor<T> leaky_relu(const Tensor<T>&, T);                                                        \
    template Tensor<T> gelu(const Tensor<T>&);                                                                 \
    template Tensor<T> anti_wrap_abs(const Tensor<T>&);                                                        \
    template Tensor<T> arctan2_phase(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> sum(const Tensor<T>&);                                                                  \
    template Tensor<T> mean(const Tensor<T>&);                                                                 \
    template Tensor<T> mean_per_sample(const Tensor<T>&);                                                      \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                                       \
    template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                                     \
    template Tensor<T> diff(const Tensor<T>&, std::size_t);                                                    \
    template Tensor<T> conv1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvSpec&);          \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvSpec2D&);        \
    template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, T);       \
    template Tensor<T> grn(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                           \
    template Tensor<T> istft(const Tensor<T>&, const Tensor<T>&, const dsp::StftConfig&, std::optional<std::size_t>);

MSBWE_INSTANTIATE(float)
MSBWE_INSTANTIATE(double)

#undef MSBWE_INSTANTIATE

}  // namespace msbwe::ad
