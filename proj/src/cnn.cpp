#include "crykit/cnn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>

#include "crykit/errors.hpp"
#include "crykit/rng.hpp"

namespace crykit {

namespace {

// C (MxN) += A (MxK) * B (KxN)
void gemm_nn(int M, int N, int K, const double* A, const double* B,
             double* C) {
    for (int i = 0; i < M; ++i) {
        const double* a = A + static_cast<std::size_t>(i) * K;
        double* c = C + static_cast<std::size_t>(i) * N;
        for (int k = 0; k < K; ++k) {
            const double aik = a[k];
            const double* b = B + static_cast<std::size_t>(k) * N;
            for (int j = 0; j < N; ++j) c[j] += aik * b[j];
        }
    }
}

// C (KxN) += A^T * B where A is (MxK), B is (MxN)
void gemm_tn(int M, int N, int K, const double* A, const double* B,
             double* C) {
    for (int m = 0; m < M; ++m) {
        const double* a = A + static_cast<std::size_t>(m) * K;
        const double* b = B + static_cast<std::size_t>(m) * N;
        for (int k = 0; k < K; ++k) {
            const double amk = a[k];
            double* c = C + static_cast<std::size_t>(k) * N;
            for (int j = 0; j < N; ++j) c[j] += amk * b[j];
        }
    }
}

// C (MxK) += A * B^T where A is (MxN), B is (KxN)
void gemm_nt(int M, int N, int K, const double* A, const double* B,
             double* C) {
    for (int m = 0; m < M; ++m) {
        const double* a = A + static_cast<std::size_t>(m) * N;
        double* c = C + static_cast<std::size_t>(m) * K;
        for (int k = 0; k < K; ++k) {
            const double* b = B + static_cast<std::size_t>(k) * N;
            double acc = 0.0;
            for (int j = 0; j < N; ++j) acc += a[j] * b[j];
            c[k] += acc;
        }
    }
}

void im2col(const double* x, int H, int W, int C, int K, int pad, int out_h,
            int out_w, double* cols) {
    const int patch = K * K * C;
    for (int oh = 0; oh < out_h; ++oh) {
        for (int ow = 0; ow < out_w; ++ow) {
            double* row = cols +
                          static_cast<std::size_t>(oh * out_w + ow) * patch;
            for (int kh = 0; kh < K; ++kh) {
                const int ih = oh + kh - pad;
                for (int kw = 0; kw < K; ++kw) {
                    const int iw = ow + kw - pad;
                    double* dst = row + (kh * K + kw) * C;
                    if (ih >= 0 && ih < H && iw >= 0 && iw < W) {
                        const double* src =
                            x + static_cast<std::size_t>(ih * W + iw) * C;
                        std::memcpy(dst, src, sizeof(double) * C);
                    } else {
                        std::memset(dst, 0, sizeof(double) * C);
                    }
                }
            }
        }
    }
}

void col2im_add(const double* cols, int H, int W, int C, int K, int pad,
                int out_h, int out_w, double* x) {
    const int patch = K * K * C;
    for (int oh = 0; oh < out_h; ++oh) {
        for (int ow = 0; ow < out_w; ++ow) {
            const double* row =
                cols + static_cast<std::size_t>(oh * out_w + ow) * patch;
            for (int kh = 0; kh < K; ++kh) {
                const int ih = oh + kh - pad;
                if (ih < 0 || ih >= H) continue;
                for (int kw = 0; kw < K; ++kw) {
                    const int iw = ow + kw - pad;
                    if (iw < 0 || iw >= W) continue;
                    const double* src = row + (kh * K + kw) * C;
                    double* dst =
                        x + static_cast<std::size_t>(ih * W + iw) * C;
                    for (int c = 0; c < C; ++c) dst[c] += src[c];
                }
            }
        }
    }
}

struct ConvDims {
    int H, W, C, K, F, pad, out_h, out_w;
};

ConvDims conv_dims(const Tensor& input, const Tensor& weights,
                   Padding padding) {
    if (input.shape.size() != 3)
        throw ShapeMismatch("conv2d: input must be H x W x C");
    if (weights.shape.size() != 4)
        throw ShapeMismatch("conv2d: weights must be K x K x C x F");
    ConvDims d;
    d.H = input.shape[0];
    d.W = input.shape[1];
    d.C = input.shape[2];
    d.K = weights.shape[0];
    d.F = weights.shape[3];
    if (weights.shape[1] != d.K)
        throw ShapeMismatch("conv2d: kernel must be square");
    if (d.K % 2 == 0) throw ShapeMismatch("conv2d: kernel must be odd");
    if (weights.shape[2] != d.C)
        throw ShapeMismatch("conv2d: weight channels do not match input");
    if (padding == Padding::same) {
        d.pad = (d.K - 1) / 2;
        d.out_h = d.H;
        d.out_w = d.W;
    } else {
        d.pad = 0;
        d.out_h = d.H - d.K + 1;
        d.out_w = d.W - d.K + 1;
        if (d.out_h <= 0 || d.out_w <= 0)
            throw ShapeMismatch("conv2d: input smaller than kernel");
    }
    return d;
}

Tensor image_to_tensor(const SpectrogramImage& image) {
    if (image.pixels.size() != kImageSize * kImageSize)
        throw ShapeMismatch("image is not 64x64");
    Tensor t({kImageSize, kImageSize, 1});
    for (std::size_t i = 0; i < image.pixels.size(); ++i)
        t.v[i] = static_cast<double>(image.pixels[i]);
    return t;
}

const char kModelMagic[8] = {'C', 'R', 'Y', 'K', 'I', 'T', 'M', '1'};

template <typename T>
void put_raw(std::string& buf, const T& v) {
    buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get_raw(const std::string& buf, std::size_t& pos) {
    if (pos + sizeof(T) > buf.size())
        throw IoError("model file truncated");
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

void put_tensor(std::string& buf, const Tensor& t) {
    put_raw<std::uint32_t>(buf, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) put_raw<std::int32_t>(buf, d);
    buf.append(reinterpret_cast<const char*>(t.v.data()),
               t.v.size() * sizeof(double));
}

Tensor get_tensor(const std::string& buf, std::size_t& pos) {
    const auto ndim = get_raw<std::uint32_t>(buf, pos);
    if (ndim > 8) throw IoError("model file corrupt (tensor rank)");
    if (ndim == 0) return Tensor{};
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = get_raw<std::int32_t>(buf, pos);
    Tensor t(shape);
    const std::size_t bytes = t.v.size() * sizeof(double);
    if (pos + bytes > buf.size()) throw IoError("model file truncated");
    std::memcpy(t.v.data(), buf.data() + pos, bytes);
    pos += bytes;
    return t;
}

}  // namespace

LayerSpec LayerSpec::conv(int filters, int kernel, Padding padding) {
    LayerSpec s;
    s.kind = Kind::conv;
    s.filters = filters;
    s.kernel = kernel;
    s.padding = padding;
    return s;
}

LayerSpec LayerSpec::maxpool(int size, int stride) {
    LayerSpec s;
    s.kind = Kind::maxpool;
    s.pool_size = size;
    s.pool_stride = stride;
    return s;
}

LayerSpec LayerSpec::relu() {
    LayerSpec s;
    s.kind = Kind::relu;
    return s;
}

LayerSpec LayerSpec::flatten() {
    LayerSpec s;
    s.kind = Kind::flatten;
    return s;
}

LayerSpec LayerSpec::dense(int units) {
    LayerSpec s;
    s.kind = Kind::dense;
    s.units = units;
    return s;
}

LayerSpec LayerSpec::softmax() {
    LayerSpec s;
    s.kind = Kind::softmax;
    return s;
}

std::vector<LayerSpec> paper_architecture(int n_classes) {
    return {
        LayerSpec::conv(20, 5, Padding::same),  LayerSpec::relu(),
        LayerSpec::maxpool(),
        LayerSpec::conv(32, 5, Padding::valid), LayerSpec::relu(),
        LayerSpec::maxpool(),
        LayerSpec::conv(20, 5, Padding::valid), LayerSpec::relu(),
        LayerSpec::maxpool(),
        LayerSpec::flatten(),
        LayerSpec::dense(256),                  LayerSpec::relu(),
        LayerSpec::dense(n_classes),            LayerSpec::softmax(),
    };
}

Model Model::build(std::vector<LayerSpec> layers, std::vector<int> input_shape,
                   std::uint64_t seed) {
    Model m;
    m.layers = std::move(layers);
    m.input_shape = std::move(input_shape);
    m.rng_seed = seed;
    m.weights.resize(m.layers.size());
    m.biases.resize(m.layers.size());
    m.output_shapes.resize(m.layers.size());

    std::vector<int> cur = m.input_shape;
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        const LayerSpec& spec = m.layers[i];
        Rng rng(hash_mix(seed, 0x696e6974, i));
        switch (spec.kind) {
            case LayerSpec::Kind::conv: {
                if (cur.size() != 3)
                    throw ShapeMismatch("conv layer needs a 3-D input");
                if (spec.kernel <= 0 || spec.kernel % 2 == 0)
                    throw ShapeMismatch("conv kernel must be odd");
                if (spec.filters <= 0)
                    throw ShapeMismatch("conv needs filters > 0");
                Tensor w({spec.kernel, spec.kernel, cur[2], spec.filters});
                const double sd =
                    std::sqrt(2.0 / (spec.kernel * spec.kernel * cur[2]));
                for (auto& x : w.v) x = rng.gaussian(0.0, sd);
                m.weights[i] = std::move(w);
                m.biases[i] = Tensor({spec.filters});
                if (spec.padding == Padding::valid) {
                    cur = {cur[0] - spec.kernel + 1, cur[1] - spec.kernel + 1,
                           spec.filters};
                    if (cur[0] <= 0 || cur[1] <= 0)
                        throw ShapeMismatch("conv output collapsed");
                } else {
                    cur = {cur[0], cur[1], spec.filters};
                }
                break;
            }
            case LayerSpec::Kind::maxpool: {
                if (cur.size() != 3)
                    throw ShapeMismatch("maxpool layer needs a 3-D input");
                if (spec.pool_size != spec.pool_stride)
                    throw ShapeMismatch("maxpool: size must equal stride");
                if (cur[0] % spec.pool_size != 0 ||
                    cur[1] % spec.pool_size != 0)
                    throw ShapeMismatch("maxpool: dims not divisible");
                cur = {cur[0] / spec.pool_size, cur[1] / spec.pool_size,
                       cur[2]};
                break;
            }
            case LayerSpec::Kind::relu:
                break;
            case LayerSpec::Kind::flatten: {
                int total = 1;
                for (int d : cur) total *= d;
                cur = {total};
                break;
            }
            case LayerSpec::Kind::dense: {
                if (cur.size() != 1)
                    throw ShapeMismatch("dense layer needs a flat input");
                if (spec.units <= 0)
                    throw ShapeMismatch("dense needs units > 0");
                Tensor w({spec.units, cur[0]});
                const double sd = std::sqrt(2.0 / cur[0]);
                for (auto& x : w.v) x = rng.gaussian(0.0, sd);
                m.weights[i] = std::move(w);
                m.biases[i] = Tensor({spec.units});
                cur = {spec.units};
                break;
            }
            case LayerSpec::Kind::softmax: {
                if (cur.size() != 1)
                    throw ShapeMismatch("softmax layer needs a flat input");
                if (i + 1 != m.layers.size())
                    throw ShapeMismatch("softmax must be the final layer");
                break;
            }
        }
        m.output_shapes[i] = cur;
    }
    return m;
}

int Model::n_classes() const {
    for (auto it = layers.rbegin(); it != layers.rend(); ++it)
        if (it->kind == LayerSpec::Kind::dense) return it->units;
    throw ShapeMismatch("model has no dense layer");
}

std::size_t Model::param_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < layers.size(); ++i)
        n += weights[i].size() + biases[i].size();
    return n;
}

Tensor conv2d_forward(const Tensor& input, const Tensor& weights,
                      const Tensor& bias, Padding padding) {
    const ConvDims d = conv_dims(input, weights, padding);
    if (bias.shape != std::vector<int>{d.F})
        throw ShapeMismatch("conv2d: bias must be [filters]");

    const int M = d.out_h * d.out_w;
    const int Kc = d.K * d.K * d.C;
    std::vector<double> cols(static_cast<std::size_t>(M) * Kc);
    im2col(input.v.data(), d.H, d.W, d.C, d.K, d.pad, d.out_h, d.out_w,
           cols.data());

    Tensor out({d.out_h, d.out_w, d.F});
    for (int m = 0; m < M; ++m)
        std::memcpy(out.v.data() + static_cast<std::size_t>(m) * d.F,
                    bias.v.data(), sizeof(double) * d.F);
    gemm_nn(M, d.F, Kc, cols.data(), weights.v.data(), out.v.data());
    return out;
}

Conv2dGrads conv2d_backward(const Tensor& grad_out, const Tensor& input,
                            const Tensor& weights, Padding padding) {
    const ConvDims d = conv_dims(input, weights, padding);
    if (grad_out.shape != std::vector<int>{d.out_h, d.out_w, d.F})
        throw ShapeMismatch("conv2d_backward: grad_out shape mismatch");

    const int M = d.out_h * d.out_w;
    const int Kc = d.K * d.K * d.C;
    std::vector<double> cols(static_cast<std::size_t>(M) * Kc);
    im2col(input.v.data(), d.H, d.W, d.C, d.K, d.pad, d.out_h, d.out_w,
           cols.data());

    Conv2dGrads g;
    g.weights = Tensor(weights.shape);
    gemm_tn(M, d.F, Kc, cols.data(), grad_out.v.data(), g.weights.v.data());

    g.bias = Tensor({d.F});
    for (int m = 0; m < M; ++m) {
        const double* row =
            grad_out.v.data() + static_cast<std::size_t>(m) * d.F;
        for (int f = 0; f < d.F; ++f) g.bias.v[f] += row[f];
    }

    std::vector<double> dcols(static_cast<std::size_t>(M) * Kc, 0.0);
    gemm_nt(M, d.F, Kc, grad_out.v.data(), weights.v.data(), dcols.data());
    g.input = Tensor(input.shape);
    col2im_add(dcols.data(), d.H, d.W, d.C, d.K, d.pad, d.out_h, d.out_w,
               g.input.v.data());
    return g;
}

Tensor maxpool_forward(const Tensor& input, int size, int stride) {
    if (input.shape.size() != 3)
        throw ShapeMismatch("maxpool: input must be H x W x C");
    if (size != stride) throw ShapeMismatch("maxpool: size must equal stride");
    const int H = input.shape[0], W = input.shape[1], C = input.shape[2];
    if (H % size != 0 || W % size != 0)
        throw ShapeMismatch("maxpool: dims must divide by the pool size");
    const int oh = H / size, ow = W / size;
    Tensor out({oh, ow, C});
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
            for (int c = 0; c < C; ++c) {
                double best = -std::numeric_limits<double>::infinity();
                for (int dy = 0; dy < size; ++dy)
                    for (int dx = 0; dx < size; ++dx) {
                        const double v =
                            input.v[((y * size + dy) * W + (x * size + dx)) *
                                        C +
                                    c];
                        if (v > best) best = v;
                    }
                out.v[(y * ow + x) * C + c] = best;
            }
    return out;
}

Tensor maxpool_backward(const Tensor& grad_out, const Tensor& input, int size,
                        int stride) {
    if (size != stride) throw ShapeMismatch("maxpool: size must equal stride");
    const int H = input.shape[0], W = input.shape[1], C = input.shape[2];
    const int oh = H / size, ow = W / size;
    if (grad_out.shape != std::vector<int>{oh, ow, C})
        throw ShapeMismatch("maxpool_backward: grad_out shape mismatch");
    Tensor g(input.shape);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
            for (int c = 0; c < C; ++c) {
                double best = -std::numeric_limits<double>::infinity();
                int best_idx = -1;
                // Strict > keeps the first element on ties, in row-major
                // window order.
                for (int dy = 0; dy < size; ++dy)
                    for (int dx = 0; dx < size; ++dx) {
                        const int idx =
                            ((y * size + dy) * W + (x * size + dx)) * C + c;
                        if (input.v[idx] > best) {
                            best = input.v[idx];
                            best_idx = idx;
                        }
                    }
                g.v[best_idx] += grad_out.v[(y * ow + x) * C + c];
            }
    return g;
}

Tensor relu_forward(const Tensor& input) {
    Tensor out = input;
    for (auto& x : out.v) x = x > 0.0 ? x : 0.0;
    return out;
}

Tensor relu_backward(const Tensor& grad_out, const Tensor& input) {
    if (!grad_out.same_shape(input))
        throw ShapeMismatch("relu_backward: shape mismatch");
    Tensor g = grad_out;
    for (std::size_t i = 0; i < g.v.size(); ++i)
        if (input.v[i] <= 0.0) g.v[i] = 0.0;
    return g;
}

Tensor dense_forward(const Tensor& input, const Tensor& weights,
                     const Tensor& bias) {
    if (weights.shape.size() != 2 || input.shape.size() != 1 ||
        weights.shape[1] != input.shape[0] ||
        bias.shape != std::vector<int>{weights.shape[0]})
        throw ShapeMismatch("dense: inconsistent shapes");
    const int units = weights.shape[0], in = weights.shape[1];
    Tensor out({units});
    for (int u = 0; u < units; ++u) {
        const double* w = weights.v.data() + static_cast<std::size_t>(u) * in;
        double acc = bias.v[u];
        for (int i = 0; i < in; ++i) acc += w[i] * input.v[i];
        out.v[u] = acc;
    }
    return out;
}

DenseGrads dense_backward(const Tensor& grad_out, const Tensor& input,
                          const Tensor& weights) {
    const int units = weights.shape[0], in = weights.shape[1];
    if (grad_out.shape != std::vector<int>{units})
        throw ShapeMismatch("dense_backward: grad_out shape mismatch");
    DenseGrads g;
    g.weights = Tensor(weights.shape);
    g.bias = grad_out;
    g.input = Tensor(input.shape);
    for (int u = 0; u < units; ++u) {
        const double go = grad_out.v[u];
        const double* w = weights.v.data() + static_cast<std::size_t>(u) * in;
        double* gw = g.weights.v.data() + static_cast<std::size_t>(u) * in;
        for (int i = 0; i < in; ++i) {
            gw[i] = go * input.v[i];
            g.input.v[i] += go * w[i];
        }
    }
    return g;
}

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw ShapeMismatch("softmax: empty logits");
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> probs(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(logits[i] - mx);
        sum += probs[i];
    }
    for (auto& p : probs) p /= sum;
    return probs;
}

double cross_entropy(std::span<const double> probs, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= probs.size())
        throw ShapeMismatch("cross_entropy: label out of range");
    return -std::log(std::max(probs[label], 1e-300));
}

AdamState AdamState::init(const std::vector<Tensor*>& params) {
    AdamState s;
    for (const Tensor* p : params) {
        s.m.emplace_back(p->shape);
        s.v.emplace_back(p->shape);
    }
    s.t = 0;
    return s;
}

void adam_step(const std::vector<Tensor*>& params,
               const std::vector<const Tensor*>& grads, AdamState& state,
               const AdamConfig& config) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw ShapeMismatch("adam_step: parameter list mismatch");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(config.beta1, state.t);
    const double bc2 = 1.0 - std::pow(config.beta2, state.t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = *grads[i];
        if (!p.same_shape(g))
            throw ShapeMismatch("adam_step: grad shape mismatch");
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        for (std::size_t j = 0; j < p.v.size(); ++j) {
            m.v[j] = config.beta1 * m.v[j] + (1.0 - config.beta1) * g.v[j];
            v.v[j] =
                config.beta2 * v.v[j] + (1.0 - config.beta2) * g.v[j] * g.v[j];
            const double mhat = m.v[j] / bc1;
            const double vhat = v.v[j] / bc2;
            p.v[j] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
        }
    }
}

namespace {

// Runs the stack, recording the input of every layer. acts[i] is the
// input of layer i; acts.back() is the final output (softmax probs when
// the model ends in softmax).
std::vector<Tensor> forward_cached(const Model& model, const Tensor& input) {
    std::vector<Tensor> acts;
    acts.reserve(model.layers.size() + 1);
    acts.push_back(input);
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const LayerSpec& spec = model.layers[i];
        const Tensor& x = acts.back();
        switch (spec.kind) {
            case LayerSpec::Kind::conv:
                acts.push_back(conv2d_forward(x, model.weights[i],
                                              model.biases[i], spec.padding));
                break;
            case LayerSpec::Kind::maxpool:
                acts.push_back(
                    maxpool_forward(x, spec.pool_size, spec.pool_stride));
                break;
            case LayerSpec::Kind::relu:
                acts.push_back(relu_forward(x));
                break;
            case LayerSpec::Kind::flatten: {
                Tensor flat({static_cast<int>(x.size())});
                flat.v = x.v;
                acts.push_back(std::move(flat));
                break;
            }
            case LayerSpec::Kind::dense:
                acts.push_back(
                    dense_forward(x, model.weights[i], model.biases[i]));
                break;
            case LayerSpec::Kind::softmax: {
                Tensor probs(x.shape);
                probs.v = softmax(x.v);
                acts.push_back(std::move(probs));
                break;
            }
        }
    }
    return acts;
}

}  // namespace

ModelGrads model_gradients(const Model& model, const Tensor& input,
                           int label) {
    if (model.layers.empty() ||
        model.layers.back().kind != LayerSpec::Kind::softmax)
        throw ShapeMismatch("model_gradients: model must end in softmax");

    const std::vector<Tensor> acts = forward_cached(model, input);
    const Tensor& probs = acts.back();
    ModelGrads out;
    out.loss = cross_entropy(probs.v, label);
    out.predicted = 0;
    for (std::size_t c = 1; c < probs.v.size(); ++c)
        if (probs.v[c] > probs.v[out.predicted])
            out.predicted = static_cast<int>(c);
    out.weights.resize(model.layers.size());
    out.biases.resize(model.layers.size());

    // Softmax + cross-entropy fold into probs - onehot at the logits.
    Tensor grad = probs;
    grad.v[label] -= 1.0;

    for (std::size_t idx = model.layers.size() - 1; idx-- > 0;) {
        const LayerSpec& spec = model.layers[idx];
        const Tensor& x = acts[idx];
        switch (spec.kind) {
            case LayerSpec::Kind::conv: {
                Conv2dGrads g = conv2d_backward(grad, x, model.weights[idx],
                                                spec.padding);
                out.weights[idx] = std::move(g.weights);
                out.biases[idx] = std::move(g.bias);
                grad = std::move(g.input);
                break;
            }
            case LayerSpec::Kind::maxpool:
                grad = maxpool_backward(grad, x, spec.pool_size,
                                        spec.pool_stride);
                break;
            case LayerSpec::Kind::relu:
                grad = relu_backward(grad, x);
                break;
            case LayerSpec::Kind::flatten: {
                Tensor unflat(x.shape);
                unflat.v = grad.v;
                grad = std::move(unflat);
                break;
            }
            case LayerSpec::Kind::dense: {
                DenseGrads g = dense_backward(grad, x, model.weights[idx]);
                out.weights[idx] = std::move(g.weights);
                out.biases[idx] = std::move(g.bias);
                grad = std::move(g.input);
                break;
            }
            case LayerSpec::Kind::softmax:
                throw ShapeMismatch("softmax allowed only as final layer");
        }
    }
    out.input = std::move(grad);
    return out;
}

double model_loss(const Model& model, const Tensor& input, int label) {
    const std::vector<Tensor> acts = forward_cached(model, input);
    return cross_entropy(acts.back().v, label);
}

std::vector<double> model_forward(const Model& model,
                                  const SpectrogramImage& image) {
    const Tensor input = image_to_tensor(image);
    if (input.shape != model.input_shape)
        throw ShapeMismatch("model_forward: input shape mismatch");
    return forward_cached(model, input).back().v;
}

int predict(const Model& model, const SpectrogramImage& image,
            std::vector<double>* probs_out) {
    const std::vector<double> probs = model_forward(model, image);
    int best = 0;
    for (std::size_t i = 1; i < probs.size(); ++i)
        if (probs[i] > probs[best]) best = static_cast<int>(i);
    if (probs_out) *probs_out = probs;
    return best;
}

double evaluate(const Model& model, std::span<const LabeledImage> data) {
    if (data.empty()) throw InvalidArgument("evaluate: empty data");
    std::size_t correct = 0;
    for (const auto& sample : data)
        if (predict(model, sample.image) == sample.label) ++correct;
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::vector<EpochStats> train(Model& model, std::span<const LabeledImage> data,
                              const TrainConfig& config) {
    if (config.epochs < 1) throw InvalidArgument("train: epochs must be >= 1");
    if (config.batch_size < 1)
        throw InvalidArgument("train: batch_size must be >= 1");
    if (data.empty()) throw EmptyClass("train: no samples");

    const int n_classes = model.n_classes();
    std::vector<int> class_count(n_classes, 0);
    for (const auto& s : data) {
        if (s.label < 0 || s.label >= n_classes)
            throw ShapeMismatch("train: label " + std::to_string(s.label) +
                                " outside [0, " + std::to_string(n_classes) +
                                ")");
        ++class_count[s.label];
    }
    for (int c = 0; c < n_classes; ++c)
        if (class_count[c] == 0)
            throw EmptyClass("train: class " + std::to_string(c) +
                             " has no samples");

    std::vector<Tensor*> params;
    std::vector<Tensor> grad_store;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        if (model.weights[i].size() == 0) continue;
        params.push_back(&model.weights[i]);
        params.push_back(&model.biases[i]);
    }
    for (Tensor* p : params) grad_store.emplace_back(p->shape);
    AdamState state = AdamState::init(params);
    std::vector<const Tensor*> grad_ptrs;
    for (const Tensor& g : grad_store) grad_ptrs.push_back(&g);

    std::vector<Tensor> inputs;
    inputs.reserve(data.size());
    for (const auto& s : data) inputs.push_back(image_to_tensor(s.image));

    std::vector<std::size_t> order(data.size());
    std::vector<EpochStats> history;
    int calm_epochs = 0;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(hash_mix(config.seed, 0x65706f63, epoch));
        rng.shuffle(order);

        double total_loss = 0.0;
        std::size_t correct = 0;

        for (std::size_t start = 0; start < order.size();
             start += config.batch_size) {
            const std::size_t end =
                std::min(order.size(),
                         start + static_cast<std::size_t>(config.batch_size));
            for (Tensor& g : grad_store)
                std::fill(g.v.begin(), g.v.end(), 0.0);

            for (std::size_t s = start; s < end; ++s) {
                const std::size_t idx = order[s];
                ModelGrads g =
                    model_gradients(model, inputs[idx], data[idx].label);
                total_loss += g.loss;
                if (g.predicted == data[idx].label) ++correct;

                std::size_t slot = 0;
                for (std::size_t li = 0; li < model.layers.size(); ++li) {
                    if (model.weights[li].size() == 0) continue;
                    for (std::size_t j = 0; j < g.weights[li].size(); ++j)
                        grad_store[slot].v[j] += g.weights[li].v[j];
                    for (std::size_t j = 0; j < g.biases[li].size(); ++j)
                        grad_store[slot + 1].v[j] += g.biases[li].v[j];
                    slot += 2;
                }
            }

            const double inv = 1.0 / static_cast<double>(end - start);
            for (Tensor& g : grad_store)
                for (double& x : g.v) x *= inv;

            adam_step(params, grad_ptrs, state, config.adam);
        }

        EpochStats stats;
        stats.loss = total_loss / static_cast<double>(data.size());
        stats.accuracy =
            static_cast<double>(correct) / static_cast<double>(data.size());
        history.push_back(stats);

        if (config.early_stop_patience > 0) {
            if (stats.accuracy >= config.early_stop_accuracy)
                ++calm_epochs;
            else
                calm_epochs = 0;
            if (calm_epochs >= config.early_stop_patience) break;
        }
    }
    return history;
}

void save_model(const Model& model, const std::filesystem::path& path) {
    std::string buf;
    put_raw<std::uint32_t>(buf, static_cast<std::uint32_t>(model.layers.size()));
    for (const LayerSpec& s : model.layers) {
        put_raw<std::uint8_t>(buf, static_cast<std::uint8_t>(s.kind));
        put_raw<std::int32_t>(buf, s.filters);
        put_raw<std::int32_t>(buf, s.kernel);
        put_raw<std::uint8_t>(buf, static_cast<std::uint8_t>(s.padding));
        put_raw<std::int32_t>(buf, s.pool_size);
        put_raw<std::int32_t>(buf, s.pool_stride);
        put_raw<std::int32_t>(buf, s.units);
    }
    put_raw<std::uint32_t>(buf,
                           static_cast<std::uint32_t>(model.input_shape.size()));
    for (int d : model.input_shape) put_raw<std::int32_t>(buf, d);
    put_raw<std::uint64_t>(buf, model.rng_seed);
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        put_tensor(buf, model.weights[i]);
        put_tensor(buf, model.biases[i]);
    }

    const std::uint64_t checksum = fnv1a(buf);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write model " + path.string());
    out.write(kModelMagic, sizeof(kModelMagic));
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    out.write(reinterpret_cast<const char*>(&checksum), sizeof(checksum));
    if (!out) throw IoError("write failed for " + path.string());
}

Model load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model " + path.string());
    std::string all((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
    if (all.size() < sizeof(kModelMagic) + sizeof(std::uint64_t) ||
        std::memcmp(all.data(), kModelMagic, sizeof(kModelMagic)) != 0)
        throw IoError("not a crykit model file: " + path.string());

    const std::string buf =
        all.substr(sizeof(kModelMagic),
                   all.size() - sizeof(kModelMagic) - sizeof(std::uint64_t));
    std::uint64_t stored;
    std::memcpy(&stored, all.data() + all.size() - sizeof(stored),
                sizeof(stored));
    if (fnv1a(buf) != stored)
        throw IoError("model checksum mismatch: " + path.string());

    std::size_t pos = 0;
    const auto n_layers = get_raw<std::uint32_t>(buf, pos);
    std::vector<LayerSpec> layers(n_layers);
    for (auto& s : layers) {
        s.kind = static_cast<LayerSpec::Kind>(get_raw<std::uint8_t>(buf, pos));
        s.filters = get_raw<std::int32_t>(buf, pos);
        s.kernel = get_raw<std::int32_t>(buf, pos);
        s.padding = static_cast<Padding>(get_raw<std::uint8_t>(buf, pos));
        s.pool_size = get_raw<std::int32_t>(buf, pos);
        s.pool_stride = get_raw<std::int32_t>(buf, pos);
        s.units = get_raw<std::int32_t>(buf, pos);
    }
    const auto ndim = get_raw<std::uint32_t>(buf, pos);
    std::vector<int> input_shape(ndim);
    for (auto& d : input_shape) d = get_raw<std::int32_t>(buf, pos);
    const auto seed = get_raw<std::uint64_t>(buf, pos);

    Model model = Model::build(std::move(layers), std::move(input_shape), seed);
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        Tensor w = get_tensor(buf, pos);
        Tensor b = get_tensor(buf, pos);
        if (w.shape != model.weights[i].shape ||
            b.shape != model.biases[i].shape)
            throw IoError("model tensor shapes inconsistent: " +
                          path.string());
        model.weights[i] = std::move(w);
        model.biases[i] = std::move(b);
    }
    return model;
}

void write_history_csv(const std::vector<EpochStats>& history,
                       const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "epoch,loss,train_acc\n";
    char buf[80];
    for (std::size_t i = 0; i < history.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", i + 1,
                      history[i].loss, history[i].accuracy);
        out << buf;
    }
}

}  // namespace crykit
