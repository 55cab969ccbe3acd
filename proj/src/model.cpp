#include "weaver/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>

#include <fmt/format.h>

#include "weaver/error.hpp"
#include "weaver/rng.hpp"

namespace weaver {

void ModelConfig::validate() const {
    if (vocab_size < 1 || embed_dim < 1 || num_layers < 1 || hidden_dim < 1) {
        throw ConfigError("model dimensions must all be >= 1");
    }
    if (num_labels < 3) {
        throw ConfigError("num_labels must be >= 3 (O, B-X, I-X)");
    }
}

void Hyperparams::validate() const {
    if (batch_size < 1) {
        throw ConfigError("batch_size must be >= 1");
    }
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("learning_rate must be positive");
    }
    if (grad_clip && !(*grad_clip > 0.0)) {
        throw ConfigError("grad_clip must be positive when set");
    }
}

namespace {

constexpr double kLayerNormEps = 1e-5;

enum Slot : std::size_t {
    kWq, kBq, kWk, kBk, kWv, kBv, kWo, kBo,
    kNorm1Gain, kNorm1Bias,
    kW1, kB1, kW2, kB2,
    kNorm2Gain, kNorm2Bias,
    kSlotCount
};

constexpr std::array<const char*, kSlotCount> kSlotNames = {
    "attn.query.weight", "attn.query.bias", "attn.key.weight", "attn.key.bias",
    "attn.value.weight", "attn.value.bias", "attn.output.weight", "attn.output.bias",
    "attn.norm.gain", "attn.norm.bias",
    "ffn.in.weight", "ffn.in.bias", "ffn.out.weight", "ffn.out.bias",
    "ffn.norm.gain", "ffn.norm.bias",
};

std::string layer_tensor_name(std::size_t layer, std::size_t slot) {
    return fmt::format("layer.{}.{}", layer, kSlotNames[slot]);
}

// Tensor indices inside a ParameterSet built by init_params. The layout is
// positional, so the same table serves parameters and gradients.
struct Layout {
    std::size_t token = 0;
    std::size_t position = 1;
    std::vector<std::array<std::size_t, kSlotCount>> layers;
    std::size_t head_weight = 0;
    std::size_t head_bias = 0;
};

Layout make_layout(const ModelConfig& config, const ParameterSet& params) {
    Layout layout;
    layout.token = params.index_of("embed.token");
    layout.position = params.index_of("embed.position");
    layout.layers.resize(config.num_layers);
    for (std::size_t l = 0; l < config.num_layers; ++l) {
        for (std::size_t s = 0; s < kSlotCount; ++s) {
            layout.layers[l][s] = params.index_of(layer_tensor_name(l + 1, s));
        }
    }
    layout.head_weight = params.index_of("head.weight");
    layout.head_bias = params.index_of("head.bias");
    return layout;
}

struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return v[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
    double* row(std::size_t r) { return v.data() + r * cols; }
    const double* row(std::size_t r) const { return v.data() + r * cols; }
};

// out = x * w + b, with w stored [in, out] row-major.
Mat affine(const Mat& x, const double* w, const double* b, std::size_t out_dim) {
    Mat out(x.rows, out_dim);
    for (std::size_t r = 0; r < x.rows; ++r) {
        double* o = out.row(r);
        std::copy(b, b + out_dim, o);
        const double* xr = x.row(r);
        for (std::size_t i = 0; i < x.cols; ++i) {
            const double xi = xr[i];
            const double* wi = w + i * out_dim;
            for (std::size_t j = 0; j < out_dim; ++j) {
                o[j] += xi * wi[j];
            }
        }
    }
    return out;
}

// Backward of affine: dx += dout * w^T, dw += x^T * dout, db += colsum(dout).
void affine_backward(const Mat& x, const double* w, const Mat& dout, Mat* dx, double* dw, double* db) {
    const std::size_t in_dim = x.cols;
    const std::size_t out_dim = dout.cols;
    for (std::size_t r = 0; r < x.rows; ++r) {
        const double* xr = x.row(r);
        const double* gr = dout.row(r);
        for (std::size_t j = 0; j < out_dim; ++j) {
            db[j] += gr[j];
        }
        for (std::size_t i = 0; i < in_dim; ++i) {
            const double* wi = w + i * out_dim;
            double* dwi = dw + i * out_dim;
            double acc = 0.0;
            for (std::size_t j = 0; j < out_dim; ++j) {
                dwi[j] += xr[i] * gr[j];
                acc += gr[j] * wi[j];
            }
            if (dx != nullptr) {
                (*dx)(r, i) += acc;
            }
        }
    }
}

struct NormCache {
    Mat xhat;
    std::vector<double> rstd;
};

Mat layer_norm(const Mat& u, const double* gain, const double* bias, NormCache* cache) {
    Mat y(u.rows, u.cols);
    NormCache local;
    NormCache& c = cache != nullptr ? *cache : local;
    c.xhat = Mat(u.rows, u.cols);
    c.rstd.assign(u.rows, 0.0);
    const double n = static_cast<double>(u.cols);
    for (std::size_t r = 0; r < u.rows; ++r) {
        const double* ur = u.row(r);
        double mean = 0.0;
        for (std::size_t j = 0; j < u.cols; ++j) {
            mean += ur[j];
        }
        mean /= n;
        double var = 0.0;
        for (std::size_t j = 0; j < u.cols; ++j) {
            const double d = ur[j] - mean;
            var += d * d;
        }
        var /= n;
        const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
        c.rstd[r] = rstd;
        for (std::size_t j = 0; j < u.cols; ++j) {
            const double xh = (ur[j] - mean) * rstd;
            c.xhat(r, j) = xh;
            y(r, j) = gain[j] * xh + bias[j];
        }
    }
    return y;
}

Mat layer_norm_backward(const Mat& dy, const double* gain, const NormCache& c, double* dgain, double* dbias) {
    Mat du(dy.rows, dy.cols);
    const double n = static_cast<double>(dy.cols);
    std::vector<double> dxhat(dy.cols);
    for (std::size_t r = 0; r < dy.rows; ++r) {
        double mean_dxhat = 0.0;
        double mean_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < dy.cols; ++j) {
            const double g = dy(r, j);
            dgain[j] += g * c.xhat(r, j);
            dbias[j] += g;
            dxhat[j] = g * gain[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * c.xhat(r, j);
        }
        mean_dxhat /= n;
        mean_dxhat_xhat /= n;
        for (std::size_t j = 0; j < dy.cols; ++j) {
            du(r, j) = c.rstd[r] * (dxhat[j] - mean_dxhat - c.xhat(r, j) * mean_dxhat_xhat);
        }
    }
    return du;
}

constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluCubic = 0.044715;

double gelu(double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluScale * (x + kGeluCubic * x * x * x)));
}

double gelu_derivative(double x) {
    const double t = std::tanh(kGeluScale * (x + kGeluCubic * x * x * x));
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluScale * (1.0 + 3.0 * kGeluCubic * x * x);
}

void softmax_inplace(double* row, std::size_t n) {
    const double mx = *std::max_element(row, row + n);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
    }
    for (std::size_t j = 0; j < n; ++j) {
        row[j] /= sum;
    }
}

struct LayerCache {
    Mat x;
    Mat q, k, v;
    Mat attn;
    Mat ctx;
    NormCache norm1;
    Mat y1;
    Mat z1;
    Mat g;
    NormCache norm2;
};

struct ForwardResult {
    Mat hidden;  // final encoder output
    Mat probs;
    std::vector<LayerCache> layers;
};

void check_tokens(const ModelConfig& config, std::span<const int> ids) {
    if (ids.empty()) {
        throw InputError("token sequence must be non-empty");
    }
    if (ids.size() > kMaxSequenceLength) {
        throw InputError(fmt::format("sequence length {} exceeds the cap of {}", ids.size(), kMaxSequenceLength));
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= config.vocab_size) {
            throw InputError(fmt::format("token id {} at position {} outside vocabulary of size {}", ids[i], i,
                                         config.vocab_size));
        }
    }
}

const double* data_of(const ParameterSet& p, std::size_t idx) {
    return p.entry(idx).tensor.data.data();
}

double* data_of(ParameterSet& p, std::size_t idx) {
    return p.entry(idx).tensor.data.data();
}

ForwardResult run_forward(const ModelConfig& config, const Layout& layout, const ParameterSet& params,
                          std::span<const int> ids, bool keep_cache, bool want_probs) {
    const std::size_t n = ids.size();
    const std::size_t d = config.embed_dim;
    const std::size_t h = config.hidden_dim;
    ForwardResult result;

    Mat x(n, d);
    const double* tok = data_of(params, layout.token);
    const double* pos = data_of(params, layout.position);
    for (std::size_t t = 0; t < n; ++t) {
        const double* te = tok + static_cast<std::size_t>(ids[t]) * d;
        const double* pe = pos + t * d;
        for (std::size_t j = 0; j < d; ++j) {
            x(t, j) = te[j] + pe[j];
        }
    }

    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    const std::size_t window = config.attention_window;

    if (keep_cache) {
        result.layers.resize(config.num_layers);
    }
    for (std::size_t l = 0; l < config.num_layers; ++l) {
        const auto& slot = layout.layers[l];
        LayerCache local;
        LayerCache& c = keep_cache ? result.layers[l] : local;
        c.x = std::move(x);
        c.q = affine(c.x, data_of(params, slot[kWq]), data_of(params, slot[kBq]), d);
        c.k = affine(c.x, data_of(params, slot[kWk]), data_of(params, slot[kBk]), d);
        c.v = affine(c.x, data_of(params, slot[kWv]), data_of(params, slot[kBv]), d);

        c.attn = Mat(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            double* srow = c.attn.row(i);
            for (std::size_t j = 0; j < n; ++j) {
                const bool visible = window == 0 || (i > j ? i - j : j - i) <= window;
                if (!visible) {
                    srow[j] = -INFINITY;
                    continue;
                }
                double s = 0.0;
                for (std::size_t k = 0; k < d; ++k) {
                    s += c.q(i, k) * c.k(j, k);
                }
                srow[j] = s * inv_sqrt_d;
            }
            softmax_inplace(srow, n);
        }

        c.ctx = Mat(n, d);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const double a = c.attn(i, j);
                if (a == 0.0) {
                    continue;
                }
                for (std::size_t k = 0; k < d; ++k) {
                    c.ctx(i, k) += a * c.v(j, k);
                }
            }
        }

        Mat u1 = affine(c.ctx, data_of(params, slot[kWo]), data_of(params, slot[kBo]), d);
        for (std::size_t i = 0; i < u1.v.size(); ++i) {
            u1.v[i] += c.x.v[i];
        }
        c.y1 = layer_norm(u1, data_of(params, slot[kNorm1Gain]), data_of(params, slot[kNorm1Bias]), &c.norm1);

        c.z1 = affine(c.y1, data_of(params, slot[kW1]), data_of(params, slot[kB1]), h);
        c.g = Mat(n, h);
        for (std::size_t i = 0; i < c.z1.v.size(); ++i) {
            c.g.v[i] = gelu(c.z1.v[i]);
        }
        Mat u2 = affine(c.g, data_of(params, slot[kW2]), data_of(params, slot[kB2]), d);
        for (std::size_t i = 0; i < u2.v.size(); ++i) {
            u2.v[i] += c.y1.v[i];
        }
        x = layer_norm(u2, data_of(params, slot[kNorm2Gain]), data_of(params, slot[kNorm2Bias]), &c.norm2);
    }
    result.hidden = std::move(x);

    if (want_probs) {
        result.probs = affine(result.hidden, data_of(params, layout.head_weight), data_of(params, layout.head_bias),
                              config.num_labels);
        for (std::size_t t = 0; t < n; ++t) {
            softmax_inplace(result.probs.row(t), config.num_labels);
        }
    }
    return result;
}

// Backpropagates d(loss)/d(logits) through the network into `grad`.
void run_backward(const ModelConfig& config, const Layout& layout, const ParameterSet& params,
                  std::span<const int> ids, const ForwardResult& fwd, const Mat& dlogits, ParameterSet& grad) {
    const std::size_t n = ids.size();
    const std::size_t d = config.embed_dim;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    Mat dh(n, d);
    affine_backward(fwd.hidden, data_of(params, layout.head_weight), dlogits, &dh,
                    data_of(grad, layout.head_weight), data_of(grad, layout.head_bias));

    for (std::size_t li = config.num_layers; li-- > 0;) {
        const auto& slot = layout.layers[li];
        const LayerCache& c = fwd.layers[li];

        Mat du2 = layer_norm_backward(dh, data_of(params, slot[kNorm2Gain]), c.norm2,
                                      data_of(grad, slot[kNorm2Gain]), data_of(grad, slot[kNorm2Bias]));
        Mat dy1 = du2;  // residual branch
        Mat dg(n, config.hidden_dim);
        affine_backward(c.g, data_of(params, slot[kW2]), du2, &dg, data_of(grad, slot[kW2]),
                        data_of(grad, slot[kB2]));
        for (std::size_t i = 0; i < dg.v.size(); ++i) {
            dg.v[i] *= gelu_derivative(c.z1.v[i]);
        }
        affine_backward(c.y1, data_of(params, slot[kW1]), dg, &dy1, data_of(grad, slot[kW1]),
                        data_of(grad, slot[kB1]));

        Mat du1 = layer_norm_backward(dy1, data_of(params, slot[kNorm1Gain]), c.norm1,
                                      data_of(grad, slot[kNorm1Gain]), data_of(grad, slot[kNorm1Bias]));
        Mat dx = du1;  // residual branch
        Mat dctx(n, d);
        affine_backward(c.ctx, data_of(params, slot[kWo]), du1, &dctx, data_of(grad, slot[kWo]),
                        data_of(grad, slot[kBo]));

        // ctx = attn * v
        Mat dattn(n, n);
        Mat dv(n, d);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const double a = c.attn(i, j);
                double acc = 0.0;
                for (std::size_t k = 0; k < d; ++k) {
                    acc += dctx(i, k) * c.v(j, k);
                    dv(j, k) += a * dctx(i, k);
                }
                dattn(i, j) = acc;
            }
        }
        // softmax rows, then the 1/sqrt(d) scale
        Mat dscore(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                dot += c.attn(i, j) * dattn(i, j);
            }
            for (std::size_t j = 0; j < n; ++j) {
                dscore(i, j) = c.attn(i, j) * (dattn(i, j) - dot) * inv_sqrt_d;
            }
        }
        Mat dq(n, d);
        Mat dk(n, d);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const double s = dscore(i, j);
                if (s == 0.0) {
                    continue;
                }
                for (std::size_t k = 0; k < d; ++k) {
                    dq(i, k) += s * c.k(j, k);
                    dk(j, k) += s * c.q(i, k);
                }
            }
        }
        affine_backward(c.x, data_of(params, slot[kWq]), dq, &dx, data_of(grad, slot[kWq]), data_of(grad, slot[kBq]));
        affine_backward(c.x, data_of(params, slot[kWk]), dk, &dx, data_of(grad, slot[kWk]), data_of(grad, slot[kBk]));
        affine_backward(c.x, data_of(params, slot[kWv]), dv, &dx, data_of(grad, slot[kWv]), data_of(grad, slot[kBv]));
        dh = std::move(dx);
    }

    double* dtok = data_of(grad, layout.token);
    double* dpos = data_of(grad, layout.position);
    for (std::size_t t = 0; t < n; ++t) {
        double* te = dtok + static_cast<std::size_t>(ids[t]) * d;
        double* pe = dpos + t * d;
        for (std::size_t j = 0; j < d; ++j) {
            te[j] += dh(t, j);
            pe[j] += dh(t, j);
        }
    }
}

void check_sentence(const ModelConfig& config, const EncodedSentence& s) {
    check_tokens(config, s.tokens);
    if (s.labels.size() != s.tokens.size()) {
        throw InputError("token and label sequences differ in length");
    }
    for (int y : s.labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= config.num_labels) {
            throw InputError(fmt::format("label {} outside [0, {})", y, config.num_labels));
        }
    }
}

// Summed cross-entropy of one sentence; when `grad` is set, accumulates
// scale * d(sum CE)/d(params) into it.
double sentence_ce(const ModelConfig& config, const Layout& layout, const ParameterSet& params,
                   const EncodedSentence& s, double scale, ParameterSet* grad) {
    const ForwardResult fwd = run_forward(config, layout, params, s.tokens, grad != nullptr, true);
    const std::size_t n = s.tokens.size();
    double ce = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        const double p = fwd.probs(t, static_cast<std::size_t>(s.labels[t]));
        ce -= std::log(std::max(p, 1e-300));
    }
    if (grad != nullptr) {
        Mat dlogits = fwd.probs;
        for (std::size_t t = 0; t < n; ++t) {
            dlogits(t, static_cast<std::size_t>(s.labels[t])) -= 1.0;
        }
        for (double& v : dlogits.v) {
            v *= scale;
        }
        run_backward(config, layout, params, s.tokens, fwd, dlogits, *grad);
    }
    return ce;
}

std::size_t token_total(std::span<const EncodedSentence> batch) {
    std::size_t n = 0;
    for (const auto& s : batch) {
        n += s.tokens.size();
    }
    return n;
}

}  // namespace

ParameterSet init_params(const ModelConfig& config) {
    config.validate();
    const std::size_t d = config.embed_dim;
    const std::size_t h = config.hidden_dim;
    ParameterSet params;
    params.add("embed.token", 0, {config.vocab_size, d});
    params.add("embed.position", 0, {kMaxSequenceLength, d});
    for (std::size_t l = 1; l <= config.num_layers; ++l) {
        const int layer = static_cast<int>(l);
        for (std::size_t s = 0; s < kSlotCount; ++s) {
            std::vector<std::size_t> shape;
            switch (s) {
                case kWq: case kWk: case kWv: case kWo: shape = {d, d}; break;
                case kW1: shape = {d, h}; break;
                case kB1: shape = {h}; break;
                case kW2: shape = {h, d}; break;
                default: shape = {d}; break;
            }
            params.add(layer_tensor_name(l, s), layer, std::move(shape));
        }
    }
    params.add("head.weight", config.head_layer(), {d, config.num_labels});
    params.add("head.bias", config.head_layer(), {config.num_labels});

    Rng rng(derive_seed(config.seed, 0x1417));
    for (auto& e : params) {
        const auto& shape = e.tensor.shape;
        const bool is_gain = e.name.size() >= 5 && e.name.compare(e.name.size() - 5, 5, ".gain") == 0;
        if (is_gain) {
            std::fill(e.tensor.data.begin(), e.tensor.data.end(), 1.0);
        } else if (shape.size() == 2) {
            const double limit = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
            for (double& v : e.tensor.data) {
                v = uniform(rng, -limit, limit);
            }
        }
    }
    return params;
}

std::vector<Distribution> forward(const ModelConfig& config, const ParameterSet& params,
                                  std::span<const int> token_ids) {
    check_tokens(config, token_ids);
    const Layout layout = make_layout(config, params);
    const ForwardResult fwd = run_forward(config, layout, params, token_ids, false, true);
    std::vector<Distribution> out(token_ids.size());
    for (std::size_t t = 0; t < token_ids.size(); ++t) {
        out[t].assign(fwd.probs.row(t), fwd.probs.row(t) + config.num_labels);
    }
    return out;
}

LossAndGrad loss_and_grad(const ModelConfig& config, const ParameterSet& params,
                          std::span<const EncodedSentence> batch, const TrainingObjective& objective) {
    if (batch.empty()) {
        throw InputError("loss_and_grad: empty batch");
    }
    objective.validate(params);
    for (const auto& s : batch) {
        check_sentence(config, s);
    }
    const Layout layout = make_layout(config, params);
    const double scale = 1.0 / static_cast<double>(token_total(batch));
    LossAndGrad out{0.0, params.zeros_like()};
    double ce = 0.0;
    for (const auto& s : batch) {
        ce += sentence_ce(config, layout, params, s, scale, &out.grad);
    }
    out.loss = ce * scale + ewc_penalty(params, objective);
    add_ewc_gradient(params, objective, out.grad);
    return out;
}

double batch_loss(const ModelConfig& config, const ParameterSet& params, std::span<const EncodedSentence> batch,
                  const TrainingObjective& objective) {
    if (batch.empty()) {
        throw InputError("batch_loss: empty batch");
    }
    objective.validate(params);
    const Layout layout = make_layout(config, params);
    double ce = 0.0;
    for (const auto& s : batch) {
        check_sentence(config, s);
        ce += sentence_ce(config, layout, params, s, 0.0, nullptr);
    }
    return ce / static_cast<double>(token_total(batch)) + ewc_penalty(params, objective);
}

ParameterSet sentence_nll_grad(const ModelConfig& config, const ParameterSet& params,
                               const EncodedSentence& sentence) {
    check_sentence(config, sentence);
    const Layout layout = make_layout(config, params);
    ParameterSet grad = params.zeros_like();
    sentence_ce(config, layout, params, sentence, 1.0, &grad);
    return grad;
}

ParameterSet train(const ModelConfig& config, const ParameterSet& params, std::span<const EncodedSentence> data,
                   const Hyperparams& hyper, const TrainingObjective& objective, const FreezeMask& mask,
                   std::vector<double>* epoch_losses) {
    hyper.validate();
    ParameterSet current = params;
    if (hyper.epochs == 0) {
        return current;
    }
    if (data.empty()) {
        throw InputError("train: corpus is empty but epochs > 0");
    }
    std::vector<std::size_t> trainable;
    for (std::size_t i = 0; i < current.tensor_count(); ++i) {
        if (!mask.is_frozen(current.entry(i).layer)) {
            trainable.push_back(i);
        }
    }
    if (trainable.empty()) {
        return current;
    }

    ParameterSet m = current.zeros_like();
    ParameterSet v = current.zeros_like();
    std::uint64_t step = 0;
    Rng rng(derive_seed(hyper.seed, 0x7124));
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<EncodedSentence> batch;

    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        shuffle(std::span<std::size_t>(order), rng);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
            const std::size_t stop = std::min(order.size(), start + hyper.batch_size);
            batch.clear();
            for (std::size_t i = start; i < stop; ++i) {
                batch.push_back(data[order[i]]);
            }
            LossAndGrad lg = loss_and_grad(config, current, batch, objective);
            loss_sum += lg.loss;
            ++batches;

            double clip_scale = 1.0;
            if (hyper.grad_clip) {
                double norm2 = 0.0;
                for (std::size_t idx : trainable) {
                    for (double g : lg.grad.entry(idx).tensor.data) {
                        norm2 += g * g;
                    }
                }
                const double norm = std::sqrt(norm2);
                if (norm > *hyper.grad_clip) {
                    clip_scale = *hyper.grad_clip / norm;
                }
            }

            ++step;
            const double bc1 = 1.0 - std::pow(hyper.adam_beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(hyper.adam_beta2, static_cast<double>(step));
            for (std::size_t idx : trainable) {
                auto& w = current.entry(idx).tensor.data;
                const auto& g = lg.grad.entry(idx).tensor.data;
                if (hyper.optimizer == OptimizerKind::sgd) {
                    for (std::size_t j = 0; j < w.size(); ++j) {
                        w[j] -= hyper.learning_rate * clip_scale * g[j];
                    }
                    continue;
                }
                auto& mm = m.entry(idx).tensor.data;
                auto& vv = v.entry(idx).tensor.data;
                for (std::size_t j = 0; j < w.size(); ++j) {
                    const double gj = clip_scale * g[j];
                    mm[j] = hyper.adam_beta1 * mm[j] + (1.0 - hyper.adam_beta1) * gj;
                    vv[j] = hyper.adam_beta2 * vv[j] + (1.0 - hyper.adam_beta2) * gj * gj;
                    w[j] -= hyper.learning_rate * (mm[j] / bc1) / (std::sqrt(vv[j] / bc2) + hyper.adam_eps);
                }
            }
        }
        if (epoch_losses != nullptr) {
            epoch_losses->push_back(loss_sum / static_cast<double>(batches));
        }
    }
    if (!current.all_finite()) {
        throw Error("training produced non-finite parameters");
    }
    return current;
}

std::vector<int> predict_labels(const ModelConfig& config, const ParameterSet& params,
                                std::span<const int> token_ids) {
    const auto dists = forward(config, params, token_ids);
    std::vector<int> out(dists.size());
    for (std::size_t t = 0; t < dists.size(); ++t) {
        // max_element returns the first maximum, i.e. the lowest index on ties.
        out[t] = static_cast<int>(std::max_element(dists[t].begin(), dists[t].end()) - dists[t].begin());
    }
    return out;
}

std::vector<std::vector<double>> embed_tokens(const ModelConfig& config, const ParameterSet& params,
                                              std::span<const int> token_ids) {
    check_tokens(config, token_ids);
    const Layout layout = make_layout(config, params);
    const ForwardResult fwd = run_forward(config, layout, params, token_ids, false, false);
    std::vector<std::vector<double>> out(token_ids.size());
    for (std::size_t t = 0; t < token_ids.size(); ++t) {
        out[t].assign(fwd.hidden.row(t), fwd.hidden.row(t) + config.embed_dim);
    }
    return out;
}

}  // namespace weaver
