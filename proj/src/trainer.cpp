#include "clp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "clp/errors.hpp"
#include "clp/eval.hpp"
#include "clp/parallel.hpp"
#include "clp/rng.hpp"
#include "kernels.hpp"

namespace clp {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0f)) throw ConfigError("learning rate must be positive");
  if (!(momentum >= 0.0f && momentum < 1.0f)) throw ConfigError("momentum must lie in [0,1)");
  if (!(weight_decay >= 0.0f)) throw ConfigError("weight decay must be >= 0");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
}

float TrainConfig::rate_for_epoch(std::size_t epoch) const {
  if (schedule == Schedule::Constant || epochs == 0) return learning_rate;
  const double t = static_cast<double>(epoch) / static_cast<double>(epochs);
  return static_cast<float>(0.5 * learning_rate * (1.0 + std::cos(std::numbers::pi * t)));
}

LossResult cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy expects (N, C) logits");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) throw DimensionError("cross_entropy: label count does not match logits");
  LossResult r{0.0, Tensor({n, c})};
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw IndexError("label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
    }
    const float* row = logits.data().data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    total += log_z - row[y];
    float* g = r.grad.data().data() + i * c;
    for (std::size_t j = 0; j < c; ++j) {
      const double p = std::exp(row[j] - log_z);
      g[j] = static_cast<float>((p - (static_cast<std::size_t>(y) == j ? 1.0 : 0.0)) /
                                static_cast<double>(n));
    }
  }
  r.loss = total / static_cast<double>(n);
  return r;
}

std::vector<Tensor*> trainable_parameters(Layer& layer) {
  if (auto* c = std::get_if<Conv>(&layer.op)) return {&c->weight, &c->bias};
  if (auto* b = std::get_if<BatchNorm>(&layer.op)) return {&b->gamma, &b->beta};
  if (auto* l = std::get_if<Linear>(&layer.op)) return {&l->weight, &l->bias};
  return {};
}

std::vector<const Tensor*> trainable_parameters(const Layer& layer) {
  auto ptrs = trainable_parameters(const_cast<Layer&>(layer));
  return {ptrs.begin(), ptrs.end()};
}

namespace {

struct BnCache {
  std::vector<double> mean;    // (K)
  std::vector<double> invstd;  // (K)
  Tensor var;                  // (K), biased
};

// Batchnorm with batch statistics; fills `cache`.
Tensor batchnorm_train(const Tensor& x, const BatchNorm& bn, BnCache& cache) {
  const std::size_t n = x.dim(0), k = x.dim(1);
  const std::size_t plane = x.size() / (n * k);
  const double m = static_cast<double>(n * plane);
  cache.mean.assign(k, 0.0);
  cache.invstd.assign(k, 0.0);
  cache.var = Tensor({k});
  Tensor y(x.shape());
  for (std::size_t ch = 0; ch < k; ++ch) {
    double sum = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const float* p = x.data().data() + (s * k + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) sum += p[i];
    }
    const double mean = sum / m;
    double sq = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const float* p = x.data().data() + (s * k + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = p[i] - mean;
        sq += d * d;
      }
    }
    const double var = sq / m;
    const double invstd = 1.0 / std::sqrt(var + static_cast<double>(bn.epsilon));
    cache.mean[ch] = mean;
    cache.var[ch] = static_cast<float>(var);
    cache.invstd[ch] = invstd;
    const double g = bn.gamma[ch], b = bn.beta[ch];
    for (std::size_t s = 0; s < n; ++s) {
      const float* p = x.data().data() + (s * k + ch) * plane;
      float* q = y.data().data() + (s * k + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) q[i] = static_cast<float>(g * (p[i] - mean) * invstd + b);
    }
  }
  return y;
}

struct Pass {
  std::vector<Tensor> outputs;
  std::vector<BnCache> bn;
};

Pass run_forward_train(const ModelGraph& model, const Tensor& batch) {
  const Shape& s = model.input_shape();
  if (batch.rank() != 4 || batch.dim(1) != s[0] || batch.dim(2) != s[1] || batch.dim(3) != s[2]) {
    throw DimensionError("batch shape " + shape_to_string(batch.shape()) +
                         " does not match the model input");
  }
  Pass pass;
  pass.outputs.resize(model.size());
  pass.bn.resize(model.size());
  for (std::size_t i = 0; i < model.size(); ++i) {
    const auto src = model.input_of(i);
    const Tensor& in = src ? pass.outputs[*src] : batch;
    const Layer& layer = model.layer(i);
    Tensor out;
    if (const auto* c = std::get_if<Conv>(&layer.op)) out = detail::conv_forward(in, *c);
    else if (const auto* b = std::get_if<BatchNorm>(&layer.op)) out = batchnorm_train(in, *b, pass.bn[i]);
    else if (layer.is<Relu>()) out = relu(in);
    else if (const auto* mp = std::get_if<MaxPool>(&layer.op)) out = max_pool(in, mp->window, mp->stride);
    else if (const auto* ap = std::get_if<AvgPool>(&layer.op)) out = avg_pool(in, ap->window, ap->stride);
    else if (layer.is<Flatten>()) out = detail::flatten(in);
    else if (const auto* l = std::get_if<Linear>(&layer.op)) out = linear(in, l->weight, l->bias);
    else out = detail::add(in, pass.outputs[layer.as<ResidualAdd>().source]);
    pass.outputs[i] = std::move(out);
  }
  return pass;
}

void accumulate(Tensor& into, const Tensor& g) {
  if (into.empty()) {
    into = g;
    return;
  }
  auto a = into.data();
  auto b = g.data();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

// Returns d input; fills dw, db. `need_input_grad` is false for the first layer.
Tensor conv_backward(const Tensor& x, const Conv& conv, const Tensor& dy, Tensor& dw, Tensor& db,
                     bool need_input_grad) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t k = conv.out_channels(), kh = conv.weight.dim(2), kw = conv.weight.dim(3);
  const std::size_t ho = dy.dim(2), wo = dy.dim(3), plane = ho * wo;
  const std::size_t ckk = c * kh * kw;
  const std::size_t cols_total = n * plane;

  db = Tensor({k});
  for (std::size_t ch = 0; ch < k; ++ch) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const float* p = dy.data().data() + (i * k + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) s += p[j];
    }
    db[ch] = static_cast<float>(s);
  }

  // dW = dY[K x N*P] * colsT[N*P x CKK], reduced in one pass so the whole
  // batch accumulates in double.
  std::vector<float> dy_cat(k * cols_total);
  std::vector<float> cols_t(cols_total * ckk);
  parallel_for(n, [&](std::size_t s0, std::size_t s1) {
    std::vector<float> cols(ckk * plane);
    for (std::size_t s = s0; s < s1; ++s) {
      im2col(x.data().data() + s * c * h * w, c, h, w, kh, kw, conv.stride, conv.padding, cols.data());
      for (std::size_t r = 0; r < ckk; ++r)
        for (std::size_t p = 0; p < plane; ++p) cols_t[(s * plane + p) * ckk + r] = cols[r * plane + p];
      for (std::size_t ch = 0; ch < k; ++ch)
        std::copy_n(dy.data().data() + (s * k + ch) * plane, plane, dy_cat.data() + ch * cols_total + s * plane);
    }
  });
  dw = Tensor(conv.weight.shape());
  gemm(k, cols_total, ckk, dy_cat.data(), cols_t.data(), dw.data().data());

  if (!need_input_grad) return Tensor();
  std::vector<float> wt(ckk * k);
  for (std::size_t ch = 0; ch < k; ++ch)
    for (std::size_t r = 0; r < ckk; ++r) wt[r * k + ch] = conv.weight[ch * ckk + r];
  Tensor dx(x.shape());
  parallel_for(n, [&](std::size_t s0, std::size_t s1) {
    std::vector<float> dcols(ckk * plane);
    for (std::size_t s = s0; s < s1; ++s) {
      detail::gemm_serial(ckk, k, plane, wt.data(), dy.data().data() + s * k * plane, dcols.data());
      col2im(dcols.data(), c, h, w, kh, kw, conv.stride, conv.padding, dx.data().data() + s * c * h * w);
    }
  });
  return dx;
}

Tensor batchnorm_backward(const Tensor& x, const BatchNorm& bn, const BnCache& cache, const Tensor& dy,
                          Tensor& dgamma, Tensor& dbeta) {
  const std::size_t n = x.dim(0), k = x.dim(1);
  const std::size_t plane = x.size() / (n * k);
  const double m = static_cast<double>(n * plane);
  dgamma = Tensor({k});
  dbeta = Tensor({k});
  Tensor dx(x.shape());
  for (std::size_t ch = 0; ch < k; ++ch) {
    const double mean = cache.mean[ch], invstd = cache.invstd[ch];
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const float* xp = x.data().data() + (s * k + ch) * plane;
      const float* gp = dy.data().data() + (s * k + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += gp[i];
        sum_dy_xhat += gp[i] * (xp[i] - mean) * invstd;
      }
    }
    dgamma[ch] = static_cast<float>(sum_dy_xhat);
    dbeta[ch] = static_cast<float>(sum_dy);
    const double scale = bn.gamma[ch] * invstd / m;
    for (std::size_t s = 0; s < n; ++s) {
      const float* xp = x.data().data() + (s * k + ch) * plane;
      const float* gp = dy.data().data() + (s * k + ch) * plane;
      float* dp = dx.data().data() + (s * k + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xhat = (xp[i] - mean) * invstd;
        dp[i] = static_cast<float>(scale * (m * gp[i] - sum_dy - xhat * sum_dy_xhat));
      }
    }
  }
  return dx;
}

Tensor relu_backward(const Tensor& out, const Tensor& dy) {
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = out[i] > 0.0f ? dy[i] : 0.0f;
  return dx;
}

Tensor max_pool_backward(const Tensor& x, const MaxPool& p, const Tensor& dy) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = dy.dim(2), wo = dy.dim(3);
  Tensor dx(x.shape());
  for (std::size_t s = 0; s < n * c; ++s) {
    const float* src = x.data().data() + s * h * w;
    float* dst = dx.data().data() + s * h * w;
    const float* g = dy.data().data() + s * ho * wo;
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t xo = 0; xo < wo; ++xo) {
        // Same scan order as the forward max, so the first maximum wins.
        std::size_t best = (y * p.stride) * w + xo * p.stride;
        for (std::size_t i = 0; i < p.window; ++i)
          for (std::size_t j = 0; j < p.window; ++j) {
            const std::size_t idx = (y * p.stride + i) * w + xo * p.stride + j;
            if (src[idx] > src[best]) best = idx;
          }
        dst[best] += g[y * wo + xo];
      }
  }
  return dx;
}

Tensor avg_pool_backward(const Tensor& x, const AvgPool& p, const Tensor& dy) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = dy.dim(2), wo = dy.dim(3);
  const float inv = 1.0f / static_cast<float>(p.window * p.window);
  Tensor dx(x.shape());
  for (std::size_t s = 0; s < n * c; ++s) {
    float* dst = dx.data().data() + s * h * w;
    const float* g = dy.data().data() + s * ho * wo;
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t xo = 0; xo < wo; ++xo) {
        const float v = g[y * wo + xo] * inv;
        for (std::size_t i = 0; i < p.window; ++i)
          for (std::size_t j = 0; j < p.window; ++j) dst[(y * p.stride + i) * w + xo * p.stride + j] += v;
      }
  }
  return dx;
}

Tensor linear_backward(const Tensor& x, const Linear& l, const Tensor& dy, Tensor& dw, Tensor& db) {
  const std::size_t n = x.dim(0), in = x.dim(1), out = l.weight.dim(0);
  std::vector<float> dy_t(out * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < out; ++o) dy_t[o * n + i] = dy[i * out + o];
  dw = Tensor({out, in});
  gemm(out, n, in, dy_t.data(), x.data().data(), dw.data().data());
  db = Tensor({out});
  for (std::size_t o = 0; o < out; ++o) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += dy_t[o * n + i];
    db[o] = static_cast<float>(s);
  }
  Tensor dx({n, in});
  gemm(n, out, in, dy.data().data(), l.weight.data().data(), dx.data().data());
  return dx;
}

}  // namespace

Tensor forward_train(const ModelGraph& model, const Tensor& batch) {
  auto pass = run_forward_train(model, batch);
  return std::move(pass.outputs.back());
}

Gradients backward(const ModelGraph& model, const Tensor& batch, std::span<const int> labels) {
  Pass pass = run_forward_train(model, batch);
  auto loss = cross_entropy(pass.outputs.back(), labels);

  const std::size_t n = model.size();
  Gradients g;
  g.loss = loss.loss;
  g.logits = pass.outputs.back();
  g.grads.resize(n);
  g.batch_mean.resize(n);
  g.batch_var.resize(n);
  std::vector<Tensor> d_out(n);
  d_out[n - 1] = std::move(loss.grad);

  for (std::size_t i = n; i-- > 0;) {
    if (d_out[i].empty()) continue;  // output does not reach the loss
    const Tensor& dy = d_out[i];
    const auto src = model.input_of(i);
    const Tensor& x = src ? pass.outputs[*src] : batch;
    const Layer& layer = model.layer(i);
    Tensor dx;
    if (const auto* c = std::get_if<Conv>(&layer.op)) {
      Tensor dw, db;
      dx = conv_backward(x, *c, dy, dw, db, src.has_value());
      g.grads[i] = {std::move(dw), std::move(db)};
    } else if (const auto* b = std::get_if<BatchNorm>(&layer.op)) {
      Tensor dgamma, dbeta;
      dx = batchnorm_backward(x, *b, pass.bn[i], dy, dgamma, dbeta);
      g.grads[i] = {std::move(dgamma), std::move(dbeta)};
      const auto& mean = pass.bn[i].mean;
      g.batch_mean[i] = Tensor({mean.size()}, std::vector<float>(mean.begin(), mean.end()));
      g.batch_var[i] = pass.bn[i].var;
    } else if (layer.is<Relu>()) {
      dx = relu_backward(pass.outputs[i], dy);
    } else if (const auto* mp = std::get_if<MaxPool>(&layer.op)) {
      dx = max_pool_backward(x, *mp, dy);
    } else if (const auto* ap = std::get_if<AvgPool>(&layer.op)) {
      dx = avg_pool_backward(x, *ap, dy);
    } else if (layer.is<Flatten>()) {
      dx = dy.reshaped(x.shape());
    } else if (const auto* l = std::get_if<Linear>(&layer.op)) {
      Tensor dw, db;
      dx = linear_backward(x, *l, dy, dw, db);
      g.grads[i] = {std::move(dw), std::move(db)};
    } else {
      accumulate(d_out[layer.as<ResidualAdd>().source], dy);
      dx = dy;
    }
    if (src) accumulate(d_out[*src], dx);
    d_out[i] = Tensor();
  }
  // Parameters that never received a gradient get explicit zeros.
  for (std::size_t i = 0; i < n; ++i) {
    auto params = trainable_parameters(model.layer(i));
    if (!params.empty() && g.grads[i].empty())
      for (const Tensor* p : params) g.grads[i].emplace_back(p->shape());
  }
  return g;
}

ModelGraph train(ModelGraph model, const Dataset& data, const TrainConfig& config,
                 const EpochCallback& on_epoch) {
  config.validate();
  data.validate();
  if (data.image_shape() != model.input_shape()) {
    throw ConfigError("dataset images " + shape_to_string(data.image_shape()) +
                      " do not match the model input " + shape_to_string(model.input_shape()));
  }
  if (data.classes != model.class_count()) {
    throw ConfigError("dataset has " + std::to_string(data.classes) + " classes, model predicts " +
                      std::to_string(model.class_count()));
  }

  const std::size_t n = data.size();
  const std::size_t per = data.images.size() / n;
  std::vector<std::vector<Tensor>> velocity(model.size());
  for (std::size_t i = 0; i < model.size(); ++i)
    for (const Tensor* p : trainable_parameters(model.layer(i))) velocity[i].emplace_back(p->shape());

  Rng rng(config.seed);
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    const float lr = config.rate_for_epoch(epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0;

    for (std::size_t b0 = 0; b0 < n; b0 += config.batch_size) {
      const std::size_t b1 = std::min(n, b0 + config.batch_size);
      const std::size_t bs = b1 - b0;
      Shape shape = data.images.shape();
      shape[0] = bs;
      Tensor batch(shape);
      std::vector<int> labels(bs);
      for (std::size_t j = 0; j < bs; ++j) {
        const std::size_t src = order[b0 + j];
        std::copy_n(data.images.data().begin() + src * per, per, batch.data().begin() + j * per);
        labels[j] = data.labels[src];
      }

      Gradients g = backward(model, batch, labels);
      loss_sum += g.loss * static_cast<double>(bs);
      const auto pred = argmax_rows(g.logits);
      for (std::size_t j = 0; j < bs; ++j) correct += pred[j] == labels[j];

      for (std::size_t i = 0; i < model.size(); ++i) {
        Layer& layer = model.mutable_layer(i);
        auto params = trainable_parameters(layer);
        for (std::size_t k = 0; k < params.size(); ++k) {
          auto w = params[k]->data();
          auto v = velocity[i][k].data();
          auto d = g.grads[i][k].data();
          for (std::size_t e = 0; e < w.size(); ++e) {
            const float grad = d[e] + config.weight_decay * w[e];
            v[e] = config.momentum * v[e] + grad;
            w[e] -= lr * v[e];
          }
        }
        if (auto* bn = std::get_if<BatchNorm>(&layer.op)) {
          const Shape& out_shape = model.output_shapes()[i];
          const double m = static_cast<double>(bs) * static_cast<double>(out_shape[1] * out_shape[2]);
          const double unbias = m > 1.0 ? m / (m - 1.0) : 1.0;
          for (std::size_t ch = 0; ch < bn->channels(); ++ch) {
            bn->running_mean[ch] = (1.0f - kBatchNormMomentum) * bn->running_mean[ch] +
                                   kBatchNormMomentum * g.batch_mean[i][ch];
            bn->running_var[ch] = static_cast<float>(
                (1.0 - kBatchNormMomentum) * bn->running_var[ch] +
                kBatchNormMomentum * unbias * g.batch_var[i][ch]);
          }
        }
      }
    }
    if (on_epoch) {
      on_epoch({epoch, loss_sum / static_cast<double>(n),
                static_cast<double>(correct) / static_cast<double>(n), lr});
    }
  }
  return model;
}

}  // namespace clp
