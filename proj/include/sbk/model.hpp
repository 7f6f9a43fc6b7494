#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sbk/dataset.hpp"
#include "sbk/segment.hpp"
#include "sbk/signal.hpp"

namespace sbk {

enum class Arch { softmax_reg, mlp, cnn1d };

inline std::string arch_name(Arch a) {
  switch (a) {
    case Arch::softmax_reg: return "softmax_reg";
    case Arch::mlp: return "mlp";
    case Arch::cnn1d: return "cnn1d";
  }
  throw std::logic_error("unknown arch");
}

inline Arch arch_from_name(const std::string& s) {
  if (s == "softmax_reg") return Arch::softmax_reg;
  if (s == "mlp") return Arch::mlp;
  if (s == "cnn1d") return Arch::cnn1d;
  throw std::invalid_argument("unknown architecture: " + s);
}

struct ClassifierSpec {
  Arch arch = Arch::cnn1d;
  std::size_t electrodes = 8;
  std::size_t length = 128;
  std::size_t n_classes = 3;
  std::vector<std::size_t> hidden = {64};  // mlp only
  // cnn1d: spatial filters spanning all electrodes, then temporal convolution
  // with same-padding and average pooling
  std::size_t spatial_filters = 8;
  std::size_t temporal_filters = 8;
  std::size_t temporal_kernel = 9;
  std::size_t pool_width = 4;
  std::uint64_t init_seed = 0;

  std::size_t input_dim() const { return electrodes * length; }

  void validate() const {
    if (n_classes < 2) throw std::invalid_argument("spec: n_classes must be >= 2");
    if (electrodes < 1 || length < 2) throw std::invalid_argument("spec: bad input shape");
    if (arch == Arch::mlp && hidden.empty())
      throw std::invalid_argument("spec: mlp needs at least one hidden layer");
    if (arch == Arch::cnn1d) {
      if (temporal_kernel % 2 == 0)
        throw std::invalid_argument("spec: temporal kernel must be odd");
      if (length % pool_width != 0)
        throw std::invalid_argument("spec: pool width must divide T");
    }
  }
};

enum class InputObjective { class_logit, cross_entropy };

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t epochs = 100;
  std::uint64_t shuffle_seed = 0;
};

struct TrainHistory {
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_ca;      // per epoch, empty if no validation set
};

struct AdamState {
  std::vector<double> m, v;
  std::size_t t = 0;

  void step(std::vector<double>& params, const std::vector<double>& grad,
            const TrainConfig& cfg) {
    if (m.empty()) {
      m.assign(params.size(), 0.0);
      v.assign(params.size(), 0.0);
    }
    ++t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
      params[i] -= cfg.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.eps);
    }
  }
};

namespace detail {

inline double elu(double u) { return u > 0.0 ? u : std::exp(u) - 1.0; }
inline double elu_grad(double u) { return u > 0.0 ? 1.0 : std::exp(u); }

// Floor inside log(pool + eps) for the cnn1d log-power feature head.
inline constexpr double kLogPoolEps = 1e-6;

inline void softmax_inplace(std::vector<double>& z) {
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : z) v /= sum;
}

}  // namespace detail

// Small classifier with explicit forward, parameter-gradient, and
// input-gradient passes. Parameters live in one flat vector.
class Classifier {
 public:
  explicit Classifier(const ClassifierSpec& spec) : spec_(spec) {
    spec_.validate();
    layout();
    init_params();
  }

  const ClassifierSpec& spec() const { return spec_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  // --- forward -------------------------------------------------------------

  std::vector<double> forward_one(const Matrix& x) const {
    Cache c;
    auto z = logits(x, c);
    detail::softmax_inplace(z);
    return z;
  }

  Matrix forward(const std::vector<const Matrix*>& batch) const {
    Matrix probs(batch.size(), spec_.n_classes);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      auto p = forward_one(*batch[i]);
      for (std::size_t c = 0; c < spec_.n_classes; ++c) probs(i, c) = p[c];
    }
    return probs;
  }

  int predict(const Matrix& x) const {
    auto p = forward_one(x);
    std::size_t best = 0;
    for (std::size_t c = 1; c < p.size(); ++c)
      if (p[c] > p[best]) best = c;  // ties break to the lowest class index
    return static_cast<int>(best);
  }

  // --- gradients -----------------------------------------------------------

  // Mean cross-entropy over the batch and the averaged parameter gradient.
  std::pair<double, std::vector<double>> backward(const std::vector<const Matrix*>& batch,
                                                  const std::vector<int>& labels) const {
    if (batch.size() != labels.size() || batch.empty())
      throw std::invalid_argument("backward: batch/label mismatch");
    std::vector<double> grad(params_.size(), 0.0);
    double loss = 0.0;
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      int y = labels[i];
      if (y < 0 || static_cast<std::size_t>(y) >= spec_.n_classes)
        throw std::invalid_argument("backward: label out of range");
      Cache c;
      auto z = logits(*batch[i], c);
      auto p = z;
      detail::softmax_inplace(p);
      loss += -std::log(std::max(p[static_cast<std::size_t>(y)], 1e-300)) * inv;
      std::vector<double> dlogits(spec_.n_classes);
      for (std::size_t k = 0; k < spec_.n_classes; ++k)
        dlogits[k] = (p[k] - (static_cast<int>(k) == y ? 1.0 : 0.0)) * inv;
      backprop(*batch[i], c, dlogits, &grad, nullptr);
    }
    return {loss, grad};
  }

  Matrix input_gradient(const Matrix& x, InputObjective obj, int target_class) const {
    if (target_class < 0 || static_cast<std::size_t>(target_class) >= spec_.n_classes)
      throw std::invalid_argument("input_gradient: class out of range");
    Cache c;
    auto z = logits(x, c);
    std::vector<double> dlogits(spec_.n_classes, 0.0);
    if (obj == InputObjective::class_logit) {
      dlogits[static_cast<std::size_t>(target_class)] = 1.0;
    } else {
      auto p = z;
      detail::softmax_inplace(p);
      for (std::size_t k = 0; k < spec_.n_classes; ++k)
        dlogits[k] = p[k] - (static_cast<int>(k) == target_class ? 1.0 : 0.0);
    }
    Matrix dx(x.rows, x.cols);
    backprop(x, c, dlogits, nullptr, &dx);
    return dx;
  }

  // --- representations and pruning ------------------------------------------

  // Penultimate representation (input to the final linear layer).
  std::vector<double> features(const Matrix& x) const {
    Cache c;
    logits(x, c);
    return c.feat;
  }

  std::size_t feature_dim() const { return feat_dim_; }

  // Prunable feature channels: temporal conv channels (cnn1d) or units of the
  // last hidden layer (mlp). softmax_reg has none.
  std::size_t n_feature_channels() const {
    switch (spec_.arch) {
      case Arch::softmax_reg: return 0;
      case Arch::mlp: return spec_.hidden.back();
      case Arch::cnn1d: return spec_.temporal_filters;
    }
    return 0;
  }

  void set_channel_mask(const std::vector<double>& mask) {
    if (mask.size() != n_feature_channels())
      throw std::invalid_argument("set_channel_mask: wrong size");
    channel_mask_ = mask;
  }

  const std::vector<double>& channel_mask() const { return channel_mask_; }

  // Mean absolute activation per feature channel over a calibration set.
  std::vector<double> channel_activation(const std::vector<const Matrix*>& batch) const {
    const std::size_t Q = n_feature_channels();
    std::vector<double> act(Q, 0.0);
    if (Q == 0) return act;
    for (const Matrix* x : batch) {
      Cache c;
      logits(*x, c);
      if (spec_.arch == Arch::cnn1d) {
        const std::size_t J = spec_.length / spec_.pool_width;
        for (std::size_t q = 0; q < Q; ++q)
          for (std::size_t j = 0; j < J; ++j) act[q] += std::abs(c.feat[q * J + j]);
      } else {
        for (std::size_t q = 0; q < Q; ++q) act[q] += std::abs(c.feat[q]);
      }
    }
    for (double& a : act) a /= static_cast<double>(batch.size());
    return act;
  }

  // --- persistence -----------------------------------------------------------

  void save(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    f.write("SBKM", 4);
    io::write_u32(f, 1);
    json j = spec_to_json(spec_);
    std::string s = j.dump();
    io::write_u32(f, static_cast<std::uint32_t>(s.size()));
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
    io::write_u32(f, static_cast<std::uint32_t>(params_.size()));
    for (double p : params_) io::write_f32(f, static_cast<float>(p));
  }

  static Classifier load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    char magic[4];
    f.read(magic, 4);
    if (std::strncmp(magic, "SBKM", 4) != 0)
      throw std::runtime_error("bad model magic in " + path.string());
    if (io::read_u32(f) != 1) throw std::runtime_error("unsupported model version");
    std::uint32_t n = io::read_u32(f);
    std::string s(n, '\0');
    f.read(s.data(), n);
    Classifier model(spec_from_json(json::parse(s)));
    std::uint32_t np = io::read_u32(f);
    if (np != model.params_.size()) throw std::runtime_error("parameter count mismatch");
    for (double& p : model.params_) p = io::read_f32(f);
    return model;
  }

  static json spec_to_json(const ClassifierSpec& s) {
    return json{{"arch", arch_name(s.arch)},
                {"electrodes", s.electrodes},
                {"length", s.length},
                {"n_classes", s.n_classes},
                {"hidden", s.hidden},
                {"spatial_filters", s.spatial_filters},
                {"temporal_filters", s.temporal_filters},
                {"temporal_kernel", s.temporal_kernel},
                {"pool_width", s.pool_width},
                {"init_seed", s.init_seed}};
  }

  static ClassifierSpec spec_from_json(const json& j) {
    ClassifierSpec s;
    s.arch = arch_from_name(j.at("arch").get<std::string>());
    s.electrodes = j.at("electrodes").get<std::size_t>();
    s.length = j.at("length").get<std::size_t>();
    s.n_classes = j.at("n_classes").get<std::size_t>();
    s.hidden = j.value("hidden", std::vector<std::size_t>{64});
    s.spatial_filters = j.value("spatial_filters", std::size_t(8));
    s.temporal_filters = j.value("temporal_filters", std::size_t(8));
    s.temporal_kernel = j.value("temporal_kernel", std::size_t(9));
    s.pool_width = j.value("pool_width", std::size_t(4));
    s.init_seed = j.value("init_seed", std::uint64_t(0));
    return s;
  }

 private:
  struct Cache {
    // cnn1d
    std::vector<double> u1, a1;  // spatial pre/post activation, S x T
    std::vector<double> u2, a2;  // temporal pre/post activation, Q x T
    // mlp
    std::vector<std::vector<double>> pre;  // per layer pre-activations
    // all
    std::vector<double> feat;  // penultimate representation
  };

  void layout() {
    const std::size_t D = spec_.input_dim();
    const std::size_t C = spec_.n_classes;
    switch (spec_.arch) {
      case Arch::softmax_reg:
        off_out_w_ = 0;
        off_out_b_ = C * D;
        n_params_ = C * D + C;
        feat_dim_ = D;
        break;
      case Arch::mlp: {
        std::size_t off = 0;
        std::size_t prev = D;
        for (std::size_t h : spec_.hidden) {
          mlp_off_w_.push_back(off);
          off += h * prev;
          mlp_off_b_.push_back(off);
          off += h;
          prev = h;
        }
        off_out_w_ = off;
        off += C * prev;
        off_out_b_ = off;
        off += C;
        n_params_ = off;
        feat_dim_ = prev;
        break;
      }
      case Arch::cnn1d: {
        const std::size_t E = spec_.electrodes, T = spec_.length;
        const std::size_t S = spec_.spatial_filters, Q = spec_.temporal_filters;
        const std::size_t K = spec_.temporal_kernel, P = spec_.pool_width;
        off_ws_ = 0;
        off_bs_ = S * E;
        off_wt_ = off_bs_ + S;
        off_bt_ = off_wt_ + Q * S * K;
        off_out_w_ = off_bt_ + Q;
        feat_dim_ = Q * (T / P);
        off_out_b_ = off_out_w_ + C * feat_dim_;
        n_params_ = off_out_b_ + C;
        break;
      }
    }
    params_.assign(n_params_, 0.0);
    channel_mask_.assign(n_feature_channels(), 1.0);
  }

  void init_params() {
    Rng rng(spec_.init_seed ^ 0x5bcull);
    auto he = [&](std::size_t off, std::size_t count, std::size_t fan_in) {
      double s = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (std::size_t i = 0; i < count; ++i) params_[off + i] = rng.normal() * s;
    };
    const std::size_t D = spec_.input_dim();
    const std::size_t C = spec_.n_classes;
    switch (spec_.arch) {
      case Arch::softmax_reg:
        he(off_out_w_, C * D, D);
        break;
      case Arch::mlp: {
        std::size_t prev = D;
        for (std::size_t l = 0; l < spec_.hidden.size(); ++l) {
          he(mlp_off_w_[l], spec_.hidden[l] * prev, prev);
          prev = spec_.hidden[l];
        }
        he(off_out_w_, C * prev, prev);
        break;
      }
      case Arch::cnn1d: {
        const std::size_t E = spec_.electrodes, S = spec_.spatial_filters;
        const std::size_t Q = spec_.temporal_filters, K = spec_.temporal_kernel;
        he(off_ws_, S * E, E);
        he(off_wt_, Q * S * K, S * K);
        he(off_out_w_, C * feat_dim_, feat_dim_);
        break;
      }
    }
  }

  std::vector<double> logits(const Matrix& x, Cache& c) const {
    if (x.rows != spec_.electrodes || x.cols != spec_.length)
      throw std::invalid_argument("input shape does not match classifier spec");
    const std::size_t C = spec_.n_classes;
    switch (spec_.arch) {
      case Arch::softmax_reg: {
        c.feat = x.data;
        break;
      }
      case Arch::mlp: {
        std::vector<double> act = x.data;
        c.pre.clear();
        for (std::size_t l = 0; l < spec_.hidden.size(); ++l) {
          const std::size_t h = spec_.hidden[l];
          const std::size_t prev = act.size();
          std::vector<double> z(h);
          const double* W = params_.data() + mlp_off_w_[l];
          const double* b = params_.data() + mlp_off_b_[l];
          for (std::size_t i = 0; i < h; ++i) {
            double acc = b[i];
            const double* wrow = W + i * prev;
            for (std::size_t j = 0; j < prev; ++j) acc += wrow[j] * act[j];
            z[i] = acc;
          }
          c.pre.push_back(z);
          act.resize(h);
          for (std::size_t i = 0; i < h; ++i) act[i] = detail::elu(z[i]);
          if (l + 1 == spec_.hidden.size())
            for (std::size_t i = 0; i < h; ++i) act[i] *= channel_mask_[i];
        }
        c.feat = act;
        break;
      }
      case Arch::cnn1d: {
        const std::size_t E = spec_.electrodes, T = spec_.length;
        const std::size_t S = spec_.spatial_filters, Q = spec_.temporal_filters;
        const std::size_t K = spec_.temporal_kernel, P = spec_.pool_width;
        const std::size_t pad = K / 2;
        c.u1.assign(S * T, 0.0);
        c.a1.assign(S * T, 0.0);
        const double* Ws = params_.data() + off_ws_;
        const double* bs = params_.data() + off_bs_;
        for (std::size_t s = 0; s < S; ++s) {
          for (std::size_t t = 0; t < T; ++t) {
            double acc = bs[s];
            for (std::size_t e = 0; e < E; ++e) acc += Ws[s * E + e] * x(e, t);
            c.u1[s * T + t] = acc;
            c.a1[s * T + t] = acc;  // linear spatial stage (filter-bank style)
          }
        }
        c.u2.assign(Q * T, 0.0);
        c.a2.assign(Q * T, 0.0);
        const double* Wt = params_.data() + off_wt_;
        const double* bt = params_.data() + off_bt_;
        for (std::size_t q = 0; q < Q; ++q) {
          for (std::size_t t = 0; t < T; ++t) {
            double acc = bt[q];
            for (std::size_t s = 0; s < S; ++s) {
              const double* w = Wt + (q * S + s) * K;
              const double* a = c.a1.data() + s * T;
              for (std::size_t k = 0; k < K; ++k) {
                std::size_t tt = t + k;
                if (tt < pad || tt >= T + pad) continue;
                acc += w[k] * a[tt - pad];
              }
            }
            c.u2[q * T + t] = acc;
            c.a2[q * T + t] = acc * acc;  // squared activation (band power)
          }
        }
        // square -> average pool -> log gives log-power features, so narrowband
        // energy is a linear feature and low/high frequencies contribute at
        // comparable scale. The channel mask applies at the feature level so a
        // pruned channel's features are exactly zero.
        const std::size_t J = T / P;
        c.feat.assign(Q * J, 0.0);
        for (std::size_t q = 0; q < Q; ++q)
          for (std::size_t j = 0; j < J; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < P; ++p) acc += c.a2[q * T + j * P + p];
            c.feat[q * J + j] =
                channel_mask_[q] *
                std::log(acc / static_cast<double>(P) + detail::kLogPoolEps);
          }
        break;
      }
    }
    std::vector<double> z(C);
    const double* Wo = params_.data() + off_out_w_;
    const double* bo = params_.data() + off_out_b_;
    for (std::size_t k = 0; k < C; ++k) {
      double acc = bo[k];
      const double* wrow = Wo + k * feat_dim_;
      for (std::size_t j = 0; j < feat_dim_; ++j) acc += wrow[j] * c.feat[j];
      z[k] = acc;
    }
    return z;
  }

  // Accumulates parameter gradients into *grad (if non-null) and writes the
  // input gradient into *dx (if non-null).
  void backprop(const Matrix& x, const Cache& c, const std::vector<double>& dlogits,
                std::vector<double>* grad, Matrix* dx) const {
    const std::size_t C = spec_.n_classes;
    const double* Wo = params_.data() + off_out_w_;

    std::vector<double> dfeat(feat_dim_, 0.0);
    for (std::size_t k = 0; k < C; ++k) {
      const double g = dlogits[k];
      if (grad) {
        double* gw = grad->data() + off_out_w_ + k * feat_dim_;
        for (std::size_t j = 0; j < feat_dim_; ++j) gw[j] += g * c.feat[j];
        (*grad)[off_out_b_ + k] += g;
      }
      const double* wrow = Wo + k * feat_dim_;
      for (std::size_t j = 0; j < feat_dim_; ++j) dfeat[j] += g * wrow[j];
    }

    switch (spec_.arch) {
      case Arch::softmax_reg: {
        if (dx)
          for (std::size_t i = 0; i < dfeat.size(); ++i) dx->data[i] = dfeat[i];
        break;
      }
      case Arch::mlp: {
        std::vector<double> delta = dfeat;
        for (std::size_t li = spec_.hidden.size(); li-- > 0;) {
          const std::size_t h = spec_.hidden[li];
          if (li + 1 == spec_.hidden.size())
            for (std::size_t i = 0; i < h; ++i) delta[i] *= channel_mask_[i];
          for (std::size_t i = 0; i < h; ++i) delta[i] *= detail::elu_grad(c.pre[li][i]);
          const std::size_t prev = (li == 0) ? spec_.input_dim() : spec_.hidden[li - 1];
          // previous layer activations
          std::vector<double> prev_act(prev);
          if (li == 0) {
            prev_act = x.data;
          } else {
            for (std::size_t j = 0; j < prev; ++j)
              prev_act[j] = detail::elu(c.pre[li - 1][j]);
            if (li == spec_.hidden.size())  // unreachable; mask applies at last layer only
              for (std::size_t j = 0; j < prev; ++j) prev_act[j] *= channel_mask_[j];
          }
          const double* W = params_.data() + mlp_off_w_[li];
          if (grad) {
            double* gw = grad->data() + mlp_off_w_[li];
            double* gb = grad->data() + mlp_off_b_[li];
            for (std::size_t i = 0; i < h; ++i) {
              for (std::size_t j = 0; j < prev; ++j) gw[i * prev + j] += delta[i] * prev_act[j];
              gb[i] += delta[i];
            }
          }
          std::vector<double> dprev(prev, 0.0);
          for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < prev; ++j) dprev[j] += delta[i] * W[i * prev + j];
          delta = std::move(dprev);
        }
        if (dx)
          for (std::size_t i = 0; i < delta.size(); ++i) dx->data[i] = delta[i];
        break;
      }
      case Arch::cnn1d: {
        const std::size_t E = spec_.electrodes, T = spec_.length;
        const std::size_t S = spec_.spatial_filters, Q = spec_.temporal_filters;
        const std::size_t K = spec_.temporal_kernel, P = spec_.pool_width;
        const std::size_t pad = K / 2;
        const std::size_t J = T / P;

        // feat = mask[q] * log(pool + eps); pool = mean of squared u2 over the
        // window. d feat/d u2 = mask[q] / (pool + eps) / P * 2 u2.
        std::vector<double> du2(Q * T, 0.0);
        for (std::size_t q = 0; q < Q; ++q)
          for (std::size_t j = 0; j < J; ++j) {
            double pool = 0.0;
            for (std::size_t p = 0; p < P; ++p) pool += c.a2[q * T + j * P + p];
            pool /= static_cast<double>(P);
            const double g = dfeat[q * J + j] * channel_mask_[q] /
                             ((pool + detail::kLogPoolEps) * static_cast<double>(P));
            for (std::size_t p = 0; p < P; ++p) {
              const std::size_t idx = q * T + j * P + p;
              du2[idx] = g * 2.0 * c.u2[idx];
            }
          }

        // temporal conv
        const double* Wt = params_.data() + off_wt_;
        std::vector<double> da1(S * T, 0.0);
        for (std::size_t q = 0; q < Q; ++q) {
          for (std::size_t t = 0; t < T; ++t) {
            const double g = du2[q * T + t];
            if (g == 0.0) continue;
            if (grad) (*grad)[off_bt_ + q] += g;
            for (std::size_t s = 0; s < S; ++s) {
              const double* w = Wt + (q * S + s) * K;
              for (std::size_t k = 0; k < K; ++k) {
                std::size_t tt = t + k;
                if (tt < pad || tt >= T + pad) continue;
                const std::size_t src = s * T + (tt - pad);
                if (grad) (*grad)[off_wt_ + (q * S + s) * K + k] += g * c.a1[src];
                da1[src] += g * w[k];
              }
            }
          }
        }

        // spatial conv
        const double* Ws = params_.data() + off_ws_;
        if (dx) std::fill(dx->data.begin(), dx->data.end(), 0.0);
        for (std::size_t s = 0; s < S; ++s) {
          for (std::size_t t = 0; t < T; ++t) {
            const double g = da1[s * T + t];  // spatial stage is linear
            if (g == 0.0) continue;
            if (grad) (*grad)[off_bs_ + s] += g;
            for (std::size_t e = 0; e < E; ++e) {
              if (grad) (*grad)[off_ws_ + s * E + e] += g * x(e, t);
              if (dx) (*dx)(e, t) += g * Ws[s * E + e];
            }
          }
        }
        break;
      }
    }
  }

  ClassifierSpec spec_;
  std::vector<double> params_;
  std::vector<double> channel_mask_;
  std::size_t n_params_ = 0;
  std::size_t feat_dim_ = 0;
  // offsets into params_
  std::vector<std::size_t> mlp_off_w_, mlp_off_b_;
  std::size_t off_ws_ = 0, off_bs_ = 0, off_wt_ = 0, off_bt_ = 0;
  std::size_t off_out_w_ = 0, off_out_b_ = 0;
};

// ---------------------------------------------------------------------------
// Training and evaluation
// ---------------------------------------------------------------------------

inline TrainHistory train(Classifier& model, const Dataset& train_set,
                          const Dataset& poison_set, const TrainConfig& cfg,
                          const Dataset* validation = nullptr) {
  if (train_set.empty() && poison_set.empty())
    throw std::invalid_argument("train: no training data");
  std::vector<const Matrix*> all;
  std::vector<int> labels;
  for (const auto& s : train_set) {
    all.push_back(&s.data);
    labels.push_back(s.label);
  }
  for (const auto& s : poison_set) {
    all.push_back(&s.data);
    labels.push_back(s.label);
  }

  AdamState adam;
  TrainHistory hist;
  Rng rng(cfg.shuffle_seed);
  std::vector<std::size_t> order(all.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng erng = rng.fork(epoch);
    erng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const Matrix*> bx(end - start);
      std::vector<int> by(end - start);
      for (std::size_t i = start; i < end; ++i) {
        bx[i - start] = all[order[i]];
        by[i - start] = labels[order[i]];
      }
      auto [loss, grad] = model.backward(bx, by);
      if (!std::isfinite(loss))
        throw std::runtime_error("train: loss diverged (NaN/inf) at epoch " +
                                 std::to_string(epoch));
      adam.step(model.params(), grad, cfg);
      epoch_loss += loss;
      ++n_batches;
    }
    hist.train_loss.push_back(epoch_loss / static_cast<double>(n_batches));
    if (validation) {
      std::size_t correct = 0;
      for (const auto& s : *validation)
        if (model.predict(s.data) == s.label) ++correct;
      hist.val_ca.push_back(static_cast<double>(correct) /
                            static_cast<double>(validation->size()));
    }
  }
  return hist;
}

inline double evaluate_ca(const Classifier& model, const Dataset& test_set) {
  if (test_set.empty()) throw std::invalid_argument("evaluate_ca: empty test set");
  std::size_t correct = 0;
  for (const auto& s : test_set)
    if (model.predict(s.data) == s.label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(test_set.size());
}

struct AsrResult {
  double overall = 0.0;
  std::vector<double> per_class;
};

// Multi-target protocol: every test sample is attacked toward every class,
// including its own label. Success means the prediction equals the target.
inline AsrResult evaluate_asr(const Classifier& model, const Dataset& test_set,
                              const TriggerBank& bank,
                              const std::vector<InjectionStrategy>& strategies) {
  const std::size_t C = bank.triggers.size();
  if (strategies.size() != C)
    throw std::invalid_argument("evaluate_asr: strategies must cover all classes");
  AsrResult res;
  res.per_class.assign(C, 0.0);
  std::size_t total = 0, success = 0;
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t hits = 0;
    for (const auto& s : test_set) {
      Segment poisoned =
          inject_frequency(s, bank.for_class(static_cast<int>(c)), strategies[c]);
      if (model.predict(poisoned.data) == static_cast<int>(c)) ++hits;
    }
    res.per_class[c] = static_cast<double>(hits) / static_cast<double>(test_set.size());
    success += hits;
    total += test_set.size();
  }
  res.overall = static_cast<double>(success) / static_cast<double>(total);
  return res;
}

}  // namespace sbk
