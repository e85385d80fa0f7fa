#include "hpl/segnet.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

#include "hpl/binary_io.hpp"
#include "hpl/image_io.hpp"
#include "hpl/random.hpp"

namespace hpl {

namespace {

constexpr char kCheckpointMagic[4] = {'S', 'E', 'G', 'C'};

// out[o] += w[o][c] (*) in[c] with 3x3 kernels and zero "same" padding.
void conv3x3_forward(const Tensor& in, const Tensor& w, const Tensor& b, Tensor& out) {
  const std::size_t cin = in.dim(0), h = in.dim(1), wd = in.dim(2);
  const std::size_t cout = w.dim(0);
  for (std::size_t o = 0; o < cout; ++o) {
    auto dst = out.plane(o);
    std::fill(dst.begin(), dst.end(), b[o]);
    for (std::size_t c = 0; c < cin; ++c) {
      const auto src = in.plane(c);
      const double* k = w.data().data() + (o * cin + c) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        const std::ptrdiff_t dy = ky - 1;
        const std::size_t y0 = dy < 0 ? 1 : 0;
        const std::size_t y1 = dy > 0 ? h - 1 : h;
        for (int kx = 0; kx < 3; ++kx) {
          const double kv = k[ky * 3 + kx];
          const std::ptrdiff_t dx = kx - 1;
          const std::size_t x0 = dx < 0 ? 1 : 0;
          const std::size_t x1 = dx > 0 ? wd - 1 : wd;
          for (std::size_t y = y0; y < y1; ++y) {
            double* orow = dst.data() + y * wd;
            const double* irow = src.data() + (static_cast<std::ptrdiff_t>(y) + dy) * static_cast<std::ptrdiff_t>(wd);
            for (std::size_t x = x0; x < x1; ++x) orow[x] += kv * irow[static_cast<std::ptrdiff_t>(x) + dx];
          }
        }
      }
    }
  }
}

// Gradients of conv3x3_forward. d_in may be null when the input gradient is
// not needed (first layer).
void conv3x3_backward(const Tensor& in, const Tensor& w, const Tensor& d_out, Tensor& d_w, Tensor& d_b,
                      Tensor* d_in) {
  const std::size_t cin = in.dim(0), h = in.dim(1), wd = in.dim(2);
  const std::size_t cout = w.dim(0);
  for (std::size_t o = 0; o < cout; ++o) {
    const auto g = d_out.plane(o);
    double sb = 0.0;
    for (double v : g) sb += v;
    d_b[o] += sb;
    for (std::size_t c = 0; c < cin; ++c) {
      const auto src = in.plane(c);
      double* dk = &d_w[(o * cin + c) * 9];
      const double* k = w.data().data() + (o * cin + c) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        const std::ptrdiff_t dy = ky - 1;
        const std::size_t y0 = dy < 0 ? 1 : 0;
        const std::size_t y1 = dy > 0 ? h - 1 : h;
        for (int kx = 0; kx < 3; ++kx) {
          const std::ptrdiff_t dx = kx - 1;
          const std::size_t x0 = dx < 0 ? 1 : 0;
          const std::size_t x1 = dx > 0 ? wd - 1 : wd;
          double acc = 0.0;
          for (std::size_t y = y0; y < y1; ++y) {
            const double* grow = g.data() + y * wd;
            const double* irow = src.data() + (static_cast<std::ptrdiff_t>(y) + dy) * static_cast<std::ptrdiff_t>(wd);
            for (std::size_t x = x0; x < x1; ++x) acc += grow[x] * irow[static_cast<std::ptrdiff_t>(x) + dx];
          }
          dk[ky * 3 + kx] += acc;
          if (d_in) {
            const double kv = k[ky * 3 + kx];
            double* dst = d_in->plane(c).data();
            for (std::size_t y = y0; y < y1; ++y) {
              const double* grow = g.data() + y * wd;
              double* drow = dst + (static_cast<std::ptrdiff_t>(y) + dy) * static_cast<std::ptrdiff_t>(wd);
              for (std::size_t x = x0; x < x1; ++x) drow[static_cast<std::ptrdiff_t>(x) + dx] += kv * grow[x];
            }
          }
        }
      }
    }
  }
}

Tensor relu(const Tensor& t) {
  Tensor out = t;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

void uniform_fill(Tensor& t, double bound, Rng& rng) {
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
}

nlohmann::json config_to_json(const SegNetConfig& c) {
  return {{"in_channels", c.in_channels},
          {"hidden_channels", c.hidden_channels},
          {"num_classes", c.num_classes},
          {"kernel_size", SegNetConfig::kKernel},
          {"seed", c.seed}};
}

bool same_architecture(const SegNetConfig& a, const SegNetConfig& b) {
  return a.in_channels == b.in_channels && a.hidden_channels == b.hidden_channels && a.num_classes == b.num_classes;
}

}  // namespace

void SegNetConfig::validate() const {
  if (in_channels < 1 || hidden_channels < 1 || num_classes < 2) {
    throw InvalidArgument("segnet config requires in_channels >= 1, hidden_channels >= 1, num_classes >= 2");
  }
}

const std::array<const char*, SegNetParams::kTensorCount>& SegNetParams::tensor_names() {
  static const std::array<const char*, kTensorCount> names = {"conv1.weight", "conv1.bias", "conv2.weight",
                                                              "conv2.bias",   "head.weight", "head.bias"};
  return names;
}

std::size_t SegNetParams::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : tensors()) n += t->size();
  return n;
}

double& SegNetParams::flat(std::size_t i) {
  for (Tensor* t : tensors()) {
    if (i < t->size()) return (*t)[i];
    i -= t->size();
  }
  throw InvalidArgument("parameter index out of range");
}

double SegNetParams::flat(std::size_t i) const { return const_cast<SegNetParams*>(this)->flat(i); }

SegNetParams& SegNetParams::operator+=(const SegNetParams& other) {
  auto mine = tensors();
  auto theirs = other.tensors();
  for (std::size_t i = 0; i < kTensorCount; ++i) *mine[i] += *theirs[i];
  return *this;
}

SegNetParams& SegNetParams::operator*=(double s) {
  for (Tensor* t : tensors()) *t *= s;
  return *this;
}

SegNetParams zero_params(const SegNetConfig& config) {
  config.validate();
  const std::size_t c = config.in_channels, d = config.hidden_channels, k = config.num_classes;
  SegNetParams p;
  p.config = config;
  p.conv1_w = Tensor({d, c, 3, 3});
  p.conv1_b = Tensor({d});
  p.conv2_w = Tensor({d, d, 3, 3});
  p.conv2_b = Tensor({d});
  p.head_w = Tensor({k, d});
  p.head_b = Tensor({k});
  return p;
}

SegNetParams init_params(const SegNetConfig& config) {
  SegNetParams p = zero_params(config);
  Rng rng(derive_seed(config.seed, "segnet/init"));
  uniform_fill(p.conv1_w, 1.0 / std::sqrt(9.0 * config.in_channels), rng);
  uniform_fill(p.conv2_w, 1.0 / std::sqrt(9.0 * config.hidden_channels), rng);
  uniform_fill(p.head_w, 1.0 / std::sqrt(static_cast<double>(config.hidden_channels)), rng);
  return p;
}

ForwardTrace forward(const SegNetParams& params, const Tensor& input) {
  const auto& cfg = params.config;
  if (input.rank() != 3 || input.dim(0) != cfg.in_channels) {
    throw ShapeError("segnet forward: expected " + std::to_string(cfg.in_channels) + " x H x W input, got " +
                     shape_string(input.shape()));
  }
  const std::size_t h = input.dim(1), w = input.dim(2), d = cfg.hidden_channels;
  ForwardTrace tr;
  tr.input = input;
  tr.pre1 = Tensor::chw(d, h, w);
  conv3x3_forward(input, params.conv1_w, params.conv1_b, tr.pre1);
  tr.act1 = relu(tr.pre1);
  tr.pre2 = Tensor::chw(d, h, w);
  conv3x3_forward(tr.act1, params.conv2_w, params.conv2_b, tr.pre2);
  tr.features = relu(tr.pre2);
  tr.logits = head_logits(params, tr.features);
  return tr;
}

Tensor head_logits(const SegNetParams& params, const Tensor& features) {
  const std::size_t k = params.config.num_classes, d = params.config.hidden_channels;
  if (features.rank() != 3 || features.dim(0) != d) throw ShapeError("head: feature channel mismatch");
  const std::size_t n = features.dim(1) * features.dim(2);
  Tensor logits = Tensor::chw(k, features.dim(1), features.dim(2));
  for (std::size_t c = 0; c < k; ++c) {
    double* out = logits.plane(c).data();
    std::fill(out, out + n, params.head_b[c]);
    for (std::size_t j = 0; j < d; ++j) {
      const double wv = params.head_w[c * d + j];
      const double* f = features.plane(j).data();
      for (std::size_t i = 0; i < n; ++i) out[i] += wv * f[i];
    }
  }
  return logits;
}

void backward_accumulate(const ForwardTrace& trace, const SegNetParams& params, const Tensor& d_logits,
                         const Tensor* d_features, SegNetGrads& grads) {
  require_same_shape(trace.logits, d_logits, "segnet backward (logits)");
  if (d_features) require_same_shape(trace.features, *d_features, "segnet backward (features)");
  const std::size_t k = params.config.num_classes, d = params.config.hidden_channels;
  const std::size_t h = trace.features.dim(1), w = trace.features.dim(2), n = h * w;

  Tensor d_feat = d_features ? *d_features : Tensor::chw(d, h, w);
  for (std::size_t c = 0; c < k; ++c) {
    const double* g = d_logits.plane(c).data();
    double sb = 0.0;
    for (std::size_t i = 0; i < n; ++i) sb += g[i];
    grads.head_b[c] += sb;
    for (std::size_t j = 0; j < d; ++j) {
      const double* f = trace.features.plane(j).data();
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += g[i] * f[i];
      grads.head_w[c * d + j] += acc;
      const double wv = params.head_w[c * d + j];
      double* df = d_feat.plane(j).data();
      for (std::size_t i = 0; i < n; ++i) df[i] += wv * g[i];
    }
  }

  for (std::size_t i = 0; i < d_feat.size(); ++i) {
    if (!(trace.pre2[i] > 0.0)) d_feat[i] = 0.0;
  }
  Tensor d_act1 = Tensor::chw(d, h, w);
  conv3x3_backward(trace.act1, params.conv2_w, d_feat, grads.conv2_w, grads.conv2_b, &d_act1);
  for (std::size_t i = 0; i < d_act1.size(); ++i) {
    if (!(trace.pre1[i] > 0.0)) d_act1[i] = 0.0;
  }
  conv3x3_backward(trace.input, params.conv1_w, d_act1, grads.conv1_w, grads.conv1_b, nullptr);
}

SegNetGrads backward(const ForwardTrace& trace, const SegNetParams& params, const Tensor& d_logits,
                     const Tensor* d_features) {
  SegNetGrads g = zero_params(params.config);
  backward_accumulate(trace, params, d_logits, d_features, g);
  return g;
}

AdamWState AdamWState::for_params(const SegNetParams& params) {
  return AdamWState{zero_params(params.config), zero_params(params.config), 0};
}

void optimizer_step(SegNetParams& params, const SegNetGrads& grads, AdamWState& state, const AdamWOptions& opt) {
  if (!(opt.lr >= 0.0) || !std::isfinite(opt.lr)) throw InvalidArgument("optimizer_step: lr must be >= 0");
  if (opt.beta1 < 0.0 || opt.beta1 >= 1.0 || opt.beta2 < 0.0 || opt.beta2 >= 1.0) {
    throw InvalidArgument("optimizer_step: betas must lie in [0, 1)");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  const double decay = 1.0 - opt.lr * opt.weight_decay;
  auto p = params.tensors();
  auto g = grads.tensors();
  auto m = state.m.tensors();
  auto v = state.v.tensors();
  for (std::size_t t = 0; t < SegNetParams::kTensorCount; ++t) {
    for (std::size_t i = 0; i < p[t]->size(); ++i) {
      const double gi = (*g[t])[i];
      double& mi = (*m[t])[i];
      double& vi = (*v[t])[i];
      mi = opt.beta1 * mi + (1.0 - opt.beta1) * gi;
      vi = opt.beta2 * vi + (1.0 - opt.beta2) * gi * gi;
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      double& w = (*p[t])[i];
      w *= decay;
      w -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
  }
}

std::string encode_checkpoint(const SegNetParams& params) {
  std::string out(kCheckpointMagic, 4);
  bin::put_u32(out, kCheckpointVersion);
  const std::string header = config_to_json(params.config).dump();
  bin::put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  for (const Tensor* t : params.tensors()) append_tensor(out, *t);
  return out;
}

SegNetParams decode_checkpoint(std::string_view bytes) {
  try {
    bin::Reader rd(bytes);
    if (bytes.size() < 4 || bytes.substr(0, 4) != std::string_view(kCheckpointMagic, 4)) {
      throw CheckpointError("checkpoint: bad magic, expected SEGC");
    }
    rd.take(4, "magic");
    const std::uint32_t version = rd.u32("version");
    if (version != kCheckpointVersion) {
      throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
    }
    const std::uint32_t len = rd.u32("config length");
    const auto header = nlohmann::json::parse(rd.take(len, "config header"));
    if (header.at("kernel_size").get<std::size_t>() != SegNetConfig::kKernel) {
      throw CheckpointError("checkpoint: unsupported kernel size");
    }
    SegNetConfig cfg;
    cfg.in_channels = header.at("in_channels").get<std::size_t>();
    cfg.hidden_channels = header.at("hidden_channels").get<std::size_t>();
    cfg.num_classes = header.at("num_classes").get<std::size_t>();
    cfg.seed = header.at("seed").get<std::uint64_t>();
    SegNetParams p = zero_params(cfg);
    for (Tensor* t : p.tensors()) {
      Tensor loaded = read_tensor(rd);
      if (loaded.shape() != t->shape()) {
        throw CheckpointError("checkpoint: tensor shape " + shape_string(loaded.shape()) + " does not match config");
      }
      *t = std::move(loaded);
    }
    if (!rd.at_end()) throw CheckpointError("checkpoint: trailing bytes");
    return p;
  } catch (const CheckpointError&) {
    throw;
  } catch (const FormatError& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: bad config header: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const SegNetParams& params, const std::filesystem::path& path) {
  bin::write_file_atomic(path, encode_checkpoint(params));
}

SegNetParams load_checkpoint(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = bin::read_file(path);
  } catch (const IoError& e) {
    throw CheckpointError(e.what());
  }
  return decode_checkpoint(bytes);
}

SegNetParams load_checkpoint(const std::filesystem::path& path, const SegNetConfig& expected) {
  SegNetParams p = load_checkpoint(path);
  if (!same_architecture(p.config, expected)) {
    throw ConfigMismatch("checkpoint architecture (in=" + std::to_string(p.config.in_channels) +
                         ", hidden=" + std::to_string(p.config.hidden_channels) +
                         ", classes=" + std::to_string(p.config.num_classes) + ") does not match expected (in=" +
                         std::to_string(expected.in_channels) + ", hidden=" +
                         std::to_string(expected.hidden_channels) +
                         ", classes=" + std::to_string(expected.num_classes) + ")");
  }
  return p;
}

}  // namespace hpl
