// SPDX-License-Identifier: Apache-2.0

#include "defectkit/nn/hooknet.hpp"

#include <sstream>

#include <nlohmann/json.hpp>

#include "defectkit/error.hpp"

namespace defectkit::nn {

nlohmann::json to_json(const ModelConfig& c) {
  return {{"num_blocks", c.num_blocks},
          {"contract_filter_growth", c.contract_filter_growth},
          {"expand_filter_growth", c.expand_filter_growth},
          {"contract_channels", c.contract_channels},
          {"expand_channels", c.expand_channels},
          {"kernel_size", c.kernel_size},
          {"activation", c.activation == ActivationKind::Relu ? "relu" : "leaky_relu"},
          {"input_len", c.input_len},
          {"output_len", c.output_len},
          {"output_bias_init_prior", c.output_bias_init_prior},
          {"rng_seed", c.rng_seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.num_blocks = j.value("num_blocks", c.num_blocks);
  c.contract_filter_growth = j.value("contract_filter_growth", c.contract_filter_growth);
  c.expand_filter_growth = j.value("expand_filter_growth", c.expand_filter_growth);
  c.contract_channels = j.value("contract_channels", c.contract_channels);
  c.expand_channels = j.value("expand_channels", c.expand_channels);
  c.kernel_size = j.value("kernel_size", c.kernel_size);
  const auto act = j.value("activation", std::string("leaky_relu"));
  if (act == "relu") {
    c.activation = ActivationKind::Relu;
  } else if (act == "leaky_relu") {
    c.activation = ActivationKind::LeakyRelu;
  } else {
    throw UsageError("nn", "unknown activation '" + act + "'");
  }
  c.input_len = j.value("input_len", c.input_len);
  c.output_len = j.value("output_len", c.output_len);
  c.output_bias_init_prior = j.value("output_bias_init_prior", c.output_bias_init_prior);
  c.rng_seed = j.value("rng_seed", c.rng_seed);
  return c;
}

std::size_t Architecture::doublings() const {
  std::size_t d = 0;
  for (const auto& e : expand) d += e.stride == 2 ? 1 : 0;
  return d;
}

namespace {

bool power_of_two(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

std::size_t log2_exact(std::size_t v) {
  std::size_t d = 0;
  while (v > 1) {
    v >>= 1;
    ++d;
  }
  return d;
}

}  // namespace

Architecture resolve_architecture(const ModelConfig& cfg) {
  const int n = cfg.num_blocks;
  if (n < 1) throw UsageError("nn", "num_blocks must be at least 1");
  if (cfg.kernel_size < 1) throw UsageError("nn", "kernel_size must be at least 1");
  if (!(cfg.output_bias_init_prior > 0.0 && cfg.output_bias_init_prior < 1.0)) {
    throw UsageError("nn", "output_bias_init_prior must lie in (0, 1)");
  }
  if (!cfg.contract_channels.empty() && cfg.contract_channels.size() != static_cast<std::size_t>(n)) {
    throw UsageError("nn", "contract_channels needs one entry per block");
  }
  if (!cfg.expand_channels.empty() && cfg.expand_channels.size() != static_cast<std::size_t>(n)) {
    throw UsageError("nn", "expand_channels needs one entry per block");
  }
  Architecture a;
  a.kernel = static_cast<std::size_t>(cfg.kernel_size);

  std::size_t len = cfg.input_len;
  std::size_t cin = 1;
  for (int i = 0; i < n; ++i) {
    const int ch = cfg.contract_channels.empty() ? cfg.contract_filter_growth * (i + 1) : cfg.contract_channels[i];
    if (ch < 1) throw UsageError("nn", "contracting block " + std::to_string(i + 1) + " has no channels");
    if (len < 2 || len % 2 != 0) {
      throw UsageError("nn", "contracting block " + std::to_string(i + 1) + ": length " + std::to_string(len) +
                                 " cannot be halved");
    }
    a.contract.push_back({cin, static_cast<std::size_t>(ch), len, cin != static_cast<std::size_t>(ch)});
    cin = static_cast<std::size_t>(ch);
    len /= 2;
  }
  a.bottleneck_channels = cin;
  a.bottleneck_length = len;

  std::size_t doublings = 0;
  if (cfg.output_len >= len) {
    if (cfg.output_len % len != 0 || !power_of_two(cfg.output_len / len)) {
      throw UsageError("nn", "output length " + std::to_string(cfg.output_len) +
                                 " is not a power-of-two multiple of the bottleneck length " + std::to_string(len));
    }
    doublings = log2_exact(cfg.output_len / len);
    if (doublings > static_cast<std::size_t>(n / 2)) {
      throw UsageError("nn", "expanding block " + std::to_string(n) + ": " + std::to_string(n) +
                                 " blocks allow only " + std::to_string(n / 2) + " doublings, " +
                                 std::to_string(doublings) + " needed to reach length " +
                                 std::to_string(cfg.output_len));
    }
  } else {
    if (len % cfg.output_len != 0 || !power_of_two(len / cfg.output_len)) {
      throw UsageError("nn", "bottleneck length " + std::to_string(len) + " cannot be pooled to output length " +
                                 std::to_string(cfg.output_len));
    }
    a.head_pool = len / cfg.output_len;
  }

  std::size_t cur = len;
  std::size_t done = 0;
  cin = a.bottleneck_channels;
  for (int j = 0; j < n; ++j) {
    const int ch = cfg.expand_channels.empty() ? cfg.expand_filter_growth * (n - j) : cfg.expand_channels[j];
    if (ch < 1) throw UsageError("nn", "expanding block " + std::to_string(j + 1) + " has no channels");
    std::size_t stride = 1;
    if (j % 2 == 1 && done < doublings) {
      stride = 2;
      ++done;
    }
    cur *= stride;
    const std::size_t skip = static_cast<std::size_t>(n - 1 - j);
    const auto& src = a.contract[skip];
    if (src.length % cur != 0) {
      throw UsageError("nn", "expanding block " + std::to_string(j + 1) + ": skip length " +
                                 std::to_string(src.length) + " does not pool to " + std::to_string(cur));
    }
    a.expand.push_back({cin, static_cast<std::size_t>(ch), stride, cur, skip, src.channels, src.length / cur});
    cin = static_cast<std::size_t>(ch);
  }
  a.output_len = cur / a.head_pool;
  if (a.output_len != cfg.output_len) {
    throw UsageError("nn", "expanding path ends at length " + std::to_string(a.output_len) + ", expected " +
                               std::to_string(cfg.output_len));
  }
  return a;
}

std::size_t param_count(const Architecture& a) {
  const std::size_t k = a.kernel;
  std::size_t total = 0;
  for (const auto& c : a.contract) {
    total += c.in_channels * c.channels * k + c.channels + 2 * c.channels;
    total += c.channels * c.channels * k + c.channels + 2 * c.channels;
    if (c.projector) total += c.in_channels * c.channels + c.channels;
  }
  total += a.bottleneck_channels * a.bottleneck_channels * k + a.bottleneck_channels + 2 * a.bottleneck_channels;
  for (const auto& e : a.expand) {
    total += e.in_channels * e.channels * k + e.channels;
    total += (e.channels + e.skip_channels) * e.channels * k + e.channels + 2 * e.channels;
  }
  total += a.expand.back().channels + 1;
  return total;
}

std::string model_summary(const ModelConfig& cfg) {
  const auto a = resolve_architecture(cfg);
  std::ostringstream out;
  out << "input            1 x " << cfg.input_len << '\n';
  for (std::size_t i = 0; i < a.contract.size(); ++i) {
    const auto& c = a.contract[i];
    out << "contract " << i + 1 << (i + 1 < 10 ? "       " : "      ") << c.channels << " x " << c.length << " -> "
        << c.length / 2 << (c.projector ? "  (projected skip)" : "") << '\n';
  }
  out << "bottleneck       " << a.bottleneck_channels << " x " << a.bottleneck_length << '\n';
  for (std::size_t j = 0; j < a.expand.size(); ++j) {
    const auto& e = a.expand[j];
    out << "expand " << j + 1 << (j + 1 < 10 ? "         " : "        ") << e.channels << " x " << e.length
        << "  stride " << e.stride << "  skip contract " << e.skip_block + 1 << " pooled /" << e.skip_pool << '\n';
  }
  if (a.head_pool > 1) out << "head pool        /" << a.head_pool << '\n';
  out << "output           1 x " << a.output_len << '\n';
  out << "doubling schedule:";
  for (const auto& e : a.expand) out << ' ' << e.stride;
  out << "  (" << a.doublings() << " doublings, " << a.bottleneck_length << " -> "
      << a.bottleneck_length << " x 2^" << a.doublings() << (a.head_pool > 1 ? " / " + std::to_string(a.head_pool) : "")
      << " = " << a.output_len << ")\n";
  out << "trainable parameters: " << param_count(a) << '\n';
  return out.str();
}

template <typename T>
HookNet<T>::HookNet(const ModelConfig& cfg) : cfg_(cfg), arch_(resolve_architecture(cfg)) {
  act_.slope = cfg.activation == ActivationKind::Relu ? T(0) : T(0.01);
  const std::size_t k = arch_.kernel;
  for (std::size_t i = 0; i < arch_.contract.size(); ++i) {
    const auto& g = arch_.contract[i];
    const std::string p = "contract." + std::to_string(i + 1);
    ContractBlock b;
    b.conv1 = Conv1d<T>(p + ".conv1", g.in_channels, g.channels, k);
    b.bn1 = BatchNorm<T>(p + ".bn1", g.channels);
    b.conv2 = Conv1d<T>(p + ".conv2", g.channels, g.channels, k);
    b.bn2 = BatchNorm<T>(p + ".bn2", g.channels);
    if (g.projector) b.proj = Conv1d<T>(p + ".skip", g.in_channels, g.channels, 1);
    b.pool = MaxPool<T>(2);
    contract_.push_back(std::move(b));
  }
  bottleneck_conv_ = Conv1d<T>("bottleneck.conv", arch_.bottleneck_channels, arch_.bottleneck_channels, k);
  bottleneck_bn_ = BatchNorm<T>("bottleneck.bn", arch_.bottleneck_channels);
  for (std::size_t j = 0; j < arch_.expand.size(); ++j) {
    const auto& g = arch_.expand[j];
    const std::string p = "expand." + std::to_string(j + 1);
    ExpandBlock b;
    b.up = ConvTranspose1d<T>(p + ".up", g.in_channels, g.channels, k, g.stride);
    b.skip_pool = MaxPool<T>(g.skip_pool);
    b.conv = Conv1d<T>(p + ".conv", g.channels + g.skip_channels, g.channels, k);
    b.bn = BatchNorm<T>(p + ".bn", g.channels);
    expand_.push_back(std::move(b));
  }
  head_pool_ = MaxPool<T>(arch_.head_pool);
  head_ = Conv1d<T>("head.conv", arch_.expand.back().channels, 1, 1);

  const auto seed = cfg.rng_seed;
  for (auto& b : contract_) {
    b.conv1.init(seed);
    b.conv2.init(seed);
    if (b.proj) b.proj->init(seed);
  }
  bottleneck_conv_.init(seed);
  for (auto& b : expand_) {
    b.up.init(seed);
    b.conv.init(seed);
  }
  head_.init(seed);
  head_.bias.value[0] = static_cast<T>(logit(cfg.output_bias_init_prior));
}

template <typename T>
std::vector<Param<T>*> HookNet<T>::parameters() {
  std::vector<Param<T>*> ps;
  for (auto& b : contract_) {
    for (auto* p : {&b.conv1.weight, &b.conv1.bias, &b.bn1.gamma, &b.bn1.beta, &b.conv2.weight, &b.conv2.bias,
                    &b.bn2.gamma, &b.bn2.beta}) {
      ps.push_back(p);
    }
    if (b.proj) {
      ps.push_back(&b.proj->weight);
      ps.push_back(&b.proj->bias);
    }
  }
  for (auto* p : {&bottleneck_conv_.weight, &bottleneck_conv_.bias, &bottleneck_bn_.gamma, &bottleneck_bn_.beta}) {
    ps.push_back(p);
  }
  for (auto& b : expand_) {
    for (auto* p : {&b.up.weight, &b.up.bias, &b.conv.weight, &b.conv.bias, &b.bn.gamma, &b.bn.beta}) ps.push_back(p);
  }
  ps.push_back(&head_.weight);
  ps.push_back(&head_.bias);
  return ps;
}

template <typename T>
std::vector<BatchNorm<T>*> HookNet<T>::batchnorms() {
  std::vector<BatchNorm<T>*> out;
  for (auto& b : contract_) {
    out.push_back(&b.bn1);
    out.push_back(&b.bn2);
  }
  out.push_back(&bottleneck_bn_);
  for (auto& b : expand_) out.push_back(&b.bn);
  return out;
}

template <typename T>
std::vector<Param<T>*> HookNet<T>::buffers() {
  std::vector<Param<T>*> out;
  for (auto* bn : batchnorms()) {
    out.push_back(&bn->running_mean);
    out.push_back(&bn->running_var);
  }
  return out;
}

template <typename T>
std::size_t HookNet<T>::param_count() const {
  std::size_t n = 0;
  for (auto* p : const_cast<HookNet*>(this)->parameters()) n += p->size();
  return n;
}

template <typename T>
void HookNet<T>::zero_grad() {
  for (auto* p : parameters()) std::fill(p->grad.begin(), p->grad.end(), T(0));
}

template <typename T>
Tensor<T> HookNet<T>::forward(const Tensor<T>& x, bool train) {
  return forward_impl(x, train, false);
}

template <typename T>
void HookNet<T>::freeze_batchnorm(const Tensor<T>& x) {
  forward_impl(x, true, true);
}

template <typename T>
Tensor<T> HookNet<T>::forward_impl(const Tensor<T>& x, bool train, bool freeze) {
  if (x.channels != 1 || x.length != cfg_.input_len) {
    throw UsageError("nn", "input must have shape (batch, " + std::to_string(cfg_.input_len) + ", 1)");
  }
  auto norm = [&](BatchNorm<T>& bn, const Tensor<T>& v) {
    auto y = bn.forward(v, train);
    if (freeze) bn.freeze_to(v);
    return y;
  };
  Tensor<T> h = x;
  for (std::size_t i = 0; i < contract_.size(); ++i) {
    auto& b = contract_[i];
    b.in = std::move(h);
    b.a1 = act_.forward(norm(b.bn1, b.conv1.forward(b.in)));
    b.a2 = act_.forward(norm(b.bn2, b.conv2.forward(b.a1)));
    b.sum = b.a2;
    add_into(b.sum, b.proj ? b.proj->forward(b.in) : b.in);
    h = b.pool.forward(b.sum);
    check(h, "contracting block " + std::to_string(i + 1));
  }
  bottleneck_in_ = std::move(h);
  bottleneck_a_ = act_.forward(norm(bottleneck_bn_, bottleneck_conv_.forward(bottleneck_in_)));
  h = bottleneck_a_;
  check(h, "bottleneck");
  for (std::size_t j = 0; j < expand_.size(); ++j) {
    auto& b = expand_[j];
    b.in = std::move(h);
    const auto up = b.up.forward(b.in);
    b.cat = concat_channels(up, b.skip_pool.forward(contract_[arch_.expand[j].skip_block].sum));
    b.a = act_.forward(norm(b.bn, b.conv.forward(b.cat)));
    h = b.a;
    check(h, "expanding block " + std::to_string(j + 1));
  }
  head_in_ = arch_.head_pool > 1 ? head_pool_.forward(h) : h;
  prob_ = head_.forward(head_in_);
  for (auto& v : prob_.data) v = T(1) / (T(1) + std::exp(-v));
  check(prob_, "output");
  return prob_;
}

template <typename T>
Tensor<T> HookNet<T>::backward(const Tensor<T>& dprob) {
  if (!dprob.same_shape(prob_)) throw UsageError("nn", "gradient shape does not match the last forward pass");
  Tensor<T> dz = dprob;
  for (std::size_t i = 0; i < dz.data.size(); ++i) dz.data[i] *= prob_.data[i] * (T(1) - prob_.data[i]);
  Tensor<T> dh = head_.backward(head_in_, dz);
  if (arch_.head_pool > 1) dh = head_pool_.backward(dh);

  std::vector<Tensor<T>> dskip(contract_.size());
  for (std::size_t j = expand_.size(); j-- > 0;) {
    auto& b = expand_[j];
    const auto dcat = b.conv.backward(b.cat, b.bn.backward(act_.backward(b.a, dh)));
    Tensor<T> dup, dsk;
    split_channels(dcat, b.up.out_channels(), dup, dsk);
    const std::size_t s = arch_.expand[j].skip_block;
    auto dsum = b.skip_pool.backward(dsk);
    if (dskip[s].data.empty()) {
      dskip[s] = std::move(dsum);
    } else {
      add_into(dskip[s], dsum);
    }
    dh = b.up.backward(b.in, dup);
  }
  dh = bottleneck_conv_.backward(bottleneck_in_, bottleneck_bn_.backward(act_.backward(bottleneck_a_, dh)));
  for (std::size_t i = contract_.size(); i-- > 0;) {
    auto& b = contract_[i];
    Tensor<T> ds = b.pool.backward(dh);
    if (!dskip[i].data.empty()) add_into(ds, dskip[i]);
    Tensor<T> dx = b.proj ? b.proj->backward(b.in, ds) : ds;
    const auto da1 = b.conv2.backward(b.a1, b.bn2.backward(act_.backward(b.a2, ds)));
    add_into(dx, b.conv1.backward(b.in, b.bn1.backward(act_.backward(b.a1, da1))));
    dh = std::move(dx);
  }
  return dh;
}

template class HookNet<float>;
template class HookNet<double>;

}  // namespace defectkit::nn
