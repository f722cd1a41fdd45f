// SPDX-License-Identifier: Apache-2.0

#include "defectkit/nn/train.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numbers>

#include "defectkit/dataset.hpp"
#include "defectkit/error.hpp"
#include "defectkit/rng.hpp"

namespace defectkit::nn {

double PlateauScheduler::update(double value) {
  if (value > best_) {
    best_ = value;
    wait_ = 0;
  } else if (++wait_ >= patience_) {
    lr_ *= factor_;
    wait_ = 0;
  }
  return lr_;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw UsageError("nn", "batch_size must be at least 1");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) throw UsageError("nn", "plateau_factor must lie in (0, 1)");
  if (plateau_patience < 1) throw UsageError("nn", "plateau_patience must be at least 1");
  if (!(learning_rate > 0.0)) throw UsageError("nn", "learning_rate must be positive");
  if (max_epochs < 1) throw UsageError("nn", "max_epochs must be at least 1");
  if (positive_class_weight && !(*positive_class_weight > 0.0)) {
    throw UsageError("nn", "positive_class_weight must be positive");
  }
}

double TrainConfig::resolved_positive_weight(double prior) const {
  return positive_class_weight ? *positive_class_weight : std::min(1.0 / prior, 1000.0);
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"adam_beta1", c.adam.beta1},
          {"adam_beta2", c.adam.beta2},
          {"adam_eps", c.adam.eps},
          {"plateau_factor", c.plateau_factor},
          {"plateau_patience", c.plateau_patience},
          {"max_epochs", c.max_epochs},
          {"positive_class_weight", c.positive_class_weight ? nlohmann::json(*c.positive_class_weight) : nlohmann::json()},
          {"decision_threshold", c.decision_threshold},
          {"stop_at_val_f1", c.stop_at_val_f1 ? nlohmann::json(*c.stop_at_val_f1) : nlohmann::json()},
          {"rng_seed", c.rng_seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.adam.beta1 = j.value("adam_beta1", c.adam.beta1);
  c.adam.beta2 = j.value("adam_beta2", c.adam.beta2);
  c.adam.eps = j.value("adam_eps", c.adam.eps);
  c.plateau_factor = j.value("plateau_factor", c.plateau_factor);
  c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  if (j.contains("positive_class_weight") && !j["positive_class_weight"].is_null()) {
    c.positive_class_weight = j["positive_class_weight"].get<double>();
  }
  c.decision_threshold = j.value("decision_threshold", c.decision_threshold);
  if (j.contains("stop_at_val_f1") && !j["stop_at_val_f1"].is_null()) c.stop_at_val_f1 = j["stop_at_val_f1"].get<double>();
  c.rng_seed = j.value("rng_seed", c.rng_seed);
  c.validate();
  return c;
}

DatasetSource::DatasetSource(const Dataset& ds, const std::string& split) : ds_(ds), split_(split) {
  ds_.records(split_);
}

std::size_t DatasetSource::size() const { return ds_.records(split_).size(); }

void DatasetSource::get(std::size_t i, std::span<float> samples, TargetVector& target) const {
  const auto& rec = ds_.records(split_).at(i);
  const auto seg = ds_.load_segment(rec);
  std::copy(seg.samples().begin(), seg.samples().end(), samples.begin());
  target = rec.target;
}

SyntheticClickSource::SyntheticClickSource(std::size_t count, std::uint64_t seed, ClickConfig click)
    : count_(count), seed_(seed), click_(click) {
  click_.validate();
}

void SyntheticClickSource::get(std::size_t i, std::span<float> samples, TargetVector& target) const {
  const std::uint64_t item = derive_seed(seed_, static_cast<std::uint64_t>(i));
  Rng rng(derive_seed(item, "carrier"));
  std::vector<float> x(kSegmentLength, 0.0f);
  const int tones = static_cast<int>(rng.uniform_int(1, 3));
  for (int k = 0; k < tones; ++k) {
    const double freq = std::exp(rng.uniform(std::log(60.0), std::log(6000.0)));
    const double amp = rng.uniform(0.05, 0.3);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double w = 2.0 * std::numbers::pi * freq / kDefaultSampleRate;
    for (std::size_t t = 0; t < x.size(); ++t) x[t] += static_cast<float>(amp * std::sin(w * t + phase));
  }
  const double noise = std::exp(rng.uniform(std::log(1e-3), std::log(3e-2)));
  for (auto& v : x) v += static_cast<float>(rng.normal(0.0, noise));
  float peak = 0.0f;
  for (float v : x) peak = std::max(peak, std::fabs(v));
  if (peak > 0.9f) {
    for (auto& v : x) v *= 0.9f / peak;
  }
  const auto clicked = synthesize_click_segment(Segment(std::move(x)), click_, item, 0, nullptr);
  std::copy(clicked.segment.samples().begin(), clicked.segment.samples().end(), samples.begin());
  target = click_target(clicked.event);
}

namespace {

constexpr char kMagic[8] = {'D', 'K', 'N', 'E', 'T', 'C', 'K', 'P'};

void put_u32(std::ostream& o, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  o.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError("nn", "checkpoint truncated");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

void put_array(std::ostream& o, const std::string& name, const std::vector<std::size_t>& shape,
               const std::vector<float>& data) {
  put_u32(o, static_cast<std::uint32_t>(name.size()));
  o.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(o, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) put_u32(o, static_cast<std::uint32_t>(d));
  for (float v : data) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(o, bits);
  }
}

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  nlohmann::json header = {{"model", to_json(c.model)},
                           {"train", to_json(c.train)},
                           {"epoch", c.epoch},
                           {"val_accuracy", c.val_accuracy},
                           {"lr", c.lr},
                           {"plateau_best", c.plateau_best},
                           {"plateau_wait", c.plateau_wait},
                           {"adam_steps", c.adam_steps}};
  const std::string text = header.dump();
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream o(tmp, std::ios::binary | std::ios::trunc);
    o.write(kMagic, sizeof kMagic);
    put_u32(o, kCheckpointVersion);
    put_u32(o, static_cast<std::uint32_t>(text.size()));
    o.write(text.data(), static_cast<std::streamsize>(text.size()));
    put_u32(o, static_cast<std::uint32_t>(c.weights.size() + c.adam_m.size() + c.adam_v.size()));
    for (const auto& [name, data] : c.weights) put_array(o, name, c.shapes.at(name), data);
    for (const auto& [name, data] : c.adam_m) put_array(o, "adam.m/" + name, c.shapes.at(name), data);
    for (const auto& [name, data] : c.adam_v) put_array(o, "adam.v/" + name, c.shapes.at(name), data);
    if (!o) throw DataError("nn", "cannot write checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("nn", "cannot read checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw DataError("nn", path.string() + " is not a checkpoint");
  }
  const auto version = get_u32(in);
  if (version != kCheckpointVersion) {
    throw DataError("nn", "checkpoint format version " + std::to_string(version) + " is not supported");
  }
  std::string text(get_u32(in), '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(text.size()))) throw DataError("nn", "checkpoint truncated");
  Checkpoint c;
  try {
    const auto h = nlohmann::json::parse(text);
    c.model = model_config_from_json(h.at("model"));
    c.train = train_config_from_json(h.at("train"));
    c.epoch = h.at("epoch").get<int>();
    c.val_accuracy = h.at("val_accuracy").get<double>();
    c.lr = h.at("lr").get<double>();
    c.plateau_best = h.at("plateau_best").get<double>();
    c.plateau_wait = h.at("plateau_wait").get<int>();
    c.adam_steps = h.at("adam_steps").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("nn", "malformed checkpoint header in " + path.string() + ": " + e.what());
  }
  const auto count = get_u32(in);
  for (std::uint32_t n = 0; n < count; ++n) {
    std::string name(get_u32(in), '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name.size()))) throw DataError("nn", "checkpoint truncated");
    std::vector<std::size_t> shape(get_u32(in));
    std::size_t total = 1;
    for (auto& d : shape) {
      d = get_u32(in);
      total *= d;
    }
    std::vector<float> data(total);
    for (auto& v : data) {
      const std::uint32_t bits = get_u32(in);
      std::memcpy(&v, &bits, 4);
    }
    if (name.rfind("adam.m/", 0) == 0) {
      c.adam_m[name.substr(7)] = std::move(data);
    } else if (name.rfind("adam.v/", 0) == 0) {
      c.adam_v[name.substr(7)] = std::move(data);
    } else {
      c.shapes[name] = shape;
      c.weights[name] = std::move(data);
    }
  }
  return c;
}

Checkpoint capture(HookNet<float>& model, const Adam<float>* adam) {
  Checkpoint c;
  c.model = model.config();
  auto all = model.parameters();
  const auto bufs = model.buffers();
  all.insert(all.end(), bufs.begin(), bufs.end());
  for (auto* p : all) {
    c.weights[p->name] = p->value;
    c.shapes[p->name] = p->shape;
  }
  if (adam) {
    auto& a = const_cast<Adam<float>&>(*adam);
    c.adam_m = a.first_moments();
    c.adam_v = a.second_moments();
    c.adam_steps = a.steps();
  }
  return c;
}

void restore(HookNet<float>& model, const Checkpoint& c) {
  auto all = model.parameters();
  const auto bufs = model.buffers();
  all.insert(all.end(), bufs.begin(), bufs.end());
  if (all.size() != c.weights.size()) {
    throw DataError("nn", "checkpoint holds " + std::to_string(c.weights.size()) + " arrays, model expects " +
                              std::to_string(all.size()));
  }
  for (auto* p : all) {
    const auto it = c.weights.find(p->name);
    if (it == c.weights.end()) throw DataError("nn", "checkpoint lacks " + p->name);
    if (c.shapes.at(p->name) != p->shape || it->second.size() != p->size()) {
      throw DataError("nn", "checkpoint array " + p->name + " has the wrong shape");
    }
    p->value = it->second;
  }
}

void restore(Adam<float>& adam, const Checkpoint& c) {
  adam.first_moments() = c.adam_m;
  adam.second_moments() = c.adam_v;
  adam.set_steps(c.adam_steps);
}

nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},           {"train_loss", r.train_loss}, {"val_accuracy", r.val.accuracy},
          {"val_precision", r.val.precision}, {"val_recall", r.val.recall}, {"val_f1", r.val.f1},
          {"lr", r.lr}};
}

TargetVector quantise(const TargetVector& prob, double threshold) {
  TargetVector out{};
  for (std::size_t i = 0; i < prob.size(); ++i) out[i] = prob[i] > threshold ? 1.0f : 0.0f;
  return out;
}

namespace {

void check_output_len(const HookNet<float>& model) {
  if (model.config().output_len != kTargetLength || model.config().input_len != kSegmentLength) {
    throw UsageError("nn", "training and prediction need input length " + std::to_string(kSegmentLength) +
                               " and output length " + std::to_string(kTargetLength));
  }
}

void fill_batch(const SegmentSource& src, const std::vector<std::size_t>& idx, Tensor<float>& x,
                Tensor<float>& t, std::vector<TargetVector>* targets) {
  x = Tensor<float>(idx.size(), 1, kSegmentLength);
  t = Tensor<float>(idx.size(), 1, kTargetLength);
  if (targets) targets->resize(idx.size());
  for (std::size_t b = 0; b < idx.size(); ++b) {
    TargetVector tv;
    src.get(idx[b], std::span<float>(x.row(b, 0), kSegmentLength), tv);
    std::copy(tv.begin(), tv.end(), t.row(b, 0));
    if (targets) (*targets)[b] = tv;
  }
}

Metrics validate_epoch(HookNet<float>& model, const SegmentSource& val, double threshold, std::size_t batch) {
  ConfusionCounts counts;
  Tensor<float> x, t;
  std::vector<TargetVector> targets;
  for (std::size_t start = 0; start < val.size(); start += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(val.size(), start + batch); ++i) idx.push_back(i);
    fill_batch(val, idx, x, t, &targets);
    const auto prob = model.forward(x, false);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      TargetVector p;
      std::copy(prob.row(b, 0), prob.row(b, 0) + kTargetLength, p.begin());
      counts.add(quantise(p, threshold), targets[b]);
    }
  }
  return metrics_from_counts(counts);
}

std::string epoch_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%03d.ckpt", epoch);
  return buf;
}

}  // namespace

TrainResult train(HookNet<float>& model, const SegmentSource& train_set, const SegmentSource& val_set,
                  const TrainConfig& cfg, const std::optional<std::filesystem::path>& out_dir,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  check_output_len(model);
  if (train_set.size() == 0) throw DataError("nn", "training split is empty");
  if (val_set.size() == 0) throw DataError("nn", "validation split is empty");

  const auto w_pos = static_cast<float>(cfg.resolved_positive_weight(model.config().output_bias_init_prior));
  Adam<float> adam(cfg.adam);
  PlateauScheduler sched(cfg.learning_rate, cfg.plateau_factor, cfg.plateau_patience);
  const std::size_t eval_batch = std::min<std::size_t>(cfg.batch_size, 64);
  sched.set_baseline(validate_epoch(model, val_set, cfg.decision_threshold, eval_batch).accuracy);

  std::ofstream log;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir / "checkpoints");
    log.open(*out_dir / "train_log.jsonl", std::ios::trunc);
  }

  TrainResult res;
  res.best_val_accuracy = -1.0;
  std::vector<std::size_t> order(train_set.size());
  Tensor<float> x, t;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double lr = sched.lr();
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle(derive_seed(cfg.rng_seed, "shuffle/" + std::to_string(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    }
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
      fill_batch(train_set, idx, x, t, nullptr);
      const auto prob = model.forward(x, true);
      const auto loss = weighted_rms_loss(prob, t, w_pos);
      if (!std::isfinite(loss.value)) {
        throw DataError("nn", "non-finite loss in epoch " + std::to_string(epoch) + ", batch " +
                                  std::to_string(batches + 1) + " (learning rate " + std::to_string(lr) + ")");
      }
      model.zero_grad();
      model.backward(loss.grad);
      adam.step(model.parameters(), lr);
      loss_sum += loss.value;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.val = validate_epoch(model, val_set, cfg.decision_threshold, eval_batch);
    rec.lr = lr;
    sched.update(rec.val.accuracy);
    res.history.push_back(rec);

    const bool best = rec.val.accuracy > res.best_val_accuracy;
    if (best) {
      res.best_val_accuracy = rec.val.accuracy;
      res.best_epoch = epoch;
    }
    if (out_dir) {
      log << to_json(rec).dump() << '\n' << std::flush;
      auto ck = capture(model, &adam);
      ck.train = cfg;
      ck.epoch = epoch;
      ck.val_accuracy = rec.val.accuracy;
      ck.lr = sched.lr();
      ck.plateau_best = sched.best();
      ck.plateau_wait = sched.wait();
      save_checkpoint(ck, *out_dir / "checkpoints" / epoch_name(epoch));
      if (best) {
        save_checkpoint(ck, *out_dir / "best.ckpt");
        res.best_checkpoint = *out_dir / "best.ckpt";
      }
    }
    if (on_epoch) on_epoch(rec);
    if (cfg.stop_at_val_f1 && rec.val.f1 >= *cfg.stop_at_val_f1) break;
  }
  return res;
}

Prediction predict(HookNet<float>& model, const SegmentSource& src, double threshold, std::size_t batch_size) {
  check_output_len(model);
  Prediction out;
  Tensor<float> x, t;
  for (std::size_t start = 0; start < src.size(); start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(src.size(), start + batch_size); ++i) idx.push_back(i);
    fill_batch(src, idx, x, t, nullptr);
    const auto prob = model.forward(x, false);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      TargetVector p;
      std::copy(prob.row(b, 0), prob.row(b, 0) + kTargetLength, p.begin());
      out.binary.push_back(quantise(p, threshold));
      out.probability.push_back(p);
    }
  }
  return out;
}

}  // namespace defectkit::nn
