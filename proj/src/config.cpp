// SPDX-License-Identifier: Apache-2.0

#include "defectkit/config.hpp"

#include <fstream>

#include "defectkit/error.hpp"

namespace defectkit {

namespace fs = std::filesystem;
using nlohmann::json;

void ToolkitConfig::propagate_seed() {
  click.rng_seed = seed;
  corruption.rng_seed = seed;
  model.rng_seed = seed;
  train.rng_seed = seed;
}

void ToolkitConfig::validate() const {
  if (jobs < 1) throw UsageError("config", "jobs must be at least 1");
  if (max_segments < 1) throw UsageError("config", "max_segments must be at least 1");
  if (adapters.postprocessor_dialect != "ffmpeg" && adapters.postprocessor_dialect != "sox") {
    throw UsageError("config", "adapters.postprocessor_dialect must be \"ffmpeg\" or \"sox\"");
  }
  click.validate();
  corruption.validate();
  glitch_target.validate();
  train.validate();
  baseline.validate();
  nn::resolve_architecture(model);
}

namespace {

json without_seed(json j) {
  j.erase("rng_seed");
  return j;
}

json adapter_json(const AdapterSetting& a) { return {{"command", a.command}, {"probe", a.probe}}; }

AdapterSetting adapter_from_json(const json& j) {
  return {j.at("command").get<std::string>(), j.at("probe").get<std::string>()};
}

void check_keys(const json& patch, const json& schema, const std::string& where) {
  if (!patch.is_object()) {
    throw UsageError("config", where.empty() ? "configuration must be a JSON object" : "'" + where + "' must be an object");
  }
  for (const auto& [key, value] : patch.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!schema.contains(key)) throw UsageError("config", "unknown key '" + path + "'");
    if (schema[key].is_object() && !value.is_null()) check_keys(value, schema[key], path);
  }
}

ClickConfig click_from_json(const json& j) {
  ClickConfig c;
  c.p_click = j.at("p_click").get<double>();
  c.min_offset = j.at("min_offset").get<double>();
  c.max_offset = j.at("max_offset").get<double>();
  c.min_len = j.at("min_len").get<int>();
  c.max_len = j.at("max_len").get<int>();
  return c;
}

mp3::CorruptionConfig corruption_from_json(const json& j) {
  mp3::CorruptionConfig c;
  c.p_glitch = j.at("p_glitch").get<double>();
  c.overwrite_mean = j.at("overwrite_mean").get<double>();
  c.overwrite_std = j.at("overwrite_std").get<double>();
  return c;
}

json merged(const std::optional<fs::path>& file, const json& overrides) {
  json doc = to_json(ToolkitConfig{});
  if (file) {
    std::ifstream in(*file);
    if (!in) throw UsageError("config", "cannot read config file " + file->string());
    json patch;
    try {
      patch = json::parse(in);
    } catch (const json::parse_error& e) {
      throw UsageError("config", file->string() + ": " + e.what());
    }
    check_keys(patch, doc, "");
    doc.merge_patch(patch);
  }
  if (!overrides.is_null()) {
    check_keys(overrides, doc, "");
    doc.merge_patch(overrides);
  }
  return doc;
}

}  // namespace

json to_json(const ToolkitConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["jobs"] = c.jobs;
  j["paths"] = {{"corpus", c.paths.corpus},
                {"dataset", c.paths.dataset},
                {"checkpoints", c.paths.checkpoints},
                {"reports", c.paths.reports}};
  j["adapters"] = {{"encoder", adapter_json(c.adapters.encoder)},
                   {"decoder", adapter_json(c.adapters.decoder)},
                   {"postprocessor", adapter_json(c.adapters.postprocessor)},
                   {"postprocessor_dialect", c.adapters.postprocessor_dialect}};
  j["click"] = without_seed(to_json(c.click));
  j["corruption"] = without_seed(mp3::to_json(c.corruption));
  j["glitch_target"] = to_json(c.glitch_target);
  j["model"] = without_seed(nn::to_json(c.model));
  j["train"] = without_seed(nn::to_json(c.train));
  j["baseline"] = to_json(c.baseline);
  j["ratios"] = {{"train", c.ratios.train}, {"val", c.ratios.val}, {"test", c.ratios.test}};
  j["max_segments"] = c.max_segments;
  j["postprocess"] = c.postprocess;
  j["synthetic"] = {{"train_segments", c.synthetic.train_segments}, {"val_segments", c.synthetic.val_segments}};
  return j;
}

ToolkitConfig toolkit_config_from_json(const json& patch) {
  const json j = merged(std::nullopt, patch);
  ToolkitConfig c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.jobs = j.at("jobs").get<int>();
    const auto& p = j.at("paths");
    c.paths = {p.at("corpus").get<std::string>(), p.at("dataset").get<std::string>(),
               p.at("checkpoints").get<std::string>(), p.at("reports").get<std::string>()};
    const auto& a = j.at("adapters");
    c.adapters.encoder = adapter_from_json(a.at("encoder"));
    c.adapters.decoder = adapter_from_json(a.at("decoder"));
    c.adapters.postprocessor = adapter_from_json(a.at("postprocessor"));
    c.adapters.postprocessor_dialect = a.at("postprocessor_dialect").get<std::string>();
    c.click = click_from_json(j.at("click"));
    c.corruption = corruption_from_json(j.at("corruption"));
    c.glitch_target.threshold_tau = j.at("glitch_target").at("threshold_tau").get<double>();
    c.glitch_target.epsilon_floor = j.at("glitch_target").at("epsilon_floor").get<double>();
    c.model = nn::model_config_from_json(j.at("model"));
    c.train = nn::train_config_from_json(j.at("train"));
    c.baseline = baseline_config_from_json(j.at("baseline"));
    const auto& r = j.at("ratios");
    c.ratios = {r.at("train").get<double>(), r.at("val").get<double>(), r.at("test").get<double>()};
    c.max_segments = j.at("max_segments").get<std::size_t>();
    c.postprocess = j.at("postprocess").get<bool>();
    c.synthetic.train_segments = j.at("synthetic").at("train_segments").get<std::size_t>();
    c.synthetic.val_segments = j.at("synthetic").at("val_segments").get<std::size_t>();
  } catch (const json::exception& e) {
    throw UsageError("config", std::string("invalid value: ") + e.what());
  }
  c.propagate_seed();
  c.validate();
  return c;
}

ToolkitConfig resolve_config(const std::optional<fs::path>& file, const json& overrides) {
  return toolkit_config_from_json(merged(file, overrides));
}

void write_config_snapshot(const ToolkitConfig& c, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream out(dir / kConfigSnapshotName, std::ios::trunc);
  out << to_json(c).dump(2) << '\n';
  if (!out) throw DataError("config", "cannot write " + (dir / kConfigSnapshotName).string());
}

namespace {

AdapterConfig adapter(const AdapterSetting& s, const std::string& role, AdapterConfig fallback) {
  if (s.command.empty()) return fallback;
  AdapterConfig cfg;
  cfg.command = CommandTemplate(apply_env_override(role, s.command));
  cfg.probe = CommandTemplate(s.probe);
  return cfg;
}

}  // namespace

AdapterConfig encoder_adapter(const ToolkitConfig& c) {
  return adapter(c.adapters.encoder, "ENCODER", default_encoder());
}

AdapterConfig decoder_adapter(const ToolkitConfig& c) {
  return adapter(c.adapters.decoder, "DECODER", default_decoder());
}

AdapterConfig postprocessor_adapter(const ToolkitConfig& c) {
  return adapter(c.adapters.postprocessor, "POSTPROCESSOR", default_postprocessor());
}

EffectDialect postprocessor_dialect(const ToolkitConfig& c) {
  return c.adapters.postprocessor_dialect == "sox" ? EffectDialect::Sox : EffectDialect::Ffmpeg;
}

}  // namespace defectkit
