// Copyright (c) 2026 The attr-eval Authors
// SPDX-License-Identifier: Apache-2.0

#include "attreval/pipeline.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "attreval/error.hpp"
#include "attreval/image_io.hpp"
#include "attreval/parallel.hpp"
#include "attreval/rng.hpp"
#include "attreval/stats.hpp"
#include "attreval/tensor_file.hpp"

namespace attreval {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Config

namespace {

// Walks a JSON object and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where_ + "." + key + " has the wrong type");
    }
  }

  const json& at(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string path(const std::string& key) const { return where_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key " + where_ + "." + it.key());
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void get_size(ObjectReader& r, const std::string& key, std::size_t& out) {
  if (!r.has(key)) return;
  const json& v = r.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError(r.path(key) + " must be a nonnegative integer");
  out = v.get<std::size_t>();
}

void get_double(ObjectReader& r, const std::string& key, double& out) {
  if (!r.has(key)) return;
  const json& v = r.at(key);
  if (!v.is_number()) throw ConfigError(r.path(key) + " must be a number");
  out = v.get<double>();
}

void get_seed(ObjectReader& r, const std::string& key, std::uint64_t& out) {
  if (!r.has(key)) return;
  const json& v = r.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
    throw ConfigError(r.path(key) + " must be a nonnegative integer");
  }
  out = v.get<std::uint64_t>();
}

}  // namespace

ExperimentConfig parse_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  ObjectReader r(root, "config");
  r.get("output_dir", c.output_dir);
  get_seed(r, "seed", c.seed);
  c.dataset.synthetic.seed = c.seed;
  c.train.seed = c.seed;

  if (r.has("dataset")) {
    ObjectReader d(r.at("dataset"), "config.dataset");
    d.get("source", c.dataset.source);
    d.get("manifest", c.dataset.manifest);
    if (d.has("synthetic")) {
      ObjectReader s(d.at("synthetic"), "config.dataset.synthetic");
      SyntheticConfig& sc = c.dataset.synthetic;
      get_size(s, "diseased", sc.diseased);
      get_size(s, "healthy", sc.healthy);
      get_size(s, "side", sc.side);
      get_size(s, "blobs_min", sc.blobs_min);
      get_size(s, "blobs_max", sc.blobs_max);
      get_double(s, "blob_radius_min", sc.blob_radius_min);
      get_double(s, "blob_radius_max", sc.blob_radius_max);
      get_double(s, "background_level", sc.background_level);
      get_double(s, "lung_level", sc.lung_level);
      get_double(s, "blob_level", sc.blob_level);
      get_double(s, "noise", sc.noise);
      get_seed(s, "seed", sc.seed);
      s.finish();
    }
    if (d.has("preprocess")) {
      ObjectReader p(d.at("preprocess"), "config.dataset.preprocess");
      get_size(p, "height", c.dataset.preprocess.height);
      get_size(p, "width", c.dataset.preprocess.width);
      get_double(p, "mean", c.dataset.preprocess.mean);
      get_double(p, "std", c.dataset.preprocess.std);
      p.finish();
    }
    if (d.has("split")) {
      ObjectReader p(d.at("split"), "config.dataset.split");
      get_double(p, "train", c.dataset.split.train);
      get_double(p, "val", c.dataset.split.val);
      get_double(p, "test", c.dataset.split.test);
      p.finish();
    }
    d.finish();
  }

  if (r.has("models")) {
    const json& m = r.at("models");
    if (!m.is_array()) throw ConfigError("config.models must be an array of model names");
    for (const json& v : m) {
      if (!v.is_string()) throw ConfigError("config.models must be an array of model names");
      c.models.push_back(v.get<std::string>());
    }
  } else {
    c.models = mini_family();
  }

  if (r.has("train")) {
    ObjectReader t(r.at("train"), "config.train");
    get_double(t, "learning_rate", c.train.learning_rate);
    get_double(t, "momentum", c.train.momentum);
    get_size(t, "batch_size", c.train.batch_size);
    get_size(t, "epochs", c.train.epochs);
    t.get("shuffle", c.train.shuffle);
    t.finish();
  }

  if (r.has("methods")) {
    const json& m = r.at("methods");
    if (!m.is_array()) throw ConfigError("config.methods must be an array of method names");
    for (const json& v : m) {
      if (!v.is_string()) throw ConfigError("config.methods must be an array of method names");
      c.methods.push_back(parse_method(v.get<std::string>()));
    }
  } else {
    c.methods = all_methods();
  }

  if (r.has("attribution")) {
    ObjectReader a(r.at("attribution"), "config.attribution");
    AttributionSettings& s = c.attribution;
    a.get("target", s.target);
    get_size(a, "ig_steps", s.ig_steps);
    get_double(a, "ig_tolerance", s.ig_tolerance);
    get_size(a, "gs_samples", s.gs_samples);
    get_double(a, "gs_sigma", s.gs_sigma);
    get_size(a, "gs_train_baselines", s.gs_train_baselines);
    get_size(a, "chunk", s.chunk);
    a.finish();
  }
  if (r.has("metrics")) {
    ObjectReader m(r.at("metrics"), "config.metrics");
    m.get("rra_magnitude", c.metrics.rra_magnitude);
    m.finish();
  }
  get_double(r, "alpha", c.alpha);
  r.finish();

  // Consistency.
  if (c.output_dir.empty()) throw ConfigError("config.output_dir must not be empty");
  if (c.dataset.source != "synthetic" && c.dataset.source != "manifest") {
    throw ConfigError("config.dataset.source must be \"synthetic\" or \"manifest\", got \"" + c.dataset.source + "\"");
  }
  if (c.dataset.source == "manifest" && c.dataset.manifest.empty()) {
    throw ConfigError("config.dataset.manifest is required when source is \"manifest\"");
  }
  if (c.models.empty()) throw ConfigError("config.models must name at least one model");
  std::set<std::string> names;
  for (const std::string& m : c.models) {
    spec_by_name(m);
    if (!names.insert(m).second) throw ConfigError("model '" + m + "' is listed twice");
  }
  if (c.methods.empty()) throw ConfigError("config.methods must name at least one method");
  std::set<Method> methods(c.methods.begin(), c.methods.end());
  if (methods.size() != c.methods.size()) throw ConfigError("config.methods lists a method twice");
  validate(c.train);
  if (c.attribution.target != "true" && c.attribution.target != "predicted") {
    throw ConfigError("config.attribution.target must be \"true\" or \"predicted\"");
  }
  if (c.attribution.ig_steps == 0) throw ConfigError("config.attribution.ig_steps must be at least 1");
  if (c.attribution.gs_samples == 0) throw ConfigError("config.attribution.gs_samples must be at least 1");
  if (!(c.attribution.gs_sigma >= 0.0)) throw ConfigError("config.attribution.gs_sigma must be nonnegative");
  if (c.attribution.chunk == 0) throw ConfigError("config.attribution.chunk must be at least 1");
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw ConfigError("config.alpha must lie in (0, 1)");
  if (!(c.dataset.preprocess.std > 0.0)) throw ConfigError("config.dataset.preprocess.std must be positive");
  const SplitFractions& f = c.dataset.split;
  if (!(f.train > 0.0 && f.val >= 0.0 && f.test > 0.0) || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw ConfigError("config.dataset.split fractions must be positive and sum to 1");
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  ExperimentConfig c = parse_config(ss.str());
  // Relative paths resolve against the config file's directory.
  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && fs::path(p).is_relative() && !base.empty()) p = (base / p).lexically_normal().string();
  };
  resolve(c.output_dir);
  resolve(c.dataset.manifest);
  return c;
}

namespace {

json to_json(const ExperimentConfig& c) {
  const SyntheticConfig& s = c.dataset.synthetic;
  json methods = json::array();
  for (Method m : c.methods) methods.push_back(std::string(method_name(m)));
  return json{
      {"seed", c.seed},
      {"dataset",
       {{"source", c.dataset.source},
        {"manifest", c.dataset.manifest},
        {"synthetic",
         {{"diseased", s.diseased},
          {"healthy", s.healthy},
          {"side", s.side},
          {"blobs_min", s.blobs_min},
          {"blobs_max", s.blobs_max},
          {"blob_radius_min", s.blob_radius_min},
          {"blob_radius_max", s.blob_radius_max},
          {"background_level", s.background_level},
          {"lung_level", s.lung_level},
          {"blob_level", s.blob_level},
          {"noise", s.noise},
          {"seed", s.seed}}},
        {"preprocess",
         {{"height", c.dataset.preprocess.height},
          {"width", c.dataset.preprocess.width},
          {"mean", c.dataset.preprocess.mean},
          {"std", c.dataset.preprocess.std}}},
        {"split",
         {{"train", c.dataset.split.train}, {"val", c.dataset.split.val}, {"test", c.dataset.split.test}}}}},
      {"models", c.models},
      {"train",
       {{"learning_rate", c.train.learning_rate},
        {"momentum", c.train.momentum},
        {"batch_size", c.train.batch_size},
        {"epochs", c.train.epochs},
        {"shuffle", c.train.shuffle}}},
      {"methods", methods},
      {"attribution",
       {{"target", c.attribution.target},
        {"ig_steps", c.attribution.ig_steps},
        {"ig_tolerance", c.attribution.ig_tolerance},
        {"gs_samples", c.attribution.gs_samples},
        {"gs_sigma", c.attribution.gs_sigma},
        {"gs_train_baselines", c.attribution.gs_train_baselines},
        {"chunk", c.attribution.chunk}}},
      {"metrics", {{"rra_magnitude", c.metrics.rra_magnitude}}},
      {"alpha", c.alpha},
  };
}

}  // namespace

// output_dir is left out so that relocating a run does not change its hash.
std::string config_json(const ExperimentConfig& config) { return to_json(config).dump(2); }

std::string config_hash(const ExperimentConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, fnv1a64(config_json(config)));
  return buf;
}

ExperimentPaths paths(const ExperimentConfig& config) { return ExperimentPaths{config.output_dir}; }

// ---------------------------------------------------------------------------
// Files

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
  ensure_dir(fs::path(path).parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path + "'");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string provenance_line(const ExperimentConfig& c) {
  return "# attr-eval config_hash=" + config_hash(c) + " seed=" + std::to_string(c.seed) + "\n";
}

json provenance(const ExperimentConfig& c) { return json{{"config_hash", config_hash(c)}, {"seed", c.seed}}; }

std::string num(double v) {
  if (std::isnan(v)) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fixed(double v, int digits) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string grouped(std::size_t v) {
  std::string s = std::to_string(v);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

void require_file(const std::string& path, const std::string& hint) {
  if (!fs::exists(path)) throw StateError("missing '" + path + "'; " + hint);
}

GrayImage mask_image(const Mask& m) {
  GrayImage g{m.width, m.height, std::vector<std::uint8_t>(m.size())};
  for (std::size_t i = 0; i < m.size(); ++i) g.pixels[i] = m.bits[i] ? 255 : 0;
  return g;
}

}  // namespace

// ---------------------------------------------------------------------------
// Stages

void cmd_gen_data(const ExperimentConfig& config, std::ostream& log) {
  if (config.dataset.source != "synthetic") {
    throw ConfigError("gen-data only applies to the synthetic source; the manifest dataset is read in place");
  }
  const ExperimentPaths p = paths(config);
  const std::vector<RawSample> raw = generate_synthetic_raw(config.dataset.synthetic);
  ensure_dir(p.data_dir() + "/images");
  ensure_dir(p.data_dir() + "/masks");
  std::vector<ManifestRow> rows;
  rows.reserve(raw.size());
  for (const RawSample& s : raw) {
    const std::string image = "images/" + s.id + ".pgm";
    const std::string mask = "masks/" + s.id + ".pgm";
    write_pgm(p.data_dir() + "/" + image, s.image);
    write_pgm(p.data_dir() + "/" + mask, mask_image(s.mask));
    rows.push_back({image, mask, s.label});
  }
  write_manifest(p.manifest(), rows);
  write_text(p.data_dir() + "/provenance.json", provenance(config).dump(2) + "\n");
  log << "gen-data: wrote " << rows.size() << " samples (" << config.dataset.synthetic.diseased << " diseased, "
      << config.dataset.synthetic.healthy << " healthy) to " << p.data_dir() << "\n";
}

DatasetSplit load_experiment_data(const ExperimentConfig& config, std::ostream& log) {
  const std::string manifest_path =
      config.dataset.source == "synthetic" ? paths(config).manifest() : config.dataset.manifest;
  if (config.dataset.source == "synthetic") require_file(manifest_path, "run `attr-eval gen-data` first");
  const DatasetManifest manifest = read_manifest(manifest_path, config.dataset.preprocess);
  std::vector<std::string> warnings;
  const std::vector<Sample> samples = load_dataset(manifest, &warnings);
  for (const std::string& w : warnings) log << "warning: " << w << "\n";
  return split_dataset(samples, config.dataset.split, config.seed);
}

namespace {

std::vector<std::string> selected_models(const ExperimentConfig& config, const std::optional<std::string>& model) {
  if (!model) return config.models;
  if (std::find(config.models.begin(), config.models.end(), *model) == config.models.end()) {
    throw ConfigError("model '" + *model + "' is not part of the configured family");
  }
  return {*model};
}

json metrics_json(const TestMetrics& m) {
  return json{{"accuracy", m.accuracy},
              {"auc_roc", m.auc_roc},
              {"cross_entropy", m.cross_entropy},
              {"confusion", {{"tp", m.confusion.tp}, {"fp", m.confusion.fp}, {"tn", m.confusion.tn}, {"fn", m.confusion.fn}}}};
}

}  // namespace

void cmd_train(const ExperimentConfig& config, const std::optional<std::string>& model, std::ostream& log) {
  const ExperimentPaths p = paths(config);
  const DatasetSplit data = load_experiment_data(config, log);
  for (const std::string& name : selected_models(config, model)) {
    const ModelSpec spec = spec_by_name(name);
    Model net(spec, derive_seed(config.seed, {"init", name}));
    TrainConfig tc = config.train;
    tc.seed = derive_seed(config.seed, {"train", name});
    log << "train: " << name << " (" << count_parameters(net) << " parameters), " << data.train.size() << "/"
        << data.val.size() << "/" << data.test.size() << " train/val/test\n";
    TrainResult result = train(net, data.train, data.val, tc, [&](const EpochStats& s) {
      log << "  epoch " << s.epoch << "  train_loss " << fixed(s.train_loss, 4) << "  val_loss "
          << fixed(s.val_loss, 4) << "  val_acc " << fixed(s.val_acc, 3) << "\n";
      log.flush();
    });
    CheckpointMeta meta = result.best_meta;
    meta.seed = config.seed;
    ensure_dir(p.model_dir(name));
    save_checkpoint(p.checkpoint(name), net, meta);

    std::string epochs = provenance_line(config) + "epoch,train_loss,val_loss,val_accuracy\n";
    for (const EpochStats& s : result.history) {
      epochs += std::to_string(s.epoch) + "," + num(s.train_loss) + "," + num(s.val_loss) + "," + num(s.val_acc) + "\n";
    }
    write_text(p.model_dir(name) + "/epochs.csv", epochs);

    const TestMetrics m = evaluate(net, data.test);
    write_text(p.metrics(name), metrics_json(m).dump(2) + "\n");
    json prov = provenance(config);
    prov["model"] = name;
    prov["parameters"] = count_parameters(net);
    prov["best_epoch"] = result.best_epoch;
    prov["best_val_loss"] = result.best_meta.val_loss;
    write_text(p.model_dir(name) + "/provenance.json", prov.dump(2) + "\n");
    log << "  best epoch " << result.best_epoch << "; test accuracy " << fixed(m.accuracy, 4) << ", AUC "
        << fixed(m.auc_roc, 4) << ", cross-entropy " << fixed(m.cross_entropy, 4) << "\n";
  }
}

namespace {

std::vector<Tensor> gs_baselines(const ExperimentConfig& config, const DatasetSplit& data) {
  const Shape& shape = data.test.empty() ? data.train.front().image.shape : data.test.front().image.shape;
  std::vector<Tensor> out{black_image(shape, config.dataset.preprocess.mean, config.dataset.preprocess.std)};
  std::vector<std::size_t> idx(data.train.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(derive_seed(config.seed, {"gs-baselines"}));
  rng.shuffle(idx.begin(), idx.end());
  const std::size_t k = std::min(config.attribution.gs_train_baselines, idx.size());
  std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
  for (std::size_t i = 0; i < k; ++i) out.push_back(data.train[idx[i]].image);
  return out;
}

}  // namespace

void cmd_explain(const ExperimentConfig& config, const std::optional<std::string>& model,
                 const std::optional<std::string>& method, bool heatmaps, std::ostream& log) {
  const ExperimentPaths p = paths(config);
  std::vector<Method> methods = config.methods;
  if (method) {
    const Method m = parse_method(*method);
    if (std::find(methods.begin(), methods.end(), m) == methods.end()) {
      throw ConfigError("method '" + *method + "' is not enabled in the config");
    }
    methods = {m};
  }
  const std::vector<std::string> models = selected_models(config, model);
  for (const std::string& name : models) {
    require_file(p.checkpoint(name), "run `attr-eval train --model " + name + "` first");
  }
  const DatasetSplit data = load_experiment_data(config, log);
  const std::vector<Tensor> baselines = gs_baselines(config, data);
  const Tensor black =
      black_image(data.test.front().image.shape, config.dataset.preprocess.mean, config.dataset.preprocess.std);

  for (const std::string& name : models) {
    const LoadedCheckpoint ckpt = load_checkpoint(p.checkpoint(name));
    const Model& net = *ckpt.model;
    std::vector<int> targets(data.test.size());
    for (std::size_t i = 0; i < data.test.size(); ++i) {
      if (config.attribution.target == "true") {
        targets[i] = data.test[i].label;
      } else {
        const Tensor& x = data.test[i].image;
        const Tensor z = net.logits(Tensor({1, x.dim(0), x.dim(1), x.dim(2)}, x.data));
        targets[i] = z.data[1] > z.data[0] ? 1 : 0;
      }
    }
    ensure_dir(p.attribution_dir(name));
    for (Method m : methods) {
      std::vector<AttributionMap> maps(data.test.size());
      std::vector<IGResult> ig(data.test.size());
      parallel_for(data.test.size(), [&](std::size_t i) {
        const Sample& s = data.test[i];
        AttributionMap& out = maps[i];
        out.sample_id = s.id;
        out.model_id = name;
        out.method = m;
        out.class_index = targets[i];
        switch (m) {
          case Method::kSaliency:
            out.values = saliency(net, s.image, targets[i]);
            break;
          case Method::kIntegratedGradients: {
            IGConfig cfg;
            cfg.steps = config.attribution.ig_steps;
            cfg.baseline = black;
            cfg.chunk = config.attribution.chunk;
            ig[i] = integrated_gradients(net, s.image, targets[i], cfg);
            out.values = ig[i].values;
            break;
          }
          case Method::kGradientShap: {
            GSConfig cfg;
            cfg.samples = config.attribution.gs_samples;
            cfg.sigma = config.attribution.gs_sigma;
            cfg.baselines = baselines;
            cfg.seed = derive_seed(config.seed, {"gradient_shap", name, s.id});
            cfg.chunk = config.attribution.chunk;
            out.values = gradient_shap(net, s.image, targets[i], cfg);
            break;
          }
        }
      });
      save_attributions(p.attribution_file(name, m), maps, config.seed);

      if (m == Method::kIntegratedGradients) {
        std::string csv = provenance_line(config) +
                          "sample_id,class,score_delta,attribution_sum,gap,relative_gap,within_tolerance\n";
        std::size_t ok = 0;
        for (std::size_t i = 0; i < maps.size(); ++i) {
          double total = 0.0;
          for (double v : ig[i].values.data) total += v;
          const double rel = ig[i].score_delta != 0.0 ? ig[i].gap / std::abs(ig[i].score_delta)
                                                      : (ig[i].gap == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
          const bool within = ig[i].gap <= config.attribution.ig_tolerance * std::abs(ig[i].score_delta);
          ok += within ? 1 : 0;
          csv += maps[i].sample_id + "," + std::to_string(maps[i].class_index) + "," + num(ig[i].score_delta) + "," +
                 num(total) + "," + num(ig[i].gap) + "," + num(rel) + "," + (within ? "1" : "0") + "\n";
        }
        write_text(p.attribution_dir(name) + "/ig_completeness.csv", csv);
        log << "explain: " << name << " integrated_gradients completeness within tolerance for " << ok << "/"
            << maps.size() << " samples\n";
      }
      if (heatmaps) {
        const std::string dir = p.attribution_dir(name) + "/heatmaps/" + std::string(method_name(m));
        ensure_dir(dir);
        for (const AttributionMap& a : maps) write_heatmap(dir + "/" + a.sample_id + ".ppm", a.values);
      }
      log << "explain: " << name << " " << method_name(m) << " -> " << maps.size() << " maps\n";
    }
  }
}

MeanSd mean_sd(const std::vector<double>& values) {
  MeanSd r;
  r.n = values.size();
  if (values.empty()) {
    r.mean = r.sd = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  double sum = 0.0;
  for (double v : values) sum += v;
  r.mean = sum / static_cast<double>(r.n);
  if (r.n < 2) {
    r.sd = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  double ss = 0.0;
  for (double v : values) ss += (v - r.mean) * (v - r.mean);
  r.sd = std::sqrt(ss / static_cast<double>(r.n - 1));
  return r;
}

void cmd_evaluate(const ExperimentConfig& config, std::ostream& log) {
  const ExperimentPaths p = paths(config);
  for (const std::string& name : config.models) {
    for (Method m : config.methods) {
      require_file(p.attribution_file(name, m), "run `attr-eval explain --model " + name + "` first");
    }
  }
  const DatasetSplit data = load_experiment_data(config, log);
  std::map<std::string, const Sample*> by_id;
  for (const Sample& s : data.test) by_id[s.id] = &s;

  std::vector<EvalRecord> records;
  std::vector<std::string> errors;
  for (const std::string& name : config.models) {
    for (Method m : config.methods) {
      const std::vector<AttributionMap> maps = load_attributions(p.attribution_file(name, m));
      for (const AttributionMap& a : maps) {
        auto it = by_id.find(a.sample_id);
        if (it == by_id.end()) {
          errors.push_back(name + "/" + std::string(method_name(m)) + "/" + a.sample_id + ": not in the test split");
          continue;
        }
        const Sample& s = *it->second;
        if (a.values.rank() != 2 || a.values.dim(0) != s.mask.height || a.values.dim(1) != s.mask.width) {
          errors.push_back(name + "/" + std::string(method_name(m)) + "/" + a.sample_id + ": attribution " +
                           shape_string(a.values.shape) + " does not match mask " + std::to_string(s.mask.height) +
                           "x" + std::to_string(s.mask.width));
          continue;
        }
        EvalRecord r = score_map(a.values.data, s.mask, config.metrics);
        r.sample_id = s.id;
        r.model = name;
        r.method = std::string(method_name(m));
        r.label = s.label;
        records.push_back(std::move(r));
      }
    }
  }
  for (const std::string& e : errors) log << "evaluate: skipped " << e << "\n";

  std::string csv = provenance_line(config) + eval_records_csv_header() + "\n";
  for (const EvalRecord& r : records) csv += eval_record_csv_row(r) + "\n";
  write_text(p.records(), csv);

  // Mean (SD) per metric x class x method x model.
  std::string summary = provenance_line(config) + "metric,class,method,model,n,mean,sd\n";
  json degenerate = json::object();
  std::size_t degenerate_total = 0;
  for (const std::string& metric : {std::string("rra"), std::string("par"), std::string("rma")}) {
    for (int label : {kDiseased, kHealthy}) {
      for (Method m : config.methods) {
        for (const std::string& name : config.models) {
          std::vector<double> v;
          for (const EvalRecord& r : records) {
            if (r.model != name || r.method != method_name(m) || r.label != label) continue;
            v.push_back(metric == "rra" ? r.rra : metric == "par" ? r.par : r.rma);
          }
          const MeanSd ms = mean_sd(v);
          summary += metric + "," + class_name(label) + "," + std::string(method_name(m)) + "," + name + "," +
                     std::to_string(ms.n) + "," + num(ms.mean) + "," + num(ms.sd) + "\n";
        }
      }
    }
  }
  for (const std::string& name : config.models) {
    for (Method m : config.methods) {
      std::size_t n = 0, d = 0;
      for (const EvalRecord& r : records) {
        if (r.model != name || r.method != method_name(m)) continue;
        ++n;
        d += r.degenerate ? 1 : 0;
      }
      degenerate_total += d;
      degenerate[name][std::string(method_name(m))] = {{"count", d}, {"rate", n ? static_cast<double>(d) / static_cast<double>(n) : 0.0}};
    }
  }
  write_text(p.eval_dir() + "/summary.csv", summary);

  // Expected RRA of a uniformly random ranking: |GT| / N per sample.
  json random_rra = json::object();
  for (int label : {kDiseased, kHealthy}) {
    std::vector<double> v;
    for (const Sample& s : data.test) {
      if (s.label == label) v.push_back(static_cast<double>(s.mask.count()) / static_cast<double>(s.mask.size()));
    }
    random_rra[class_name(label)] = mean_sd(v).mean;
  }
  json j = provenance(config);
  j["records"] = records.size();
  j["expected_records"] = config.models.size() * config.methods.size() * data.test.size();
  j["record_errors"] = errors;
  j["degenerate"] = degenerate;
  j["degenerate_total"] = degenerate_total;
  j["degenerate_rate"] = records.empty() ? 0.0 : static_cast<double>(degenerate_total) / static_cast<double>(records.size());
  j["random_ranking_rra"] = random_rra;
  write_text(p.eval_dir() + "/summary.json", j.dump(2) + "\n");
  log << "evaluate: " << records.size() << " records, " << errors.size() << " record errors, degenerate rate "
      << fixed(j["degenerate_rate"].get<double>(), 4) << "\n";
}

void cmd_compare(const ExperimentConfig& config, std::ostream& log) {
  const ExperimentPaths p = paths(config);
  require_file(p.records(), "run `attr-eval evaluate` first");
  std::vector<EvalRecord> records = parse_eval_records_csv(read_text(p.records()));
  const std::set<std::string> wanted(config.models.begin(), config.models.end());
  std::erase_if(records, [&](const EvalRecord& r) { return !wanted.count(r.model); });
  std::set<std::string> present;
  for (const EvalRecord& r : records) present.insert(r.model);
  if (present.size() < 2) {
    throw StateError("compare needs records for at least two configured models in " + p.records());
  }
  const stats::ComparisonReport report = stats::compare_models(records, config.models, config.alpha);

  write_text(p.compare_dir() + "/omnibus.csv", provenance_line(config) + stats::omnibus_csv(report));
  write_text(p.compare_dir() + "/pairwise.csv", provenance_line(config) + stats::pairwise_csv(report));

  json cells = json::array();
  for (const stats::OmnibusCell& c : report.cells) {
    json cell{{"metric", c.metric}, {"class", class_name(c.label)}, {"method", c.method}, {"available", c.available}};
    if (c.available) {
      cell["H"] = c.kw.h;
      cell["df"] = c.kw.df;
      cell["p"] = c.kw.p;
      cell["significant"] = c.significant;
      std::size_t sig_pairs = 0;
      for (const stats::PairwiseResult& pr : c.pairs) sig_pairs += pr.significant ? 1 : 0;
      cell["significant_pairs"] = sig_pairs;
    } else {
      cell["note"] = c.note;
    }
    cells.push_back(cell);
  }
  json j = provenance(config);
  j["alpha"] = report.alpha;
  j["bonferroni_m"] = report.bonferroni_m;
  j["omnibus_rows"] = report.cells.size();
  j["available_cells"] = report.available_cells;
  j["significant_cells"] = report.significant_cells;
  j["cells"] = cells;
  write_text(p.compare_dir() + "/summary.json", j.dump(2) + "\n");
  log << "compare: " << report.significant_cells << " of " << report.cells.size()
      << " omnibus tests significant at alpha = " << report.alpha << "\n";
}

// ---------------------------------------------------------------------------
// Report

const std::vector<PublishedCount>& published_parameter_counts() {
  static const std::vector<PublishedCount> v{{18, 6139842}, {34, 12329218}, {50, 23532418}, {101, 42550658}};
  return v;
}

std::vector<ParameterRow> parameter_table() {
  std::vector<ParameterRow> rows;
  for (const PublishedCount& pc : published_parameter_counts()) {
    ParameterRow r;
    r.depth = pc.depth;
    r.canonical = count_parameters(resnet_spec(pc.depth, false));
    r.conv_bias = count_parameters(resnet_spec(pc.depth, true));
    r.published = pc.parameters;
    r.matches = r.conv_bias == r.published;
    if (!r.matches) {
      r.notice = "DISCREPANCY: computed " + grouped(r.canonical) + " (canonical) / " + grouped(r.conv_bias) +
                 " (with conv biases) vs published " + grouped(r.published);
    }
    rows.push_back(r);
  }
  return rows;
}

void cmd_report(const ExperimentConfig& config, std::ostream& log) {
  const ExperimentPaths p = paths(config);
  std::ostringstream md;
  md << "# attr-eval report\n\n";
  md << "config hash `" << config_hash(config) << "`, seed " << config.seed << "\n\n";

  md << "## Trainable parameters\n\n";
  md << "| Model | Canonical | With conv biases | Published | Status |\n|---|---:|---:|---:|---|\n";
  for (const ParameterRow& r : parameter_table()) {
    md << "| ResNet-" << r.depth << " | " << grouped(r.canonical) << " | " << grouped(r.conv_bias) << " | "
       << grouped(r.published) << " | " << (r.matches ? "match" : r.notice) << " |\n";
  }
  md << "\nExperiment family:\n\n| Model | Parameters |\n|---|---:|\n";
  for (const std::string& name : config.models) {
    md << "| " << name << " | " << grouped(count_parameters(spec_by_name(name))) << " |\n";
  }

  md << "\n## Test performance\n\n| Model | Accuracy | AUC-ROC | Cross-entropy |\n|---|---:|---:|---:|\n";
  for (const std::string& name : config.models) {
    if (!fs::exists(p.metrics(name))) {
      md << "| " << name << " | not trained | | |\n";
      continue;
    }
    const json m = json::parse(read_text(p.metrics(name)));
    md << "| " << name << " | " << fixed(m.at("accuracy").get<double>(), 4) << " | "
       << fixed(m.at("auc_roc").get<double>(), 4) << " | " << fixed(m.at("cross_entropy").get<double>(), 4) << " |\n";
  }

  const std::string summary_path = p.eval_dir() + "/summary.csv";
  if (fs::exists(summary_path)) {
    // metric,class,method,model,n,mean,sd
    std::map<std::string, std::pair<std::string, std::string>> cell;
    std::istringstream in(read_text(summary_path));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#' || line.rfind("metric,", 0) == 0) continue;
      std::vector<std::string> f;
      std::stringstream ls(line);
      std::string tok;
      while (std::getline(ls, tok, ',')) f.push_back(tok);
      if (f.size() != 7) continue;
      cell[f[0] + "|" + f[1] + "|" + f[2] + "|" + f[3]] = {f[5], f[6]};
    }
    auto fmt = [](const std::string& s) { return s == "NA" ? s : fixed(std::stod(s), 3); };
    for (const std::string& metric : {std::string("rra"), std::string("par")}) {
      md << "\n## " << (metric == "rra" ? "Relevance rank accuracy" : "Positive attribution ratio")
         << ": mean (SD)\n\n| Class | Method |";
      for (const std::string& name : config.models) md << " " << name << " |";
      md << "\n|---|---|";
      for (std::size_t i = 0; i < config.models.size(); ++i) md << "---|";
      md << "\n";
      for (int label : {kDiseased, kHealthy}) {
        for (Method m : config.methods) {
          md << "| " << class_name(label) << " | " << method_name(m) << " |";
          for (const std::string& name : config.models) {
            auto it = cell.find(metric + "|" + class_name(label) + "|" + std::string(method_name(m)) + "|" + name);
            if (it == cell.end()) {
              md << " n/a |";
            } else {
              md << " " << fmt(it->second.first) << " (" << fmt(it->second.second) << ") |";
            }
          }
          md << "\n";
        }
      }
    }
  }

  const std::string compare_path = p.compare_dir() + "/summary.json";
  if (fs::exists(compare_path)) {
    const json c = json::parse(read_text(compare_path));
    md << "\n## Kruskal-Wallis across models\n\n| Metric | Class | Method | H | p | Significant |\n|---|---|---|---:|---:|---|\n";
    for (const json& cell : c.at("cells")) {
      md << "| " << cell.at("metric").get<std::string>() << " | " << cell.at("class").get<std::string>() << " | "
         << cell.at("method").get<std::string>() << " | ";
      if (cell.at("available").get<bool>()) {
        md << fixed(cell.at("H").get<double>(), 2) << " | " << fixed(cell.at("p").get<double>(), 4) << " | "
           << (cell.at("significant").get<bool>() ? "yes" : "no") << " |\n";
      } else {
        md << "NA | NA | unavailable |\n";
      }
    }
    md << "\n" << c.at("significant_cells").get<std::size_t>() << " of " << c.at("omnibus_rows").get<std::size_t>()
       << " tests significant at alpha = " << c.at("alpha").get<double>() << " (pairwise Mann-Whitney U, Bonferroni m = "
       << c.at("bonferroni_m").get<std::size_t>() << ").\n";
  }

  write_text(p.report(), md.str());
  log << "report: wrote " << p.report() << "\n";
  for (const ParameterRow& r : parameter_table()) {
    if (!r.matches) log << "report: ResNet-" << r.depth << " " << r.notice << "\n";
  }
}

}  // namespace attreval
