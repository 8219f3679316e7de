#include "utr/config.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <sstream>

namespace utr {

namespace {

template <typename T>
void read_key(const YAML::Node& section, const char* key, T& target) {
  if (!section || !section[key]) return;
  try {
    target = section[key].as<T>();
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

void reject_unknown(const YAML::Node& section, const std::string& name, std::initializer_list<const char*> keys) {
  if (!section) return;
  if (!section.IsMap()) throw ConfigError("section '" + name + "' must be a mapping");
  for (const auto& kv : section) {
    const auto k = kv.first.as<std::string>();
    bool known = false;
    for (const char* allowed : keys) known = known || k == allowed;
    if (!known) throw ConfigError("unknown key '" + name + "." + k + "'");
  }
}

}  // namespace

void TrainConfig::validate() {
  try {
    model.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  geometry.downsample = model.downsample();
  try {
    geometry.validate();
  } catch (const GeometryError& e) {
    throw ConfigError(std::string("geometry: ") + e.what());
  }
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (steps < 1) throw ConfigError("train.steps must be >= 1");
  if (checkpoint_interval < 0) throw ConfigError("train.checkpoint_interval must be >= 0");
  if (weights.rec < 0 || weights.feat_rec < 0 || weights.mrf < 0 || weights.adv < 0) {
    throw ConfigError("loss weights must be >= 0");
  }
  if (mrf.bandwidth <= 0 || mrf.epsilon <= 0) throw ConfigError("loss.mrf_bandwidth and loss.mrf_epsilon must be > 0");
  if (optimizer.lr_generator <= 0 || optimizer.lr_discriminator <= 0) throw ConfigError("learning rates must be > 0");
  if (optimizer.beta1 < 0 || optimizer.beta1 >= 1 || optimizer.beta2 < 0 || optimizer.beta2 >= 1) {
    throw ConfigError("optimizer betas must lie in [0, 1)");
  }
  if (discriminator.layers < 1 || discriminator.base_channels < 1) throw ConfigError("invalid discriminator section");
}

std::string TrainConfig::to_yaml() const {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "geometry" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "center_height" << YAML::Value << geometry.h;
  out << YAML::Key << "center_width" << YAML::Value << geometry.w;
  out << YAML::Key << "margin" << YAML::Value << geometry.m;
  out << YAML::Key << "fill" << YAML::Value << fill;
  out << YAML::EndMap;

  out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "patch_size" << YAML::Value << model.patch_size;
  out << YAML::Key << "embed_dim" << YAML::Value << model.embed_dim;
  out << YAML::Key << "window" << YAML::Value << model.window;
  out << YAML::Key << "mlp_ratio" << YAML::Value << model.mlp_ratio;
  out << YAML::Key << "depths" << YAML::Value << YAML::Flow << model.depths;
  out << YAML::Key << "heads" << YAML::Value << YAML::Flow << model.heads;
  out << YAML::EndMap;

  out << YAML::Key << "discriminator" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "base_channels" << YAML::Value << discriminator.base_channels;
  out << YAML::Key << "layers" << YAML::Value << discriminator.layers;
  out << YAML::Key << "leaky_slope" << YAML::Value << discriminator.leaky_slope;
  out << YAML::EndMap;

  out << YAML::Key << "loss" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "lambda_rec" << YAML::Value << weights.rec;
  out << YAML::Key << "lambda_feat_rec" << YAML::Value << weights.feat_rec;
  out << YAML::Key << "lambda_mrf" << YAML::Value << weights.mrf;
  out << YAML::Key << "lambda_adv" << YAML::Value << weights.adv;
  out << YAML::Key << "mrf_bandwidth" << YAML::Value << mrf.bandwidth;
  out << YAML::Key << "mrf_epsilon" << YAML::Value << mrf.epsilon;
  out << YAML::Key << "extractor_seed" << YAML::Value << extractor_seed;
  out << YAML::Key << "extractor_weights" << YAML::Value << extractor_weights;
  out << YAML::EndMap;

  out << YAML::Key << "optimizer" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "lr_generator" << YAML::Value << optimizer.lr_generator;
  out << YAML::Key << "lr_discriminator" << YAML::Value << optimizer.lr_discriminator;
  out << YAML::Key << "beta1" << YAML::Value << optimizer.beta1;
  out << YAML::Key << "beta2" << YAML::Value << optimizer.beta2;
  out << YAML::Key << "eps" << YAML::Value << optimizer.eps;
  out << YAML::Key << "weight_decay" << YAML::Value << optimizer.weight_decay;
  out << YAML::EndMap;

  out << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "batch_size" << YAML::Value << batch_size;
  out << YAML::Key << "steps" << YAML::Value << steps;
  out << YAML::Key << "seed" << YAML::Value << seed;
  out << YAML::Key << "deterministic" << YAML::Value << deterministic;
  out << YAML::Key << "checkpoint_interval" << YAML::Value << checkpoint_interval;
  out << YAML::Key << "freeze_discriminator" << YAML::Value << freeze_discriminator;
  out << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

TrainConfig TrainConfig::from_yaml(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  if (root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  if (!root.IsMap()) throw ConfigError("config root must be a mapping");
  for (const auto& kv : root) {
    const auto k = kv.first.as<std::string>();
    if (k != "geometry" && k != "model" && k != "discriminator" && k != "loss" && k != "optimizer" && k != "train") {
      throw ConfigError("unknown config section '" + k + "'");
    }
  }
  TrainConfig c = toy_config();
  const YAML::Node g = root["geometry"], m = root["model"], d = root["discriminator"], l = root["loss"],
                   o = root["optimizer"], t = root["train"];
  reject_unknown(g, "geometry", {"center_height", "center_width", "margin", "fill"});
  reject_unknown(m, "model", {"patch_size", "embed_dim", "window", "mlp_ratio", "depths", "heads"});
  reject_unknown(d, "discriminator", {"base_channels", "layers", "leaky_slope"});
  reject_unknown(l, "loss", {"lambda_rec", "lambda_feat_rec", "lambda_mrf", "lambda_adv", "mrf_bandwidth", "mrf_epsilon",
                             "extractor_seed", "extractor_weights"});
  reject_unknown(o, "optimizer", {"lr_generator", "lr_discriminator", "beta1", "beta2", "eps", "weight_decay"});
  reject_unknown(t, "train", {"batch_size", "steps", "seed", "deterministic", "checkpoint_interval", "freeze_discriminator"});

  read_key(g, "center_height", c.geometry.h);
  read_key(g, "center_width", c.geometry.w);
  read_key(g, "margin", c.geometry.m);
  read_key(g, "fill", c.fill);
  read_key(m, "patch_size", c.model.patch_size);
  read_key(m, "embed_dim", c.model.embed_dim);
  read_key(m, "window", c.model.window);
  read_key(m, "mlp_ratio", c.model.mlp_ratio);
  read_key(m, "depths", c.model.depths);
  read_key(m, "heads", c.model.heads);
  read_key(d, "base_channels", c.discriminator.base_channels);
  read_key(d, "layers", c.discriminator.layers);
  read_key(d, "leaky_slope", c.discriminator.leaky_slope);
  read_key(l, "lambda_rec", c.weights.rec);
  read_key(l, "lambda_feat_rec", c.weights.feat_rec);
  read_key(l, "lambda_mrf", c.weights.mrf);
  read_key(l, "lambda_adv", c.weights.adv);
  read_key(l, "mrf_bandwidth", c.mrf.bandwidth);
  read_key(l, "mrf_epsilon", c.mrf.epsilon);
  read_key(l, "extractor_seed", c.extractor_seed);
  read_key(l, "extractor_weights", c.extractor_weights);
  read_key(o, "lr_generator", c.optimizer.lr_generator);
  read_key(o, "lr_discriminator", c.optimizer.lr_discriminator);
  read_key(o, "beta1", c.optimizer.beta1);
  read_key(o, "beta2", c.optimizer.beta2);
  read_key(o, "eps", c.optimizer.eps);
  read_key(o, "weight_decay", c.optimizer.weight_decay);
  read_key(t, "batch_size", c.batch_size);
  read_key(t, "steps", c.steps);
  read_key(t, "seed", c.seed);
  read_key(t, "deterministic", c.deterministic);
  read_key(t, "checkpoint_interval", c.checkpoint_interval);
  read_key(t, "freeze_discriminator", c.freeze_discriminator);
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_yaml(ss.str());
}

TrainConfig toy_config() {
  TrainConfig c;
  c.geometry = OutpaintGeometry{32, 32, 8, 4};
  c.model.patch_size = 2;
  c.model.embed_dim = 16;
  c.model.window = 4;
  c.model.depths = {2, 2};
  c.model.heads = {2, 4};
  c.discriminator.base_channels = 16;
  c.discriminator.layers = 4;
  c.batch_size = 4;
  c.validate();
  return c;
}

TrainConfig full_config() {
  TrainConfig c;
  c.geometry = OutpaintGeometry{128, 128, 32, 32};
  c.model.patch_size = 4;
  c.model.embed_dim = 96;
  c.model.window = 7;
  c.model.depths = {2, 2, 6, 2};
  c.model.heads = {3, 6, 12, 24};
  c.validate();
  return c;
}

}  // namespace utr
