#include "sentinel/runconfig.hpp"

#include <fstream>

namespace fs = std::filesystem;

namespace sentinel::cfg {

json model_spec_to_json(const model::ModelSpec& spec) {
  json j;
  j["family"] = model::family_name(spec.family);
  j["scale"] = model::scale_name(spec.scale);
  j["num_classes"] = spec.num_classes;
  j["dropout_p"] = spec.dropout_p;
  j["freeze_backbone"] = spec.freeze_backbone;
  j["image_size"] = spec.image_size;
  j["vit_patch"] = spec.vit_patch;
  j["vit_layers"] = spec.vit_layers;
  j["vit_heads"] = spec.vit_heads;
  j["vit_dim"] = spec.vit_dim;
  j["vit_mlp_hidden"] = spec.vit_mlp_hidden;
  j["cnn_feature_dim"] = spec.cnn_feature_dim;
  j["weights_file"] = spec.weights_file;
  j["target_layer"] = spec.target_layer;
  return j;
}

model::ModelSpec model_spec_from_json(const json& j) {
  model::ModelSpec s;
  if (j.contains("family")) {
    s.family = model::family_from_name(j.at("family").get<std::string>());
  }
  if (j.contains("scale")) {
    s.scale = model::scale_from_name(j.at("scale").get<std::string>());
  }
  s.num_classes = j.value("num_classes", s.num_classes);
  s.dropout_p = j.value("dropout_p", s.dropout_p);
  s.freeze_backbone = j.value("freeze_backbone", s.freeze_backbone);
  s.image_size = j.value("image_size", s.image_size);
  s.vit_patch = j.value("vit_patch", s.vit_patch);
  s.vit_layers = j.value("vit_layers", s.vit_layers);
  s.vit_heads = j.value("vit_heads", s.vit_heads);
  s.vit_dim = j.value("vit_dim", s.vit_dim);
  s.vit_mlp_hidden = j.value("vit_mlp_hidden", s.vit_mlp_hidden);
  s.cnn_feature_dim = j.value("cnn_feature_dim", s.cnn_feature_dim);
  s.weights_file = j.value("weights_file", s.weights_file);
  s.target_layer = j.value("target_layer", s.target_layer);
  s.resolve();
  return s;
}

json train_config_to_json(const train::TrainConfig& cfg) {
  json j;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["lr"] = cfg.lr;
  j["weight_decay"] = cfg.weight_decay;
  j["patience"] = cfg.patience;
  j["factor"] = cfg.factor;
  j["min_lr"] = cfg.min_lr;
  j["monitor"] = train::monitor_name(cfg.monitor);
  j["threshold"] = cfg.threshold;
  return j;
}

train::TrainConfig train_config_from_json(const json& j) {
  train::TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.patience = j.value("patience", c.patience);
  c.factor = j.value("factor", c.factor);
  c.min_lr = j.value("min_lr", c.min_lr);
  if (j.contains("monitor")) {
    c.monitor = train::monitor_from_name(j.at("monitor").get<std::string>());
  }
  c.threshold = j.value("threshold", c.threshold);
  c.validate();
  return c;
}

json transform_config_to_json(const tf::TransformConfig& cfg) {
  json j;
  j["crop_size"] = cfg.crop_size;
  j["flip_prob"] = cfg.flip_prob;
  j["max_rotation"] = cfg.max_rotation;
  j["jitter"] = {{"brightness", cfg.jitter_brightness},
                 {"contrast", cfg.jitter_contrast},
                 {"saturation", cfg.jitter_saturation},
                 {"hue", cfg.jitter_hue}};
  j["rrc_scale"] = cfg.rrc_scale;
  j["rrc_aspect"] = cfg.rrc_aspect;
  j["mu"] = cfg.mu;
  j["sigma"] = cfg.sigma;
  return j;
}

tf::TransformConfig transform_config_from_json(const json& j) {
  tf::TransformConfig c;
  c.crop_size = j.value("crop_size", c.crop_size);
  c.flip_prob = j.value("flip_prob", c.flip_prob);
  c.max_rotation = j.value("max_rotation", c.max_rotation);
  if (j.contains("jitter")) {
    const auto& ji = j.at("jitter");
    c.jitter_brightness = ji.value("brightness", c.jitter_brightness);
    c.jitter_contrast = ji.value("contrast", c.jitter_contrast);
    c.jitter_saturation = ji.value("saturation", c.jitter_saturation);
    c.jitter_hue = ji.value("hue", c.jitter_hue);
  }
  if (j.contains("rrc_scale")) c.rrc_scale = j.at("rrc_scale").get<std::array<float, 2>>();
  if (j.contains("rrc_aspect")) c.rrc_aspect = j.at("rrc_aspect").get<std::array<float, 2>>();
  if (j.contains("mu")) c.mu = j.at("mu").get<std::array<float, 3>>();
  if (j.contains("sigma")) c.sigma = j.at("sigma").get<std::array<float, 3>>();
  c.validate();
  return c;
}

json run_config_to_json(const RunConfig& rc) {
  json j;
  j["seed"] = rc.seed;
  j["out"] = rc.out_dir.generic_string();
  j["manifest"] = rc.manifest.generic_string();
  j["model"] = model_spec_to_json(rc.model);
  j["train"] = train_config_to_json(rc.train);
  j["transform"] = transform_config_to_json(rc.transform);
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig rc;
  rc.seed = j.value("seed", rc.seed);
  rc.out_dir = fs::path(j.value("out", rc.out_dir.generic_string()));
  rc.manifest = fs::path(j.value("manifest", std::string()));
  if (j.contains("model")) rc.model = model_spec_from_json(j.at("model"));
  if (j.contains("train")) rc.train = train_config_from_json(j.at("train"));
  if (j.contains("transform")) {
    rc.transform = transform_config_from_json(j.at("transform"));
  }
  return rc;
}

RunConfig load_run_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ValidationError("cannot open config: " + file.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("config is not valid JSON: " + file.string() +
                          " (" + e.what() + ")");
  }
  return run_config_from_json(j);
}

void write_resolved_config(const RunConfig& rc) {
  fs::create_directories(rc.out_dir);
  std::ofstream out(rc.out_dir / "config.resolved.json");
  if (!out) {
    throw RuntimeFailure("cannot write resolved config under " +
                         rc.out_dir.string());
  }
  out << run_config_to_json(rc).dump(2) << "\n";
}

}  // namespace sentinel::cfg
