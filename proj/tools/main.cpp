#include <iostream>

#include <CLI11.hpp>

#include "sentinel/core.hpp"
#include "sentinel/data.hpp"
#include "sentinel/fixtures.hpp"
#include "sentinel/metrics.hpp"
#include "sentinel/model.hpp"
#include "sentinel/report.hpp"
#include "sentinel/runconfig.hpp"
#include "sentinel/trainer.hpp"
#include "sentinel/xai.hpp"

namespace fs = std::filesystem;
using namespace sentinel;

namespace {

data::SplitRatios parse_ratios(const std::string& s) {
  data::SplitRatios r;
  if (s.empty()) return r;
  double a, b, c;
  if (std::sscanf(s.c_str(), "%lf,%lf,%lf", &a, &b, &c) != 3) {
    throw ValidationError("ratios must look like 0.8,0.15,0.05");
  }
  r.train = a;
  r.val = b;
  r.test = c;
  return r;
}

int cmd_prepare(const std::string& root, const std::string& ratios_s,
                uint64_t seed, const std::string& out,
                const std::vector<std::string>& pins) {
  data::SplitRatios ratios = parse_ratios(ratios_s);
  ratios.validate();

  data::SourcePins pin_map;
  for (const auto& pin : pins) {
    auto eq = pin.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("--pin expects source=split[,split...]");
    }
    std::vector<data::Split> splits;
    std::stringstream ss(pin.substr(eq + 1));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      splits.push_back(data::split_from_name(tok));
    }
    pin_map[pin.substr(0, eq)] = splits;
  }

  std::vector<std::string> warnings;
  data::DatasetManifest scanned = data::scan_tree(root, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";

  bool needs_assign = false;
  for (const auto& r : scanned.records) {
    if (r.split == data::Split::unassigned) needs_assign = true;
  }
  data::DatasetManifest manifest =
      needs_assign                      ? data::assign_splits(scanned.records, ratios, seed,
                                                              scanned.root, pin_map)
                                        : scanned;
  manifest.seed = seed;

  auto report = data::verify_manifest(manifest);
  for (const auto& f : report.findings) {
    std::cerr << "finding: " << f.kind << " " << f.detail << "\n";
  }

  fs::path out_path = out.empty() ? fs::path(root) / "manifest.json"
                                  : fs::path(out);
  data::save_manifest(manifest, out_path);
  std::cout << "wrote " << out_path.string() << " with "
            << manifest.records.size() << " records\n";
  return report.ok() ? 0 : 3;
}

int cmd_synth(const fx::FixtureSpec& spec, const std::string& out) {
  auto manifest = fx::build_fixture(spec, out);
  std::cout << "fixture at " << out << ": " << manifest.records.size()
            << " images\n";
  return 0;
}

cfg::RunConfig resolve_config(const std::string& config_file,
                              uint64_t seed_override, bool seed_given,
                              const std::string& out_override,
                              const std::string& manifest_override) {
  cfg::RunConfig rc;
  if (!config_file.empty()) rc = cfg::load_run_config(config_file);
  if (seed_given) rc.seed = seed_override;
  if (!out_override.empty()) rc.out_dir = out_override;
  if (!manifest_override.empty()) rc.manifest = manifest_override;
  rc.model.resolve();
  rc.train.validate();
  rc.transform.validate();
  return rc;
}

int cmd_train(const cfg::RunConfig& rc_in, bool resume) {
  cfg::RunConfig rc = rc_in;
  if (rc.manifest.empty()) {
    throw ValidationError("train needs a dataset manifest (config key "
                          "'manifest' or --manifest)");
  }
  rc.train.seed = rc.seed;
  rc.train.checkpoint_dir = rc.out_dir / "checkpoints";
  rc.train.metrics_path = rc.out_dir / "metrics.jsonl";
  cfg::write_resolved_config(rc);

  auto manifest = data::load_manifest(rc.manifest);
  auto train_split = train::split_of(manifest, data::Split::train);
  auto val_split = train::split_of(manifest, data::Split::val);

  auto model = model::Classifier::build(rc.model, rc.seed);
  auto result = train::fit(model, train_split, val_split, rc.train,
                           rc.transform, resume);
  std::cout << "trained " << result.epochs_run
            << " epochs; best val accuracy " << result.best_val_accuracy
            << "\nbest checkpoint: " << result.best_checkpoint.string()
            << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest_path,
             const std::string& split, const std::string& out) {
  auto [model, meta] = train::load_checkpoint(checkpoint);
  auto manifest = data::load_manifest(manifest_path);
  auto records = train::split_of(manifest, data::split_from_name(split));
  tf::TransformConfig tcfg;
  auto [m, cm] = train::evaluate(model, records, tcfg);
  fs::path out_path = out.empty() ? fs::path("report.json") : fs::path(out);
  metrics::save_report(cm, out_path);
  std::cout << "accuracy " << m.accuracy << ", f1_macro " << m.f1_macro
            << "; wrote " << out_path.string() << "\n";
  return 0;
}

int cmd_explain(const std::string& checkpoint, const std::string& manifest_path,
                const std::string& method, int n_correct, int n_wrong,
                const std::string& split, const std::string& out,
                float alpha, const std::string& palette) {
  auto [model, meta] = train::load_checkpoint(checkpoint);
  auto manifest = data::load_manifest(manifest_path);
  tf::TransformConfig tcfg;
  xai::GalleryOptions opt;
  opt.method = xai::method_from_name(method);
  opt.n_correct = n_correct;
  opt.n_misclassified = n_wrong;
  opt.split = data::split_from_name(split);
  opt.alpha = alpha;
  opt.palette = palette;
  xai::explain_batch(model, manifest, tcfg, opt, out);
  std::cout << "gallery at " << out << "\n";
  return 0;
}

int cmd_report(const std::string& run_dir) {
  report::render_report(run_dir);
  std::cout << "wrote " << (fs::path(run_dir) / "curves.png").string()
            << " and " << (fs::path(run_dir) / "summary.md").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "sentinel: train, evaluate and explain detectors of AI-generated "
      "satellite imagery"};
  app.require_subcommand(1);

  // prepare
  auto* prepare = app.add_subcommand(
      "prepare", "scan a class-folder tree, assign splits, write a manifest");
  std::string p_root, p_ratios = "0.8,0.15,0.05", p_out;
  uint64_t p_seed = 7;
  std::vector<std::string> p_pins;
  prepare->add_option("--root", p_root, "dataset root")->required();
  prepare->add_option("--ratios", p_ratios, "train,val,test fractions");
  prepare->add_option("--seed", p_seed, "shuffle seed");
  prepare->add_option("--out", p_out, "manifest path (default root/manifest.json)");
  prepare->add_option("--pin", p_pins,
                      "restrict a source tag to splits, e.g. fsi=val,test");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a procedural fixture dataset");
  fx::FixtureSpec s_spec;
  std::string s_out, s_kinds = "clone,seam,highfreq";
  synth->add_option("--out", s_out, "output directory")->required();
  synth->add_option("--n-per-class", s_spec.n_per_class, "tiles per class")->required();
  synth->add_option("--size", s_spec.size, "tile side in pixels");
  synth->add_option("--seed", s_spec.seed, "generator seed");
  synth->add_option("--kinds", s_kinds, "comma list of clone,seam,highfreq");
  synth->add_option("--clone-patch", s_spec.clone_patch, "clone patch side");
  synth->add_option("--clone-copies", s_spec.clone_copies, "identical regions per clone tile");
  synth->add_option("--hf-amplitude", s_spec.hf_amplitude, "checkerboard strength");

  // train
  auto* train_cmd = app.add_subcommand("train", "run the training loop");
  std::string t_config, t_out, t_manifest;
  uint64_t t_seed = 0;
  bool t_resume = false;
  train_cmd->add_option("--config", t_config, "run config JSON");
  auto* t_seed_opt = train_cmd->add_option("--seed", t_seed, "seed override");
  train_cmd->add_option("--out", t_out, "run directory override");
  train_cmd->add_option("--manifest", t_manifest, "dataset manifest override");
  train_cmd->add_flag("--resume", t_resume, "continue from the latest checkpoint");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  std::string e_ckpt, e_manifest, e_split = "test", e_out;
  eval_cmd->add_option("--checkpoint", e_ckpt, "checkpoint json/base/dir")->required();
  eval_cmd->add_option("--manifest", e_manifest, "dataset manifest")->required();
  eval_cmd->add_option("--split", e_split, "train|val|test");
  eval_cmd->add_option("--out", e_out, "report path (default report.json)");

  // explain
  auto* explain_cmd = app.add_subcommand("explain", "render saliency overlays");
  std::string x_ckpt, x_manifest, x_method = "gradcam", x_split = "test",
              x_out = "gallery", x_palette = "viridis";
  int x_correct = 10, x_wrong = 10;
  float x_alpha = 0.5f;
  explain_cmd->add_option("--checkpoint", x_ckpt)->required();
  explain_cmd->add_option("--manifest", x_manifest)->required();
  explain_cmd->add_option("--method", x_method, "gradcam|rollout|grad_rollout");
  explain_cmd->add_option("--n-correct", x_correct);
  explain_cmd->add_option("--n-wrong", x_wrong);
  explain_cmd->add_option("--split", x_split);
  explain_cmd->add_option("--out", x_out);
  explain_cmd->add_option("--alpha", x_alpha, "overlay blend weight");
  explain_cmd->add_option("--palette", x_palette, "viridis|jet|gray");

  // report
  auto* report_cmd = app.add_subcommand("report", "render curves and summary for a run");
  std::string r_run;
  report_cmd->add_option("--run", r_run, "run directory with metrics.jsonl")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (prepare->parsed()) {
      return cmd_prepare(p_root, p_ratios, p_seed, p_out, p_pins);
    }
    if (synth->parsed()) {
      std::stringstream ss(s_kinds);
      std::string tok;
      s_spec.artifact_kinds.clear();
      while (std::getline(ss, tok, ',')) {
        s_spec.artifact_kinds.push_back(fx::kind_from_name(tok));
      }
      return cmd_synth(s_spec, s_out);
    }
    if (train_cmd->parsed()) {
      auto rc = resolve_config(t_config, t_seed, !t_seed_opt->empty(), t_out,
                               t_manifest);
      return cmd_train(rc, t_resume);
    }
    if (eval_cmd->parsed()) {
      return cmd_eval(e_ckpt, e_manifest, e_split, e_out);
    }
    if (explain_cmd->parsed()) {
      return cmd_explain(x_ckpt, x_manifest, x_method, x_correct, x_wrong,
                         x_split, x_out, x_alpha, x_palette);
    }
    if (report_cmd->parsed()) {
      return cmd_report(r_run);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
