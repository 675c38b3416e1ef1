// Command-line front end: gen, train, eval, sweep, codes.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "refhash/refhash.hpp"

namespace fs = std::filesystem;
using namespace refhash;

namespace {

struct TrainFlags {
  std::string method = "hash";
  std::string embedder = "itq";
  TrainConfig cfg;
};

void add_train_flags(CLI::App* app, TrainFlags& f) {
  app->add_option("--method", f.method, "histogram, boost or hash")->capture_default_str();
  app->add_option("--embedder", f.embedder, "lsh, sklsh or itq (hash method)")->capture_default_str();
  app->add_option("--bits", f.cfg.bits, "code length")->capture_default_str();
  app->add_option("--textons", f.cfg.textons, "texton dictionary size K")->capture_default_str();
  app->add_option("--regions", f.cfg.regions, "number of layout regions")->capture_default_str();
  app->add_option("--rounds", f.cfg.rounds, "boosting rounds")->capture_default_str();
  app->add_option("--tau", f.cfg.tau, "fraction of features examined per round")->capture_default_str();
  app->add_option("--seed", f.cfg.seed, "random seed")->capture_default_str();
  app->add_option("--knn", f.cfg.knn, "neighbours voting in Hamming kNN")->capture_default_str();
  app->add_option("--kmeans-samples", f.cfg.kmeans_samples, "response samples for k-means")->capture_default_str();
  app->add_option("--kmeans-iters", f.cfg.kmeans_iters, "maximum Lloyd iterations")->capture_default_str();
  app->add_option("--itq-iters", f.cfg.itq_iters, "ITQ rotation iterations")->capture_default_str();
  app->add_option("--min-side", f.cfg.min_side, "smallest region side (fraction of the disk box)")
      ->capture_default_str();
  app->add_option("--max-side", f.cfg.max_side, "largest region side (fraction of the disk box)")
      ->capture_default_str();
  app->add_flag("!--raw-counts", f.cfg.normalize, "use unnormalized region texton counts");
}

TrainConfig resolve(const TrainFlags& f) {
  TrainConfig c = f.cfg;
  c.method = staged("config", [&] { return parse_method(f.method); });
  c.embedder = staged("config", [&] { return parse_hash_method(f.embedder); });
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StageError("io", "cannot write " + path.string());
  out << text;
  if (!out) throw StageError("io", "failed writing " + path.string());
}

template <typename Fn>
std::string to_text(Fn&& fn) {
  std::ostringstream os;
  fn(os);
  return os.str();
}

std::vector<double> parse_values(const std::vector<std::string>& raw) {
  std::vector<double> out;
  for (const auto& item : raw) {
    std::stringstream ss(item);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      tok = detail::trim(tok);
      if (tok.empty()) continue;
      bool percent = !tok.empty() && tok.back() == '%';
      if (percent) tok.pop_back();
      std::size_t used = 0;
      double v;
      try {
        v = std::stod(tok, &used);
      } catch (const std::exception&) {
        throw StageError("sweep", "invalid sweep value '" + item + "'");
      }
      if (used != tok.size()) throw StageError("sweep", "invalid sweep value '" + item + "'");
      out.push_back(percent ? v / 100.0 : v);
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reflectance-disk material recognition: synthesis, training and evaluation"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "render a synthetic reflectance-disk dataset");
  std::string classes_file, gen_out;
  int per_class = 30;
  std::uint64_t gen_seed = 0;
  MirrorGeometry geom;
  int image_size = 128;
  gen->add_option("--classes", classes_file, "class specification file")->required();
  gen->add_option("--per-class", per_class, "disks per class")->capture_default_str();
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "random seed")->capture_default_str();
  gen->add_option("--size", image_size, "image width and height in pixels")->capture_default_str();
  gen->add_option("--radius", geom.disk_radius_px, "disk radius in pixels")->capture_default_str();
  gen->add_option("--focal", geom.focal_length_mm, "mirror focal length in mm")->capture_default_str();
  gen->add_option("--mm-per-px", geom.mm_per_px, "disk-plane scale")->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "train a model from a manifest");
  TrainFlags train_flags;
  std::string train_manifest, train_out, train_split, train_log;
  train->add_option("--manifest", train_manifest, "dataset manifest")->required();
  train->add_option("--out", train_out, "model file to write")->required();
  train->add_option("--split", train_split, "train only on the training side of holdout:N or explicit:FILE");
  train->add_option("--log", train_log, "per-round boosting log CSV (default: MODEL.log.csv)");
  add_train_flags(train, train_flags);

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a model");
  std::string eval_model, eval_manifest, eval_split = "holdout:0.5", eval_prefix;
  eval->add_option("--model", eval_model, "model file")->required();
  eval->add_option("--manifest", eval_manifest, "dataset manifest")->required();
  eval->add_option("--split", eval_split, "holdout:N, holdout:0.F, kfold:K or explicit:FILE")->capture_default_str();
  eval->add_option("--out", eval_prefix, "output prefix (default: MODEL.eval)");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "accuracy as a function of training size or code length");
  TrainFlags sweep_flags;
  std::string sweep_manifest, sweep_axis, sweep_out;
  std::vector<std::string> sweep_values;
  std::vector<std::uint64_t> sweep_seeds{0};
  double sweep_fraction = 0.5;
  sweep->add_option("--manifest", sweep_manifest, "dataset manifest")->required();
  sweep->add_option("--axis", sweep_axis, "train_size or bits")->required();
  sweep->add_option("--values", sweep_values, "values (comma or space separated; 10% or 0.1 for fractions)")
      ->required();
  sweep->add_option("--seeds", sweep_seeds, "seeds to average over")->capture_default_str();
  sweep->add_option("--train-fraction", sweep_fraction, "holdout fraction for the bits axis")->capture_default_str();
  sweep->add_option("--out", sweep_out, "sweep CSV (default: stdout)");
  add_train_flags(sweep, sweep_flags);
  sweep->remove_option(sweep->get_option("--seed"));

  // codes
  auto* codes = app.add_subcommand("codes", "export a hash model's code database");
  std::string codes_model, codes_out;
  codes->add_option("--model", codes_model, "model file")->required();
  codes->add_option("--out", codes_out, "CSV to write (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      geom.image_width = geom.image_height = image_size;
      const auto classes = staged("gen", [&] { return load_class_specs(classes_file); });
      const auto m = staged("gen", [&] { return gen_dataset(classes, per_class, geom, gen_seed, gen_out); });
      std::cout << "wrote " << m.rows.size() << " disks and " << (fs::path(gen_out) / "manifest.csv").string()
                << '\n';
    } else if (*train) {
      const TrainConfig cfg = resolve(train_flags);
      const auto manifest = staged("manifest", [&] { return load_manifest(train_manifest); });
      for (const auto& w : manifest.warnings) std::cerr << "warning: " << w << '\n';
      const Dataset ds = dataset_from_manifest(manifest);
      std::vector<std::size_t> idx(ds.size());
      std::iota(idx.begin(), idx.end(), 0);
      if (!train_split.empty()) {
        const auto spec = parse_split_spec(train_split);
        if (spec.kind == SplitSpec::Kind::kfold)
          throw StageError("split", "train accepts holdout or explicit splits; use eval for kfold");
        idx = spec.kind == SplitSpec::Kind::holdout ? holdout_from_spec(ds, spec.holdout, cfg.seed).train
                                                    : explicit_split(ds, spec.file).train;
      }
      const Model model = run_train(ds, idx, cfg);
      save_model(train_out, model);
      if (!model.boost_log.exp_loss.empty()) {
        const fs::path log = train_log.empty() ? fs::path(train_out + ".log.csv") : fs::path(train_log);
        write_text(log, to_text([&](std::ostream& os) { write_boost_log_csv(os, model.boost_log); }));
      }
      std::cout << "trained " << method_label(cfg) << " on " << idx.size() << " disks, " << model.classes.size()
                << " classes -> " << train_out << '\n';
    } else if (*eval) {
      const Model model = load_model(eval_model);
      const auto manifest = staged("manifest", [&] { return load_manifest(eval_manifest); });
      for (const auto& w : manifest.warnings) std::cerr << "warning: " << w << '\n';
      const Dataset ds = dataset_from_manifest(manifest);
      const auto spec = parse_split_spec(eval_split);
      const EvalResult r = run_eval(model, ds, spec);
      const std::string prefix = eval_prefix.empty() ? eval_model + ".eval" : eval_prefix;
      const std::string summary = eval_summary(model, spec, r);
      write_text(prefix + ".confusion.csv", to_text([&](std::ostream& os) { write_confusion_csv(os, r.confusion); }));
      write_text(prefix + ".summary.txt", summary);
      for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
      std::cout << summary;
    } else if (*sweep) {
      TrainConfig cfg = resolve(sweep_flags);
      const auto manifest = staged("manifest", [&] { return load_manifest(sweep_manifest); });
      for (const auto& w : manifest.warnings) std::cerr << "warning: " << w << '\n';
      const Dataset ds = dataset_from_manifest(manifest);
      SweepOptions opt;
      opt.axis = parse_sweep_axis(sweep_axis);
      opt.values = parse_values(sweep_values);
      opt.seeds = sweep_seeds;
      opt.train_fraction = sweep_fraction;
      const auto rows = run_sweep(ds, cfg, opt);
      const std::string csv = to_text([&](std::ostream& os) { write_sweep_csv(os, rows); });
      if (sweep_out.empty()) std::cout << csv;
      else write_text(sweep_out, csv);
      for (const auto& r : rows)
        if (r.status != "ok") std::cerr << "warning: value " << r.value << " seed " << r.seed << ": " << r.status << '\n';
    } else if (*codes) {
      const Model model = load_model(codes_model);
      if (model.database.entries.empty()) throw StageError("codes", "model holds no code database");
      std::ostringstream os;
      os << "disk_id,path,label,code\n";
      // Database entries are stored in training order.
      for (std::size_t j = 0; j < model.database.size(); ++j) {
        const auto& e = model.database.entries[j];
        os << e.disk_id << ',' << detail::csv_quote(j < model.training.size() ? model.training[j] : "") << ','
           << detail::csv_quote(model.classes[static_cast<std::size_t>(e.label)]) << ',' << e.code.to_hex() << '\n';
      }
      if (codes_out.empty()) std::cout << os.str();
      else write_text(codes_out, os.str());
    }
  } catch (const StageError& e) {
    std::cerr << "error [" << e.stage() << "]: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error [cli]: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
