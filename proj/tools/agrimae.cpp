#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "agrimae/dataset.hpp"
#include "agrimae/metrics.hpp"
#include "agrimae/synth.hpp"
#include "agrimae/train.hpp"

namespace fs = std::filesystem;
using namespace agrimae;

namespace {

// AGRIMAE_SEED beats any --seed flag, everywhere.
std::uint64_t resolve_seed(std::uint64_t flag_seed) {
  const char* env = std::getenv("AGRIMAE_SEED");
  if (!env || !*env) return flag_seed;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (end == env || *end != '\0') {
    throw ValidationError("AGRIMAE_SEED must be an unsigned integer, got '" + std::string(env) +
                          "'");
  }
  return v;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path + ": cannot open for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError(path + ": write failed");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return text;
}

struct CkptConfigs {
  ModelConfig model;
  TrainConfig train;
  std::string text;
};

CkptConfigs load_sidecar(const std::string& ckpt_path) {
  const std::string cfg_path = ckpt_path + ".cfg";
  CkptConfigs out;
  out.text = read_text(cfg_path);
  KeyValues kv = parse_kv_text(out.text);
  KvReader reader(kv);
  out.model = ModelConfig::from_reader(reader);
  out.train = TrainConfig::from_reader(reader);
  reader.finish("config " + cfg_path);
  out.model.validate();
  out.train.validate();
  return out;
}

int run_gen_data(const std::string& out_dir, GenSpec spec) {
  spec.seed = resolve_seed(spec.seed);
  spec.validate();
  generate(spec, out_dir);
  std::cout << "wrote " << spec.count << " images to " << out_dir << "\n";
  return 0;
}

struct TrainArgs {
  std::string data_dir;
  std::string config_path;
  std::string out_ckpt;
  bool exclude_anomalous = false;
  std::string asl;  // "", "on", "off"
  std::string variant;
  std::uint64_t epochs = 0;
  std::uint64_t warmup = 0;
  bool epochs_set = false;
  bool warmup_set = false;
  std::uint64_t seed = 1;
};

int run_train(const TrainArgs& args) {
  KeyValues kv;
  if (!args.config_path.empty()) kv = parse_kv_file(args.config_path);
  const bool cfg_has_warmup = kv.count("warmup_epochs") > 0;
  KvReader reader(kv);
  ModelConfig mc = ModelConfig::from_reader(reader);
  TrainConfig tc = TrainConfig::from_reader(reader);
  reader.finish("config " + args.config_path);

  if (!args.variant.empty()) mc.variant = args.variant;
  if (args.epochs_set) {
    tc.epochs = args.epochs;
    if (!args.warmup_set && !cfg_has_warmup) {
      tc.warmup_epochs = TrainConfig::default_warmup(tc.epochs);
    }
  }
  if (args.warmup_set) tc.warmup_epochs = args.warmup;
  if (args.asl == "on") tc.asl = true;
  if (args.asl == "off") tc.asl = false;
  tc.seed = resolve_seed(args.seed);

  mc.validate();
  tc.validate();

  auto data = load_dataset(args.data_dir, args.exclude_anomalous);
  if (data.empty()) {
    throw ValidationError("train: no usable images in " + args.data_dir +
                          (args.exclude_anomalous ? " after excluding anomalous samples" : ""));
  }

  TrainState state = make_train_state(mc, tc);
  train(state, data);

  const fs::path parent = fs::path(args.out_ckpt).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  save_checkpoint(args.out_ckpt, model_params(state.model), true);
  KeyValues merged = mc.to_kv();
  for (auto& [k, v] : tc.to_kv()) merged[k] = v;
  write_text(args.out_ckpt + ".cfg", format_kv(merged));

  std::printf("trained %zu epochs on %zu images, final loss %.6f\n", state.epoch, data.size(),
              state.loss_history.back());
  std::cout << "checkpoint " << args.out_ckpt << "\n";
  return 0;
}

struct InferArgs {
  std::string ckpt;
  std::string image_path;
  std::string data_dir;
  std::string out_dir;
  std::uint64_t k_runs = 32;
  std::string stratified = "on";
  std::uint64_t seed = 1;
};

int run_infer(const InferArgs& args) {
  if (args.image_path.empty() == args.data_dir.empty()) {
    throw ValidationError("infer: pass exactly one of --image or --data");
  }
  CkptConfigs cfg = load_sidecar(args.ckpt);
  Model model = build(cfg.model, 0);
  load_checkpoint(args.ckpt, model_params(model));

  std::vector<std::pair<std::string, Tensor>> inputs;
  if (!args.image_path.empty()) {
    RasterData r = load_raster(args.image_path);
    inputs.emplace_back(fs::path(args.image_path).stem().string(),
                        raster_to_image(r, args.image_path));
  } else {
    for (auto& s : load_dataset(args.data_dir)) inputs.emplace_back(s.id, s.image);
  }

  const std::uint64_t seed = resolve_seed(args.seed);
  const std::size_t grid = cfg.model.grid_side();
  Rng plan_rng(mix_seed(seed ^ 0x494e46ull));
  MaskPlan plan = inference_schedule(grid, grid, cfg.train.mask_window, cfg.model.mask_ratio,
                                     args.k_runs, plan_rng, args.stratified == "on");

  fs::create_directories(args.out_dir);
  write_text((fs::path(args.out_dir) / "config.cfg").string(), cfg.text);
  std::string thresholds;
  for (const auto& [id, image] : inputs) {
    ErrorMap averaged = infer(model, image, plan);
    const double theta = knee_threshold(averaged.values.data());
    AnomalyMap map = binarize(averaged, theta);

    const fs::path base = fs::path(args.out_dir) / id;
    save_raster_f64(base.string() + "_error.aten", {averaged.height(), averaged.width()},
                    averaged.values.data());
    save_raster_u8(base.string() + "_anomaly.aten", {map.height, map.width}, map.values);
    std::vector<std::uint8_t> gray(map.values.size());
    for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = map.values[i] ? 255 : 0;
    write_pgm(base.string() + "_anomaly.pgm", map.height, map.width, gray);

    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", theta);
    thresholds += id + "\t" + buf + "\n";
  }
  write_text((fs::path(args.out_dir) / "thresholds.txt").string(), thresholds);
  std::cout << "wrote " << inputs.size() << " anomaly maps to " << args.out_dir << "\n";
  return 0;
}

struct EvalArgs {
  std::string pred_dir;
  std::string gt_dir;
  std::string report_path;
  bool per_image = false;
  std::uint64_t seed = 0;
};

int run_eval(const EvalArgs& args) {
  auto samples = load_dataset(args.gt_dir);
  std::vector<EvalItem> items;
  for (const auto& s : samples) {
    const fs::path base = fs::path(args.pred_dir) / s.id;
    const std::string pred_path = base.string() + "_anomaly.aten";
    const std::string err_path = base.string() + "_error.aten";
    RasterData pred = load_raster(pred_path);
    RasterData err = load_raster(err_path);
    if (pred.dims.size() != 2 || pred.dtype != 1) {
      throw IoError(pred_path + ": expected a 2-d u8 anomaly map");
    }
    if (err.dims.size() != 2 || err.dtype != 0) {
      throw IoError(err_path + ": expected a 2-d f64 error map");
    }
    if (s.label.size() != pred.u8.size() || s.label.size() != err.f64.size()) {
      throw ShapeError(pred_path + ": prediction size does not match label for " + s.id);
    }
    EvalItem item;
    item.class_tag = s.class_tag;
    item.pred = AnomalyMap{pred.dims[0], pred.dims[1], pred.u8, 0.0};
    item.gt = s.label;
    item.scores = err.f64;
    items.push_back(std::move(item));
  }

  MetricReport rep = evaluate(items, args.per_image);
  rep.seed = resolve_seed(args.seed);
  const fs::path cfg_path = fs::path(args.pred_dir) / "config.cfg";
  rep.config_fingerprint =
      fingerprint_hex(fs::exists(cfg_path) ? read_text(cfg_path.string()) : std::string());

  const std::string text = render_report(rep);
  if (args.report_path.empty()) {
    std::cout << text;
  } else {
    write_text(args.report_path, text);
    std::cout << "report " << args.report_path << "\n";
  }
  return 0;
}

// ---- selftest ----------------------------------------------------------------

bool report(const char* name, bool ok) {
  std::printf("selftest: %-28s %s\n", name, ok ? "ok" : "FAIL");
  return ok;
}

bool selftest_window_oracle() {
  Rng rng(7);
  const std::size_t dim = 8;
  AttentionWeights w;
  w.query = init_trunc_normal({dim, dim}, 0.2, rng);
  w.key = init_trunc_normal({dim, dim}, 0.2, rng);
  w.value = init_trunc_normal({dim, dim}, 0.2, rng);
  w.output = init_trunc_normal({dim, dim}, 0.2, rng);
  w.head_count = 2;
  PatchGrid g;
  g.rows = 4;
  g.cols = 4;
  g.tokens = init_trunc_normal({16, dim}, 0.5, rng);
  Tensor windowed = window_attention(g, w, 4, 0).tokens;
  Tensor global = multihead_attention(g.tokens, w);
  const auto& a = windowed.data();
  const auto& b = global.data();
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst < 1e-10;
}

bool selftest_gradcheck() {
  Rng rng(19);
  const std::size_t dim = 8;
  LayerWeights layer;
  layer.norm1_gain = init_ones({dim});
  layer.norm1_bias = init_zeros({dim});
  layer.attn.query = init_trunc_normal({dim, dim}, 0.2, rng);
  layer.attn.key = init_trunc_normal({dim, dim}, 0.2, rng);
  layer.attn.value = init_trunc_normal({dim, dim}, 0.2, rng);
  layer.attn.output = init_trunc_normal({dim, dim}, 0.2, rng);
  layer.attn.head_count = 2;
  layer.norm2_gain = init_ones({dim});
  layer.norm2_bias = init_zeros({dim});
  layer.mlp_w1 = init_trunc_normal({dim, 2 * dim}, 0.2, rng);
  layer.mlp_b1 = init_zeros({2 * dim});
  layer.mlp_w2 = init_trunc_normal({2 * dim, dim}, 0.2, rng);
  layer.mlp_b2 = init_zeros({dim});

  Tensor x = init_trunc_normal({16, dim}, 0.5, rng);
  x.set_requires_grad(true);
  auto loss_of = [&]() {
    PatchGrid g;
    g.rows = 4;
    g.cols = 4;
    g.tokens = x;
    Tensor y = swin_layer(g, layer, 2, 1).tokens;
    return sum(mul(y, y));
  };
  Tensor loss = loss_of();
  x.zero_grad();
  backward(loss);
  const std::vector<double> analytic = x.grad();

  const double h = 1e-6;
  Rng pick(23);
  for (int t = 0; t < 10; ++t) {
    const std::size_t i = pick.below(x.numel());
    NoGradGuard guard;
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double hi = loss_of().data()[0];
    x.data()[i] = keep - h;
    const double lo = loss_of().data()[0];
    x.data()[i] = keep;
    const double fd = (hi - lo) / (2.0 * h);
    const double rel = std::abs(fd - analytic[i]) / std::max({std::abs(fd), std::abs(analytic[i]), 1e-3});
    if (rel > 1e-4) return false;
  }
  return true;
}

bool selftest_iou_oracle() {
  Rng rng(311);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 8 + rng.below(56);
    std::vector<std::uint8_t> p(n), g(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = rng.uniform() < 0.4 ? 1 : 0;
      g[i] = rng.uniform() < 0.4 ? 1 : 0;
    }
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < n; ++i) {
      inter += (p[i] && g[i]);
      uni += (p[i] || g[i]);
    }
    const double want = uni == 0 ? 1.0 : double(inter) / double(uni);
    AnomalyMap m{1, n, p, 0.0};
    if (iou(m, g) != want) return false;
  }
  return true;
}

bool selftest_auroc_oracle() {
  Rng rng(77);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 12 + rng.below(40);
    std::vector<double> s(n);
    std::vector<std::uint8_t> g(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = rng.below(6) * 0.2;
    for (std::size_t i = 0; i < n; ++i) g[i] = rng.uniform() < 0.5 ? 1 : 0;
    g[0] = 1;
    g[1] = 0;
    double wins = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!g[i]) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (g[j]) continue;
        ++pairs;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
    }
    if (std::abs(pixel_auroc(s, g) - wins / double(pairs)) > 1e-12) return false;
  }
  return true;
}

bool selftest_knee_oracle() {
  Rng rng(123);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 16 + rng.below(100);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform() * (rng.uniform() < 0.1 ? 10.0 : 1.0);
    std::vector<double> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    const double lo = sorted.front(), hi = sorted.back();
    double best = -1.0;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = double(i) / double(n - 1);
      const double y = hi == lo ? 0.0 : (sorted[i] - lo) / (hi - lo);
      const double d = std::abs(y - x);
      if (d > best) {
        best = d;
        arg = i;
      }
    }
    const double want = best > 1e-9 ? sorted[arg] : std::nextafter(hi, hi + 1.0);
    if (knee_threshold(v) != want) return false;
  }
  return true;
}

bool selftest_masking() {
  Rng rng(400);
  for (int t = 0; t < 50; ++t) {
    const std::size_t mw = 1 + rng.below(3);
    const std::size_t rows = mw * (1 + rng.below(6));
    const std::size_t cols = mw * (1 + rng.below(6));
    const double ratio = rng.uniform() * 0.9;
    PatchMask m = window_mask(rows, cols, mw, ratio, rng);
    std::size_t masked_windows = 0;
    for (std::size_t wr = 0; wr < rows / mw; ++wr) {
      for (std::size_t wc = 0; wc < cols / mw; ++wc) {
        masked_windows += m[wr * mw * cols + wc * mw];
      }
    }
    const std::size_t want =
        static_cast<std::size_t>(std::ceil(ratio * double((rows / mw) * (cols / mw))));
    if (masked_windows != want) return false;
  }
  return true;
}

int run_selftest() {
  bool ok = true;
  ok &= report("window-vs-global oracle", selftest_window_oracle());
  ok &= report("swin layer gradcheck", selftest_gradcheck());
  ok &= report("iou counting oracle", selftest_iou_oracle());
  ok &= report("auroc pair oracle", selftest_auroc_oracle());
  ok &= report("knee point oracle", selftest_knee_oracle());
  ok &= report("mask count exactness", selftest_masking());
  if (!ok) throw NumericError("selftest failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"agrimae: masked-autoencoder anomaly segmentation for multi-band rasters"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic labelled dataset");
  std::string gen_out;
  GenSpec spec;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--n", spec.count, "number of images");
  gen->add_option("--size", spec.image_size, "pixels per side");
  gen->add_option("--bands", spec.bands, "channel count");
  gen->add_option("--anomaly-frac", spec.anomaly_fraction, "fraction of anomalous images");
  gen->add_option("--blob-min", spec.blob_min, "smallest anomaly extent");
  gen->add_option("--blob-max", spec.blob_max, "largest anomaly extent");
  gen->add_option("--noise", spec.noise, "iid noise level");
  gen->add_option("--seed", spec.seed, "generator seed");

  // train
  auto* tr = app.add_subcommand("train", "train a masked autoencoder");
  TrainArgs targs;
  tr->add_option("--data", targs.data_dir, "dataset directory")->required();
  tr->add_option("--config", targs.config_path, "key = value config file");
  tr->add_option("--out-ckpt", targs.out_ckpt, "checkpoint output path")->required();
  tr->add_flag("--exclude-anomalous", targs.exclude_anomalous,
               "drop anomalous samples before training");
  tr->add_option("--asl", targs.asl, "adaptive-weighted loss on|off")
      ->check(CLI::IsMember({"on", "off"}));
  tr->add_option("--variant", targs.variant, "swin-mae | vit-mae")
      ->check(CLI::IsMember({"swin-mae", "vit-mae"}));
  auto* epochs_opt = tr->add_option("--epochs", targs.epochs, "training epochs");
  auto* warmup_opt = tr->add_option("--warmup", targs.warmup, "epochs before ASL activates");
  tr->add_option("--seed", targs.seed, "training seed");

  // infer
  auto* inf = app.add_subcommand("infer", "produce averaged error and anomaly maps");
  InferArgs iargs;
  inf->add_option("--ckpt", iargs.ckpt, "checkpoint path")->required();
  inf->add_option("--image", iargs.image_path, "single input raster");
  inf->add_option("--data", iargs.data_dir, "dataset directory to infer over");
  inf->add_option("--k", iargs.k_runs, "number of masked runs to average");
  inf->add_option("--stratified", iargs.stratified, "guaranteed window coverage on|off")
      ->check(CLI::IsMember({"on", "off"}));
  inf->add_option("--out-dir", iargs.out_dir, "output directory")->required();
  inf->add_option("--seed", iargs.seed, "mask schedule seed");

  // eval
  auto* ev = app.add_subcommand("eval", "score anomaly maps against ground truth");
  EvalArgs eargs;
  ev->add_option("--pred-dir", eargs.pred_dir, "directory of *_anomaly/_error maps")->required();
  ev->add_option("--gt-dir", eargs.gt_dir, "dataset directory with labels")->required();
  ev->add_option("--report", eargs.report_path, "write report here instead of stdout");
  ev->add_flag("--per-image", eargs.per_image, "average per-image IoU instead of pooling pixels");
  ev->add_option("--seed", eargs.seed, "seed recorded in the report");

  auto* st = app.add_subcommand("selftest", "run built-in gradient and oracle checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return run_gen_data(gen_out, spec);
    if (tr->parsed()) {
      targs.epochs_set = epochs_opt->count() > 0;
      targs.warmup_set = warmup_opt->count() > 0;
      return run_train(targs);
    }
    if (inf->parsed()) return run_infer(iargs);
    if (ev->parsed()) return run_eval(eargs);
    if (st->parsed()) return run_selftest();
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
