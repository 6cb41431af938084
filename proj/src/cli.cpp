#include "cirnet/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cirnet/config.hpp"
#include "cirnet/data.hpp"
#include "cirnet/errors.hpp"
#include "cirnet/gradsuite.hpp"
#include "cirnet/kernels.hpp"
#include "cirnet/metrics.hpp"
#include "cirnet/model.hpp"
#include "cirnet/png_io.hpp"

namespace fs = std::filesystem;

namespace cirnet::cli {

namespace {

uint8_t quantize(double v) {
  double q = std::floor(255.0 * v + 0.5);
  if (q < 0.0) q = 0.0;
  if (q > 255.0) q = 255.0;
  return static_cast<uint8_t>(q);
}

void write_gray_map(const std::string& path, const Tensor& map) {
  const Shape& s = map.shape();
  std::vector<uint8_t> pix(s.h * s.w);
  for (int64_t i = 0; i < s.h * s.w; ++i) pix[i] = quantize(map[i]);
  io::write_png_gray(path, s.h, s.w, pix.data());
}

// ---- generate --------------------------------------------------------------

struct GenArgs {
  std::string out;
  int64_t n = 16;
  data::SceneSpec spec;
};

int cmd_generate(const GenArgs& a) {
  std::vector<data::Sample> samples = data::generate(a.spec, a.n);
  std::string rgb_dir = a.out + "/rgb", depth_dir = a.out + "/depth", gt_dir = a.out + "/gt";
  for (int64_t i = 0; i < a.n; ++i) {
    data::save_sample(rgb_dir, depth_dir, gt_dir, i, samples[i]);
  }
  std::printf("generate: wrote %lld samples of size %lld to %s\n",
              static_cast<long long>(a.n), static_cast<long long>(a.spec.size), a.out.c_str());
  return 0;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string config_path;
  config::Config cfg;
  int64_t max_steps = 0;     // 0 runs every epoch to the end
  double stop_below = 0.0;   // 0 disables the loss-based stop
};

model::Batch make_batch(const std::vector<data::Sample>& items) {
  const Shape& s = items[0].rgb.shape();
  int64_t b = static_cast<int64_t>(items.size());
  model::Batch batch;
  batch.rgb = Tensor(Shape{b, 3, s.h, s.w});
  batch.depth = Tensor(Shape{b, 1, s.h, s.w});
  batch.gt = Tensor(Shape{b, 1, s.h, s.w});
  int64_t plane = s.h * s.w;
  for (int64_t i = 0; i < b; ++i) {
    if (!(items[i].rgb.shape() == s)) {
      throw std::invalid_argument("batch samples disagree on size");
    }
    std::copy(items[i].rgb.data(), items[i].rgb.data() + 3 * plane,
              batch.rgb.data() + i * 3 * plane);
    std::copy(items[i].depth.data(), items[i].depth.data() + plane,
              batch.depth.data() + i * plane);
    std::copy(items[i].gt.data(), items[i].gt.data() + plane, batch.gt.data() + i * plane);
  }
  return batch;
}

int cmd_train(const TrainArgs& a) {
  const config::Config& cfg = a.cfg;
  if (cfg.paths.train_dir.empty()) throw ConfigError("train needs a train_dir");
  if (cfg.paths.out_dir.empty()) throw ConfigError("train needs an out_dir");

  auto pairs = data::load_pairs(cfg.paths.train_dir + "/rgb", cfg.paths.train_dir + "/depth",
                                cfg.paths.train_dir + "/gt");
  std::vector<data::Sample> samples;
  samples.reserve(pairs.size());
  for (auto& [stem, sample] : pairs) samples.push_back(std::move(sample));

  model::CirNet net{cfg.model};
  net.init_params(cfg.train.seed);
  fs::create_directories(cfg.paths.out_dir);
  model::save_checkpoint(cfg.paths.out_dir + "/checkpoint_initial.cirk", net);

  std::ofstream log(cfg.paths.out_dir + "/loss.csv");
  if (!log) throw IoError("cannot write loss log in " + cfg.paths.out_dir);
  log << "step,loss_total,loss_r,loss_d,loss_rgbd\n";

  Rng rng(cfg.train.seed ^ 0xA5A5A5A5A5A5A5A5ull);
  model::AdamState opt;
  int64_t step = 0;
  double last_loss = 0.0;
  bool capped = false;
  std::vector<int64_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);

  for (int64_t epoch = 0; epoch < cfg.train.epochs && !capped; ++epoch) {
    double lr = cfg.train.lr /
                std::pow(cfg.train.lr_decay_div,
                         static_cast<double>(epoch / cfg.train.lr_decay_every));
    for (size_t i = order.size(); i > 1; --i) {
      size_t j = rng.below(i);
      std::swap(order[i - 1], order[j]);
    }
    for (size_t start = 0; start < order.size() && !capped; start += cfg.train.batch_size) {
      size_t stop = std::min(order.size(), start + cfg.train.batch_size);
      int64_t scale = cfg.train.scales[rng.below(cfg.train.scales.size())];
      data::AugmentConfig ac{cfg.train.flip_prob, cfg.train.rotate, {scale}};
      std::vector<data::Sample> batch_items;
      batch_items.reserve(stop - start);
      for (size_t i = start; i < stop; ++i) {
        batch_items.push_back(data::augment(samples[order[i]], rng, ac));
      }
      model::TrainStepResult res = model::train_step(net, make_batch(batch_items), opt, lr);
      ++step;
      last_loss = res.loss_total;
      char row[160];
      std::snprintf(row, sizeof(row), "%lld,%.17g,%.17g,%.17g,%.17g\n",
                    static_cast<long long>(step), res.loss_total, res.loss_r, res.loss_d,
                    res.loss_rgbd);
      log << row;
      if (a.max_steps > 0 && step >= a.max_steps) capped = true;
      if (a.stop_below > 0.0 && res.loss_total < a.stop_below) capped = true;
    }
  }
  log.close();
  model::save_checkpoint(cfg.paths.out_dir + "/checkpoint_final.cirk", net);
  std::printf("train: %lld steps, final loss %.6f, checkpoints in %s\n",
              static_cast<long long>(step), last_loss, cfg.paths.out_dir.c_str());
  return 0;
}

// ---- infer -----------------------------------------------------------------

struct InferArgs {
  std::string checkpoint, rgb_dir, depth_dir, out;
};

int cmd_infer(const InferArgs& a) {
  model::CirNet net = model::load_checkpoint(a.checkpoint);
  auto pairs = data::load_pairs(a.rgb_dir, a.depth_dir, "");
  fs::create_directories(a.out);
  for (auto& [stem, sample] : pairs) {
    model::CirNet::Maps maps = net.infer(sample.rgb, sample.depth);
    write_gray_map(a.out + "/" + stem + "_sal.png", maps.s_rgbd);
    write_gray_map(a.out + "/" + stem + "_sal_r.png", maps.s_r);
    write_gray_map(a.out + "/" + stem + "_sal_d.png", maps.s_d);
    write_gray_map(a.out + "/" + stem + "_sal_rgbd.png", maps.s_rgbd);
  }
  std::printf("infer: wrote saliency maps for %zu samples to %s\n", pairs.size(),
              a.out.c_str());
  return 0;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string pred_dir, gt_dir, out_dir;
};

int cmd_eval(const EvalArgs& a) {
  if (!fs::is_directory(a.pred_dir)) throw IoError("not a directory: " + a.pred_dir);
  const std::string suffix = "_sal.png";
  std::vector<std::string> stems;
  for (const auto& entry : fs::directory_iterator(a.pred_dir)) {
    std::string name = entry.path().filename().string();
    if (name.size() > suffix.size() &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      stems.push_back(name.substr(0, name.size() - suffix.size()));
    }
  }
  std::sort(stems.begin(), stems.end());
  if (stems.empty()) throw IoError("no *_sal.png files in " + a.pred_dir);

  std::vector<metrics::EvalItem> items;
  items.reserve(stems.size());
  for (const std::string& stem : stems) {
    io::ImageU8 pred = io::read_png(a.pred_dir + "/" + stem + suffix);
    std::string gt_path = a.gt_dir + "/" + stem + "_gt.png";
    if (!fs::exists(gt_path)) throw IoError("missing gt partner: " + gt_path);
    io::ImageU8 gt = io::read_png(gt_path);
    if (pred.channels != 1 || gt.channels != 1) {
      throw IoError("predictions and gt must be grayscale (stem " + stem + ")");
    }
    metrics::EvalItem item;
    item.id = stem;
    item.s.h = pred.h;
    item.s.w = pred.w;
    item.s.values.resize(pred.pix.size());
    for (size_t i = 0; i < pred.pix.size(); ++i) item.s.values[i] = pred.pix[i] / 255.0;
    item.g.h = gt.h;
    item.g.w = gt.w;
    item.g.mask.resize(gt.pix.size());
    for (size_t i = 0; i < gt.pix.size(); ++i) item.g.mask[i] = gt.pix[i] >= 128 ? 1 : 0;
    items.push_back(std::move(item));
  }

  metrics::EvalReport rep = metrics::evaluate(items);
  fs::create_directories(a.out_dir);
  {
    std::ofstream js(a.out_dir + "/report.json");
    if (!js) throw IoError("cannot write report in " + a.out_dir);
    js << metrics::report_json(rep);
  }
  {
    std::ofstream cs(a.out_dir + "/pr_curve.csv");
    if (!cs) throw IoError("cannot write curve in " + a.out_dir);
    cs << metrics::curve_csv(rep.mean_curve);
  }
  std::printf("eval: %zu images, mean mae %.6f, mean max_f %.6f, mean s_measure %.6f\n",
              rep.images.size(), rep.mean_mae, rep.mean_max_f, rep.mean_s_measure);
  return 0;
}

// ---- grad-check ------------------------------------------------------------

struct GradArgs {
  uint64_t seed = 1;
  int seeds = 5;
  double tol = 1e-4;
};

int cmd_grad_check(const GradArgs& a) {
  std::vector<gradsuite::CaseResult> results = gradsuite::run_all(a.seed, a.seeds, a.tol);
  std::printf("%-32s %14s %8s  %s\n", "case", "max_rel_err", "coords", "result");
  for (const auto& r : results) {
    std::printf("%-32s %14.3e %8lld  %s\n", r.name.c_str(), r.max_rel_err,
                static_cast<long long>(r.checked), r.pass ? "PASS" : "FAIL");
  }
  bool ok = gradsuite::all_pass(results);
  std::printf("grad-check: %zu cases, %s\n", results.size(), ok ? "all passed" : "FAILURES");
  return ok ? 0 : 5;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"cirnet: three-stream rgb-d salient object detection"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* sc_gen = app.add_subcommand("generate", "write a synthetic rgb-d dataset");
  sc_gen->add_option("--out", gen.out, "output directory")->required();
  sc_gen->add_option("--n", gen.n, "sample count");
  sc_gen->add_option("--size", gen.spec.size, "image size (multiple of 16)");
  sc_gen->add_option("--seed", gen.spec.seed, "dataset seed");
  sc_gen->add_option("--min-objects", gen.spec.min_objects, "fewest objects per scene");
  sc_gen->add_option("--max-objects", gen.spec.max_objects, "most objects per scene");
  sc_gen->add_option("--contrast", gen.spec.contrast, "color contrast in [0,1]");
  sc_gen->add_option("--depth-noise", gen.spec.depth_noise, "depth corruption in [0,1]");

  TrainArgs tr;
  std::string tr_train_dir, tr_out_dir;
  int64_t tr_epochs = 0, tr_batch = 0;
  double tr_lr = 0.0;
  uint64_t tr_seed = 0;
  auto* sc_tr = app.add_subcommand("train", "train on a generated dataset");
  sc_tr->add_option("--config", tr.config_path, "config file");
  sc_tr->add_option("--train-dir", tr_train_dir, "dataset root (rgb/ depth/ gt/)");
  sc_tr->add_option("--out-dir", tr_out_dir, "checkpoint and log directory");
  sc_tr->add_option("--epochs", tr_epochs, "override epochs");
  sc_tr->add_option("--batch-size", tr_batch, "override batch size");
  sc_tr->add_option("--lr", tr_lr, "override learning rate");
  sc_tr->add_option("--seed", tr_seed, "override seed");
  sc_tr->add_option("--max-steps", tr.max_steps, "stop after this many steps (0 = no cap)");
  sc_tr->add_option("--stop-below", tr.stop_below, "stop once total loss drops under this (0 = off)");

  InferArgs inf;
  auto* sc_inf = app.add_subcommand("infer", "write saliency maps for a dataset");
  sc_inf->add_option("--checkpoint", inf.checkpoint, "trained .cirk file")->required();
  sc_inf->add_option("--rgb-dir", inf.rgb_dir, "directory of *_rgb.png")->required();
  sc_inf->add_option("--depth-dir", inf.depth_dir, "directory of *_depth.png")->required();
  sc_inf->add_option("--out", inf.out, "output directory")->required();

  EvalArgs ev;
  auto* sc_ev = app.add_subcommand("eval", "score saliency maps against ground truth");
  sc_ev->add_option("--pred-dir", ev.pred_dir, "directory of *_sal.png")->required();
  sc_ev->add_option("--gt-dir", ev.gt_dir, "directory of *_gt.png")->required();
  sc_ev->add_option("--out-dir", ev.out_dir, "report directory")->required();

  GradArgs gc;
  auto* sc_gc = app.add_subcommand("grad-check", "finite-difference gradient battery");
  sc_gc->add_option("--seed", gc.seed, "base seed");
  sc_gc->add_option("--seeds", gc.seeds, "seeds per case");
  sc_gc->add_option("--tol", gc.tol, "relative error tolerance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }

  try {
    kernels::select_backend_from_env();
    if (sc_gen->parsed()) return cmd_generate(gen);
    if (sc_tr->parsed()) {
      tr.cfg = tr.config_path.empty() ? config::Config{}
                                      : config::parse_config_file(tr.config_path);
      if (sc_tr->count("--train-dir")) tr.cfg.paths.train_dir = tr_train_dir;
      if (sc_tr->count("--out-dir")) tr.cfg.paths.out_dir = tr_out_dir;
      if (sc_tr->count("--epochs")) tr.cfg.train.epochs = tr_epochs;
      if (sc_tr->count("--batch-size")) tr.cfg.train.batch_size = tr_batch;
      if (sc_tr->count("--lr")) tr.cfg.train.lr = tr_lr;
      if (sc_tr->count("--seed")) tr.cfg.train.seed = tr_seed;
      if (tr.cfg.train.batch_size < 1) throw ConfigError("batch_size must be >= 1");
      if (tr.cfg.train.epochs < 0) throw ConfigError("epochs must be >= 0");
      if (tr.cfg.train.lr < 0) throw ConfigError("lr must be >= 0");
      return cmd_train(tr);
    }
    if (sc_inf->parsed()) return cmd_infer(inf);
    if (sc_ev->parsed()) return cmd_eval(ev);
    if (sc_gc->parsed()) return cmd_grad_check(gc);
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 3;
  } catch (const NonFiniteLossError& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return 4;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

int run(const std::vector<std::string>& args) {
  std::vector<std::string> full;
  full.reserve(args.size() + 1);
  full.push_back("cirnet");
  full.insert(full.end(), args.begin(), args.end());
  std::vector<char*> argv;
  argv.reserve(full.size());
  for (std::string& s : full) argv.push_back(s.data());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace cirnet::cli
