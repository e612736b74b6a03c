// fdftnet: synthetic data, backbone pretraining, fine-tuning, evaluation,
// prediction and parameter tables from the command line.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fdft/dataset.hpp"
#include "fdft/error.hpp"
#include "fdft/ftt.hpp"
#include "fdft/mbblock.hpp"
#include "fdft/model.hpp"
#include "fdft/train.hpp"
#include "fdft/weights.hpp"

namespace fs = std::filesystem;
using namespace fdft;

namespace {

struct Global {
  std::uint64_t seed = 42;
  std::string precision = "f32";
  std::string profile = "desk";
  int threads = 1;
};

struct DataArgs {
  std::string dir;
  std::string split = "4:1:2:2";  // train:val:test:finetune
};

struct TrainArgs {
  int epochs = 0;  // 0 keeps the profile value
  int batch_size = 0;
  double lr = 0.0;
  int patience = 20;
  std::string history;
};

std::string with_commas(std::size_t v) {
  std::string s = std::to_string(v);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

std::array<double, 4> parse_split(const std::string& text) {
  std::array<double, 4> f{};
  std::stringstream ss(text);
  std::string part;
  std::size_t k = 0;
  double sum = 0.0;
  while (std::getline(ss, part, ':')) {
    if (k == 4) throw ConfigError("--split needs exactly 4 parts, got '" + text + "'");
    f[k] = std::stod(part);
    if (f[k] < 0.0) throw ConfigError("--split parts must be non-negative");
    sum += f[k++];
  }
  if (k != 4 || sum <= 0.0) throw ConfigError("--split needs 4 parts with a positive sum, got '" + text + "'");
  for (auto& x : f) x /= sum;
  return f;
}

Splits load_splits(const DataArgs& d, std::uint64_t seed) {
  const LabeledDataset all = load_dataset_dir(d.dir);
  Splits s = split(all, parse_split(d.split), seed);
  std::cerr << "data: " << all.size() << " images (" << all.count(kReal) << " real, "
            << all.count(kFake) << " fake); train " << s.train.size() << ", val " << s.val.size()
            << ", test " << s.test.size() << ", finetune " << s.finetune.size() << "\n";
  return s;
}

TrainConfig train_config(const Global& g, const TrainArgs& t, double default_lr) {
  TrainConfig c = TrainConfig::profile(g.profile);
  c.seed = g.seed;
  c.lr0 = t.lr > 0.0 ? t.lr : default_lr;
  if (t.epochs > 0) c.max_epochs = static_cast<std::size_t>(t.epochs);
  if (t.batch_size > 0) c.batch_size = static_cast<std::size_t>(t.batch_size);
  c.patience = static_cast<std::size_t>(t.patience);
  return c;
}

void print_epoch(const EpochRecord& r) {
  std::fprintf(stderr, "epoch %3zu  lr %.5f  train_loss %.5f  val_loss %.5f  val_acc %.4f  val_auroc %.4f\n",
               r.epoch, r.lr, r.train_loss, r.val_loss, r.val_acc, r.val_auroc);
}

void print_metrics(const Metrics& m) {
  if (m.auroc) {
    std::printf("ACC=%.4f AUROC=%.4f\n", m.acc, *m.auroc);
  } else {
    std::printf("ACC=%.4f AUROC=nan\n", m.acc);
  }
}

void add_train_flags(CLI::App* cmd, TrainArgs& t) {
  cmd->add_option("--epochs", t.epochs, "Maximum epochs (0 = profile default)");
  cmd->add_option("--batch-size", t.batch_size, "Mini-batch size (0 = profile default)");
  cmd->add_option("--lr", t.lr, "Initial learning rate (0 = command default)");
  cmd->add_option("--patience", t.patience, "Early-stopping patience in epochs")->check(CLI::PositiveNumber);
  cmd->add_option("--history", t.history, "History CSV path (default: beside --out)");
}

void add_data_flags(CLI::App* cmd, DataArgs& d) {
  cmd->add_option("--data", d.dir, "Dataset root holding real/ and fake/")->required();
  cmd->add_option("--split", d.split, "train:val:test:finetune proportions");
}

fs::path history_path(const TrainArgs& t, const fs::path& out) {
  if (!t.history.empty()) return t.history;
  fs::path p = out;
  return p.replace_extension(".history.csv");
}

// --- synth-data --------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::size_t n_per_class = 100;
  double amplitude = 0.25;
  std::size_t blobs = 6;
  std::size_t period = 2;
  double region = 0.5;
};

int cmd_synth(const Global& g, const SynthArgs& a) {
  SyntheticTaskConfig c;
  c.n_per_class = a.n_per_class;
  c.seed = g.seed;
  c.artifact_amplitude = a.amplitude;
  c.blob_count = a.blobs;
  c.artifact_period = a.period;
  c.artifact_region = a.region;
  if (a.amplitude == 0.0) {
    std::cerr << "warning: --artifact-amp 0 makes real and fake indistinguishable (expected AUROC 0.5)\n";
  }
  const LabeledDataset d = generate_synthetic(c, fs::path(a.out));
  std::ifstream is(fs::path(a.out) / "manifest.csv", std::ios::binary);
  const std::vector<std::uint8_t> manifest((std::istreambuf_iterator<char>(is)),
                                           std::istreambuf_iterator<char>());
  std::cout << "real=" << d.count(kReal) << " fake=" << d.count(kFake)
            << " manifest_crc32=" << hex32(crc32(manifest)) << "\n";
  return 0;
}

// --- pretrain ---------------------------------------------------------------

struct PretrainArgs {
  DataArgs data;
  TrainArgs train;
  std::string out;
  std::vector<std::size_t> widths{16, 32, 64, 128};
  std::vector<std::size_t> strides{2, 2, 2, 1};
  bool no_augment = false;
};

template <class T>
int cmd_pretrain(const Global& g, const PretrainArgs& a) {
  const Splits s = load_splits(a.data, g.seed);
  BackboneConfig bc;
  bc.widths = a.widths;
  bc.strides = a.strides;
  TrainConfig tc = train_config(g, a.train, 0.05);
  tc.augment = !a.no_augment;
  tc.history_csv = history_path(a.train, a.out);
  TrainResult r;
  auto net = pretrain_backbone<T>(bc, s.train, s.val, tc, &r, print_epoch);
  net->save_backbone(a.out);
  const Metrics m = evaluate(*net, s.val);
  std::cerr << "best epoch " << r.best_epoch << " of " << r.history.size() << "; wrote " << a.out
            << " and " << tc.history_csv.string() << "\n";
  std::cout << "epochs=" << r.history.size() << " best_epoch=" << r.best_epoch << "\n";
  std::cout << "val ";
  print_metrics(m);
  return 0;
}

// --- finetune ---------------------------------------------------------------

struct FinetuneArgs {
  DataArgs data;
  TrainArgs train;
  std::string backbone;
  std::string out;
  std::size_t m = 3;
  std::size_t n = 4;
  std::size_t cutout_alpha = 3;
  std::size_t cutout_beta = 5;
  bool cutout_fixed = false;
  bool no_ftt = false;
};

template <class T>
int cmd_finetune(const Global& g, const FinetuneArgs& a) {
  const WeightsFile bb = read_weights(a.backbone);
  const Splits s = load_splits(a.data, g.seed);

  ModelConfig mc;
  mc.ftt = FTTConfig::with_stages(a.m);
  mc.n_blocks = a.n;
  mc.use_ftt = !a.no_ftt;
  mc.seed = g.seed;
  mc.backbone = backbone_config(bb);
  TrainConfig tc = train_config(g, a.train, 0.3);
  tc.augmentation.cutout.alpha = a.cutout_alpha;
  tc.augmentation.cutout.beta = a.cutout_beta;
  tc.augmentation.cutout.fixed_size = a.cutout_fixed;
  tc.history_csv = history_path(a.train, a.out);

  {
    auto probe = FDFtNetModel<T>::assemble(mc);
    probe->load_backbone(bb);
    std::cout << "frozen_params=" << probe->backbone_param_count()
              << " trainable_params=" << probe->trainable_param_count() << "\n";
    std::cout << "backbone_crc32_before=" << hex32(probe->backbone_checksum()) << "\n";
  }
  TrainResult r;
  auto model = fine_tune<T>(bb, s.finetune, s.val, mc, tc, &r, print_epoch);
  std::cout << "backbone_crc32_after=" << hex32(model->backbone_checksum()) << "\n";
  model->save(a.out);
  std::cerr << "best epoch " << r.best_epoch << " of " << r.history.size() << "; wrote " << a.out
            << " and " << tc.history_csv.string() << "\n";
  std::cout << "epochs=" << r.history.size() << " best_epoch=" << r.best_epoch << "\n";
  std::cout << "test ";
  print_metrics(evaluate(*model, s.test));
  return 0;
}

// --- eval / predict -----------------------------------------------------------

struct EvalArgs {
  DataArgs data;
  std::string model;
  std::string subset = "test";
};

template <class T>
int cmd_eval(const Global& g, const EvalArgs& a) {
  auto model = FDFtNetModel<T>::load(a.model);
  LabeledDataset d;
  if (a.subset == "all") {
    d = load_dataset_dir(a.data.dir, model->config().input_size);
  } else {
    Splits s = load_splits(a.data, g.seed);
    d = a.subset == "train" ? s.train : a.subset == "val" ? s.val
        : a.subset == "finetune" ? s.finetune : s.test;
  }
  const Metrics m = evaluate(*model, d);
  print_metrics(m);
  if (!m.auroc) {
    std::cerr << "error: AUROC is undefined for a single-class set\n";
    return 3;
  }
  return 0;
}

struct PredictArgs {
  std::string model;
  std::string image;
};

template <class T>
int cmd_predict(const PredictArgs& a) {
  auto model = FDFtNetModel<T>::load(a.model);
  const std::size_t size = model->config().input_size;
  ImageU8 img = load_ppm(a.image);
  if (img.h != size || img.w != size) img = to_u8(resize_bilinear(to_tensor(img), size, size));
  LabeledDataset one;
  one.items.push_back({img, kReal, a.image});
  const std::size_t idx = 0;
  const auto p = model->predict_proba(make_batch<T>(one, std::span(&idx, 1)));
  std::printf("%.4f\n", p.at(0));
  return 0;
}

// --- params -------------------------------------------------------------------

struct ParamsArgs {
  std::size_t m = 3;
  std::size_t n = 4;
  std::size_t backbone_channels = 128;
};

void print_table(const std::string& title, const ParamBreakdown& b) {
  std::printf("%s\n", title.c_str());
  std::printf("  %-14s %-22s %12s %8s %6s\n", "Input", "Operation", "#Params", "Out", "Stride");
  for (const auto& r : b.rows) {
    std::printf("  %-14s %-22s %12s %8zu %6s\n", r.input.c_str(), r.operation.c_str(),
                with_commas(r.count).c_str(), r.out_dim, r.stride.c_str());
  }
  std::printf("  %-14s %-22s %12s\n\n", "", "Total", with_commas(b.total()).c_str());
}

int cmd_params(const ParamsArgs& a) {
  ModelConfig mc;
  mc.ftt = FTTConfig::with_stages(a.m);
  mc.n_blocks = a.n;
  mc.backbone.widths.back() = a.backbone_channels;
  mc.validate();
  print_table("FTT (M=" + std::to_string(a.m) + ")", ftt_param_count(mc.ftt, mc.input_size));
  MBBlockConfig bc = mc.block;
  bc.c_in = a.backbone_channels;
  print_table("MBblockV3 (c=" + std::to_string(a.backbone_channels) + ")", mbblock_param_count(bc));
  const ParamBreakdown all = model_param_count(mc);
  std::printf("trainable_total=%s\n", with_commas(all.total()).c_str());
  return 0;
}

// Expands `--config FILE` into command-line arguments. Each key=value line
// names an option of the chosen subcommand or a global option, with or
// without a "subcommand." prefix. Keys also given on the command line are
// skipped, so flags take precedence.
std::vector<std::string> merge_config(CLI::App& app, std::vector<std::string> args) {
  std::string file;
  std::string sub;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) file = args[i + 1];
    else if (args[i].starts_with("--config=")) file = args[i].substr(9);
    else if (sub.empty() && app.get_subcommand_no_throw(args[i])) sub = args[i];
  }
  if (file.empty()) return args;
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open config file '" + file + "'");

  auto given = [&](const std::string& name) {
    return std::any_of(args.begin(), args.end(),
                       [&](const std::string& a) { return a == name || a.starts_with(name + "="); });
  };
  auto trim = [](std::string t) {
    const auto b = t.find_first_not_of(" \t\r\"'");
    const auto e = t.find_last_not_of(" \t\r\"'");
    return b == std::string::npos ? std::string() : t.substr(b, e - b + 1);
  };
  std::vector<std::string> extra;
  for (std::string line; std::getline(in, line);) {
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';' || line[0] == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("config line without '=': " + line);
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (const auto dot = key.find('.'); dot != std::string::npos) {
      if (key.substr(0, dot) != sub) continue;  // section of another subcommand
      key = key.substr(dot + 1);
    }
    const std::string name = "--" + key;
    if (key == "config" || given(name)) continue;
    const CLI::Option* opt = nullptr;
    if (const CLI::App* s = app.get_subcommand_no_throw(sub)) opt = s->get_option_no_throw(name);
    if (!opt) opt = app.get_option_no_throw(name);
    if (!opt) {
      const auto subs = app.get_subcommands([&](const CLI::App* c) { return c->get_option_no_throw(name) != nullptr; });
      if (subs.empty()) throw std::runtime_error("unknown config key '" + key + "'");
      continue;  // belongs to another subcommand
    }
    if (opt->get_type_size() == 0) {
      if (value == "true" || value == "1" || value == "yes") extra.push_back(name);
      continue;
    }
    extra.push_back(name);
    std::replace(value.begin(), value.end(), ',', ' ');
    std::erase_if(value, [](char c) { return c == '[' || c == ']'; });
    std::istringstream parts(value);
    for (std::string part; parts >> part;) extra.push_back(part);
  }
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FDFtNet-style real/fake image classifier"};
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->always_capture_default();
  std::string config_file;
  app.add_option("--config", config_file, "key=value file; command-line flags take precedence");

  Global g;
  if (const char* env = std::getenv("FDFT_PROFILE"); env && *env) g.profile = env;
  app.add_option("--seed", g.seed, "Seed for every random decision");
  app.add_option("--precision", g.precision, "Floating-point precision")
      ->check(CLI::IsMember({"f32", "f64"}))
      ;
  app.add_option("--profile", g.profile, "Training profile (default from FDFT_PROFILE)")
      ->check(CLI::IsMember({"desk", "paper"}))
      ;
  app.add_option("--threads", g.threads, "Worker count")->check(CLI::PositiveNumber);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth-data", "Write the synthetic real/fake dataset");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--n-per-class", synth.n_per_class, "Images per class");
  c_synth->add_option("--artifact-amp", synth.amplitude, "Checkerboard amplitude in [0, 1]");
  c_synth->add_option("--blob-count", synth.blobs, "Gaussian blobs per image");
  c_synth->add_option("--artifact-period", synth.period, "Checkerboard period in pixels");
  c_synth->add_option("--artifact-region", synth.region, "Artifact area fraction");

  PretrainArgs pre;
  auto* c_pre = app.add_subcommand("pretrain", "Pretrain the toy backbone and save it");
  add_data_flags(c_pre, pre.data);
  add_train_flags(c_pre, pre.train);
  c_pre->add_option("--out", pre.out, "Backbone weights file")->required();
  c_pre->add_option("--widths", pre.widths, "Stage widths");
  c_pre->add_option("--strides", pre.strides, "Stage strides");
  c_pre->add_flag("--no-augment", pre.no_augment, "Train on rescaled images only");

  FinetuneArgs ft;
  auto* c_ft = app.add_subcommand("finetune", "Fine-tune FTT, MBblocks and head on a frozen backbone");
  add_data_flags(c_ft, ft.data);
  add_train_flags(c_ft, ft.train);
  c_ft->add_option("--backbone", ft.backbone, "Backbone weights from pretrain")->required();
  c_ft->add_option("--out", ft.out, "Model weights file")->required();
  c_ft->add_option("--m", ft.m, "FTT stages");
  c_ft->add_option("--n", ft.n, "MBblockV3 count");
  c_ft->add_option("--cutout-alpha", ft.cutout_alpha, "Cutout masks per image");
  c_ft->add_option("--cutout-beta", ft.cutout_beta, "Largest Cutout size multiplier");
  c_ft->add_flag("--cutout-fixed", ft.cutout_fixed, "Always use multiplier beta");
  c_ft->add_flag("--no-ftt", ft.no_ftt, "Replace the FTT branch by zeros");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Report ACC and AUROC");
  add_data_flags(c_eval, ev.data);
  c_eval->add_option("--model", ev.model, "Model weights file")->required();
  c_eval->add_option("--subset", ev.subset, "Split to evaluate")
      ->check(CLI::IsMember({"train", "val", "test", "finetune", "all"}))
      ;

  PredictArgs pr;
  auto* c_pred = app.add_subcommand("predict", "Print the fake probability of one image");
  c_pred->add_option("--model", pr.model, "Model weights file")->required();
  c_pred->add_option("--image", pr.image, "PPM image")->required();

  ParamsArgs pa;
  auto* c_params = app.add_subcommand("params", "Print parameter-count tables");
  c_params->add_option("--m", pa.m, "FTT stages");
  c_params->add_option("--n", pa.n, "MBblockV3 count");
  c_params->add_option("--backbone-channels", pa.backbone_channels, "Backbone output channels")
      ;

  std::vector<std::string> args(argv, argv + argc);
  try {
    args = merge_config(app, std::move(args));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  std::vector<char*> cargs;
  for (auto& a : args) cargs.push_back(a.data());
  CLI11_PARSE(app, static_cast<int>(cargs.size()), cargs.data());
  if (g.profile != "desk" && g.profile != "paper") {
    std::cerr << "error: unknown profile '" << g.profile << "' (expected desk or paper)\n";
    return 2;
  }

  const CLI::App* cmd = app.get_subcommands().front();
  std::cerr << "# resolved configuration\nseed=" << g.seed << "\nprecision=" << g.precision
            << "\nprofile=" << g.profile << "\nthreads=" << g.threads << "\ncommand=" << cmd->get_name()
            << "\n" << cmd->config_to_str(true, false);
  if (g.threads > 1) {
    std::cerr << "note: this build computes on one worker; --threads " << g.threads
              << " is recorded but not used\n";
  }

  const bool f64 = g.precision == "f64";
  try {
    if (*c_synth) return cmd_synth(g, synth);
    if (*c_pre) return f64 ? cmd_pretrain<double>(g, pre) : cmd_pretrain<float>(g, pre);
    if (*c_ft) return f64 ? cmd_finetune<double>(g, ft) : cmd_finetune<float>(g, ft);
    if (*c_eval) return f64 ? cmd_eval<double>(g, ev) : cmd_eval<float>(g, ev);
    if (*c_pred) return f64 ? cmd_predict<double>(pr) : cmd_predict<float>(pr);
    if (*c_params) return cmd_params(pa);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
