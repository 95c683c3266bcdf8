#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include "eranet/eranet.hpp"
#include "image_io.hpp"

namespace fs = std::filesystem;

namespace eranet::cli {

namespace {

struct UsageError : Error {
  using Error::Error;
};
struct WeightsError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};

struct Size {
  std::size_t w = 0, h = 0;
};

Size parse_size(const std::string& s) {
  const auto x = s.find_first_of("xX");
  Size r;
  auto num = [&](std::string_view v, std::size_t& dst) {
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), dst);
    return ec == std::errc() && p == v.data() + v.size() && dst > 0;
  };
  const std::string_view sv(s);
  if (x == std::string::npos || !num(sv.substr(0, x), r.w) || !num(sv.substr(x + 1), r.h))
    throw UsageError("size must look like WxH, got '" + s + "'");
  return r;
}

template <class F>
auto as_usage(F&& f) {
  try {
    return f();
  } catch (const ValueError& e) {
    throw UsageError(e.what());
  }
}

std::string fixed(double v, int prec) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

template <typename T>
EraNet<T> load_model(const fs::path& p) {
  try {
    return load_weights_file<T>(p);
  } catch (const WeightFormatError&) {
    throw;
  } catch (const Error& e) {
    throw WeightsError(e.what());
  }
}

Tensor4<double> to_double(const Tensor4<float>& t) { return t.cast<double>(); }

// ---------------------------------------------------------------- architecture flags

struct ArchFlags {
  std::size_t channels = 32, blocks = 5, expansion = 2, cam_reduction = 8;
  bool no_cam = false, no_sam = false, plain_krm = false, no_residual = false;
  std::string edge = "kirsch", cam_act = "relu";

  void add(CLI::App* app) {
    app->add_option("--channels", channels, "trunk width")->capture_default_str();
    app->add_option("--blocks", blocks, "number of residual blocks")->capture_default_str();
    app->add_option("--expansion", expansion, "expand/squeeze width multiplier")->capture_default_str();
    app->add_option("--cam-reduction", cam_reduction, "channel attention reduction ratio")->capture_default_str();
    app->add_flag("--no-cam", no_cam, "drop channel attention");
    app->add_flag("--no-sam", no_sam, "drop spatial attention");
    app->add_flag("--plain-krm", plain_krm, "replace the reparameterization module with a plain 3x3 conv");
    app->add_flag("--no-residual", no_residual, "drop the input-to-output skip");
    app->add_option("--edge", edge, "edge bank: kirsch, sobel, prewitt, roberts, laplacian, none")->capture_default_str();
    app->add_option("--cam-act", cam_act, "attention MLP activation: relu or identity")->capture_default_str();
  }

  ModelConfig config() const {
    ModelConfig c;
    c.channels = channels;
    c.blocks = blocks;
    c.expansion = expansion;
    c.cam_reduction = cam_reduction;
    c.use_cam = !no_cam;
    c.use_sam = !no_sam;
    c.plain_krm = plain_krm;
    c.global_residual = !no_residual;
    as_usage([&] {
      c.edge = edge_operator_from(edge);
      c.cam_activation = cam_activation_from(cam_act);
      c.validate();
      return 0;
    });
    return c;
  }
};

// ---------------------------------------------------------------- data

struct SynthFlags {
  std::string scene = "mixed";
  std::uint64_t seed = 7;
  std::size_t count = 20;
  std::string size = "32x32";
  std::string clean_dir;

  void add(CLI::App* app) {
    app->add_option("--scene", scene, "haze, rain, lowlight or mixed")->capture_default_str();
    app->add_option("--seed", seed, "random seed")->capture_default_str();
    app->add_option("--count", count, "number of pairs")->capture_default_str();
    app->add_option("--size", size, "procedural image size WxH")->capture_default_str();
    app->add_option("--clean", clean_dir, "directory of clean images to degrade instead of procedural ones");
  }

  Dataset<double> generate() const {
    const Scene sc = as_usage([&] { return scene_from(scene); });
    std::vector<Tensor4<double>> clean;
    if (!clean_dir.empty()) {
      for (const auto& p : io::list_images(clean_dir)) clean.push_back(to_double(io::read_image(p)));
      if (clean.empty()) throw DataError("no images found in '" + clean_dir + "'");
    } else {
      const Size sz = parse_size(size);
      if (count == 0) throw UsageError("--count must be positive");
      clean = procedural_set<double>(count, sz.h, sz.w, seed);
    }
    return gen_dataset(clean, sc, seed);
  }
};

Dataset<double> load_pairs(const fs::path& dir) {
  const auto degraded = io::list_images(dir / "degraded");
  if (!fs::is_directory(dir / "degraded") || degraded.empty())
    throw DataError("'" + dir.string() + "' has no degraded/ images");
  Dataset<double> d;
  for (const auto& p : degraded) {
    const fs::path c = dir / "clean" / p.filename();
    if (!fs::exists(c)) throw DataError("missing clean counterpart for '" + p.string() + "'");
    d.push_back({to_double(io::read_image(p)), to_double(io::read_image(c)), Scene::mixed, p.filename().string()});
  }
  return d;
}

// ---------------------------------------------------------------- commands

int cmd_synth(const SynthFlags& f, const std::string& out_dir, const std::string& format, std::ostream& out) {
  if (format != "png" && format != "eraf") throw UsageError("--format must be png or eraf");
  const auto data = f.generate();
  fs::create_directories(fs::path(out_dir) / "clean");
  fs::create_directories(fs::path(out_dir) / "degraded");
  std::ostringstream log;
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::ostringstream name;
    name << std::setw(4) << std::setfill('0') << i << "." << format;
    io::write_image(fs::path(out_dir) / "clean" / name.str(), data[i].clean.cast<float>());
    io::write_image(fs::path(out_dir) / "degraded" / name.str(), data[i].degraded.cast<float>());
    log << data[i].log << "\n";
  }
  const std::string text = log.str();
  write_file_atomic(fs::path(out_dir) / "params.log",
                    std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  out << "wrote " << data.size() << " pairs to " << out_dir << "\n";
  return kOk;
}

struct TrainFlags {
  std::string data_dir, out, curve;
  std::size_t steps = 200, epochs = 120, batch = 4, decay_period = 30, holdout = 0;
  double lr = 1e-3;
  bool clip = false;
};

int cmd_train(const TrainFlags& t, const SynthFlags& s, const ArchFlags& a, std::ostream& out) {
  const ModelConfig cfg = a.config();
  const Dataset<double> data = t.data_dir.empty() ? s.generate() : load_pairs(t.data_dir);
  if (t.batch == 0) throw UsageError("--batch must be positive");
  TrainConfig tc;
  tc.schedule.base_lr = t.lr;
  tc.schedule.period = t.decay_period;
  tc.epochs = t.epochs;
  tc.max_steps = t.steps;
  tc.batch = t.batch;
  tc.seed = s.seed;
  tc.clip = t.clip;
  std::ostringstream curve;
  tc.on_epoch = [&](const EpochLog& e) {
    out << format_epoch(e) << "\n";
    curve << format_epoch(e) << "\n";
  };
  auto model = EraNet<double>::initialized(cfg, s.seed);
  const double initial = dataset_loss(model, data, tc).total;
  out << "pairs=" << data.size() << " params=" << model.param_count() << " initial_loss=" << fixed(initial, 6) << "\n";
  const auto res = train(model, data, tc);
  const double final_loss = dataset_loss(model, data, tc).total;
  out << "steps=" << res.steps << " final_loss=" << fixed(final_loss, 6) << " ratio=" << fixed(final_loss / initial, 4)
      << "\n";
  if (t.holdout > 0) {
    SynthFlags h = s;
    h.count = t.holdout;
    h.seed = s.seed + 1000;
    h.clean_dir.clear();
    const auto rep = evaluate(model.fused(), h.generate());
    out << "holdout psnr_in=" << fixed(rep.mean_psnr_in, 4) << " psnr_out=" << fixed(rep.mean_psnr_out, 4)
        << " delta=" << fixed(rep.mean_psnr_delta, 4) << " ssim_delta=" << fixed(rep.mean_ssim_delta, 4) << "\n";
  }
  save_weights_file(model, t.out);
  if (!t.curve.empty()) {
    const std::string text = curve.str();
    write_file_atomic(t.curve, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }
  out << "saved " << t.out << "\n";
  return kOk;
}

int cmd_fuse(const std::string& in, const std::string& dst, std::ostream& out) {
  const auto model = load_model<double>(in);
  if (model.mode() == ModelMode::fused) throw WeightsError("'" + in + "' is already fused");
  const auto fused = model.fused();
  const auto& cfg = model.config();
  const std::size_t before = model.param_count(), after = fused.param_count();
  out << "parameters training=" << before << " fused=" << after << " ratio=" << fixed(double(before) / after, 2)
      << "x\n";
  if (cfg.blocks > 0 && !cfg.plain_krm) {
    const std::size_t k = krm_param_count(cfg.krm_layout()), f = fused_param_count(cfg.channels);
    out << "per-module training=" << k << " fused=" << f << " ratio=" << fixed(double(k) / f, 2) << "x\n";
  }
  save_weights_file(fused, dst);
  out << "saved " << dst << "\n";
  return kOk;
}

std::size_t thread_budget(std::size_t requested) {
  std::size_t n = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("ERA_THREADS"); env && *env) {
    std::size_t cap = 0;
    const std::string_view v(env);
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), cap);
    if (ec != std::errc() || p != v.data() + v.size() || cap == 0)
      throw UsageError("ERA_THREADS must be a positive integer, got '" + std::string(v) + "'");
    n = std::min(n, cap);
  }
  return n;
}

struct EnhanceFlags {
  std::string weights, in, out_dir;
  bool fused_only = false, no_fuse = false;
  std::size_t threads = 0;
};

int cmd_enhance(const EnhanceFlags& f, std::ostream& out, std::ostream& err) {
  if (f.fused_only && f.no_fuse) throw UsageError("--fused-only and --no-fuse are exclusive");
  auto model = load_model<float>(f.weights);
  if (model.mode() == ModelMode::training) {
    if (f.fused_only) throw WeightsError("'" + f.weights + "' holds training-mode weights and --fused-only is set");
    if (!f.no_fuse) model = model.fused();
  }
  if (!fs::exists(f.in)) throw DataError("input '" + f.in + "' does not exist");
  const auto inputs = io::list_images(f.in);
  if (inputs.empty()) throw DataError("no images found in '" + f.in + "'");
  fs::create_directories(f.out_dir);

  struct Result {
    bool ok = false;
    std::string line;
  };
  std::vector<Result> results(inputs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < inputs.size(); i = next++) {
      const auto& p = inputs[i];
      try {
        const auto img = io::read_image(p);
        if (img.n() != 1 || img.c() != 3) throw io::ImageError(p.string() + ": expected one RGB image");
        const auto t0 = std::chrono::steady_clock::now();
        const auto y = model.forward(img);
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        fs::path dst = fs::path(f.out_dir) / p.filename();
        io::write_image(dst, y);
        results[i] = {true, "enhanced " + p.filename().string() + " " + std::to_string(img.w()) + "x" +
                                std::to_string(img.h()) + " time_ms=" + fixed(ms, 3)};
      } catch (const std::exception& e) {
        results[i] = {false, std::string("warning: skipped ") + p.string() + ": " + e.what()};
      }
    }
  };
  const std::size_t n = std::min(thread_budget(f.threads), inputs.size());
  std::vector<std::thread> pool;
  for (std::size_t k = 1; k < n; ++k) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::size_t ok = 0;
  for (const auto& r : results) {
    (r.ok ? out : err) << r.line << "\n";
    ok += r.ok;
  }
  out << "mode=" << to_string(model.mode()) << " images=" << ok << "/" << inputs.size() << "\n";
  return ok == 0 ? kData : kOk;
}

int cmd_metrics(const std::string& ref, const std::string& test, std::ostream& out) {
  auto refs = io::list_images(ref), tests = io::list_images(test);
  if (refs.size() != tests.size())
    throw DataError("reference has " + std::to_string(refs.size()) + " images, test has " + std::to_string(tests.size()));
  if (refs.empty()) throw DataError("no images to compare");
  double sum_p = 0, sum_s = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto a = to_double(io::read_image(refs[i])), b = to_double(io::read_image(tests[i]));
    if (a.shape() != b.shape())
      throw DataError(refs[i].string() + " and " + tests[i].string() + " differ in size");
    const double p = psnr(b, a), s = ssim(b, a).value;
    sum_p += p;
    sum_s += s;
    out << "pair=" << tests[i].filename().string() << " psnr=" << format_metric(p) << " ssim=" << fixed(s, 6) << "\n";
  }
  const double n = static_cast<double>(refs.size());
  out << "mean psnr=" << format_metric(sum_p / n) << " ssim=" << fixed(sum_s / n, 6) << "\n";
  return kOk;
}

struct BenchFlags {
  std::string weights, size = "256x256";
  std::size_t iters = 10, warmup = 2;
  std::uint64_t seed = 7;
};

struct Stats {
  double mean = 0, median = 0, p95 = 0;
};

Stats summarize(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  Stats s;
  for (double x : v) s.mean += x / static_cast<double>(v.size());
  s.median = v.size() % 2 ? v[v.size() / 2] : (v[v.size() / 2 - 1] + v[v.size() / 2]) / 2;
  const auto idx = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(v.size()))) - 1;
  s.p95 = v[std::min(idx, v.size() - 1)];
  return s;
}

int cmd_bench(const BenchFlags& b, const ArchFlags& a, std::ostream& out) {
  const Size sz = parse_size(b.size);
  if (sz.w < 8 || sz.h < 8) throw UsageError("--size must be at least 8x8");
  std::optional<EraNet<float>> maybe_training;
  EraNet<float> fused = b.weights.empty() ? EraNet<double>::initialized(a.config(), b.seed).cast<float>().fused()
                                          : load_model<float>(b.weights);
  if (b.weights.empty()) {
    maybe_training = EraNet<double>::initialized(a.config(), b.seed).cast<float>();
  } else if (fused.mode() == ModelMode::training) {
    maybe_training = fused;
    fused = fused.fused();
  }
  const ModelConfig& cfg = fused.config();
  const std::size_t mt = analytic_macs(cfg, ModelMode::training, sz.h, sz.w);
  const std::size_t mf = analytic_macs(cfg, ModelMode::fused, sz.h, sz.w);
  out << "size=" << sz.w << "x" << sz.h << " macs training=" << mt << " fused=" << mf
      << " ratio=" << fixed(double(mt) / double(mf), 3) << "\n";
  if (!cfg.plain_krm) {
    const std::size_t kt = krm_macs_per_pixel(cfg.krm_layout()), kf = fused_macs_per_pixel(cfg.channels);
    out << "per-module macs training=" << kt * sz.w * sz.h << " fused=" << kf * sz.w * sz.h
        << " ratio=" << fixed(double(kt) / double(kf), 3) << "\n";
  }
  if (!(mf < mt) && !cfg.plain_krm) throw Error("analytic fused cost is not below training cost");

  Rng rng(b.seed);
  const auto x = random_uniform<float>({1, 3, sz.h, sz.w}, rng, 0, 1);
  auto time_mode = [&](const EraNet<float>& m, const char* label) -> double {
    for (std::size_t i = 0; i < b.warmup; ++i) (void)m.forward(x);
    if (b.iters == 0) {
      out << label << " warmup=" << b.warmup << " iters=0 (no statistics)\n";
      return 0;
    }
    std::vector<double> ms;
    for (std::size_t i = 0; i < b.iters; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      (void)m.forward(x);
      ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    const Stats s = summarize(ms);
    out << label << " mean_ms=" << fixed(s.mean, 3) << " median_ms=" << fixed(s.median, 3) << " p95_ms=" << fixed(s.p95, 3)
        << " fps=" << fixed(1000.0 / s.mean, 3) << "\n";
    return s.mean;
  };
  const double tf = time_mode(fused, "fused");
  if (maybe_training) {
    const double tt = time_mode(*maybe_training, "training");
    if (b.iters > 0) out << "measured speedup=" << fixed(tt / tf, 3) << "x\n";
  }
  return kOk;
}

int cmd_inspect(const std::string& path, std::ostream& out) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const Error& e) {
    throw WeightsError(e.what());
  }
  const WeightFile f = decode_weights(bytes);
  out << "file=" << path << " bytes=" << bytes.size() << " version=" << f.version << " mode=" << to_string(f.mode)
      << " tensors=" << f.tensors.size() << "\n";
  std::size_t scalars = 0;
  for (const auto& t : f.tensors) {
    std::string dims;
    for (std::size_t k = 0; k < t.dims.size(); ++k) dims += (k ? "x" : "") + std::to_string(t.dims[k]);
    const auto crc = crc32_of(std::span(reinterpret_cast<const std::uint8_t*>(t.data.data()), t.data.size() * 4));
    std::ostringstream hex;
    hex << std::hex << std::setw(8) << std::setfill('0') << crc;
    out << "  " << t.name << " [" << dims << "] crc32=" << hex.str() << "\n";
    if (t.name != kConfigTensor && !t.name.ends_with("edge_kernels")) scalars += t.data.size();
  }
  std::ostringstream crc;
  crc << std::hex << std::setw(8) << std::setfill('0') << f.crc;
  out << "stored_parameters=" << scalars << " checksum=" << crc.str() << "\n";
  const auto m = from_weight_file<float>(f);
  const auto& c = m.config();
  out << "architecture channels=" << c.channels << " blocks=" << c.blocks << " edge=" << to_string(c.edge)
      << " cam=" << (c.use_cam ? "on" : "off") << " sam=" << (c.use_sam ? "on" : "off")
      << " params=" << m.param_count() << " bytes=" << m.param_report().bytes() << "\n";
  return kOk;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::string path;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw UsageError("--config needs a file");
      path = args[++i];
    } else if (args[i].starts_with("--config=")) {
      path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (path.empty()) return rest;
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file '" + path + "'");
  std::vector<std::string> injected;
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    line = trim(line.substr(0, line.find('#')));
    if (line.empty() || line.front() == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(no) + ": expected key = value");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.starts_with("--")) key = key.substr(2);
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (value == "true") {
      injected.push_back("--" + key);
    } else if (value != "false") {
      injected.push_back("--" + key);
      injected.push_back(value);
    }
  }
  std::size_t sub = 1;
  while (sub < rest.size() && rest[sub].starts_with("-")) ++sub;
  if (sub >= rest.size()) throw UsageError("--config needs a command");
  rest.insert(rest.begin() + static_cast<std::ptrdiff_t>(sub) + 1, injected.begin(), injected.end());
  return rest;
}

int run(const std::vector<std::string>& raw, std::ostream& out, std::ostream& err) {
  CLI::App app{"Edge-guided reparameterized restoration network: synthesis, training, fusion and inference"};
  app.name("eranet");
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_version_flag("--version", "eranet 1.0");
  app.add_option("--config", "key = value file mirroring the command's flags (flags win)");

  SynthFlags synth_f;
  std::string synth_out, synth_format = "png";
  auto* synth = app.add_subcommand("synth", "generate degraded/clean pairs");
  synth_f.add(synth);
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--format", synth_format, "png or eraf")->capture_default_str();

  TrainFlags train_f;
  SynthFlags train_s;
  ArchFlags train_a;
  auto* tr = app.add_subcommand("train", "train a model on synthetic or on-disk pairs");
  train_s.add(tr);
  train_a.add(tr);
  tr->add_option("--data", train_f.data_dir, "directory produced by synth (degraded/ and clean/)");
  tr->add_option("--out", train_f.out, "weights file to write")->required();
  tr->add_option("--curve", train_f.curve, "write per-epoch loss lines here");
  tr->add_option("--steps", train_f.steps, "optimizer steps (0 = run all epochs)")->capture_default_str();
  tr->add_option("--epochs", train_f.epochs, "epoch limit")->capture_default_str();
  tr->add_option("--batch", train_f.batch, "batch size")->capture_default_str();
  tr->add_option("--lr", train_f.lr, "initial learning rate")->capture_default_str();
  tr->add_option("--decay-period", train_f.decay_period, "epochs between 10x decays")->capture_default_str();
  tr->add_option("--holdout", train_f.holdout, "held-out synthetic pairs to evaluate after training")
      ->capture_default_str();
  tr->add_flag("--clip", train_f.clip, "clip the global gradient norm at 1");

  std::string fuse_in, fuse_out;
  auto* fu = app.add_subcommand("fuse", "collapse every reparameterization module into one conv");
  fu->add_option("--in", fuse_in, "training-mode weights")->required();
  fu->add_option("--out", fuse_out, "fused weights to write")->required();

  EnhanceFlags enh_f;
  auto* en = app.add_subcommand("enhance", "restore images");
  en->add_option("--weights", enh_f.weights, "weights file")->required();
  en->add_option("--in", enh_f.in, "image or directory")->required();
  en->add_option("--out", enh_f.out_dir, "output directory")->required();
  en->add_flag("--fused-only", enh_f.fused_only, "refuse training-mode weight files");
  en->add_flag("--no-fuse", enh_f.no_fuse, "run training-mode weights without fusing");
  en->add_option("--threads", enh_f.threads, "worker threads (0 = all cores, capped by ERA_THREADS)");

  std::string met_ref, met_test;
  auto* me = app.add_subcommand("metrics", "PSNR and SSIM of test images against references");
  me->add_option("--ref", met_ref, "reference image or directory")->required();
  me->add_option("--test", met_test, "test image or directory")->required();

  BenchFlags bench_f;
  ArchFlags bench_a;
  auto* be = app.add_subcommand("bench", "latency of training-mode and fused inference");
  be->add_option("--weights", bench_f.weights, "weights file (default: freshly initialized model)");
  be->add_option("--size", bench_f.size, "frame size WxH")->capture_default_str();
  be->add_option("--iters", bench_f.iters, "timed iterations")->capture_default_str();
  be->add_option("--warmup", bench_f.warmup, "untimed iterations")->capture_default_str();
  be->add_option("--seed", bench_f.seed, "seed for the initialized model and input")->capture_default_str();
  bench_a.add(be);

  std::string insp_path;
  auto* in = app.add_subcommand("inspect", "dump a weight file's header and tensors");
  in->add_option("weights,--weights", insp_path, "weights file")->required();

  try {
    auto args = expand_config(raw);
    std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_f, synth_out, synth_format, out);
    if (tr->parsed()) return cmd_train(train_f, train_s, train_a, out);
    if (fu->parsed()) return cmd_fuse(fuse_in, fuse_out, out);
    if (en->parsed()) return cmd_enhance(enh_f, out, err);
    if (me->parsed()) return cmd_metrics(met_ref, met_test, out);
    if (be->parsed()) return cmd_bench(bench_f, bench_a, out);
    if (in->parsed()) return cmd_inspect(insp_path, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const WeightFormatError& e) {
    err << "error: bad weight file: " << e.what() << "\n";
    return kWeights;
  } catch (const WeightsError& e) {
    err << "error: " << e.what() << "\n";
    return kWeights;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}

int run(int argc, char** argv) { return run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr); }

}  // namespace eranet::cli
