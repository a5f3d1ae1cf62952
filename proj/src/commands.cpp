#include "sr3/commands.hpp"

#include <map>

#include "sr3/checkpoint.hpp"
#include "sr3/errors.hpp"
#include "sr3/imaging.hpp"

namespace sr3 {

namespace fs = std::filesystem;

ToyData make_toy_data(const RunConfig& cfg) {
  Rng root(cfg.seed ^ 0x746F792D64617461ULL);  // "toy-data"
  Rng train_rng = root.fork();
  Rng val_rng = root.fork();
  ToyData out{synth_toy_dataset(cfg.toy_train_count, cfg.hr_size, cfg.scale, train_rng),
              synth_toy_dataset(cfg.toy_val_count, cfg.hr_size, cfg.scale, val_rng)};
  out.val.split = Split::Val;
  return out;
}

std::vector<PreprocessRow> cmd_preprocess(const fs::path& raw_dir, const fs::path& out_dir,
                                          const RunConfig& cfg, std::ostream& log) {
  PreprocessOptions options;
  options.hr_size = cfg.hr_size;
  options.scale = cfg.scale;
  options.val_fraction = cfg.val_fraction;
  options.seed = cfg.seed;
  log << cfg.dump() << std::flush;
  if (cfg.hr_size % cfg.scale != 0) throw ConfigError("data.hr_size must be divisible by data.scale");
  write_config(cfg, out_dir / "config.txt");
  auto rows = preprocess_corpus(raw_dir, out_dir, options);
  std::map<std::string, int> counts;
  for (const auto& r : rows) ++counts[r.action];
  for (const auto& [action, n] : counts) log << action << ": " << n << "\n";
  return rows;
}

namespace {

template <typename T>
TrainSummary train_impl(const RunConfig& cfg, std::ostream& log, const fs::path& resume) {
  const fs::path out_dir = cfg.out;
  DatasetHandle train_data, val_data;
  if (cfg.toy) {
    auto toy = make_toy_data(cfg);
    train_data = std::move(toy.train);
    val_data = std::move(toy.val);
  } else {
    if (cfg.data_root.empty()) {
      throw ConfigError(std::string("no corpus: set data.root, ") + kDataRootEnv + ", or pass --toy");
    }
    train_data = load_corpus(cfg.data_root, Split::Train, cfg.hr_size, cfg.scale);
    val_data = load_corpus(cfg.data_root, Split::Val, cfg.hr_size, cfg.scale);
  }
  const NoiseSchedule schedule = cfg.schedule.build();
  Rng init_rng(cfg.seed);
  UNet<T> model(cfg.denoiser(), init_rng);
  log << "model parameters: " << model.parameter_count() << "\n"
      << "training items: " << train_data.size() << ", validation items: " << val_data.size() << "\n";
  if (cfg.train.val_steps > 0 && cfg.train.val_steps < schedule.steps()) {
    log << "validation sampling uses " << cfg.train.val_steps << " of " << schedule.steps()
        << " steps (reduced)\n";
  }

  std::optional<TrainState<T>> resumed;
  if (!resume.empty()) {
    resumed = load_checkpoint<T>(resume);
    log << "resuming from " << resume.string() << " at step " << resumed->step << "\n";
  }
  KeyValues header = cfg.to_key_values();
  CheckpointStore sink(out_dir);
  const auto state = train_loop(model, train_data, schedule, cfg.train, sink, &val_data, header,
                                resumed ? &*resumed : nullptr);
  TrainSummary summary{state.step, sink.checkpoints_written(),
                       sink.log().empty() ? 0.0 : sink.log().back().loss, out_dir};
  log << "finished at step " << summary.steps << ", checkpoints written: " << summary.checkpoints
      << ", final loss " << summary.final_loss << "\n";
  return summary;
}

RunConfig config_from_header(const KeyValues& header) {
  RunConfig cfg;
  apply_overrides(cfg, header);
  return cfg;
}

template <typename T>
std::vector<fs::path> sample_impl(const SampleOptions& options, const KeyValues& header,
                                  const std::vector<fs::path>& inputs, std::ostream& log) {
  const RunConfig cfg = config_from_header(header);
  const TrainState<T> state = load_checkpoint<T>(options.checkpoint);
  Rng init_rng(0);
  UNet<T> model(cfg.denoiser(), init_rng);
  model.load_parameters(state.ema_params);
  model.eval();

  NoiseSchedule schedule = state.schedule;
  if (options.steps > 0 && options.steps < schedule.steps()) {
    log << "sampling with " << options.steps << " of " << schedule.steps() << " steps (reduced)\n";
    schedule = respace(schedule, options.steps);
  }
  const int lr_size = cfg.hr_size / cfg.scale;
  std::vector<fs::path> written;
  Rng root(options.seed);
  for (const auto& input : inputs) {
    const Image lr = load_image(input);
    if (lr.width != lr_size || lr.height != lr_size) {
      throw ShapeError(input.string() + ": LR image is " + std::to_string(lr.width) + "x" +
                       std::to_string(lr.height) + " but the checkpoint expects " +
                       std::to_string(lr_size) + "x" + std::to_string(lr_size) + " (hr " +
                       std::to_string(cfg.hr_size) + " / scale " + std::to_string(cfg.scale) + ")");
    }
    const Image lr_up = bicubic_resize(lr, cfg.hr_size, cfg.hr_size);
    Rng rng = root.fork();
    const auto out = sample(model, images_to_tensor<T>({&lr_up}), schedule, rng);
    const fs::path path = options.out_dir / (input.stem().string() + ".png");
    save_image(tensor_to_image(out, 0), path);
    log << input.string() << " -> " << path.string() << "\n";
    written.push_back(path);
  }
  return written;
}

std::map<std::string, fs::path> images_by_id(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  for (const auto& p : list_images(dir)) out.emplace(p.stem().string(), p);
  return out;
}

}  // namespace

TrainSummary cmd_train(const RunConfig& cfg, std::ostream& log, const fs::path& resume) {
  log << cfg.dump() << std::flush;
  cfg.validate();
  write_config(cfg, fs::path(cfg.out) / "config.txt");
  return cfg.precision == "double" ? train_impl<double>(cfg, log, resume)
                                   : train_impl<float>(cfg, log, resume);
}

std::vector<fs::path> cmd_sample(const SampleOptions& options, std::ostream& log) {
  if (options.steps < 0) throw ConfigError("--steps must be >= 0");
  // The header is precision independent; read it through the float decoder.
  const auto header = load_checkpoint<float>(options.checkpoint).header;
  const RunConfig cfg = config_from_header(header);
  std::vector<fs::path> inputs;
  if (fs::is_directory(options.input)) {
    inputs = list_images(options.input);
  } else if (fs::is_regular_file(options.input)) {
    inputs.push_back(options.input);
  } else {
    throw IoError("sample input not found: " + options.input.string());
  }
  if (inputs.empty()) throw IoError("no LR images in " + options.input.string());
  log << cfg.dump() << "sample.checkpoint = " << options.checkpoint.string()
      << "\nsample.seed = " << options.seed << "\nsample.steps = " << options.steps << "\n";
  fs::create_directories(options.out_dir);
  return cfg.precision == "double" ? sample_impl<double>(options, header, inputs, log)
                                   : sample_impl<float>(options, header, inputs, log);
}

MetricReport cmd_evaluate(const fs::path& sr_dir, const fs::path& hr_dir, const fs::path& out_dir,
                          std::ostream& log) {
  const auto sr = images_by_id(sr_dir);
  const auto hr = images_by_id(hr_dir);
  std::vector<MetricRow> rows;
  for (const auto& [id, path] : sr) {
    const auto match = hr.find(id);
    if (match == hr.end()) {
      log << "unmatched: " << id << " (no HR image)\n";
      continue;
    }
    const Image a = load_image(path), b = load_image(match->second);
    if (a.width != b.width || a.height != b.height) {
      log << "unmatched: " << id << " (dimension mismatch)\n";
      continue;
    }
    rows.push_back({id, psnr(a, b), ssim(a, b)});
  }
  for (const auto& [id, path] : hr) {
    if (!sr.count(id)) log << "unmatched: " << id << " (no SR image)\n";
  }
  if (rows.empty()) throw IoError("evaluate: no matching ids between " + sr_dir.string() + " and " + hr_dir.string());
  MetricReport report = summarize(std::move(rows));
  write_report_tsv(report, out_dir);
  log << "items: " << report.rows.size() << "\nmean psnr_db: " << format_metric(report.mean_psnr)
      << "\nmean ssim: " << format_metric(report.mean_ssim) << "\n";
  return report;
}

MetricReport cmd_eda(const fs::path& triplet_dir, const fs::path& out_dir, std::ostream& log) {
  const auto lr = images_by_id(triplet_dir / "lr");
  const auto sr = images_by_id(triplet_dir / "sr");
  const auto hr = images_by_id(triplet_dir / "hr");
  std::vector<ImageTriplet> triplets;
  for (const auto& [id, path] : sr) {
    const auto h = hr.find(id);
    const auto l = lr.find(id);
    if (h == hr.end() || l == lr.end()) {
      log << "unmatched: " << id << "\n";
      continue;
    }
    triplets.push_back({id, load_image(l->second), load_image(path), load_image(h->second)});
  }
  if (triplets.empty()) throw IoError("eda: no complete triplets under " + triplet_dir.string());
  MetricReport report = eda_report(triplets, out_dir);
  log << "triplets: " << triplets.size() << "\nmean psnr_db: " << format_metric(report.mean_psnr)
      << "\nmean ssim: " << format_metric(report.mean_ssim) << "\n";
  return report;
}

int exit_code_for(const std::exception& error) {
  if (dynamic_cast<const std::invalid_argument*>(&error)) return kExitConfig;
  if (dynamic_cast<const IoError*>(&error)) return kExitIo;
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&error)) return kExitIo;
  if (dynamic_cast<const NumericalError*>(&error)) return kExitNumerical;
  return kExitOther;
}

}  // namespace sr3
