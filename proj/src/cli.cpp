#include "adverseg/cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>

#include "adverseg/gradcheck.hpp"
#include "adverseg/training.hpp"

namespace adverseg {

namespace {

std::string read_text(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// --seed wins, then ADVERSEG_SEED, then `fallback`.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t fallback) {
  if (flag) return *flag;
  if (const char* env = std::getenv("ADVERSEG_SEED"); env && *env) {
    std::uint64_t v = 0;
    const std::string s(env);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ConfigError("ADVERSEG_SEED must be a non-negative integer, got '" + s + "'");
    }
    return v;
  }
  return fallback;
}

bool seed_overridden(const std::optional<std::uint64_t>& flag) {
  const char* env = std::getenv("ADVERSEG_SEED");
  return flag.has_value() || (env && *env);
}

struct GenDataArgs {
  std::string out;
  std::size_t count = 0;
  std::size_t height = 64;
  std::optional<std::size_t> width;
  std::size_t classes = 3;
  std::size_t in_channels = 1;
  std::size_t depth = 3;
  double noise = PhantomSpec{}.noise_sigma;
  std::optional<std::uint64_t> seed;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  PhantomSpec spec;
  spec.height = a.height;
  spec.width = a.width.value_or(a.height);
  spec.num_classes = a.classes;
  spec.in_channels = a.in_channels;
  spec.noise_sigma = a.noise;
  spec.seed = resolve_seed(a.seed, 0);
  if (a.count == 0) throw ConfigError("--count must be at least 1");
  if (a.depth == 0 || a.depth > 16) throw ConfigError("--depth must lie in [1, 16]");
  const std::size_t multiple = std::size_t{1} << a.depth;
  if (spec.height % multiple != 0 || spec.width % multiple != 0) {
    throw ConfigError("image size " + std::to_string(spec.height) + "x" + std::to_string(spec.width) +
                      " is not divisible by 2^depth = " + std::to_string(multiple) + " (depth " +
                      std::to_string(a.depth) + ")");
  }
  const auto samples = generate_dataset(spec, a.count);
  write_dataset(a.out, samples, spec.num_classes);
  out << "wrote " << a.count << " samples (" << spec.height << "x" << spec.width << ", C=" << spec.num_classes
      << ", CIN=" << spec.in_channels << ", seed=" << spec.seed << ") to " << a.out << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string data;
  std::optional<std::string> config;
  std::string out;
  std::optional<std::string> resume;
  bool no_adversarial = false;
  std::optional<double> lambda;
  std::optional<std::size_t> steps;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  TrainConfig cfg;
  if (a.config) cfg = parse_train_config(read_text(*a.config));
  for (const std::string& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_train_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (a.no_adversarial) cfg.adversarial_enabled = false;
  if (a.lambda) cfg.lambda_rec = *a.lambda;
  if (a.steps) cfg.steps = *a.steps;
  if (seed_overridden(a.seed)) cfg.seed = resolve_seed(a.seed, cfg.seed);
  cfg.validate();

  const DatasetManifest manifest = read_manifest(a.data);
  TrainOptions options;
  options.out_dir = a.out;
  if (a.resume) options.resume_from = *a.resume;
  options.on_eval = [&](const EvalRecord& e) {
    char line[128];
    std::snprintf(line, sizeof line, "eval step=%llu pa=%.4f dice=%.4f", static_cast<unsigned long long>(e.step),
                  e.report.pixel_accuracy, e.report.dice);
    err << line << "\n";
  };
  TrainResult result = train(manifest, cfg, options);
  write_text(std::filesystem::path(a.out) / "config.txt", format_train_config(result.state.config));
  out << format_report_line(result.final_report) << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string data;
  std::string checkpoint;
  std::string out;
  std::string name = "generator";
  std::string averaging = "foreground_macro";
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  Averaging averaging = Averaging::foreground_macro;
  if (a.averaging == "all_macro") {
    averaging = Averaging::all_macro;
  } else if (a.averaging != "foreground_macro") {
    throw ConfigError("--averaging must be foreground_macro or all_macro");
  }
  if (!std::filesystem::exists(a.checkpoint)) throw DataError("checkpoint not found: " + a.checkpoint);
  TrainState state = load_checkpoint(a.checkpoint);
  const DatasetManifest manifest = read_manifest(a.data);
  const MetricsReport report = evaluate(state.generator, manifest, a.name, averaging);
  const std::string line = format_report_line(report);
  write_text(a.out, line + "\n");
  out << line << "\n";
  return kExitOk;
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string columns = "pa,recall,iou,dice";
};

int cmd_report(const ReportArgs& a, std::ostream& out) {
  const std::vector<std::string> columns = parse_columns(a.columns);
  std::vector<MetricsReport> reports;
  for (const std::string& path : a.inputs) {
    auto rows = parse_report_text(read_text(path));
    if (rows.empty()) throw DataError("report file " + path + " holds no report lines");
    reports.insert(reports.end(), rows.begin(), rows.end());
  }
  out << render_table(reports, columns);
  return kExitOk;
}

struct GradcheckArgs {
  std::optional<std::string> layer;
  std::optional<std::uint64_t> seed;
  bool corrupt = false;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
  GradSuiteOptions options;
  options.only = a.layer;
  options.seed = resolve_seed(a.seed, 0);
  options.corrupt_backward = a.corrupt;
  bool all_ok = true;
  for (const GradCheckItem& item : run_gradcheck_suite(options)) {
    char line[256];
    std::snprintf(line, sizeof line, "%-4s %-28s rel_err=%.3e %s %.0e  worst=%s", item.passed() ? "OK" : "FAIL",
                  item.name.c_str(), item.max_rel_error, item.passed() ? "<" : ">=", item.threshold,
                  item.worst.c_str());
    out << line << "\n";
    if (!item.passed()) {
      all_ok = false;
      err << "gradient check failed: " << item.name << "\n";
    }
  }
  return all_ok ? kExitOk : kExitCheckFailed;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adversarial segmentation engine", "adverseg"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a seeded phantom dataset (TSR1 pairs plus manifest)");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--count", gen.count, "Number of samples")->required();
  gen_cmd->add_option("--size", gen.height, "Image height (and width unless --width is given)");
  gen_cmd->add_option("--width", gen.width, "Image width");
  gen_cmd->add_option("--classes", gen.classes, "Number of classes including background");
  gen_cmd->add_option("--in-channels", gen.in_channels, "Image channels");
  gen_cmd->add_option("--depth", gen.depth, "Encoder depth the size must be divisible for");
  gen_cmd->add_option("--noise", gen.noise, "Gaussian noise sigma");
  gen_cmd->add_option("--seed", gen.seed, "Seed");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train the generator and discriminator");
  train_cmd->add_option("--data", tr.data, "Dataset manifest")->required();
  train_cmd->add_option("--config", tr.config, "key = value config file");
  train_cmd->add_option("--out", tr.out, "Output directory")->required();
  train_cmd->add_option("--resume", tr.resume, "Continue from a checkpoint");
  train_cmd->add_flag("--no-adversarial", tr.no_adversarial, "Reconstruction loss only");
  train_cmd->add_option("--lambda", tr.lambda, "Reconstruction weight");
  train_cmd->add_option("--steps", tr.steps, "Generator updates");
  train_cmd->add_option("--seed", tr.seed, "Seed");
  train_cmd->add_option("--set", tr.overrides, "Extra key=value config overrides");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--data", ev.data, "Dataset manifest")->required();
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--out", ev.out, "Report file to write")->required();
  eval_cmd->add_option("--name", ev.name, "Model name in the report");
  eval_cmd->add_option("--averaging", ev.averaging, "foreground_macro or all_macro");

  ReportArgs rep;
  auto* report_cmd = app.add_subcommand("report", "Render stored reports as a table");
  report_cmd->add_option("--in", rep.inputs, "Report files")->required();
  report_cmd->add_option("--columns", rep.columns, "Comma-separated subset of pa,recall,iou,dice");

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks in double precision");
  gc_cmd->add_option("--layer", gc.layer, "Check a single item");
  gc_cmd->add_option("--seed", gc.seed, "Seed");
  gc_cmd->add_flag("--corrupt-backward", gc.corrupt)->group("");

  std::vector<std::string> reversed(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(reversed.begin(), reversed.end());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen, out);
    if (*train_cmd) return cmd_train(tr, out, err);
    if (*eval_cmd) return cmd_eval(ev, out);
    if (*report_cmd) return cmd_report(rep, out);
    if (*gc_cmd) return cmd_gradcheck(gc, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "training aborted: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace adverseg
