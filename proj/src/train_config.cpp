#include <charconv>
#include <set>
#include <sstream>

#include "adverseg/training.hpp"

namespace adverseg {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("config key '" + key + "': expected " + expected + ", got '" + value + "'");
}

double to_double(const std::string& key, const std::string& value) {
  double v = 0.0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (value.empty() || ec != std::errc() || ptr != end) bad_value(key, value, "a number");
  return v;
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (value.empty() || ec != std::errc() || ptr != end) bad_value(key, value, "a non-negative integer");
  return v;
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "true or false");
}

std::vector<std::size_t> to_list(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  std::stringstream ss(value);
  for (std::string tok; std::getline(ss, tok, ',');) out.push_back(to_u64(key, trim(tok)));
  if (out.empty()) bad_value(key, value, "a comma-separated list of integers");
  return out;
}

std::string list_str(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t x : v) out += (out.empty() ? "" : ",") + std::to_string(x);
  return out;
}

const char* bool_str(bool b) { return b ? "true" : "false"; }

}  // namespace

void TrainConfig::validate() const {
  if (!(lambda_rec >= 0.0)) throw ConfigError("lambda_rec must be >= 0");
  if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be >= 0");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (d_steps_per_g_step == 0) throw ConfigError("d_steps_per_g_step must be >= 1");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) throw ConfigError("holdout_fraction must lie in [0, 1)");
  if (!(augment.p_flip >= 0.0 && augment.p_flip <= 1.0) || !(augment.p_rotate >= 0.0 && augment.p_rotate <= 1.0)) {
    throw ConfigError("augmentation probabilities must lie in [0, 1]");
  }
  if (!(augment.jitter_gain >= 0.0 && augment.jitter_gain < 1.0)) throw ConfigError("augment_gain must lie in [0, 1)");
  if (!(augment.jitter_offset >= 0.0)) throw ConfigError("augment_offset must be >= 0");
  net.validate();
}

const std::vector<std::string>& train_config_keys() {
  static const std::vector<std::string> keys{
      "lambda_rec",       "lr",               "adam_beta1",       "adam_beta2",      "adam_eps",
      "clip_norm",        "batch_size",       "steps",            "seed",            "d_steps_per_g_step",
      "adversarial",      "convention",       "label_smoothing",  "eval_every",      "holdout_fraction",
      "augment_p_flip",   "augment_p_rotate", "augment_gain",     "augment_offset",  "in_channels",
      "num_classes",      "encoder_channels", "disc_channels",    "head",            "skip_connections",
      "conditional_disc",
  };
  return keys;
}

void set_train_config_key(TrainConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "lambda_rec") {
    cfg.lambda_rec = to_double(key, value);
  } else if (key == "lr") {
    cfg.lr = to_double(key, value);
  } else if (key == "adam_beta1") {
    cfg.beta1 = to_double(key, value);
  } else if (key == "adam_beta2") {
    cfg.beta2 = to_double(key, value);
  } else if (key == "adam_eps") {
    cfg.adam_eps = to_double(key, value);
  } else if (key == "clip_norm") {
    cfg.clip_norm = to_double(key, value);
  } else if (key == "batch_size") {
    cfg.batch_size = to_u64(key, value);
  } else if (key == "steps") {
    cfg.steps = to_u64(key, value);
  } else if (key == "seed") {
    cfg.seed = to_u64(key, value);
  } else if (key == "d_steps_per_g_step") {
    cfg.d_steps_per_g_step = to_u64(key, value);
  } else if (key == "adversarial") {
    cfg.adversarial_enabled = to_bool(key, value);
  } else if (key == "convention") {
    if (value == "paper_equation") {
      cfg.convention = LossConvention::paper_equation;
    } else if (value == "standard_gan") {
      cfg.convention = LossConvention::standard_gan;
    } else {
      bad_value(key, value, "paper_equation or standard_gan");
    }
  } else if (key == "label_smoothing") {
    cfg.label_smoothing = to_bool(key, value);
  } else if (key == "eval_every") {
    cfg.eval_every = to_u64(key, value);
  } else if (key == "holdout_fraction") {
    cfg.holdout_fraction = to_double(key, value);
  } else if (key == "augment_p_flip") {
    cfg.augment.p_flip = to_double(key, value);
  } else if (key == "augment_p_rotate") {
    cfg.augment.p_rotate = to_double(key, value);
  } else if (key == "augment_gain") {
    cfg.augment.jitter_gain = to_double(key, value);
  } else if (key == "augment_offset") {
    cfg.augment.jitter_offset = to_double(key, value);
  } else if (key == "in_channels") {
    cfg.net.in_channels = to_u64(key, value);
  } else if (key == "num_classes") {
    cfg.net.num_classes = to_u64(key, value);
  } else if (key == "encoder_channels") {
    cfg.net.encoder_channels = to_list(key, value);
  } else if (key == "disc_channels") {
    cfg.net.disc_channels = to_list(key, value);
  } else if (key == "head") {
    if (value == "sigmoid") {
      cfg.net.head = HeadType::sigmoid_per_class;
    } else if (value == "softmax") {
      cfg.net.head = HeadType::softmax;
    } else {
      bad_value(key, value, "sigmoid or softmax");
    }
  } else if (key == "skip_connections") {
    cfg.net.skip_connections = to_bool(key, value);
  } else if (key == "conditional_disc") {
    cfg.net.conditional_disc = to_bool(key, value);
  } else {
    std::string valid;
    for (const auto& k : train_config_keys()) valid += (valid.empty() ? "" : ", ") + k;
    throw ConfigError("unknown config key '" + key + "'; valid keys: " + valid);
  }
}

TrainConfig parse_train_config(const std::string& text, const TrainConfig& base) {
  TrainConfig cfg = base;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto where = "config line " + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      set_train_config_key(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return cfg;
}

std::string format_train_config(const TrainConfig& cfg) {
  std::string out;
  auto put = [&](const char* key, const std::string& value) { out += std::string(key) + " = " + value + "\n"; };
  put("lambda_rec", format_double(cfg.lambda_rec));
  put("lr", format_double(cfg.lr));
  put("adam_beta1", format_double(cfg.beta1));
  put("adam_beta2", format_double(cfg.beta2));
  put("adam_eps", format_double(cfg.adam_eps));
  put("clip_norm", format_double(cfg.clip_norm));
  put("batch_size", std::to_string(cfg.batch_size));
  put("steps", std::to_string(cfg.steps));
  put("seed", std::to_string(cfg.seed));
  put("d_steps_per_g_step", std::to_string(cfg.d_steps_per_g_step));
  put("adversarial", bool_str(cfg.adversarial_enabled));
  put("convention", cfg.convention == LossConvention::paper_equation ? "paper_equation" : "standard_gan");
  put("label_smoothing", bool_str(cfg.label_smoothing));
  put("eval_every", std::to_string(cfg.eval_every));
  put("holdout_fraction", format_double(cfg.holdout_fraction));
  put("augment_p_flip", format_double(cfg.augment.p_flip));
  put("augment_p_rotate", format_double(cfg.augment.p_rotate));
  put("augment_gain", format_double(cfg.augment.jitter_gain));
  put("augment_offset", format_double(cfg.augment.jitter_offset));
  put("in_channels", std::to_string(cfg.net.in_channels));
  put("num_classes", std::to_string(cfg.net.num_classes));
  put("encoder_channels", list_str(cfg.net.encoder_channels));
  put("disc_channels", list_str(cfg.net.disc_channels));
  put("head", cfg.net.head == HeadType::sigmoid_per_class ? "sigmoid" : "softmax");
  put("skip_connections", bool_str(cfg.net.skip_connections));
  put("conditional_disc", bool_str(cfg.net.conditional_disc));
  return out;
}

}  // namespace adverseg
