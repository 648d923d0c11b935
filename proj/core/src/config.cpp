#include "bullettrain/config.hpp"

#include <charconv>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bullettrain/errors.hpp"
#include "bullettrain/io.hpp"
#include "bullettrain/rng.hpp"

namespace bt {

namespace {

using Config = ExperimentConfig;

template <typename F>
void for_each_field(F&& f) {
  f("run.algorithm", &Config::algorithm);
  f("run.seed", &Config::seed);
  f("run.epochs", &Config::epochs);
  f("run.batch_size", &Config::batch_size);

  f("dataset.kind", &Config::dataset);
  f("dataset.train_size", &Config::train_size);
  f("dataset.test_size", &Config::test_size);
  f("dataset.noise", &Config::noise);
  f("dataset.train_images", &Config::train_images);
  f("dataset.train_labels", &Config::train_labels);
  f("dataset.test_images", &Config::test_images);
  f("dataset.test_labels", &Config::test_labels);

  f("model.arch", &Config::arch);

  f("optim.lr", &Config::lr);
  f("optim.momentum", &Config::momentum);
  f("optim.weight_decay", &Config::weight_decay);
  f("optim.lr_decay_epochs", &Config::lr_decay_epochs);
  f("optim.lr_decay_factor", &Config::lr_decay_factor);

  f("loss.kind", &Config::loss);
  f("loss.beta", &Config::beta);
  f("loss.jsd_weight", &Config::jsd_weight);

  f("attack.generator", &Config::generator);
  f("attack.epsilon", &Config::epsilon);
  f("attack.step_size", &Config::step_size);
  f("attack.steps", &Config::steps);
  f("attack.random_init", &Config::random_init);
  f("attack.warmup_epochs", &Config::warmup_epochs);

  f("budget.outlier_steps", &Config::outlier_steps);
  f("budget.robust_steps", &Config::robust_steps);
  f("budget.boundary_steps", &Config::boundary_steps);
  f("budget.outlier_step_size", &Config::outlier_step_size);
  f("budget.robust_step_size", &Config::robust_step_size);
  f("budget.boundary_step_size", &Config::boundary_step_size);

  f("mining.momentum", &Config::mining_momentum);
  f("mining.gamma", &Config::gamma);
  f("mining.oracle_steps", &Config::oracle_steps);

  f("augment.chain_length", &Config::chain_length);
  f("augment.noise_sigma", &Config::noise_sigma);
  f("augment.max_translate", &Config::max_translate);
  f("augment.cutout_size", &Config::cutout_size);
  f("augment.mix", &Config::mix);

  f("eval.steps", &Config::eval_steps);
  f("eval.restarts", &Config::eval_restarts);
  f("eval.step_size", &Config::eval_step_size);
  f("eval.size", &Config::eval_size);
  f("eval.every", &Config::eval_every);
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string out(buf, ptr);
  // Keep doubles recognisable as floats in the key/value form.
  if (out.find_first_of(".eEn") == std::string::npos) out += ".0";
  return out;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  return out + "\"";
}

std::string format_value(const std::string& v) { return quote(v); }
std::string format_value(double v) { return format_double(v); }
std::string format_value(std::uint64_t v) { return std::to_string(v); }
std::string format_value(bool v) { return v ? "true" : "false"; }

void parse_value(std::string_view name, std::string_view text, std::string& out) {
  if (text.size() >= 2 && text.front() == '"' && text.back() == '"') {
    std::string s;
    for (std::size_t i = 1; i + 1 < text.size(); ++i) {
      if (text[i] == '\\' && i + 2 < text.size()) ++i;
      s.push_back(text[i]);
    }
    out = std::move(s);
  } else {
    out = std::string(text);
  }
  (void)name;
}

void parse_value(std::string_view name, std::string_view text, double& out) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw ConfigError("config: '" + std::string(name) + "' expects a number, got '" + std::string(text) + "'");
  }
  out = v;
}

void parse_value(std::string_view name, std::string_view text, std::uint64_t& out) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw ConfigError("config: '" + std::string(name) + "' expects a non-negative integer, got '" +
                      std::string(text) + "'");
  }
  out = v;
}

void parse_value(std::string_view name, std::string_view text, bool& out) {
  if (text == "true") {
    out = true;
  } else if (text == "false") {
    out = false;
  } else {
    throw ConfigError("config: '" + std::string(name) + "' expects true or false, got '" + std::string(text) + "'");
  }
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string_view strip_comment(std::string_view line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

std::vector<std::size_t> parse_epoch_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::string_view rest = text;
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    const auto item = trim(rest.substr(0, comma));
    if (!item.empty()) {
      std::uint64_t v = 0;
      parse_value("optim.lr_decay_epochs", item, v);
      out.push_back(v);
    }
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return out;
}

}  // namespace

std::vector<std::string> ExperimentConfig::field_names() {
  std::vector<std::string> names;
  for_each_field([&](const char* name, auto) { names.emplace_back(name); });
  return names;
}

void ExperimentConfig::set(std::string_view name, std::string_view value) {
  bool found = false;
  for_each_field([&](const char* field, auto member) {
    if (found || name != field) return;
    found = true;
    parse_value(name, trim(value), this->*member);
  });
  if (!found) throw ConfigError("config: unknown key '" + std::string(name) + "'");
}

std::string ExperimentConfig::get(std::string_view name) const {
  std::string out;
  bool found = false;
  for_each_field([&](const char* field, auto member) {
    if (found || name != field) return;
    found = true;
    out = format_value(this->*member);
  });
  if (!found) throw ConfigError("config: unknown key '" + std::string(name) + "'");
  return out;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
  static const std::set<std::string> algorithms = {"baseline", "bullettrain", "oracle"};
  if (!algorithms.count(algorithm)) fail("run.algorithm must be baseline, bullettrain or oracle");
  if (epochs == 0) fail("run.epochs must be >= 1");
  if (batch_size == 0) fail("run.batch_size must be >= 1");
  if (dataset != "blobs" && dataset != "rings" && dataset != "mnist") {
    fail("dataset.kind must be blobs, rings or mnist");
  }
  if (dataset == "mnist" && (train_images.empty() || train_labels.empty() || test_images.empty() ||
                             test_labels.empty())) {
    fail("mnist needs dataset.train_images/train_labels/test_images/test_labels");
  }
  if (dataset != "mnist" && (train_size < 2 || test_size < 2)) fail("synthetic datasets need >= 2 samples");
  if (!(noise >= 0.0)) fail("dataset.noise must be >= 0");
  try {
    Architecture::parse(arch);
    loss_kind_from_string(loss);
    generator_kind_from_string(generator);
    if (algorithm != "baseline") budget().validate(algorithm == "bullettrain");
  } catch (const ArgumentError& e) {
    fail(e.what());
  }
  try {
    parse_epoch_list(lr_decay_epochs);
  } catch (const ConfigError& e) {
    throw;
  }
  if (!(lr > 0.0)) fail("optim.lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("optim.momentum must be in [0, 1)");
  if (!(epsilon >= 0.0)) fail("attack.epsilon must be >= 0");
  if (!(warmup_epochs >= 0.0)) fail("attack.warmup_epochs must be >= 0");
  if (!(beta > 0.0)) fail("loss.beta must be > 0");
  if (!(mining_momentum >= 0.0 && mining_momentum < 1.0)) fail("mining.momentum must be in [0, 1)");
  if (!(gamma > 0.0 && gamma <= 1.0)) fail("mining.gamma must be in (0, 1]");
  if (algorithm == "oracle" && oracle_steps == 0) fail("mining.oracle_steps must be >= 1");
  if (eval_steps == 0) fail("eval.steps must be >= 1");
  if (eval_restarts == 0) fail("eval.restarts must be >= 1");
}

double ExperimentConfig::attack_step_size() const {
  return step_size > 0.0 ? step_size : scaled_step_size(epsilon, steps);
}

TrainConfig ExperimentConfig::train_config(const Dataset& data) const {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = batch_size;
  tc.seed = seed;
  tc.sgd = SgdConfig{lr, momentum, weight_decay};
  tc.lr_decay_epochs = parse_epoch_list(lr_decay_epochs);
  tc.lr_decay_factor = lr_decay_factor;
  tc.loss.kind = loss_kind_from_string(loss);
  tc.loss.beta = beta;
  tc.loss.jsd_weight = jsd_weight;
  tc.loss.classes = data.classes;
  tc.generator.kind = generator_kind_from_string(generator);
  tc.generator.attack.epsilon = epsilon;
  tc.generator.attack.steps = steps;
  tc.generator.attack.step_size = attack_step_size();
  tc.generator.attack.random_init = random_init;
  tc.epsilon_warmup_epochs = warmup_epochs;
  tc.generator.attack.low = data.low;
  tc.generator.attack.high = data.high;
  auto& aug = tc.generator.augment;
  aug.chain_length = chain_length;
  aug.noise_sigma = noise_sigma;
  aug.max_translate = max_translate;
  aug.cutout_size = cutout_size;
  aug.mix = mix;
  aug.channels = data.channels;
  aug.height = data.height;
  aug.width = data.width;
  aug.low = data.low;
  aug.high = data.high;
  return tc;
}

MiningConfig ExperimentConfig::mining_config() const {
  MiningConfig mc;
  mc.momentum = mining_momentum;
  mc.gamma = gamma;
  mc.separation = algorithm == "oracle" ? Separation::kOracle : Separation::kMined;
  mc.oracle_steps = oracle_steps;
  return mc;
}

ComputeBudget ExperimentConfig::budget() const {
  auto pick = [&](double configured, std::size_t n) {
    return configured > 0.0 ? configured : scaled_step_size(epsilon, n);
  };
  return ComputeBudget{outlier_steps,
                       robust_steps,
                       boundary_steps,
                       pick(outlier_step_size, outlier_steps),
                       pick(robust_step_size, robust_steps),
                       pick(boundary_step_size, boundary_steps)};
}

EvalConfig ExperimentConfig::eval_config(const Dataset& data) const {
  EvalConfig ec;
  ec.steps = eval_steps;
  ec.restarts = eval_restarts;
  ec.epsilon = epsilon;
  ec.step_size = eval_step_size > 0.0 ? eval_step_size : 2.5 * epsilon / static_cast<double>(eval_steps);
  ec.seed = derive_seed({seed, tag(Stream::kEval)});
  ec.low = data.low;
  ec.high = data.high;
  return ec;
}

ExperimentConfig parse_config_kv(std::string_view text) {
  ExperimentConfig config;
  std::string section;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(line_no) + ": bad section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = std::string(trim(line.substr(0, eq)));
    const std::string name = section.empty() ? key : section + "." + key;
    config.set(name, trim(line.substr(eq + 1)));
  }
  return config;
}

ExperimentConfig parse_config_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config: JSON document must be an object");
  ExperimentConfig config;
  for (const auto& [section, body] : doc.items()) {
    if (!body.is_object()) throw ConfigError("config: section '" + section + "' must be an object");
    for (const auto& [key, value] : body.items()) {
      const std::string name = section + "." + key;
      if (value.is_string()) {
        config.set(name, quote(value.get<std::string>()));
      } else if (value.is_boolean() || value.is_number()) {
        config.set(name, value.dump());
      } else {
        throw ConfigError("config: '" + name + "' must be a string, number or boolean");
      }
    }
  }
  return config;
}

ExperimentConfig parse_config(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string_view::npos && text[first] == '{') return parse_config_json(text);
  return parse_config_kv(text);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_file(path));
}

std::string serialize_config(const ExperimentConfig& config) {
  std::ostringstream out;
  std::string current;
  for_each_field([&](const char* name, auto member) {
    const std::string_view full = name;
    const auto dot = full.find('.');
    const std::string section(full.substr(0, dot));
    if (section != current) {
      if (!current.empty()) out << '\n';
      out << '[' << section << "]\n";
      current = section;
    }
    out << full.substr(dot + 1) << " = " << format_value(config.*member) << '\n';
  });
  return out.str();
}

std::string config_to_json(const ExperimentConfig& config) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::object();
  for_each_field([&](const char* name, auto member) {
    const std::string_view full = name;
    const auto dot = full.find('.');
    doc[std::string(full.substr(0, dot))][std::string(full.substr(dot + 1))] = config.*member;
  });
  return doc.dump(2);
}

DataSplits load_datasets(const ExperimentConfig& config) {
  DataSplits splits;
  if (config.dataset == "mnist") {
    splits.train = load_mnist_idx(config.train_images, config.train_labels);
    splits.test = load_mnist_idx(config.test_images, config.test_labels);
    if (config.train_size > 0) splits.train = splits.train.head(config.train_size);
    if (config.test_size > 0) splits.test = splits.test.head(config.test_size);
  } else {
    const auto kind = synthetic_kind_from_string(config.dataset);
    splits.train = make_synthetic(kind, config.train_size, config.noise, derive_seed({config.seed, 1}));
    splits.test = make_synthetic(kind, config.test_size, config.noise, derive_seed({config.seed, 2}));
  }
  return splits;
}

}  // namespace bt
