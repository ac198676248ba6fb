#include "lieop/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "lieop/errors.hpp"

namespace lieop {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <typename T>
T parse_number(const std::string& text, const std::string& key) {
  const std::string s = trim(text);
  T value{};
  const char* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc() || ptr != end || s.empty())
    throw ConfigError("bad value '" + s + "' for " + key, key);
  return value;
}

bool parse_bool(const std::string& text, const std::string& key) {
  const std::string s = trim(text);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("bad value '" + s + "' for " + key + " (expected true or false)", key);
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_same_v<T, double>) {
      out += format_double(values[i]);
    } else if constexpr (std::is_same_v<T, std::string>) {
      out += values[i];
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const std::string& key) {
  std::vector<T> out;
  for (const std::string& item : split_list(text)) out.push_back(parse_number<T>(item, key));
  return out;
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T>
Field number(std::string section, std::string key, T RunConfig::*group, auto member) {
  auto get = [group, member](const RunConfig& c) {
    const auto& v = (c.*group).*member;
    if constexpr (std::is_floating_point_v<std::decay_t<decltype(v)>>) {
      return format_double(v);
    } else {
      return std::to_string(v);
    }
  };
  auto set = [group, member, key](RunConfig& c, const std::string& s) {
    auto& v = (c.*group).*member;
    v = parse_number<std::decay_t<decltype(v)>>(s, key);
  };
  return {std::move(section), std::move(key), get, set};
}

Field model_number(std::string key, auto member) {
  auto get = [member](const RunConfig& c) {
    const auto& v = c.train.model.*member;
    if constexpr (std::is_floating_point_v<std::decay_t<decltype(v)>>) {
      return format_double(v);
    } else {
      return std::to_string(v);
    }
  };
  auto set = [member, key](RunConfig& c, const std::string& s) {
    auto& v = c.train.model.*member;
    v = parse_number<std::decay_t<decltype(v)>>(s, key);
  };
  return {"model", std::move(key), get, set};
}

Field weight(std::string key, double LossWeights::*member) {
  return {"train", key, [member](const RunConfig& c) { return format_double(c.train.weights.*member); },
          [member, key](RunConfig& c, const std::string& s) { c.train.weights.*member = parse_number<double>(s, key); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    using R = RunConfig;
    f.push_back(number("data", "classes", &R::data, &DataConfig::classes));
    f.push_back(number("data", "instances_per_class", &R::data, &DataConfig::instances_per_class));
    f.push_back({"data", "mode", [](const R& c) { return std::string(to_string(c.data.mode)); },
                 [](R& c, const std::string& s) { c.data.mode = frame_mode_from_string(trim(s)); }});
    f.push_back(number("data", "pose_dims", &R::data, &DataConfig::pose_dims));
    f.push_back(number("data", "raster_size", &R::data, &DataConfig::raster_size));
    f.push_back(number("data", "points_per_frame", &R::data, &DataConfig::points_per_frame));
    f.push_back(number("data", "pose_step_deg", &R::data, &DataConfig::pose_step_deg));
    f.push_back(number("data", "val_fraction", &R::data, &DataConfig::val_fraction));
    f.push_back(number("data", "test_fraction", &R::data, &DataConfig::test_fraction));
    f.push_back(number("data", "instance_jitter", &R::data, &DataConfig::instance_jitter));
    f.push_back(number("data", "typical_width", &R::data, &DataConfig::typical_width));
    f.push_back(number("data", "seed", &R::data, &DataConfig::seed));

    f.push_back(model_number("input_dim", &ModelConfig::input_dim));
    f.push_back(model_number("embed_dim", &ModelConfig::embed_dim));
    f.push_back(model_number("algebra_dim", &ModelConfig::algebra_dim));
    f.push_back({"model", "encoder", [](const R& c) { return std::string(to_string(c.train.model.encoder)); },
                 [](R& c, const std::string& s) { c.train.model.encoder = encoder_kind_from_string(trim(s)); }});
    f.push_back({"model", "encoder_hidden", [](const R& c) { return join(c.train.model.encoder_hidden); },
                 [](R& c, const std::string& s) {
                   c.train.model.encoder_hidden = parse_list<Eigen::Index>(s, "encoder_hidden");
                 }});
    f.push_back(model_number("coord_hidden", &ModelConfig::coord_hidden));
    f.push_back(model_number("decoder_hidden", &ModelConfig::decoder_hidden));
    f.push_back(model_number("leaky_slope", &ModelConfig::leaky_slope));
    f.push_back(model_number("delta_scale", &ModelConfig::delta_scale));
    f.push_back({"model", "skew_init", [](const R& c) { return std::string(c.train.model.skew_init ? "true" : "false"); },
                 [](R& c, const std::string& s) { c.train.model.skew_init = parse_bool(s, "skew_init"); }});
    f.push_back({"model", "ssl", [](const R& c) { return std::string(to_string(c.train.model.ssl)); },
                 [](R& c, const std::string& s) { c.train.model.ssl = ssl_kind_from_string(trim(s)); }});
    f.push_back({"model", "pair_head", [](const R& c) { return std::string(c.train.model.pair_head ? "true" : "false"); },
                 [](R& c, const std::string& s) { c.train.model.pair_head = parse_bool(s, "pair_head"); }});

    f.push_back(weight("lambda_ssl", &LossWeights::lambda_ssl));
    f.push_back(weight("lambda_lie", &LossWeights::lambda_lie));
    f.push_back(weight("lambda_euc", &LossWeights::lambda_euc));
    f.push_back(weight("temperature", &LossWeights::temperature));
    f.push_back({"train", "collapse_guard", [](const R& c) { return std::string(c.train.collapse_guard ? "true" : "false"); },
                 [](R& c, const std::string& s) { c.train.collapse_guard = parse_bool(s, "collapse_guard"); }});
    f.push_back(number("train", "lambda_frames", &R::train, &TrainConfig::lambda_frames));
    f.push_back(number("train", "mask_ratio", &R::train, &TrainConfig::mask_ratio));
    f.push_back(number("train", "learning_rate", &R::train, &TrainConfig::learning_rate));
    f.push_back(number("train", "batch_size", &R::train, &TrainConfig::batch_size));
    f.push_back(number("train", "steps", &R::train, &TrainConfig::steps));
    f.push_back(number("train", "log_every", &R::train, &TrainConfig::log_every));
    f.push_back(number("train", "seed", &R::train, &TrainConfig::seed));
    f.push_back({"train", "dataset", [](const R& c) { return c.train.dataset; },
                 [](R& c, const std::string& s) { c.train.dataset = trim(s); }});
    f.push_back(number("train", "classifier_option", &R::train, &TrainConfig::classifier_option));
    f.push_back(number("train", "neighbors", &R::train, &TrainConfig::neighbors));
    f.push_back(number("train", "neighbor_sigma", &R::train, &TrainConfig::neighbor_sigma));
    f.push_back(number("train", "linear_steps", &R::train, &TrainConfig::linear_steps));
    f.push_back(number("train", "finetune_steps", &R::train, &TrainConfig::finetune_steps));
    f.push_back(number("train", "linear_lr", &R::train, &TrainConfig::linear_lr));
    f.push_back(number("train", "finetune_lr", &R::train, &TrainConfig::finetune_lr));
    f.push_back(number("train", "classifier_batch", &R::train, &TrainConfig::classifier_batch));

    f.push_back({"eval", "mode", [](const R& c) { return std::string(to_string(c.eval.mode)); },
                 [](R& c, const std::string& s) { c.eval.mode = eval_mode_from_string(trim(s)); }});
    f.push_back({"eval", "proportion", [](const R& c) { return format_double(c.eval.proportion); },
                 [](R& c, const std::string& s) {
                   const double p = parse_number<double>(s, "proportion");
                   if (!is_valid_proportion(p))
                     throw ConfigError("proportion must be one of 0.05, 0.25, 0.5", "proportion");
                   c.eval.proportion = p;
                 }});
    f.push_back({"eval", "seeds", [](const R& c) { return join(c.eval.seeds); },
                 [](R& c, const std::string& s) {
                   auto seeds = parse_list<std::uint64_t>(s, "seeds");
                   if (seeds.empty()) throw ConfigError("seeds must not be empty", "seeds");
                   c.eval.seeds = std::move(seeds);
                 }});

    f.push_back({"sweep", "ablations", [](const R& c) { return join(c.sweep.ablations); },
                 [](R& c, const std::string& s) {
                   auto names = split_list(s);
                   for (const auto& n : names) ablation_variant(n, {});
                   c.sweep.ablations = std::move(names);
                 }});
    f.push_back({"sweep", "lambda_grid", [](const R& c) { return join(c.sweep.lambda_grid); },
                 [](R& c, const std::string& s) { c.sweep.lambda_grid = parse_list<double>(s, "lambda_grid"); }});
    f.push_back({"sweep", "jobs", [](const R& c) { return std::to_string(c.sweep.jobs); },
                 [](R& c, const std::string& s) {
                   const int j = parse_number<int>(s, "jobs");
                   if (j < 1) throw ConfigError("jobs must be at least 1", "jobs");
                   c.sweep.jobs = j;
                 }});
    return f;
  }();
  return table;
}

const Field& find_field(const std::string& section, const std::string& key) {
  for (const Field& f : fields())
    if (f.section == section && f.key == key) return f;
  throw ConfigError("unknown key '" + key + "' in section [" + section + "]", key);
}

std::string render_sections(const RunConfig& config, const std::vector<std::string>& sections) {
  std::string out;
  for (const std::string& section : sections) {
    if (!out.empty()) out += "\n";
    out += "[" + section + "]\n";
    for (const Field& f : fields())
      if (f.section == section) out += f.key + " = " + f.get(config) + "\n";
  }
  return out;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Field& f : fields()) out.push_back(f.section + "." + f.key);
  return out;
}

std::string render_config(const RunConfig& config) {
  return render_sections(config, {"data", "model", "train", "eval", "sweep"});
}

std::string render_train_config(const TrainConfig& config) {
  RunConfig rc;
  rc.train = config;
  return render_sections(rc, {"model", "train"});
}

RunConfig parse_config(const std::string& text, const RunConfig& defaults) {
  RunConfig config = defaults;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (std::none_of(fields().begin(), fields().end(), [&](const Field& f) { return f.section == section; }))
        throw ConfigError("line " + std::to_string(line_no) + ": unknown section [" + section + "]", section);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    if (section.empty()) throw ConfigError("line " + std::to_string(line_no) + ": key outside any section");
    const std::string key = trim(line.substr(0, eq));
    find_field(section, key).set(config, line.substr(eq + 1));
  }
  return config;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string name = trim(assignment.substr(0, eq));
  const std::string value = assignment.substr(eq + 1);
  const auto dot = name.find('.');
  if (dot != std::string::npos) {
    find_field(name.substr(0, dot), name.substr(dot + 1)).set(config, value);
    return;
  }
  const Field* match = nullptr;
  for (const Field& f : fields()) {
    if (f.key != name) continue;
    if (match != nullptr)
      throw ConfigError("key '" + name + "' is ambiguous; qualify it as " + match->section + "." + name + " or " +
                            f.section + "." + name,
                        name);
    match = &f;
  }
  if (match == nullptr) throw ConfigError("unknown key '" + name + "'", name);
  match->set(config, value);
}

}  // namespace lieop
