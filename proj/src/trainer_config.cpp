#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ocr/trainer.hpp"

namespace ocr {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// "a=x,b=y" -> ordered pairs
std::vector<std::pair<std::string, std::string>> parse_pairs(const std::string& value, const std::string& what) {
  std::vector<std::pair<std::string, std::string>> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw std::invalid_argument(what + ": expected tag=value, got '" + item + "'");
    out.emplace_back(trim(item.substr(0, eq)), trim(item.substr(eq + 1)));
  }
  if (out.empty()) throw std::invalid_argument(what + ": no entries in '" + value + "'");
  return out;
}

void set_key(TrainConfig& c, const std::string& key, const std::string& value) {
  if (key == "lr") c.lr = std::stod(value);
  else if (key == "weight_decay") c.weight_decay = std::stod(value);
  else if (key == "epochs") c.epochs = std::stoll(value);
  else if (key == "batch_size") c.batch_size = std::stoll(value);
  else if (key == "seed") c.seed = std::stoull(value);
  else if (key == "case_mode") c.case_mode = parse_case_mode(value);
  else if (key == "preset") c.preset = value;
  else if (key == "checkpoint_dir") c.checkpoint_dir = value;
  else if (key == "metrics_path") c.metrics_path = value;
  else if (key == "log_every") c.log_every = std::stoll(value);
  else if (key == "max_steps") c.max_steps = std::stoll(value);
  else if (key == "stop_at_train_acc") c.stop_at_train_acc = std::stod(value);
  else if (key == "acc_slice") c.acc_slice = std::stoll(value);
  else if (key == "threads") c.threads = std::stoi(value);
  else if (key == "workers") c.workers = std::stoi(value);
  else if (key == "resume") c.resume = value;
  else if (key == "datasets") {
    c.datasets.clear();
    for (auto& [tag, path] : parse_pairs(value, "datasets")) c.datasets[tag] = path;
  } else if (key == "mix") {
    c.mix.entries.clear();
    for (auto& [tag, frac] : parse_pairs(value, "mix")) c.mix.entries.emplace_back(tag, std::stod(frac));
  } else {
    throw std::invalid_argument("unknown config key '" + key + "'");
  }
}

TrainConfig from_json_config(const nlohmann::json& j) {
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "datasets") {
      for (const auto& [tag, path] : value.items()) c.datasets[tag] = path.get<std::string>();
    } else if (key == "mix") {
      for (const auto& [tag, frac] : value.items()) c.mix.entries.emplace_back(tag, frac.get<double>());
    } else if (value.is_string()) {
      set_key(c, key, value.get<std::string>());
    } else {
      set_key(c, key, value.dump());
    }
  }
  return c;
}

}  // namespace

TrainConfig parse_train_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("config file not found: " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  const std::string text = buf.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') return from_json_config(nlohmann::json::parse(text));

  TrainConfig c;
  std::stringstream ss(text);
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": expected key=value");
    set_key(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

void apply_override(TrainConfig& config, const std::string& key_value) {
  const auto eq = key_value.find('=');
  if (eq == std::string::npos) throw std::invalid_argument("override must be key=value, got '" + key_value + "'");
  set_key(config, trim(key_value.substr(0, eq)), trim(key_value.substr(eq + 1)));
}

std::map<std::string, std::vector<WordSample>> resolve_datasets(const TrainConfig& config) {
  std::map<std::string, std::vector<WordSample>> out;
  for (const auto& [tag, path] : config.datasets) {
    if (path.rfind("synth:", 0) == 0) {
      // synth:<n>[:<seed>]
      const std::string spec = path.substr(6);
      const auto colon = spec.find(':');
      const std::int64_t n = std::stoll(colon == std::string::npos ? spec : spec.substr(0, colon));
      const std::uint64_t seed = colon == std::string::npos ? config.seed : std::stoull(spec.substr(colon + 1));
      out[tag] = synth_corpus(n, seed);
    } else {
      out[tag] = load_annotations(path, tag);
    }
  }
  return out;
}

}  // namespace ocr
