#include "cirnet/config.hpp"

#include <fstream>
#include <sstream>

#include "cirnet/errors.hpp"

namespace cirnet::config {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& val) {
  try {
    size_t used = 0;
    double v = std::stod(val, &used);
    if (used != val.size()) throw std::invalid_argument(val);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad number for '" + key + "': '" + val + "'");
  }
}

int64_t parse_int(const std::string& key, const std::string& val) {
  try {
    size_t used = 0;
    int64_t v = std::stoll(val, &used);
    if (used != val.size()) throw std::invalid_argument(val);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad integer for '" + key + "': '" + val + "'");
  }
}

bool parse_onoff(const std::string& key, const std::string& val) {
  if (val == "on") return true;
  if (val == "off") return false;
  throw ConfigError("'" + key + "' must be on|off, got '" + val + "'");
}

std::vector<int64_t> parse_int_list(const std::string& key, const std::string& val) {
  std::vector<int64_t> out;
  std::istringstream is(val);
  std::string item;
  while (std::getline(is, item, ',')) out.push_back(parse_int(key, trim(item)));
  if (out.empty()) throw ConfigError("'" + key + "' must list at least one value");
  return out;
}

void apply_train(Config& cfg, const std::string& key, const std::string& val) {
  if (key == "lr") cfg.train.lr = parse_double(key, val);
  else if (key == "lr_decay_div") cfg.train.lr_decay_div = parse_double(key, val);
  else if (key == "lr_decay_every") cfg.train.lr_decay_every = parse_int(key, val);
  else if (key == "batch_size") cfg.train.batch_size = parse_int(key, val);
  else if (key == "epochs") cfg.train.epochs = parse_int(key, val);
  else if (key == "seed") cfg.train.seed = static_cast<uint64_t>(parse_int(key, val));
  else if (key == "scales") cfg.train.scales = parse_int_list(key, val);
  else if (key == "flip_prob") cfg.train.flip_prob = parse_double(key, val);
  else if (key == "rotate") cfg.train.rotate = parse_onoff(key, val);
  else throw ConfigError("unknown [train] key '" + key + "'");
}

void apply_paths(Config& cfg, const std::string& key, const std::string& val) {
  if (key == "train_dir") cfg.paths.train_dir = val;
  else if (key == "out_dir") cfg.paths.out_dir = val;
  else throw ConfigError("unknown [paths] key '" + key + "'");
}

void check_ranges(const Config& cfg) {
  if (cfg.train.lr < 0) throw ConfigError("lr must be >= 0");
  if (cfg.train.lr_decay_div <= 0) throw ConfigError("lr_decay_div must be > 0");
  if (cfg.train.lr_decay_every < 1) throw ConfigError("lr_decay_every must be >= 1");
  if (cfg.train.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.train.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (cfg.train.flip_prob < 0 || cfg.train.flip_prob > 1) {
    throw ConfigError("flip_prob must lie in [0,1]");
  }
  for (int64_t s : cfg.train.scales) {
    if (s < 16 || s % 16 != 0) throw ConfigError("every scale must be a positive multiple of 16");
  }
}

}  // namespace

Config parse_config_string(const std::string& text) {
  Config cfg;
  std::string model_block;  // model keys collect into the checkpoint-style block
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = trim(line);
    size_t hash = t.find('#');
    if (hash != std::string::npos) t = trim(t.substr(0, hash));
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError("unterminated section header: " + t);
      section = t.substr(1, t.size() - 2);
      if (section != "model" && section != "train" && section != "paths") {
        throw ConfigError("unknown section [" + section + "]");
      }
      continue;
    }
    size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value, got '" + t +
                        "'");
    }
    std::string key = trim(t.substr(0, eq));
    std::string val = trim(t.substr(eq + 1));
    if (section.empty()) throw ConfigError("key '" + key + "' appears before any section");
    if (section == "model") {
      model_block += key + "=" + val + "\n";
    } else if (section == "train") {
      apply_train(cfg, key, val);
    } else {
      apply_paths(cfg, key, val);
    }
  }
  if (!model_block.empty()) cfg.model = model::parse_config_text(model_block);
  check_ranges(cfg);
  return cfg;
}

Config parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_string(buf.str());
}

}  // namespace cirnet::config
