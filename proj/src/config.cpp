#include "flexivit/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace flexivit {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stoi(item));
  }
  return out;
}

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: key '" + key + "' expects true/false, got '" + v + "'");
}

// Key table: setter + getter so parsing and echoing cannot drift apart.
struct KeyHandler {
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<std::pair<std::string, KeyHandler>>& key_table() {
  auto int_key = [](int ExperimentConfig::* field) {
    return KeyHandler{
        [field](ExperimentConfig& c, const std::string& v) { c.*field = std::stoi(v); },
        [field](const ExperimentConfig& c) { return std::to_string(c.*field); }};
  };
  auto ll_key = [](long long ExperimentConfig::* field) {
    return KeyHandler{
        [field](ExperimentConfig& c, const std::string& v) { c.*field = std::stoll(v); },
        [field](const ExperimentConfig& c) { return std::to_string(c.*field); }};
  };
  auto dbl_key = [](double ExperimentConfig::* field) {
    return KeyHandler{
        [field](ExperimentConfig& c, const std::string& v) { c.*field = std::stod(v); },
        [field](const ExperimentConfig& c) { return format_double(c.*field); }};
  };
  auto str_key = [](std::string ExperimentConfig::* field) {
    return KeyHandler{
        [field](ExperimentConfig& c, const std::string& v) { c.*field = v; },
        [field](const ExperimentConfig& c) { return c.*field; }};
  };
  auto list_key = [](std::vector<int> ExperimentConfig::* field) {
    return KeyHandler{
        [field](ExperimentConfig& c, const std::string& v) { c.*field = parse_int_list(v); },
        [field](const ExperimentConfig& c) { return join_ints(c.*field); }};
  };
  auto bool_key = [](bool ExperimentConfig::* field, std::string name) {
    return KeyHandler{
        [field, name](ExperimentConfig& c, const std::string& v) {
          c.*field = parse_bool(v, name);
        },
        [field](const ExperimentConfig& c) { return c.*field ? "true" : "false"; }};
  };

  static const std::vector<std::pair<std::string, KeyHandler>> table = {
      {"depth", int_key(&ExperimentConfig::depth)},
      {"width", int_key(&ExperimentConfig::width)},
      {"heads", int_key(&ExperimentConfig::heads)},
      {"mlp_ratio", int_key(&ExperimentConfig::mlp_ratio)},
      {"num_classes", int_key(&ExperimentConfig::num_classes)},
      {"underlying_patch", int_key(&ExperimentConfig::underlying_patch)},
      {"underlying_grid", int_key(&ExperimentConfig::underlying_grid)},
      {"channels", int_key(&ExperimentConfig::channels)},
      {"image_side", int_key(&ExperimentConfig::image_side)},
      {"train_n", int_key(&ExperimentConfig::train_n)},
      {"eval_n", int_key(&ExperimentConfig::eval_n)},
      {"patch_sizes", list_key(&ExperimentConfig::patch_sizes)},
      {"patch_weights", str_key(&ExperimentConfig::patch_weights)},
      {"curriculum", bool_key(&ExperimentConfig::curriculum, "curriculum")},
      {"schedule_fraction", dbl_key(&ExperimentConfig::schedule_fraction)},
      {"ramp_fraction", dbl_key(&ExperimentConfig::ramp_fraction)},
      {"large_sizes", list_key(&ExperimentConfig::large_sizes)},
      {"large_weights", str_key(&ExperimentConfig::large_weights)},
      {"loss", str_key(&ExperimentConfig::loss)},
      {"temperature", dbl_key(&ExperimentConfig::temperature)},
      {"steps", ll_key(&ExperimentConfig::steps)},
      {"batch_size", int_key(&ExperimentConfig::batch_size)},
      {"lr", dbl_key(&ExperimentConfig::lr)},
      {"warmup_steps", ll_key(&ExperimentConfig::warmup_steps)},
      {"cosine_decay", bool_key(&ExperimentConfig::cosine_decay, "cosine_decay")},
      {"seed",
       KeyHandler{[](ExperimentConfig& c, const std::string& v) { c.seed = std::stoull(v); },
                  [](const ExperimentConfig& c) { return std::to_string(c.seed); }}},
      {"eval_sizes", list_key(&ExperimentConfig::eval_sizes)},
      {"eval_every", ll_key(&ExperimentConfig::eval_every)},
      {"out_dir", str_key(&ExperimentConfig::out_dir)},
  };
  return table;
}

}  // namespace

ExperimentConfig ExperimentConfig::parse_string(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  " is not key=value: '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    bool found = false;
    for (const auto& [name, handler] : key_table()) {
      if (name == key) {
        try {
          handler.set(cfg, value);
        } catch (const std::invalid_argument&) {
          throw;
        } catch (const std::exception&) {
          throw std::invalid_argument("config: bad value for key '" + key + "': '" +
                                      value + "'");
        }
        found = true;
        break;
      }
    }
    if (!found) throw std::invalid_argument("config: unknown key '" + key + "'");
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str());
}

std::string ExperimentConfig::canonical_text() const {
  std::string out;
  for (const auto& [name, handler] : key_table())
    out += name + "=" + handler.get(*this) + "\n";
  return out;
}

void ExperimentConfig::validate() const {
  if (patch_sizes.empty())
    throw std::invalid_argument("config: patch_sizes must be nonempty");
  for (int p : patch_sizes)
    if (p < 1 || image_side % p != 0)
      throw std::invalid_argument("config: patch size " + std::to_string(p) +
                                  " does not tile image_side " + std::to_string(image_side));
  for (int p : effective_eval_sizes())
    if (p < 1 || image_side % p != 0)
      throw std::invalid_argument("config: eval size " + std::to_string(p) +
                                  " does not tile image_side " + std::to_string(image_side));
  if (loss != "xent" && loss != "distill")
    throw std::invalid_argument("config: loss must be xent or distill");
  if (curriculum && large_sizes.empty())
    throw std::invalid_argument("config: curriculum requires large_sizes");
  if (train_n < 1 || eval_n < 0)
    throw std::invalid_argument("config: dataset sizes must be positive");
}

std::vector<int> ExperimentConfig::effective_eval_sizes() const {
  return eval_sizes.empty() ? patch_sizes : eval_sizes;
}

}  // namespace flexivit
