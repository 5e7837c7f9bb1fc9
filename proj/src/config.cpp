#include "drgcn/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "format.hpp"

namespace drgcn {

namespace {

struct KeyInfo {
  const char* section;
};

const std::map<std::string, KeyInfo, std::less<>>& known_keys() {
  static const std::map<std::string, KeyInfo, std::less<>> keys = {
      {"dataset", {"data"}},
      {"train_size", {"data"}},
      {"valid_size", {"data"}},
      {"test_size", {"data"}},
      {"split_mode", {"data"}},
      {"variant", {"model"}},
      {"layers", {"model"}},
      {"hidden", {"model"}},
      {"combine", {"model"}},
      {"cell", {"model"}},
      {"alpha_mode", {"model"}},
      {"fixed_alpha", {"model"}},
      {"input_dropout", {"model"}},
      {"shared_dynamic_mlp", {"model"}},
      {"row_normalize", {"model"}},
      {"lr", {"train"}},
      {"patience", {"train"}},
      {"max_epochs", {"train"}},
      {"l2_conv", {"train"}},
      {"l2_fc", {"train"}},
      {"l2_evolving", {"train"}},
      {"augmentations", {"train"}},
      {"drop_rate", {"train"}},
      {"temperature", {"train"}},
      {"lambda", {"train"}},
      {"seed", {"train"}},
      {"trace_stride", {"train"}},
      {"mini_batch", {"train"}},
      {"fanouts", {"train"}},
      {"batch_size", {"train"}},
      {"axis", {"sweep"}},
      {"values", {"sweep"}},
      {"repeats", {"sweep"}},
      {"jobs", {"sweep"}},
      {"ablate_augmentations", {"sweep"}},
      {"ablate_drop_rate", {"sweep"}},
      {"out", {"output"}},
  };
  return keys;
}

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::string quote(std::string_view key) { return "'" + std::string(key) + "'"; }

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError("key " + quote(key) + ": expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError("key " + quote(key) + ": expected a number, got '" + std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("key " + quote(key) + ": expected true/false, got '" + std::string(v) + "'");
}

std::vector<std::string> parse_list(std::string_view v) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const std::size_t comma = v.find(',', start);
    const std::string_view item = trim(v.substr(start, comma == std::string_view::npos ? v.npos : comma - start));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <class F>
auto wrap_enum(std::string_view key, F parse) {
  try {
    return parse();
  } catch (const ModelError& e) {
    throw ConfigError("key " + quote(key) + ": " + e.what());
  }
}

}  // namespace

void apply_setting(RunConfig& cfg, std::string_view key, std::string_view raw) {
  const std::string_view v = trim(raw);
  if (key == "dataset") {
    cfg.dataset = std::string(v);
  } else if (key == "train_size") {
    cfg.train_size = parse_u64(key, v);
  } else if (key == "valid_size") {
    cfg.valid_size = parse_u64(key, v);
  } else if (key == "test_size") {
    cfg.test_size = parse_u64(key, v);
  } else if (key == "split_mode") {
    if (v == "fixed_public") {
      cfg.split_mode = SplitMode::fixed_public;
    } else if (v == "seeded_random") {
      cfg.split_mode = SplitMode::seeded_random;
    } else {
      throw ConfigError("key 'split_mode': expected fixed_public or seeded_random");
    }
  } else if (key == "variant") {
    cfg.model.variant = wrap_enum(key, [&] { return parse_variant(v); });
  } else if (key == "layers") {
    cfg.model.layers = parse_u64(key, v);
  } else if (key == "hidden") {
    cfg.model.hidden = parse_u64(key, v);
  } else if (key == "combine") {
    cfg.model.combine = wrap_enum(key, [&] { return parse_combine(v); });
  } else if (key == "cell") {
    cfg.model.cell = wrap_enum(key, [&] { return parse_cell(v); });
  } else if (key == "alpha_mode") {
    cfg.model.alpha_mode = wrap_enum(key, [&] { return parse_alpha_mode(v); });
  } else if (key == "fixed_alpha") {
    cfg.model.fixed_alpha = parse_double(key, v);
  } else if (key == "input_dropout") {
    cfg.model.input_dropout = parse_double(key, v);
  } else if (key == "shared_dynamic_mlp") {
    cfg.model.shared_dynamic_mlp = parse_bool(key, v);
  } else if (key == "row_normalize") {
    cfg.model.row_normalize = parse_bool(key, v);
  } else if (key == "lr") {
    cfg.train.lr = parse_double(key, v);
  } else if (key == "patience") {
    cfg.train.patience = parse_u64(key, v);
  } else if (key == "max_epochs") {
    cfg.train.max_epochs = parse_u64(key, v);
  } else if (key == "l2_conv") {
    cfg.train.l2_conv = parse_double(key, v);
  } else if (key == "l2_fc") {
    cfg.train.l2_fc = parse_double(key, v);
  } else if (key == "l2_evolving") {
    cfg.train.l2_evolving = parse_double(key, v);
  } else if (key == "augmentations") {
    cfg.train.augmentations = parse_u64(key, v);
  } else if (key == "drop_rate") {
    cfg.train.drop_rate = parse_double(key, v);
  } else if (key == "temperature") {
    cfg.train.temperature = parse_double(key, v);
  } else if (key == "lambda") {
    cfg.train.lambda = parse_double(key, v);
  } else if (key == "seed") {
    cfg.train.seed = parse_u64(key, v);
  } else if (key == "trace_stride") {
    cfg.train.trace_stride = parse_u64(key, v);
  } else if (key == "mini_batch") {
    cfg.mini_batch = parse_bool(key, v);
  } else if (key == "fanouts") {
    cfg.mini.fanouts.clear();
    for (const auto& item : parse_list(v)) cfg.mini.fanouts.push_back(parse_u64(key, item));
  } else if (key == "batch_size") {
    cfg.mini.batch_size = parse_u64(key, v);
  } else if (key == "axis") {
    cfg.sweep_axis = std::string(v);
  } else if (key == "values") {
    cfg.sweep_values = parse_list(v);
  } else if (key == "repeats") {
    cfg.repeats = parse_u64(key, v);
  } else if (key == "jobs") {
    cfg.jobs = parse_u64(key, v);
  } else if (key == "ablate_augmentations") {
    cfg.ablate_augmentations = parse_u64(key, v);
  } else if (key == "ablate_drop_rate") {
    cfg.ablate_drop_rate = parse_double(key, v);
  } else if (key == "out") {
    cfg.out = std::string(v);
  } else {
    throw ConfigError("unknown config key " + quote(key));
  }
}

RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  std::set<std::string, std::less<>> seen;
  std::string section;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view s = line;
    if (const auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError(where + "malformed section header");
      section = std::string(trim(s.substr(1, s.size() - 2)));
      static const std::set<std::string, std::less<>> sections = {"data", "model", "train", "sweep", "output"};
      if (!sections.contains(section)) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string_view key = trim(s.substr(0, eq));
    const std::string_view value = trim(s.substr(eq + 1));
    const auto it = known_keys().find(key);
    if (it == known_keys().end()) throw ConfigError(where + "unknown config key " + quote(key));
    if (!section.empty() && section != it->second.section) {
      throw ConfigError(where + "key " + quote(key) + " belongs to [" + it->second.section + "], not [" + section + "]");
    }
    if (!seen.insert(std::string(key)).second) throw ConfigError(where + "duplicate key " + quote(key));
    apply_setting(cfg, key, value);
  }
  for (const char* required : {"layers", "dataset"}) {
    if (!seen.contains(required)) throw ConfigError("missing required config key " + quote(required));
  }
  if (cfg.dataset.is_relative() && !base_dir.empty()) cfg.dataset = base_dir / cfg.dataset;
  if (!cfg.out.empty() && cfg.out.is_relative() && !base_dir.empty()) cfg.out = base_dir / cfg.out;
  validate_config(cfg);
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

void validate_config(const RunConfig& cfg) {
  try {
    if (cfg.model.layers < 1) throw ModelError("layers must be >= 1");
    if (cfg.model.hidden < 1) throw ModelError("hidden must be >= 1");
    if (!(cfg.model.fixed_alpha >= 0.0 && cfg.model.fixed_alpha <= 1.0)) throw ModelError("fixed_alpha must be in [0, 1]");
    if (!(cfg.model.input_dropout >= 0.0 && cfg.model.input_dropout < 1.0)) {
      throw ModelError("input_dropout must be in [0, 1)");
    }
    cfg.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (cfg.repeats < 1) throw ConfigError("repeats must be >= 1");
  if (cfg.jobs < 1) throw ConfigError("jobs must be >= 1");
  if (cfg.mini_batch) {
    if (cfg.mini.fanouts.size() != 1 && cfg.mini.fanouts.size() != cfg.model.layers) {
      throw ConfigError("fanouts must list one value or one per layer");
    }
    if (cfg.mini.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  }
  if (cfg.ablate_augmentations < 2) throw ConfigError("ablate_augmentations must be >= 2");
  if (!(cfg.ablate_drop_rate >= 0.0 && cfg.ablate_drop_rate < 1.0)) {
    throw ConfigError("ablate_drop_rate must be in [0, 1)");
  }
}

std::string canonical_config(const RunConfig& c) {
  std::string out;
  auto line = [&](std::string_view k, const std::string& v) {
    out.append(k);
    out.append(" = ");
    out.append(v);
    out.push_back('\n');
  };
  auto opt = [](const std::optional<std::size_t>& v) { return v ? std::to_string(*v) : std::string("shipped"); };
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  auto join = [](const auto& items) {
    std::string s;
    for (const auto& it : items) {
      if (!s.empty()) s += ", ";
      if constexpr (std::is_same_v<std::decay_t<decltype(it)>, std::string>) {
        s += it;
      } else {
        s += std::to_string(it);
      }
    }
    return s;
  };
  out += "[data]\n";
  line("dataset", c.dataset.generic_string());
  line("train_size", opt(c.train_size));
  line("valid_size", opt(c.valid_size));
  line("test_size", opt(c.test_size));
  line("split_mode", c.split_mode == SplitMode::fixed_public ? "fixed_public" : "seeded_random");
  out += "[model]\n";
  line("variant", std::string(to_string(c.model.variant)));
  line("layers", std::to_string(c.model.layers));
  line("hidden", std::to_string(c.model.hidden));
  line("combine", std::string(to_string(c.model.combine)));
  line("cell", std::string(to_string(c.model.cell)));
  line("alpha_mode", std::string(to_string(c.model.alpha_mode)));
  line("fixed_alpha", format_double(c.model.fixed_alpha));
  line("input_dropout", format_double(c.model.input_dropout));
  line("shared_dynamic_mlp", b(c.model.shared_dynamic_mlp));
  line("row_normalize", b(c.model.row_normalize));
  out += "[train]\n";
  line("lr", format_double(c.train.lr));
  line("patience", std::to_string(c.train.patience));
  line("max_epochs", std::to_string(c.train.max_epochs));
  line("l2_conv", format_double(c.train.l2_conv));
  line("l2_fc", format_double(c.train.l2_fc));
  line("l2_evolving", format_double(c.train.l2_evolving));
  line("augmentations", std::to_string(c.train.augmentations));
  line("drop_rate", format_double(c.train.drop_rate));
  line("temperature", format_double(c.train.temperature));
  line("lambda", format_double(c.train.lambda));
  line("seed", std::to_string(c.train.seed));
  line("trace_stride", std::to_string(c.train.trace_stride));
  line("mini_batch", b(c.mini_batch));
  line("fanouts", join(c.mini.fanouts));
  line("batch_size", std::to_string(c.mini.batch_size));
  out += "[sweep]\n";
  line("axis", c.sweep_axis);
  line("values", join(c.sweep_values));
  line("repeats", std::to_string(c.repeats));
  line("ablate_augmentations", std::to_string(c.ablate_augmentations));
  line("ablate_drop_rate", format_double(c.ablate_drop_rate));
  return out;
}

}  // namespace drgcn
