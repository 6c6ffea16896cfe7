#include "config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace apgl::cli {

namespace {

const std::vector<KeySpec> kKeys = {
    {"dataset", "", "interaction log (user item timestamp)"},
    {"delimiter", "auto", "auto | tab | comma"},
    {"min_count", "5", "k-core threshold for users and items"},
    {"output_dir", "", "run directory (default: $APGL_OUTPUT_ROOT/run or ./runs/run)"},
    {"dim", "64", "embedding width"},
    {"max_len", "50", "maximum sequence length"},
    {"batch_size", "256", "training sequences per batch"},
    {"lr", "0.001", "Adam learning rate"},
    {"gcn_layers", "2", "graph propagation layers"},
    {"alpha", "0.05", "strength of the learned graph perturbation"},
    {"rank", "32", "rank of the graph perturbation factors"},
    {"heads", "2", "attention heads"},
    {"layers", "2", "Transformer layers"},
    {"dropout", "0.2", "dropout rate"},
    {"lambda_gce", "0.1", "weight of the graph contrastive loss"},
    {"lambda_seq", "0.1", "weight of the sequence contrastive loss"},
    {"tau", "0.2", "contrastive temperature"},
    {"window", "2", "sliding window of the transition graph"},
    {"max_epochs", "1000", "epoch limit"},
    {"patience", "40", "epochs without validation improvement before stopping"},
    {"seed", "1", "random seed"},
    {"crop_ratio", "0.6", "crop augmentation ratio"},
    {"mask_ratio", "0.3", "mask augmentation ratio"},
    {"reorder_ratio", "0.6", "reorder augmentation ratio"},
    {"enable_agcl", "true", "learned graph and its contrastive loss"},
    {"enable_pge", "true", "per-user graph relative encoding in attention"},
    {"pge_graph", "refined", "original | refined"},
    {"literal_layer_avg", "true", "divide layer sums by L (false: L+1)"},
    {"fusion_ablation", "false", "add graph item vectors to hidden states"},
    {"gce_batch", "targets", "targets | unique_items"},
    {"zero_pge_projection", "false", "start the relative-encoding weight at zero"},
    {"exclude_history", "true", "drop seen items from ranking candidates"},
    {"eval_batch_size", "256", "users per evaluation batch"},
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::span<const KeySpec> config_keys() { return kKeys; }

std::string flag_name(const std::string& key) {
  std::string f = "--" + key;
  std::replace(f.begin(), f.end(), '_', '-');
  return f;
}

Settings::Settings() {
  for (const auto& k : kKeys) values_[k.name] = k.default_value;
}

void Settings::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown config key '" + key + "'");
  it->second = value;
}

const std::string& Settings::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown config key '" + key + "'");
  return it->second;
}

bool Settings::is_set(const std::string& key) const { return !get(key).empty(); }

void Settings::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw UsageError(origin + ":" + std::to_string(lineno) +
                       ": expected key = value");
    }
    const auto key = trim(t.substr(0, eq));
    if (!values_.count(key)) {
      throw UsageError(origin + ":" + std::to_string(lineno) +
                       ": unknown config key '" + key + "'");
    }
    values_[key] = trim(t.substr(eq + 1));
  }
}

void Settings::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  merge_text(buf.str(), path.string());
}

std::string Settings::resolved() const {
  std::ostringstream out;
  for (const auto& k : kKeys) out << k.name << " = " << values_.at(k.name) << '\n';
  return out.str();
}

double parse_double(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw UsageError(flag_name(key) + ": expected a number, got '" + text + "'");
}

long long parse_int(const std::string& key, const std::string& text) {
  long long v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw UsageError(flag_name(key) + ": expected an integer, got '" + text + "'");
  }
  return v;
}

std::size_t parse_size(const std::string& key, const std::string& text) {
  const auto v = parse_int(key, text);
  if (v < 0) throw UsageError(flag_name(key) + ": must not be negative");
  return static_cast<std::size_t>(v);
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw UsageError(flag_name(key) + ": expected true or false, got '" + text + "'");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string part;
  while (std::getline(in, part, ',')) {
    part = trim(part);
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

training::TrainConfig Settings::train_config() const {
  training::TrainConfig c;
  auto sz = [&](const char* k) { return parse_size(k, get(k)); };
  auto dbl = [&](const char* k) { return parse_double(k, get(k)); };
  auto flag = [&](const char* k) { return parse_bool(k, get(k)); };
  c.dim = sz("dim");
  c.max_len = sz("max_len");
  c.batch_size = sz("batch_size");
  c.lr = dbl("lr");
  c.gcn_layers = sz("gcn_layers");
  c.alpha = dbl("alpha");
  c.rank = sz("rank");
  c.heads = sz("heads");
  c.layers = sz("layers");
  c.dropout = dbl("dropout");
  c.lambda_gce = dbl("lambda_gce");
  c.lambda_seq = dbl("lambda_seq");
  c.tau = dbl("tau");
  c.window = sz("window");
  c.max_epochs = sz("max_epochs");
  c.patience = sz("patience");
  c.seed = static_cast<std::uint64_t>(parse_int("seed", get("seed")));
  c.augment.crop = dbl("crop_ratio");
  c.augment.mask = dbl("mask_ratio");
  c.augment.reorder = dbl("reorder_ratio");
  c.enable_agcl = flag("enable_agcl");
  c.enable_pge = flag("enable_pge");
  const auto& g = get("pge_graph");
  if (g == "refined") {
    c.pge_graph = training::PgeGraph::Refined;
  } else if (g == "original") {
    c.pge_graph = training::PgeGraph::Original;
  } else {
    throw UsageError("--pge-graph: expected original or refined, got '" + g + "'");
  }
  c.literal_layer_avg = flag("literal_layer_avg");
  c.fusion_ablation = flag("fusion_ablation");
  const auto& gb = get("gce_batch");
  if (gb == "targets") {
    c.gce_batch = training::GceBatch::Targets;
  } else if (gb == "unique_items") {
    c.gce_batch = training::GceBatch::UniqueItems;
  } else {
    throw UsageError("--gce-batch: expected targets or unique_items, got '" + gb + "'");
  }
  c.zero_pge_projection = flag("zero_pge_projection");
  c.exclude_history = flag("exclude_history");
  c.eval_batch_size = sz("eval_batch_size");
  return c;
}

data::Delimiter Settings::delimiter() const {
  const auto& d = get("delimiter");
  if (d == "auto") return data::Delimiter::Auto;
  if (d == "tab") return data::Delimiter::Tab;
  if (d == "comma") return data::Delimiter::Comma;
  throw UsageError("--delimiter: expected auto, tab or comma, got '" + d + "'");
}

static int min_count_checked(long long v) {
  if (v < 1) throw UsageError("--min-count: must be at least 1");
  return static_cast<int>(v);
}

int Settings::min_count() const {
  return min_count_checked(parse_int("min_count", get("min_count")));
}

}  // namespace apgl::cli
