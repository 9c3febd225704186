#include "skd/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace skd::config {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& where) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw InvalidInput(where + ": expected boolean, got '" + v + "'");
}

double parse_double(const std::string& v, const std::string& where) {
  try {
    size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw InvalidInput(where + ": expected number, got '" + v + "'");
  }
}

int parse_int(const std::string& v, const std::string& where) {
  try {
    size_t pos = 0;
    const int i = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw InvalidInput(where + ": expected integer, got '" + v + "'");
  }
}

std::vector<int> parse_int_list(const std::string& v, const std::string& where) {
  std::vector<int> out;
  if (trim(v).empty() || v == "none") return out;
  std::istringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int(trim(item), where));
  return out;
}

void set_key(RunConfig& cfg, const std::string& key, const std::string& value,
             const std::string& where) {
  auto& t = cfg.training;
  if (key == "dataset") cfg.dataset = value;
  else if (key == "dataset_root") cfg.dataset_root = value;
  else if (key == "model") cfg.model = value;
  else if (key == "output_dir") cfg.output_dir = value;
  else if (key == "method") t.method = train::method_from_string(value);
  else if (key == "tap") t.tap = parse_int(value, where);
  else if (key == "tau_drg") t.tau_drg = parse_double(value, where);
  else if (key == "tau_dsr") t.tau_dsr = parse_double(value, where);
  else if (key == "alpha") t.alpha = parse_double(value, where);
  else if (key == "beta") t.beta = parse_double(value, where);
  else if (key == "epochs") t.epochs = parse_int(value, where);
  else if (key == "batch_size") t.batch_size = parse_int(value, where);
  else if (key == "drop_last") t.drop_last = parse_bool(value, where);
  else if (key == "lr") t.lr.base = parse_double(value, where);
  else if (key == "lr_milestones") t.lr.milestones = parse_int_list(value, where);
  else if (key == "lr_factor") t.lr.factor = parse_double(value, where);
  else if (key == "momentum") t.momentum = parse_double(value, where);
  else if (key == "weight_decay") t.weight_decay = parse_double(value, where);
  else if (key == "seed") t.seed = static_cast<std::uint64_t>(std::stoull(value));
  else if (key == "teacher_detach") t.teacher_detach = parse_bool(value, where);
  else if (key == "deterministic_timing") t.deterministic_timing = parse_bool(value, where);
  else if (key == "sr_first_step") {
    if (value == "skip") t.sr_first_step = train::SrFirstStep::kSkip;
    else if (value == "uniform") t.sr_first_step = train::SrFirstStep::kUniform;
    else throw InvalidInput(where + ": sr_first_step must be 'skip' or 'uniform'");
  }
  else if (key == "crop_size") t.aug.crop_size = parse_int(value, where);
  else if (key == "crop_padding") t.aug.padding = parse_int(value, where);
  else if (key == "flip_prob") t.aug.flip_prob = parse_double(value, where);
  else if (key == "aux_hidden") t.aux_hidden = parse_int(value, where);
  else throw InvalidInput(where + ": unknown key '" + key + "'");
}

}  // namespace

RunConfig parse_text(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno);
    if (eq == std::string::npos)
      throw InvalidInput(where + ": expected 'key = value', got '" + line + "'");
    set_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), where);
  }
  cfg.training.validate();
  return cfg;
}

RunConfig parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str(), path);
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  set_key(cfg, key, value, "override '" + key + "'");
  cfg.training.validate();
}

std::string RunConfig::resolved_text() const {
  const auto& t = training;
  std::ostringstream out;
  out.precision(17);
  out << "alpha = " << t.alpha << "\n";
  out << "aux_hidden = " << t.aux_hidden << "\n";
  out << "batch_size = " << t.batch_size << "\n";
  out << "beta = " << t.beta << "\n";
  out << "crop_padding = " << t.aug.padding << "\n";
  out << "crop_size = " << t.aug.crop_size << "\n";
  out << "dataset = " << dataset << "\n";
  out << "dataset_root = " << dataset_root << "\n";
  out << "deterministic_timing = " << (t.deterministic_timing ? "true" : "false") << "\n";
  out << "drop_last = " << (t.drop_last ? "true" : "false") << "\n";
  out << "epochs = " << t.epochs << "\n";
  out << "flip_prob = " << t.aug.flip_prob << "\n";
  out << "lr = " << t.lr.base << "\n";
  out << "lr_factor = " << t.lr.factor << "\n";
  out << "lr_milestones = ";
  for (size_t i = 0; i < t.lr.milestones.size(); ++i)
    out << (i ? "," : "") << t.lr.milestones[i];
  out << "\n";
  out << "method = " << train::to_string(t.method) << "\n";
  out << "model = " << model << "\n";
  out << "momentum = " << t.momentum << "\n";
  out << "output_dir = " << output_dir << "\n";
  out << "seed = " << t.seed << "\n";
  out << "sr_first_step = "
      << (t.sr_first_step == train::SrFirstStep::kSkip ? "skip" : "uniform") << "\n";
  out << "tap = " << t.tap << "\n";
  out << "tau_drg = " << t.tau_drg << "\n";
  out << "tau_dsr = " << t.tau_dsr << "\n";
  out << "teacher_detach = " << (t.teacher_detach ? "true" : "false") << "\n";
  out << "weight_decay = " << t.weight_decay << "\n";
  return out.str();
}

std::string RunConfig::run_id() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(resolved_text())));
  return buf;
}

std::string RunConfig::resolve_dataset_root() const {
  if (!dataset_root.empty()) return dataset_root;
  if (const char* env = std::getenv("SKD_DATA_ROOT")) return env;
  return "./data";
}

void write_resolved(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << cfg.resolved_text();
}

}  // namespace skd::config
