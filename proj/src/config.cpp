#include "entk/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "entk/errors.hpp"
#include "entk/io.hpp"

namespace entk {

namespace pt = boost::property_tree;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T out{};
  in >> out;
  if (!in || !(in >> std::ws).eof()) throw ConfigError("config key '" + key + "': cannot parse '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

}  // namespace

std::vector<std::string> preset_names() { return {"tms-dense", "tms-sparse", "modadd-p29", "modadd-small"}; }

ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig cfg;
  cfg.preset = name;
  if (name == "tms-dense" || name == "tms-sparse") {
    cfg.experiment = DatasetKind::tms;
    cfg.n = 50;
    cfg.num_points = 500;
    cfg.sparsity = name == "tms-dense" ? 0.3 : 0.9;
    cfg.importance_base = 0.8;
    cfg.train = tms_default_config();
    cfg.train.hidden = 10;
    cfg.checkpoint_every = 1000;
    cfg.out = "runs/" + name;
  } else if (name == "modadd-p29" || name == "modadd-small") {
    cfg.experiment = DatasetKind::modadd;
    cfg.p = name == "modadd-p29" ? 29 : 13;
    cfg.alpha = 0.7;
    cfg.train = modadd_default_config();
    cfg.train.hidden = 512;
    cfg.checkpoint_every = 5;
    cfg.out = "runs/" + name;
  } else {
    std::string known;
    for (const auto& n : preset_names()) known += " " + n;
    throw ConfigError("unknown preset '" + name + "' (known:" + known + ")");
  }
  cfg.kernel_specs = default_kernel_specs(cfg);
  return cfg;
}

std::vector<std::string> default_kernel_specs(const ExperimentConfig& cfg) {
  if (cfg.experiment == DatasetKind::modadd) return {"class_trace/all", "class_trace/layer1", "class_trace/layer2"};
  std::vector<std::string> out = {"flattened/all"};
  for (double b : cfg.betas)
    if (b != 0.0) out.push_back("flattened/all/beta=" + io::format_double(b));
  return out;
}

KernelSpec parse_kernel_spec(const std::string& s) {
  const auto parts = [&] {
    std::vector<std::string> v;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, '/')) v.push_back(trim(item));
    return v;
  }();
  if (parts.empty() || parts.size() > 3) throw ConfigError("malformed kernel spec '" + s + "'");
  KernelSpec spec;
  std::string collapse = parts[0];
  if (const auto colon = collapse.find(':'); colon != std::string::npos) {
    spec.cls = parse_number<int>("kernel class", collapse.substr(colon + 1));
    collapse = collapse.substr(0, colon);
  }
  try {
    spec.collapse = collapse_from_string(collapse);
    if (parts.size() > 1) spec.layers = layer_sel_from_string(parts[1]);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("kernel spec '" + s + "': " + e.what());
  }
  if (parts.size() > 2) {
    if (parts[2].rfind("beta=", 0) != 0) throw ConfigError("kernel spec '" + s + "': expected beta=<value>");
    spec.beta = parse_number<double>("kernel beta", parts[2].substr(5));
  }
  return spec;
}

ExperimentConfig parse_config(const std::string& text, const ExperimentConfig& base) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  ExperimentConfig cfg = base;
  if (auto preset = tree.get_optional<std::string>("experiment.preset")) cfg = preset_config(trim(*preset));

  using Setter = void (*)(ExperimentConfig&, const std::string&, const std::string&);
  static const std::map<std::string, Setter> setters = {
      {"experiment.preset", [](ExperimentConfig&, const std::string&, const std::string&) {}},
      {"experiment.kind",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         if (v != "tms" && v != "modadd") throw ConfigError("config key '" + k + "': expected tms or modadd");
         const bool changed = dataset_kind_from_string(v) != c.experiment;
         c.experiment = dataset_kind_from_string(v);
         if (changed) {
           const int hidden = c.experiment == DatasetKind::tms ? 10 : 512;
           c.train = c.experiment == DatasetKind::tms ? tms_default_config() : modadd_default_config();
           c.train.hidden = hidden;
         }
       }},
      {"experiment.seed", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.seed = parse_number<std::uint64_t>(k, v); }},
      {"experiment.out", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.out = v; }},
      {"data.p", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.p = parse_number<int>(k, v); }},
      {"data.alpha", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.alpha = parse_number<double>(k, v); }},
      {"data.n", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.n = parse_number<int>(k, v); }},
      {"data.num_points", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.num_points = parse_number<int>(k, v); }},
      {"data.sparsity", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.sparsity = parse_number<double>(k, v); }},
      {"data.importance_base", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.importance_base = parse_number<double>(k, v); }},
      {"model.hidden", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.train.hidden = parse_number<int>(k, v); }},
      {"training.epochs", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.train.epochs = parse_number<int>(k, v); }},
      {"training.lr", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.train.lr = parse_number<double>(k, v); }},
      {"training.optimizer", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.train.optimizer = optimizer_from_string(v); }},
      {"training.weight_decay", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.train.weight_decay = parse_number<double>(k, v); }},
      {"training.beta1", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.train.beta1 = parse_number<double>(k, v); }},
      {"training.beta2", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.train.beta2 = parse_number<double>(k, v); }},
      {"training.eps", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.train.eps = parse_number<double>(k, v); }},
      {"training.checkpoint_every", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.checkpoint_every = parse_number<int>(k, v); }},
      {"training.early_stop", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.train.early_stop = parse_bool(k, v); }},
      {"training.early_stop_window", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.train.early_stop_window = parse_number<int>(k, v); }},
      {"training.early_stop_tol", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.train.early_stop_tol = parse_number<double>(k, v); }},
      {"training.init", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.train.init_scale_rule = v; }},
      {"kernel.specs", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.kernel_specs = split_list(v); }},
      {"kernel.eval_set", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.eval_set = v; }},
      {"kernel.dense_cap", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.dense_cap = parse_number<Index>(k, v); }},
      {"kernel.topk", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.topk = parse_number<Index>(k, v); }},
      {"analysis.steps", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.steps = split_list(v); }},
      {"analysis.cliff_threshold", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.cliff_threshold = parse_number<double>(k, v); }},
      {"analysis.cliff_floor", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.cliff_floor = parse_number<double>(k, v); }},
      {"analysis.betas",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.betas.clear();
         for (const auto& b : split_list(v)) c.betas.push_back(parse_number<double>(k, b));
       }},
      {"analysis.disentangle_offset", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.disentangle_offset = parse_number<Index>(k, v); }},
      {"analysis.recon_threshold", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.recon_threshold = parse_number<double>(k, v); }},
      {"analysis.frame_every", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.frame_every = parse_number<int>(k, v); }},
  };

  // Apply kind first so its defaults do not clobber later keys.
  if (auto kind = tree.get_optional<std::string>("experiment.kind")) setters.at("experiment.kind")(cfg, "experiment.kind", trim(*kind));
  bool specs_set = false;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("config key '" + section + "' must live in a section");
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      const auto it = setters.find(full);
      if (it == setters.end()) throw ConfigError("unknown config key '" + full + "'");
      if (full == "experiment.kind" || full == "experiment.preset") continue;
      it->second(cfg, full, trim(value.data()));
      specs_set |= full == "kernel.specs";
    }
  }
  if (!specs_set && (cfg.kernel_specs.empty() || tree.get_optional<std::string>("experiment.kind") ||
                     tree.get_child_optional("analysis.betas")))
    cfg.kernel_specs = default_kernel_specs(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, const ExperimentConfig& base) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text, base);
}

void validate(const ExperimentConfig& cfg) {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  try {
    cfg.train.validate();
  } catch (const ConfigError& e) {
    fail(std::string("training: ") + e.what());
  }
  if (cfg.checkpoint_every < 1) fail("checkpoint_every must be >= 1");
  if (cfg.experiment == DatasetKind::modadd) {
    if (cfg.p < 2) fail("data.p must be >= 2");
    if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) fail("data.alpha must lie in (0, 1)");
  } else {
    if (cfg.n < 1 || cfg.num_points < 1) fail("data.n and data.num_points must be >= 1");
    if (!(cfg.sparsity >= 0.0 && cfg.sparsity < 1.0)) fail("data.sparsity must lie in [0, 1)");
    if (!(cfg.importance_base > 0.0 && cfg.importance_base <= 1.0)) fail("data.importance_base must lie in (0, 1]");
  }
  if (cfg.eval_set != "default" && cfg.eval_set != "train" && cfg.eval_set != "lattice")
    fail("kernel.eval_set must be default, train or lattice");
  if (cfg.eval_set == "lattice" && cfg.experiment == DatasetKind::tms) fail("kernel.eval_set lattice needs a modadd experiment");
  if (cfg.dense_cap < 1 || cfg.topk < 1) fail("kernel.dense_cap and kernel.topk must be >= 1");
  if (cfg.kernel_specs.empty()) fail("kernel.specs is empty");
  for (const auto& s : cfg.kernel_specs) {
    const KernelSpec spec = parse_kernel_spec(s);
    if (cfg.experiment == DatasetKind::tms && spec.layers != LayerSel::all) fail("kernel spec '" + s + "': layer selection is modadd-only");
    if (cfg.experiment == DatasetKind::modadd && spec.beta != 0.0) fail("kernel spec '" + s + "': beta is TMS-only");
    if (!(spec.beta >= 0.0 && spec.beta <= 1.0)) fail("kernel spec '" + s + "': beta must lie in [0, 1]");
    const int classes = cfg.experiment == DatasetKind::tms ? cfg.n : cfg.p;
    if (spec.collapse == Collapse::per_class && (spec.cls < 0 || spec.cls >= classes)) fail("kernel spec '" + s + "': class out of range");
  }
  static const std::set<std::string> known_steps = {"cliffs", "heatmaps", "disentangle", "timeseries"};
  for (const auto& s : cfg.steps)
    if (!known_steps.count(s)) fail("unknown analysis step '" + s + "'");
  for (double b : cfg.betas)
    if (!(b >= 0.0 && b <= 1.0)) fail("analysis.betas entries must lie in [0, 1]");
  if (!(cfg.cliff_threshold > 1.0)) fail("analysis.cliff_threshold must be > 1");
  if (!(cfg.cliff_floor >= 0.0)) fail("analysis.cliff_floor must be >= 0");
  if (cfg.disentangle_offset < 0) fail("analysis.disentangle_offset must be >= 0");
  if (cfg.frame_every < 1) fail("analysis.frame_every must be >= 1");
}

std::string to_ini(const ExperimentConfig& cfg) {
  std::ostringstream o;
  auto list = [](const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + v[i];
    return s;
  };
  std::vector<std::string> betas;
  for (double b : cfg.betas) betas.push_back(io::format_double(b));
  o << "[experiment]\n"
    << "kind = " << to_string(cfg.experiment) << "\n"
    << "seed = " << cfg.seed << "\n"
    << "out = " << cfg.out.string() << "\n\n"
    << "[data]\n";
  if (cfg.experiment == DatasetKind::modadd)
    o << "p = " << cfg.p << "\nalpha = " << io::format_double(cfg.alpha) << "\n\n";
  else
    o << "n = " << cfg.n << "\nnum_points = " << cfg.num_points << "\nsparsity = " << io::format_double(cfg.sparsity)
      << "\nimportance_base = " << io::format_double(cfg.importance_base) << "\n\n";
  o << "[model]\nhidden = " << cfg.train.hidden << "\n\n"
    << "[training]\n"
    << "epochs = " << cfg.train.epochs << "\n"
    << "lr = " << io::format_double(cfg.train.lr) << "\n"
    << "optimizer = " << to_string(cfg.train.optimizer) << "\n"
    << "weight_decay = " << io::format_double(cfg.train.weight_decay) << "\n"
    << "beta1 = " << io::format_double(cfg.train.beta1) << "\n"
    << "beta2 = " << io::format_double(cfg.train.beta2) << "\n"
    << "eps = " << io::format_double(cfg.train.eps) << "\n"
    << "checkpoint_every = " << cfg.checkpoint_every << "\n"
    << "early_stop = " << (cfg.train.early_stop ? "true" : "false") << "\n"
    << "early_stop_window = " << cfg.train.early_stop_window << "\n"
    << "early_stop_tol = " << io::format_double(cfg.train.early_stop_tol) << "\n"
    << "init = " << cfg.train.init_scale_rule << "\n\n"
    << "[kernel]\n"
    << "specs = " << list(cfg.kernel_specs) << "\n"
    << "eval_set = " << cfg.eval_set << "\n"
    << "dense_cap = " << cfg.dense_cap << "\n"
    << "topk = " << cfg.topk << "\n\n"
    << "[analysis]\n"
    << "steps = " << list(cfg.steps) << "\n"
    << "cliff_threshold = " << io::format_double(cfg.cliff_threshold) << "\n"
    << "cliff_floor = " << io::format_double(cfg.cliff_floor) << "\n"
    << "betas = " << list(betas) << "\n"
    << "disentangle_offset = " << cfg.disentangle_offset << "\n"
    << "recon_threshold = " << io::format_double(cfg.recon_threshold) << "\n"
    << "frame_every = " << cfg.frame_every << "\n";
  return o.str();
}

std::string config_hash(const ExperimentConfig& cfg) {
  // The output location does not change results.
  ExperimentConfig c = cfg;
  c.out.clear();
  return io::hex64(io::fnv1a64(to_ini(c)));
}

}  // namespace entk
