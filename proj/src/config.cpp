#include "fedzo/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <type_traits>

#include "fedzo/error.hpp"
#include "fedzo/metrics.hpp"

namespace fedzo {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Position of a '#' that is not inside a string, or npos.
std::size_t comment_start(const std::string& line) {
  bool in_str = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (in_str && line[i] == '\\') {
      ++i;
    } else if (line[i] == '"') {
      in_str = !in_str;
    } else if (line[i] == '#' && !in_str) {
      return i;
    }
  }
  return std::string::npos;
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
  }
  return true;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out + "\"";
}

}  // namespace

ConfigValue parse_config_value(const std::string& raw, const std::string& where) {
  const std::string t = trim(raw);
  if (t.empty()) throw ValidationError(where + ": missing value");
  if (t.front() == '"') {
    std::string out;
    std::size_t i = 1;
    for (; i < t.size() && t[i] != '"'; ++i) {
      if (t[i] == '\\' && i + 1 < t.size()) {
        const char e = t[++i];
        out += e == 'n' ? '\n' : e == 't' ? '\t' : e;
      } else {
        out += t[i];
      }
    }
    if (i + 1 != t.size()) throw ValidationError(where + ": malformed string " + t);
    return out;
  }
  if (t == "true") return true;
  if (t == "false") return false;
  const char* first = t.data() + (t.front() == '+' ? 1 : 0);
  const char* last = t.data() + t.size();
  std::int64_t iv = 0;
  auto ri = std::from_chars(first, last, iv);
  if (ri.ec == std::errc() && ri.ptr == last) return iv;
  double dv = 0.0;
  auto rd = std::from_chars(first, last, dv);
  if (rd.ec == std::errc() && rd.ptr == last) return dv;
  throw ValidationError(where + ": cannot parse value " + t);
}

std::map<std::string, ConfigValue> parse_config_text(const std::string& text, const std::string& source) {
  std::map<std::string, ConfigValue> out;
  std::istringstream in(text);
  std::string line, table;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto c = comment_start(line);
    const std::string body = trim(c == std::string::npos ? line : line.substr(0, c));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']') throw ValidationError(where + ": malformed table header");
      table = trim(body.substr(1, body.size() - 2));
      if (!valid_key(table)) throw ValidationError(where + ": bad table name '" + table + "'");
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ValidationError(where + ": expected key = value");
    const std::string key = trim(body.substr(0, eq));
    if (!valid_key(key)) throw ValidationError(where + ": bad key '" + key + "'");
    const std::string full = table.empty() ? key : table + "." + key;
    if (out.count(full)) throw ValidationError(where + ": duplicate key " + full);
    out[full] = parse_config_value(body.substr(eq + 1), where);
  }
  return out;
}

namespace {

struct Field {
  std::string name;
  std::function<void(ExperimentConfig&, const ConfigValue&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

std::string type_error(const std::string& key, const char* want) {
  return "config key " + key + " expects " + want;
}

// `ref` maps a config (const or not) to the field it names.
template <class Ref>
Field uint_field(std::string name, Ref ref) {
  return {name,
          [name, ref](ExperimentConfig& c, const ConfigValue& v) {
            const auto* i = std::get_if<std::int64_t>(&v);
            if (!i || *i < 0) throw ValidationError(type_error(name, "a non-negative integer"));
            using T = std::remove_reference_t<decltype(ref(c))>;
            ref(c) = static_cast<T>(*i);
          },
          [ref](const ExperimentConfig& c) { return std::to_string(ref(c)); }};
}

template <class Ref>
Field real_field(std::string name, Ref ref) {
  return {name,
          [name, ref](ExperimentConfig& c, const ConfigValue& v) {
            if (const auto* d = std::get_if<double>(&v)) {
              ref(c) = *d;
            } else if (const auto* i = std::get_if<std::int64_t>(&v)) {
              ref(c) = static_cast<double>(*i);
            } else {
              throw ValidationError(type_error(name, "a number"));
            }
          },
          [ref](const ExperimentConfig& c) {
            std::string s = format_double(ref(c));
            if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
            return s;
          }};
}

template <class Ref>
Field string_field(std::string name, Ref ref) {
  return {name,
          [name, ref](ExperimentConfig& c, const ConfigValue& v) {
            const auto* s = std::get_if<std::string>(&v);
            if (!s) throw ValidationError(type_error(name, "a string"));
            ref(c) = *s;
          },
          [ref](const ExperimentConfig& c) { return quote(ref(c)); }};
}

template <class E, class Ref>
Field enum_field(std::string name, Ref ref, std::vector<std::pair<E, std::string>> names) {
  return {name,
          [name, ref, names](ExperimentConfig& c, const ConfigValue& v) {
            if (const auto* s = std::get_if<std::string>(&v)) {
              for (const auto& [e, text] : names) {
                if (text == *s) {
                  ref(c) = e;
                  return;
                }
              }
            }
            std::string allowed;
            for (const auto& [e, text] : names) allowed += (allowed.empty() ? "" : "|") + text;
            throw ValidationError(type_error(name, ("one of " + allowed).c_str()));
          },
          [ref, names](const ExperimentConfig& c) {
            for (const auto& [e, text] : names) {
              if (e == ref(c)) return quote(text);
            }
            return quote("?");
          }};
}

#define FEDZO_REF(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = [] {
    std::vector<Field> v;
    v.push_back(uint_field("seed", FEDZO_REF(seed)));
    v.push_back(string_field("model", FEDZO_REF(model)));
    v.push_back(string_field("dataset", FEDZO_REF(dataset)));
    v.push_back(string_field("data_dir", FEDZO_REF(data_dir)));
    v.push_back(uint_field("m", FEDZO_REF(m)));
    v.push_back(real_field("beta", FEDZO_REF(beta)));
    v.push_back(real_field("dropout", FEDZO_REF(dropout)));
    v.push_back(enum_field<PruneMode>("prune_mode", FEDZO_REF(prune_mode),
                                      {{PruneMode::data_free, "data-free"}, {PruneMode::real_data, "real-data"}}));
    v.push_back(uint_field("T_p", FEDZO_REF(T_p)));
    v.push_back(real_field("d", FEDZO_REF(d)));
    v.push_back(uint_field("G_p", FEDZO_REF(G_p)));
    v.push_back(real_field("eps", FEDZO_REF(eps)));
    v.push_back(uint_field("mc_samples", FEDZO_REF(mc_samples)));
    v.push_back(uint_field("probe_batch", FEDZO_REF(probe_batch)));
    v.push_back(enum_field<Algorithm>("algorithm", FEDZO_REF(algorithm),
                                      {{Algorithm::bp_free, "bp-free"}, {Algorithm::fedavg, "fedavg"}}));
    v.push_back(uint_field("T_t", FEDZO_REF(T_t)));
    v.push_back(uint_field("G_t", FEDZO_REF(G_t)));
    v.push_back(uint_field("K", FEDZO_REF(K)));
    v.push_back(real_field("sigma", FEDZO_REF(sigma)));
    v.push_back(enum_field<Difference>("difference", FEDZO_REF(difference),
                                       {{Difference::one_sided, "one-sided"}, {Difference::central, "central"}}));
    v.push_back(enum_field<CommMode>("comm", FEDZO_REF(comm),
                                     {{CommMode::seed_trick, "seed-trick"}, {CommMode::full_vector, "full-vector"}}));
    v.push_back(uint_field("batch_size", FEDZO_REF(batch_size)));
    v.push_back(uint_field("local_epochs", FEDZO_REF(local_epochs)));
    v.push_back(real_field("lr", FEDZO_REF(lr)));
    v.push_back(real_field("momentum", FEDZO_REF(momentum)));
    v.push_back(real_field("weight_decay", FEDZO_REF(weight_decay)));
    v.push_back(real_field("lr_decay", FEDZO_REF(lr_decay)));
    v.push_back(uint_field("eval_every", FEDZO_REF(eval_every)));
    v.push_back(uint_field("synthetic.classes", FEDZO_REF(synthetic.classes)));
    v.push_back(uint_field("synthetic.dims", FEDZO_REF(synthetic.dims)));
    v.push_back(uint_field("synthetic.per_class", FEDZO_REF(synthetic.per_class)));
    v.push_back(uint_field("synthetic.test_per_class", FEDZO_REF(synthetic.test_per_class)));
    v.push_back(real_field("synthetic.separation", FEDZO_REF(synthetic.separation)));
    return v;
  }();
  return f;
}

#undef FEDZO_REF

}  // namespace

void set_config_key(ExperimentConfig& cfg, const std::string& key, const ConfigValue& value) {
  for (const Field& f : fields()) {
    if (f.name == key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ValidationError("unknown config key " + key);
}

void ExperimentConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ValidationError(msg);
  };
  need(model == "lenet5" || model == "linear" || model.rfind("mlp-", 0) == 0, "model: unknown architecture " + model);
  need(dataset == "synthetic" || dataset == "cifar10", "dataset: expected synthetic or cifar10");
  need(m >= 1, "m: need at least one device");
  need(beta > 0.0, "beta: must be > 0");
  need(dropout >= 0.0 && dropout < 1.0, "dropout: must lie in [0, 1)");
  need(d > 0.0 && d <= 1.0, "d: density must lie in (0, 1]");
  need(prune_mode == PruneMode::data_free || (G_p >= 1 && G_p <= m), "G_p: must lie in [1, m]");
  need(eps > 0.0, "eps: must be > 0");
  need(mc_samples >= 1, "mc_samples: must be >= 1");
  need(probe_batch >= 1, "probe_batch: must be >= 1");
  need(G_t >= 1 && G_t <= m, "G_t: must lie in [1, m]");
  need(K >= 1, "K: must be >= 1");
  need(sigma > 0.0, "sigma: must be > 0");
  need(batch_size >= 1, "batch_size: must be >= 1");
  need(lr > 0.0, "lr: must be > 0");
  need(momentum >= 0.0 && momentum < 1.0, "momentum: must lie in [0, 1)");
  need(weight_decay >= 0.0, "weight_decay: must be >= 0");
  need(lr_decay > 0.0 && lr_decay <= 1.0, "lr_decay: must lie in (0, 1]");
  need(eval_every >= 1, "eval_every: must be >= 1");
  if (dataset == "synthetic") {
    need(synthetic.per_class >= 1, "synthetic.per_class: must be >= 1");
    need(synthetic.classes >= 2 && synthetic.classes <= synthetic.dims,
         "synthetic.classes: must lie in [2, synthetic.dims]");
    need(synthetic.separation >= 0.0, "synthetic.separation: must be >= 0");
  }
}

PruningConfig ExperimentConfig::pruning() const {
  PruningConfig p;
  p.mode = prune_mode;
  p.rounds = T_p;
  p.density = d;
  p.devices_per_round = G_p;
  p.eps_scale = eps;
  p.mc_samples = mc_samples;
  p.probe_batch = probe_batch;
  return p;
}

ExperimentConfig config_from_text(const std::string& text, const std::string& source) {
  ExperimentConfig cfg;
  for (const auto& [k, v] : parse_config_text(text, source)) set_config_key(cfg, k, v);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open config");
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_text(ss.str(), path.string());
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ValidationError("--set expects key=value, got " + assignment);
  const std::string key = trim(assignment.substr(0, eq));
  set_config_key(cfg, key, parse_config_value(assignment.substr(eq + 1), "--set " + key));
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::string top, synth;
  for (const Field& f : fields()) {
    if (f.name.rfind("synthetic.", 0) == 0) {
      synth += f.name.substr(10) + " = " + f.get(cfg) + "\n";
    } else {
      top += f.name + " = " + f.get(cfg) + "\n";
    }
  }
  return top + "\n[synthetic]\n" + synth;
}

}  // namespace fedzo
