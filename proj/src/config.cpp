#include "a2rnet/config.hpp"

#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "a2rnet/common.hpp"

namespace a2r {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& expected) {
  throw ValidationError("config value for " + key + " is not " + expected + ": '" +
                        value + "'");
}

long long parse_int(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(value, &used);
  } catch (const std::exception&) {
    bad_value(key, value, "an integer");
  }
  if (used != value.size()) bad_value(key, value, "an integer");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  if (!value.empty() && value[0] == '-') bad_value(key, value, "a non-negative integer");
  std::size_t used = 0;
  std::uint64_t out = 0;
  try {
    out = std::stoull(value, &used);
  } catch (const std::exception&) {
    bad_value(key, value, "a non-negative integer");
  }
  if (used != value.size()) bad_value(key, value, "a non-negative integer");
  return out;
}

Scalar parse_real(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  Scalar out = 0.0;
  try {
    out = std::stod(value, &used);
  } catch (const std::exception&) {
    bad_value(key, value, "a number");
  }
  if (used != value.size()) bad_value(key, value, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "a boolean (true/false)");
}

std::string format_int(long long v) { return std::to_string(v); }

std::string format_real(Scalar v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string format_bool(bool v) { return v ? "true" : "false"; }

struct FieldSpec {
  const char* section;
  const char* key;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<FieldSpec>& field_table() {
  static const std::vector<FieldSpec> table = [] {
    std::vector<FieldSpec> t;
    auto add_int = [&t](const char* sec, const char* key, auto member) {
      t.push_back({sec, key,
                   [member](RunConfig& c, const std::string& k, const std::string& v) {
                     member(c) = static_cast<int>(parse_int(k, v));
                   },
                   [member](const RunConfig& c) {
                     return format_int(member(const_cast<RunConfig&>(c)));
                   }});
    };
    auto add_real = [&t](const char* sec, const char* key, auto member) {
      t.push_back({sec, key,
                   [member](RunConfig& c, const std::string& k, const std::string& v) {
                     member(c) = parse_real(k, v);
                   },
                   [member](const RunConfig& c) {
                     return format_real(member(const_cast<RunConfig&>(c)));
                   }});
    };
    auto add_u64 = [&t](const char* sec, const char* key, auto member) {
      t.push_back({sec, key,
                   [member](RunConfig& c, const std::string& k, const std::string& v) {
                     member(c) = parse_u64(k, v);
                   },
                   [member](const RunConfig& c) {
                     return std::to_string(member(const_cast<RunConfig&>(c)));
                   }});
    };
    auto add_bool = [&t](const char* sec, const char* key, auto member) {
      t.push_back({sec, key,
                   [member](RunConfig& c, const std::string& k, const std::string& v) {
                     member(c) = parse_bool(k, v);
                   },
                   [member](const RunConfig& c) {
                     return format_bool(member(const_cast<RunConfig&>(c)));
                   }});
    };
    auto add_string = [&t](const char* sec, const char* key, auto member) {
      t.push_back({sec, key,
                   [member](RunConfig& c, const std::string&, const std::string& v) {
                     member(c) = v;
                   },
                   [member](const RunConfig& c) {
                     return member(const_cast<RunConfig&>(c));
                   }});
    };

    add_int("network", "base_channels",
            [](RunConfig& c) -> int& { return c.network.base_channels; });

    add_int("attention", "taylor_order",
            [](RunConfig& c) -> int& { return c.network.attention.taylor_order; });
    t.push_back({"attention", "sigma_mode",
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   if (v == "per_tensor_variance")
                     c.network.attention.sigma_mode =
                         AttentionConfig::SigmaMode::per_tensor_variance;
                   else if (v == "fixed")
                     c.network.attention.sigma_mode = AttentionConfig::SigmaMode::fixed;
                   else
                     bad_value(k, v, "one of per_tensor_variance, fixed");
                 },
                 [](const RunConfig& c) -> std::string {
                   return c.network.attention.sigma_mode ==
                                  AttentionConfig::SigmaMode::fixed
                              ? "fixed"
                              : "per_tensor_variance";
                 }});
    add_real("attention", "sigma_fixed",
             [](RunConfig& c) -> Scalar& { return c.network.attention.sigma_fixed; });
    add_real("attention", "sigma_floor",
             [](RunConfig& c) -> Scalar& { return c.network.attention.sigma_floor; });
    add_real("attention", "d_s",
             [](RunConfig& c) -> Scalar& { return c.network.attention.d_s; });
    t.push_back({"attention", "mode",
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   if (v == "softmax_context")
                     c.network.attention.mode = AttentionConfig::Mode::softmax_context;
                   else if (v == "phi_normalized")
                     c.network.attention.mode = AttentionConfig::Mode::phi_normalized;
                   else if (v == "dense_reference")
                     c.network.attention.mode = AttentionConfig::Mode::dense_reference;
                   else
                     bad_value(k, v,
                               "one of softmax_context, phi_normalized, dense_reference");
                 },
                 [](const RunConfig& c) -> std::string {
                   switch (c.network.attention.mode) {
                     case AttentionConfig::Mode::phi_normalized: return "phi_normalized";
                     case AttentionConfig::Mode::dense_reference: return "dense_reference";
                     default: return "softmax_context";
                   }
                 }});

    add_int("train", "epochs", [](RunConfig& c) -> int& { return c.train.epochs; });
    add_int("train", "batch", [](RunConfig& c) -> int& { return c.train.batch; });
    add_real("train", "learning_rate",
             [](RunConfig& c) -> Scalar& { return c.train.learning_rate; });
    add_real("train", "adam_beta1",
             [](RunConfig& c) -> Scalar& { return c.train.adam_beta1; });
    add_real("train", "adam_beta2",
             [](RunConfig& c) -> Scalar& { return c.train.adam_beta2; });
    add_real("train", "adam_eps", [](RunConfig& c) -> Scalar& { return c.train.adam_eps; });
    add_u64("train", "seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; });
    add_bool("train", "adversarial",
             [](RunConfig& c) -> bool& { return c.train.adversarial; });

    add_real("budget", "epsilon",
             [](RunConfig& c) -> Scalar& { return c.train.budget.epsilon; });
    add_real("budget", "alpha",
             [](RunConfig& c) -> Scalar& { return c.train.budget.alpha; });
    t.push_back({"budget", "iterations",
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.train.budget.iterations = static_cast<int>(parse_int(k, v));
                   c.budget_iterations_explicit = true;
                 },
                 [](const RunConfig& c) {
                   return format_int(c.train.budget.iterations);
                 }});
    add_bool("budget", "random_start",
             [](RunConfig& c) -> bool& { return c.train.budget.random_start; });
    add_u64("budget", "random_seed",
            [](RunConfig& c) -> std::uint64_t& { return c.train.budget.random_seed; });

    add_real("weights", "beta",
             [](RunConfig& c) -> Scalar& { return c.train.weights.beta; });
    add_real("weights", "gamma",
             [](RunConfig& c) -> Scalar& { return c.train.weights.gamma; });
    add_int("weights", "ssim_window",
            [](RunConfig& c) -> int& { return c.train.weights.ssim_window; });
    add_real("weights", "ssim_sigma",
             [](RunConfig& c) -> Scalar& { return c.train.weights.ssim_sigma; });
    add_real("weights", "ssim_c1",
             [](RunConfig& c) -> Scalar& { return c.train.weights.ssim_c1; });
    add_real("weights", "ssim_c2",
             [](RunConfig& c) -> Scalar& { return c.train.weights.ssim_c2; });

    t.push_back({"label", "mode",
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   if (v == "analytic_max")
                     c.label.mode = LabelRecipe::Mode::analytic_max;
                   else if (v == "analytic_weighted")
                     c.label.mode = LabelRecipe::Mode::analytic_weighted;
                   else if (v == "learned_cnn")
                     c.label.mode = LabelRecipe::Mode::learned_cnn;
                   else
                     bad_value(k, v,
                               "one of analytic_max, analytic_weighted, learned_cnn");
                 },
                 [](const RunConfig& c) -> std::string {
                   switch (c.label.mode) {
                     case LabelRecipe::Mode::analytic_max: return "analytic_max";
                     case LabelRecipe::Mode::analytic_weighted: return "analytic_weighted";
                     default: return "learned_cnn";
                   }
                 }});
    add_real("label", "w_ir", [](RunConfig& c) -> Scalar& { return c.label.w_ir; });
    add_u64("label", "seed", [](RunConfig& c) -> std::uint64_t& { return c.label.seed; });
    add_int("label", "epochs", [](RunConfig& c) -> int& { return c.label.epochs; });
    add_string("label", "cache_dir",
               [](RunConfig& c) -> std::string& { return c.label.cache_dir; });

    add_string("paths", "manifest",
               [](RunConfig& c) -> std::string& { return c.manifest_path; });
    add_string("paths", "checkpoint",
               [](RunConfig& c) -> std::string& { return c.checkpoint_path; });
    return t;
  }();
  return table;
}

const FieldSpec* find_field(const std::string& section, const std::string& key) {
  for (const FieldSpec& f : field_table()) {
    if (section == f.section && key == f.key) return &f;
  }
  return nullptr;
}

bool known_section(const std::string& section) {
  for (const FieldSpec& f : field_table()) {
    if (section == f.section) return true;
  }
  return false;
}

void assign(RunConfig& cfg, const std::string& section, const std::string& key,
            const std::string& value, const std::string& where) {
  const FieldSpec* f = find_field(section, key);
  if (f == nullptr) {
    throw ValidationError("unknown config key " + section + "." + key + where);
  }
  try {
    f->set(cfg, section + "." + key, value);
  } catch (const ValidationError& e) {
    throw ValidationError(std::string(e.what()) + where);
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = " (line " + std::to_string(line_no) + ")";
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    if (s.front() == '[') {
      if (s.back() != ']') {
        throw ValidationError("config line " + std::to_string(line_no) +
                              ": unterminated section header '" + s + "'");
      }
      section = trim(s.substr(1, s.size() - 2));
      if (!known_section(section)) {
        throw ValidationError("unknown config section [" + section + "]" + where);
      }
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(line_no) +
                            ": expected key = value, got '" + s + "'");
    }
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    if (key.empty()) {
      throw ValidationError("config line " + std::to_string(line_no) + ": empty key");
    }
    if (section.empty()) {
      throw ValidationError("config line " + std::to_string(line_no) + ": key '" + key +
                            "' appears before any [section] header");
    }
    assign(cfg, section, key, value, where);
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ValidationError("override '" + assignment + "' is not of the form section.key=value");
  }
  const std::string target = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  const auto dot = target.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == target.size()) {
    throw ValidationError("override '" + assignment + "' is not of the form section.key=value");
  }
  assign(cfg, target.substr(0, dot), target.substr(dot + 1), value, " (override)");
}

std::string serialize_run_config(const RunConfig& cfg) {
  std::ostringstream out;
  std::string section;
  for (const FieldSpec& f : field_table()) {
    if (section != f.section) {
      if (!section.empty()) out << "\n";
      section = f.section;
      out << "[" << section << "]\n";
    }
    out << f.key << " = " << f.get(cfg) << "\n";
  }
  return out.str();
}

PerturbationBudget train_budget(const RunConfig& cfg) { return cfg.train.budget; }

PerturbationBudget eval_budget(const RunConfig& cfg) {
  PerturbationBudget b = cfg.train.budget;
  if (!cfg.budget_iterations_explicit) b.iterations = PerturbationBudget{}.iterations;
  return b;
}

}  // namespace a2r
