#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "pqda/cli.hpp"
#include "pqda/errors.hpp"

namespace pqda::cli {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

// Shortest text that reads back to the same double.
std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  }
  return v;
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

struct Field {
  std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const ExperimentConfig&)> get;
  bool hashed = true;
};

template <typename Member>
Field real(Member member) {
  return {[member](ExperimentConfig& c, const std::string& k, const std::string& v) {
            std::invoke(member, c) = parse_double(k, v);
          },
          [member](const ExperimentConfig& c) {
            // The accessor only reads through the reference.
            return format_double(std::invoke(member, const_cast<ExperimentConfig&>(c)));
          }};
}

template <typename Member>
Field count(Member member) {
  return {[member](ExperimentConfig& c, const std::string& k, const std::string& v) {
            using T = std::remove_reference_t<decltype(std::invoke(member, c))>;
            std::invoke(member, c) = static_cast<T>(parse_unsigned(k, v));
          },
          [member](const ExperimentConfig& c) {
            // The accessor only reads through the reference.
            return std::to_string(std::invoke(member, const_cast<ExperimentConfig&>(c)));
          }};
}

const std::map<std::string, Field>& fields() {
  using C = ExperimentConfig;
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> f;
    f["seed"] = count([](C& c) -> std::uint64_t& { return c.seed; });

    f["lorenz.K"] = count([](C& c) -> std::size_t& { return c.lorenz.K; });
    f["lorenz.J"] = count([](C& c) -> std::size_t& { return c.lorenz.J; });
    f["lorenz.h"] = real([](C& c) -> double& { return c.lorenz.h; });
    f["lorenz.b"] = real([](C& c) -> double& { return c.lorenz.b; });
    f["lorenz.c"] = real([](C& c) -> double& { return c.lorenz.c; });
    f["lorenz.F"] = real([](C& c) -> double& { return c.lorenz.F; });

    f["sim.dt"] = real([](C& c) -> double& { return c.sim.dt; });
    f["sim.delta_t"] = real([](C& c) -> double& { return c.sim.delta_t; });
    f["sim.burn_in"] = real([](C& c) -> double& { return c.sim.burn_in; });
    f["sim.duration"] = real([](C& c) -> double& { return c.sim.duration; });
    f["sim.split"] = real([](C& c) -> double& { return c.sim.split; });
    f["sim.test_length"] = count([](C& c) -> std::size_t& { return c.test_length; });

    f["network.window"] = count([](C& c) -> std::size_t& { return c.network.window; });
    f["network.gru_hidden"] = count([](C& c) -> std::size_t& { return c.network.gru_hidden; });
    f["network.noise_dim"] = count([](C& c) -> std::size_t& { return c.network.noise_dim; });
    f["network.dense_widths"] = {
        [](C& c, const std::string& k, const std::string& v) {
          std::vector<std::size_t> widths;
          std::stringstream ss(v);
          std::string item;
          while (std::getline(ss, item, ',')) widths.push_back(parse_unsigned(k, trim(item)));
          if (widths.empty()) throw ConfigError(k + ": expected a comma-separated list of widths");
          c.network.dense_widths = std::move(widths);
        },
        [](const C& c) {
          std::string s;
          for (std::size_t i = 0; i < c.network.dense_widths.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(c.network.dense_widths[i]);
          }
          return s;
        }};

    f["score.beta"] = real([](C& c) -> double& { return c.score.beta; });
    f["score.m"] = count([](C& c) -> std::size_t& { return c.score.m; });
    f["score.gamma"] = real([](C& c) -> double& { return c.score.gamma; });

    f["smc.N"] = count([](C& c) -> std::size_t& { return c.smc.N; });
    f["smc.M"] = count([](C& c) -> std::size_t& { return c.smc.M; });
    f["smc.P"] = count([](C& c) -> std::size_t& { return c.smc.P; });
    f["smc.tau"] = count([](C& c) -> std::size_t& { return c.smc.tau; });
    f["smc.cess_threshold"] = real([](C& c) -> double& { return c.smc.cess_threshold; });
    f["smc.grad_batch"] = count([](C& c) -> std::size_t& { return c.smc.grad_batch; });
    f["smc.episodes"] = count([](C& c) -> std::size_t& { return c.smc.max_episodes; });
    f["smc.prior"] = {[](C& c, const std::string& k, const std::string& v) {
                        if (v == "gaussian") {
                          c.smc.prior.family = smc::PriorFamily::gaussian;
                        } else if (v == "student_t") {
                          c.smc.prior.family = smc::PriorFamily::student_t;
                        } else {
                          throw ConfigError(k + ": expected gaussian or student_t, got '" + v + "'");
                        }
                      },
                      [](const C& c) {
                        return std::string(c.smc.prior.family == smc::PriorFamily::gaussian ? "gaussian"
                                                                                             : "student_t");
                      }};
    f["smc.prior_dof"] = count([](C& c) -> int& { return c.smc.prior.dof; });

    f["kernel.eta"] = real([](C& c) -> double& { return c.kernel.eta; });
    f["kernel.sigma"] = real([](C& c) -> double& { return c.kernel.sigma; });
    f["kernel.lambda"] = real([](C& c) -> double& { return c.kernel.lambda; });
    f["kernel.alpha0"] = real([](C& c) -> double& { return c.kernel.alpha0; });

    f["enkf.ensemble_size"] = count([](C& c) -> std::size_t& { return c.enkf.ensemble_size; });
    f["enkf.obs_noise_var"] = real([](C& c) -> double& { return c.enkf.obs_noise_var; });
    f["enkf.forcing_mean"] = real([](C& c) -> double& { return c.enkf.forcing_mean; });
    f["enkf.forcing_var"] = real([](C& c) -> double& { return c.enkf.forcing_var; });

    f["diagnostics.m_pred"] = count([](C& c) -> std::size_t& { return c.diagnostics.m_pred; });
    f["diagnostics.test_range"] = {
        [](C& c, const std::string& k, const std::string& v) {
          try {
            c.diagnostics.test_range = parse_test_range(v);
          } catch (const ConfigError& e) {
            throw ConfigError(k + ": " + e.what());
          }
        },
        [](const C& c) { return to_string(c.diagnostics.test_range); }};

    // Paths do not change results, so they stay out of the hash.
    f["data.path"] = {[](C& c, const std::string&, const std::string& v) { c.data_path = v; },
                      [](const C& c) { return c.data_path; }, false};
    f["out"] = {[](C& c, const std::string&, const std::string& v) { c.out = v; },
                [](const C& c) { return c.out; }, false};
    return f;
  }();
  return table;
}

} // namespace

std::string to_string(TestRange r) { return r == TestRange::next_episode ? "next-episode" : "holdout"; }

TestRange parse_test_range(const std::string& text) {
  if (text == "next-episode") return TestRange::next_episode;
  if (text == "holdout") return TestRange::holdout;
  throw ConfigError("test range must be next-episode or holdout, got '" + text + "'");
}

void ExperimentConfig::validate() const {
  try {
    lorenz.validate();
    sim.validate();
    network_spec().validate();
    smc_config().validate();
    enkf_config().validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (diagnostics.m_pred < 2) throw ConfigError("diagnostics.m_pred must be at least 2");
  if (out.empty()) throw ConfigError("out must not be empty");
}

smc::SMCConfig ExperimentConfig::smc_config() const {
  smc::SMCConfig c = smc;
  c.kernel = kernel;
  c.score = score;
  c.seed = seed;
  return c;
}

dgfm::NetworkSpec ExperimentConfig::network_spec() const {
  dgfm::NetworkSpec s = network;
  s.obs_dim = lorenz.K;
  return s;
}

enkf::EnKFConfig ExperimentConfig::enkf_config() const {
  enkf::EnKFConfig e = enkf;
  e.dt = sim.dt;
  e.delta_t = sim.delta_t;
  return e;
}

fs::path ExperimentConfig::series_path() const {
  return data_path.empty() ? fs::path(out) / "series.csv" : fs::path(data_path);
}

void set_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  const auto& table = fields();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(cfg, key, value);
}

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      set_value(base, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string canonical_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(cfg) + "\n";
  return out;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const ExperimentConfig& cfg) {
  std::string text;
  for (const auto& [key, field] : fields()) {
    if (field.hashed) text += key + "=" + field.get(cfg) + "\n";
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(text)));
  return buf;
}

} // namespace pqda::cli
