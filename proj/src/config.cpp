#include "hexfleet/config.hpp"

#include <fmt/format.h>

#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <sstream>

#include "hexfleet/errors.hpp"

namespace hexfleet {

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& why) {
  throw ConfigError(fmt::format("config key '{}': bad value '{}' ({})", key, value, why));
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, v, "expected a number");
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, v, "expected a non-negative integer");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad(key, v, "expected true or false");
}

std::string fmt_double(double v) { return fmt::format("{}", v); }

struct Field {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

Field real(const std::string& name, double RunConfig::*m, double lo, double hi) {
  return {name,
          [=](RunConfig& c, const std::string& v) {
            double x = to_double(name, v);
            if (!(x >= lo && x <= hi)) bad(name, v, fmt::format("must lie in [{}, {}]", lo, hi));
            c.*m = x;
          },
          [=](const RunConfig& c) { return fmt_double(c.*m); }};
}

template <class T>
Field integer(const std::string& name, T RunConfig::*m, std::uint64_t lo, std::uint64_t hi) {
  return {name,
          [=](RunConfig& c, const std::string& v) {
            auto x = to_uint(name, v);
            if (x < lo || x > hi) bad(name, v, fmt::format("must lie in [{}, {}]", lo, hi));
            c.*m = static_cast<T>(x);
          },
          [=](const RunConfig& c) { return fmt::format("{}", c.*m); }};
}

Field flag(const std::string& name, bool RunConfig::*m) {
  return {name, [=](RunConfig& c, const std::string& v) { c.*m = to_bool(name, v); },
          [=](const RunConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}

// Fields nested in a struct member (Adam constants, hop delays).
template <class S>
Field nested_real(const std::string& name, S RunConfig::*outer, double S::*inner, double lo, double hi,
                  bool open_lo = false) {
  return {name,
          [=](RunConfig& c, const std::string& v) {
            double x = to_double(name, v);
            bool ok = (open_lo ? x > lo : x >= lo) && x <= hi;
            if (!ok) bad(name, v, fmt::format("must lie in {}{}, {}]", open_lo ? "(" : "[", lo, hi));
            c.*outer.*inner = x;
          },
          [=](const RunConfig& c) { return fmt_double(c.*outer.*inner); }};
}

std::string views_text(const represent::ViewMask& m) {
  std::string out;
  for (std::size_t i = 0; i < 3; ++i) {
    if (!m[i]) continue;
    if (!out.empty()) out += ',';
    out += hex::to_string(hex::kViewLevels[i]);
  }
  return out;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(integer("seed", &RunConfig::seed, 0, UINT64_MAX));
    f.push_back({"city",
                 [](RunConfig& c, const std::string& v) {
                   if (v != "two_hotspot" && v != "metro") bad("city", v, "expected two_hotspot or metro");
                   c.city = v;
                 },
                 [](const RunConfig& c) { return c.city; }});
    f.push_back(integer("n_vehicles", &RunConfig::n_vehicles, 1, 100000));
    f.push_back(integer("n_orders", &RunConfig::n_orders, 0, 10000000));
    f.push_back(real("spawn_window_s", &RunConfig::spawn_window_s, 1.0, 1e7));
    f.push_back(real("dt_s", &RunConfig::dt_s, 1.0, 3600.0));
    f.push_back(real("cruise_kmh", &RunConfig::cruise_kmh, 1.0, 200.0));
    f.push_back(real("congestion_per_vehicle", &RunConfig::congestion_per_vehicle, 0.0, 100.0));
    f.push_back(real("corpus_spawn_window_s", &RunConfig::corpus_spawn_window_s, 1.0, 1e7));
    f.push_back(integer("corpus_orders", &RunConfig::corpus_orders, 0, 10000000));
    for (std::size_t i = 0; i < 3; ++i) {
      std::string name = fmt::format("d_{}", hex::to_string(hex::kViewLevels[i]));
      f.push_back({name,
                   [=](RunConfig& c, const std::string& v) {
                     double x = to_double(name, v);
                     if (!(x > 0.0 && x <= 1000.0)) bad(name, v, "cell diameter must lie in (0, 1000] km");
                     c.diameters_km[i] = x;
                   },
                   [=](const RunConfig& c) { return fmt_double(c.diameters_km[i]); }});
    }
    f.push_back(integer("d_g", &RunConfig::d_g, 1, 4096));
    f.push_back(integer("geohash_precision", &RunConfig::geohash_precision, 1, 12));
    f.push_back(flag("gcn_self_loops", &RunConfig::gcn_self_loops));
    f.push_back(integer("gcn_layers", &RunConfig::gcn_layers, 1, 1));
    f.push_back({"views",
                 [](RunConfig& c, const std::string& v) {
                   represent::ViewMask m{false, false, false};
                   std::stringstream ss(v);
                   std::string item;
                   while (std::getline(ss, item, ',')) {
                     try {
                       m[static_cast<std::size_t>(hex::parse_view_level(trim(item)))] = true;
                     } catch (const std::exception&) {
                       bad("views", v, "expected a comma list of micro, meso, macro");
                     }
                   }
                   if (!m[0] && !m[1] && !m[2]) bad("views", v, "at least one view");
                   c.views = m;
                 },
                 [](const RunConfig& c) { return views_text(c.views); }});
    f.push_back(real("gcn_dropout", &RunConfig::gcn_dropout, 0.0, 0.99));
    f.push_back(nested_real("hop_min_delay_ms", &RunConfig::hops, &hex::HopVisibility::min_delay_ms, 0.0, 1e6, true));
    f.push_back(nested_real("hop_max_delay_ms", &RunConfig::hops, &hex::HopVisibility::max_delay_ms, 0.0, 1e6, true));
    f.push_back(nested_real("hop_budget_ms", &RunConfig::hops, &hex::HopVisibility::budget_ms, 0.0, 1e7, true));
    f.push_back(real("alpha", &RunConfig::alpha, 0.0, 1.0));
    f.push_back(real("gamma", &RunConfig::gamma, 0.0, 1.0));
    f.push_back({"behavior_loss",
                 [](RunConfig& c, const std::string& v) {
                   try {
                     c.behavior_loss = behavior::parse_loss_mode(v);
                   } catch (const std::exception&) {
                     bad("behavior_loss", v, "expected bce or literal");
                   }
                 },
                 [](const RunConfig& c) {
                   return std::string(c.behavior_loss == behavior::LossMode::bce ? "bce" : "literal");
                 }});
    f.push_back(integer("behavior_epochs", &RunConfig::behavior_epochs, 0, 100000));
    f.push_back(integer("behavior_batch", &RunConfig::behavior_batch, 1, 100000));
    f.push_back(real("behavior_lr", &RunConfig::behavior_lr, 0.0, 10.0));
    f.push_back(flag("fare_weight_train", &RunConfig::fare_weight_train));
    f.push_back(integer("d_model", &RunConfig::d_model, 2, 4096));
    f.push_back(integer("layers", &RunConfig::layers, 1, 64));
    f.push_back(real("dropout", &RunConfig::dropout, 0.0, 0.99));
    f.push_back({"context",
                 [](RunConfig& c, const std::string& v) { c.context = policy::parse_context_mode(v); },
                 [](const RunConfig& c) {
                   return std::string(c.context == policy::ContextMode::sequence ? "sequence" : "step");
                 }});
    f.push_back({"geo_loss", [](RunConfig& c, const std::string& v) { c.geo_loss = policy::parse_geo_loss_mode(v); },
                 [](const RunConfig& c) {
                   return std::string(c.geo_loss == policy::GeoLossMode::symmetric ? "symmetric" : "literal");
                 }});
    f.push_back(real("angle_weight", &RunConfig::angle_weight, 0.0, 1e6));
    f.push_back(nested_real("lr", &RunConfig::adam, &ad::AdamConfig::lr, 0.0, 10.0, true));
    f.push_back(nested_real("beta1", &RunConfig::adam, &ad::AdamConfig::beta1, 0.0, 0.999999));
    f.push_back(nested_real("beta2", &RunConfig::adam, &ad::AdamConfig::beta2, 0.0, 0.999999));
    f.push_back(nested_real("eps", &RunConfig::adam, &ad::AdamConfig::eps, 0.0, 1.0, true));
    f.push_back(integer("epochs", &RunConfig::epochs, 0, 100000));
    f.push_back(integer("batch_episodes", &RunConfig::batch_episodes, 1, 100000));
    f.push_back(real("r_max_km", &RunConfig::r_max_km, 1e-3, 1000.0));
    f.push_back(integer("leng", &RunConfig::leng, 2, policy::kMaxSequenceLength));
    f.push_back(integer("n_samples", &RunConfig::n_samples, 1, 10000000));
    f.push_back({"split",
                 [](RunConfig& c, const std::string& v) {
                   std::array<std::size_t, 3> s{};
                   std::stringstream ss(v);
                   std::string item;
                   std::size_t n = 0;
                   while (std::getline(ss, item, ':')) {
                     if (n == 3) bad("split", v, "expected train:val:test");
                     s[n++] = to_uint("split", trim(item));
                   }
                   if (n != 3 || s[0] == 0) bad("split", v, "expected train:val:test with a non-zero train share");
                   c.split = s;
                 },
                 [](const RunConfig& c) { return fmt::format("{}:{}:{}", c.split[0], c.split[1], c.split[2]); }});
    f.push_back(real("speed_limit_kmh", &RunConfig::speed_limit_kmh, 1.0, 1000.0));
    f.push_back(integer("ablation_reps", &RunConfig::ablation_reps, 1, 1000));
    return f;
  }();
  return table;
}

const Field& field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.name == key) return f;
  }
  throw ConfigError(fmt::format("unknown config key '{}'", key));
}

}  // namespace

sim::CityConfig RunConfig::city_config() const {
  sim::CityConfig c = city == "metro" ? sim::metro_city() : sim::two_hotspot_city();
  c.diameters_km = diameters_km;
  c.n_vehicles = n_vehicles;
  c.n_orders = n_orders;
  c.spawn_window_s = spawn_window_s;
  c.dt_s = dt_s;
  c.cruise_kmh = cruise_kmh;
  c.r_max_km = r_max_km;
  c.congestion_per_vehicle = congestion_per_vehicle;
  return c;
}

sim::CityConfig RunConfig::corpus_city_config() const {
  auto c = city_config();
  c.spawn_window_s = corpus_spawn_window_s;
  c.n_orders = corpus_orders;
  return c;
}

policy::PolicyConfig RunConfig::policy_config() const {
  policy::PolicyConfig p;
  p.d_model = d_model;
  p.layers = layers;
  p.state_dim = 3 * d_g + 5 * static_cast<std::size_t>(geohash_precision);
  p.dropout = dropout;
  p.context = context;
  p.loss_mode = geo_loss;
  p.angle_weight = angle_weight;
  p.r_max_km = r_max_km;
  return p;
}

std::string RunConfig::canonical() const {
  std::string out;
  for (const auto& f : fields()) out += fmt::format("{} = {}\n", f.name, f.get(*this));
  return out;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string RunConfig::hash() const { return fmt::format("{:016x}", fnv1a(canonical())); }

void RunConfig::set(const std::string& key, const std::string& value) { field(key).set(*this, value); }

void RunConfig::validate() const {
  if (hops.min_delay_ms > hops.max_delay_ms) throw ConfigError("hop_min_delay_ms exceeds hop_max_delay_ms");
  city_config().validate();
  policy_config().validate();
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.name);
  return out;
}

RunConfig parse_config(std::istream& in) {
  RunConfig c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    auto body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("line {}: expected key = value", lineno));
    auto key = trim(body.substr(0, eq));
    auto value = trim(body.substr(eq + 1));
    try {
      c.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("line {}: {}", lineno, e.what()));
    }
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read config {}", path.string()));
  return parse_config(in);
}

}  // namespace hexfleet
