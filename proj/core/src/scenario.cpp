#include <cmath>
#include <fstream>
#include <set>

#include "robochain/errors.hpp"
#include "robochain/simnet.hpp"

namespace robochain::simnet {

namespace {

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); }

const std::set<std::string> kRequiredKeys = {
    "seed",          "num_hubs",         "robots_per_hub",        "edge_density",
    "num_patients",  "sessions_per_patient", "k_per_algorithm",   "consensus_window",
    "feedback_noise_stddev"};
const std::set<std::string> kOptionalKeys = {"quorum", "fold_destination_updates", "ledger_mode"};

template <typename T>
T get_unsigned(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_number_unsigned()) invalid(std::string(key) + " must be a non-negative integer");
  return v.get<T>();
}

double get_real(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_number()) invalid(std::string(key) + " must be a number");
  return v.get<double>();
}

}  // namespace

std::size_t ScenarioConfig::destination_count() const {
  return num_hubs <= 1 ? robots_per_hub : (num_hubs - 1) * robots_per_hub;
}

std::size_t ScenarioConfig::effective_quorum() const {
  return quorum == 0 ? consensus::default_quorum(destination_count()) : quorum;
}

void ScenarioConfig::validate() const {
  if (num_hubs == 0) invalid("num_hubs must be at least 1");
  if (robots_per_hub == 0) invalid("robots_per_hub must be at least 1");
  if (!(edge_density >= 0.0 && edge_density <= 1.0)) invalid("edge_density must lie in [0, 1]");
  if (num_patients == 0) invalid("num_patients must be at least 1");
  if (sessions_per_patient == 0) invalid("sessions_per_patient must be at least 1");
  if (consensus_window == 0) invalid("consensus_window must be at least 1 tick");
  if (!std::isfinite(feedback_noise_stddev) || feedback_noise_stddev < 0.0)
    invalid("feedback_noise_stddev must be finite and non-negative");
  for (auto algo : {kCohortMeanAlgorithm, kCohortShareAlgorithm}) {
    auto it = k_per_algorithm.find(std::string(algo));
    if (it == k_per_algorithm.end()) invalid("k_per_algorithm has no entry for " + std::string(algo));
    if (it->second < 2) invalid("k for " + std::string(algo) + " must be at least 2");
  }
  for (const auto& [algo, k] : k_per_algorithm)
    if (algo != kCohortMeanAlgorithm && algo != kCohortShareAlgorithm)
      invalid("k_per_algorithm names unknown algorithm " + algo);
  if (quorum > destination_count())
    invalid("quorum " + std::to_string(quorum) + " exceeds the " +
            std::to_string(destination_count()) + " destination robots");
}

nlohmann::ordered_json ScenarioConfig::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["num_hubs"] = num_hubs;
  j["robots_per_hub"] = robots_per_hub;
  j["edge_density"] = edge_density;
  j["num_patients"] = num_patients;
  j["sessions_per_patient"] = sessions_per_patient;
  j["k_per_algorithm"] = k_per_algorithm;
  j["consensus_window"] = consensus_window;
  j["quorum"] = quorum;
  j["feedback_noise_stddev"] = feedback_noise_stddev;
  j["fold_destination_updates"] = fold_destination_updates;
  j["ledger_mode"] = ledger::to_string(ledger_mode);
  return j;
}

ScenarioConfig ScenarioConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) invalid("scenario config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!kRequiredKeys.count(key) && !kOptionalKeys.count(key)) invalid("unknown config key " + key);
  for (const auto& key : kRequiredKeys)
    if (!j.contains(key)) invalid("missing config key " + key);

  ScenarioConfig c;
  c.seed = get_unsigned<std::uint64_t>(j, "seed");
  c.num_hubs = get_unsigned<std::size_t>(j, "num_hubs");
  c.robots_per_hub = get_unsigned<std::size_t>(j, "robots_per_hub");
  c.edge_density = get_real(j, "edge_density");
  c.num_patients = get_unsigned<std::size_t>(j, "num_patients");
  c.sessions_per_patient = get_unsigned<std::size_t>(j, "sessions_per_patient");
  const auto& k = j.at("k_per_algorithm");
  if (!k.is_object()) invalid("k_per_algorithm must map algorithm ids to k");
  for (const auto& [algo, v] : k.items()) {
    if (!v.is_number_unsigned()) invalid("k for " + algo + " must be a non-negative integer");
    c.k_per_algorithm[algo] = v.get<std::uint64_t>();
  }
  c.consensus_window = get_unsigned<Tick>(j, "consensus_window");
  c.feedback_noise_stddev = get_real(j, "feedback_noise_stddev");
  if (j.contains("quorum")) c.quorum = get_unsigned<std::size_t>(j, "quorum");
  if (j.contains("fold_destination_updates")) {
    if (!j["fold_destination_updates"].is_boolean()) invalid("fold_destination_updates must be a boolean");
    c.fold_destination_updates = j["fold_destination_updates"].get<bool>();
  }
  if (j.contains("ledger_mode")) {
    if (!j["ledger_mode"].is_string()) invalid("ledger_mode must be a string");
    try {
      c.ledger_mode = ledger::parse_permission_mode(j["ledger_mode"].get<std::string>());
    } catch (const Error& e) {
      invalid(e.what());
    }
  }
  c.validate();
  return c;
}

ScenarioConfig ScenarioConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) invalid("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    invalid("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

ScenarioConfig ScenarioConfig::defaults() {
  ScenarioConfig c;
  c.seed = 7;
  c.num_hubs = 4;
  c.robots_per_hub = 2;
  c.edge_density = 0.3;
  c.num_patients = 40;
  c.sessions_per_patient = 20;
  c.k_per_algorithm = {{std::string(kCohortMeanAlgorithm), 3}, {std::string(kCohortShareAlgorithm), 3}};
  c.consensus_window = 20;
  c.quorum = 0;
  c.feedback_noise_stddev = 0.05;
  c.fold_destination_updates = false;
  c.ledger_mode = ledger::PermissionMode::SemiPrivate;
  return c;
}

}  // namespace robochain::simnet
