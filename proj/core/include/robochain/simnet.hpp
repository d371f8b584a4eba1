#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "robochain/consensus.hpp"
#include "robochain/crypto.hpp"
#include "robochain/ledger.hpp"

namespace robochain::simnet {

using modelstore::HubId;

// ---------------------------------------------------------------------------
// Deterministic randomness. Hand-rolled distributions so a seed produces the
// same run on every standard library.

class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  /// Independent stream for one purpose, derived from (seed, label).
  static Rng stream(std::uint64_t seed, std::string_view label);

  std::uint64_t next();
  double uniform();                            // [0, 1)
  double uniform(double lo, double hi);
  std::size_t index(std::size_t n);            // [0, n)
  double normal(double mean = 0.0, double stddev = 1.0);
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t state_[4];
  std::optional<double> spare_normal_;
};

// ---------------------------------------------------------------------------
// Configuration

struct ScenarioConfig {
  std::uint64_t seed = 1;
  std::size_t num_hubs = 4;
  std::size_t robots_per_hub = 2;
  double edge_density = 0.25;
  std::size_t num_patients = 40;
  std::size_t sessions_per_patient = 5;
  std::map<std::string, std::uint64_t> k_per_algorithm;
  Tick consensus_window = 20;
  std::size_t quorum = 0;  // 0: ⌈N/2⌉ of the N destination robots
  double feedback_noise_stddev = 0.05;
  bool fold_destination_updates = false;
  ledger::PermissionMode ledger_mode = ledger::PermissionMode::SemiPrivate;

  /// Throws Error{InvalidConfig}.
  void validate() const;

  std::size_t destination_count() const;
  std::size_t effective_quorum() const;

  nlohmann::ordered_json to_json() const;
  static ScenarioConfig from_json(const nlohmann::json& j);
  static ScenarioConfig load(const std::filesystem::path& path);

  /// Defaults used by `robochain run` without a file and by the examples.
  static ScenarioConfig defaults();
};

/// Vetted algorithms every scenario registers; configs must give each a k.
inline constexpr std::string_view kCohortMeanAlgorithm = "cohort-mean-score";
inline constexpr std::string_view kCohortShareAlgorithm = "cohort-high-score-share";

/// Protocol constants that are not part of the scenario file.
struct SimOptions {
  std::size_t id_features = 4;
  std::size_t epochs = 14;
  double learning_rate = 1.0;
  double rho = 0.95;
  double epsilon = 1e-6;
  Tick hop_latency = 1;
  Tick evaluation_delay = 1;
  std::size_t holdout_size = 400;
  /// Keep probes of raw values so tests can scan artifacts for leaks.
  bool collect_privacy_probes = false;
};

// ---------------------------------------------------------------------------
// Topology

struct Topology {
  std::vector<HubId> hubs;
  std::set<std::pair<HubId, HubId>> edges;  // undirected, stored with first < second
  std::map<HubId, std::vector<std::string>> robots_per_hub;
  std::vector<std::string> data_parties;

  modelstore::Adjacency adjacency() const;
  bool connected() const;
  HubId hub_of(const std::string& robot_id) const;
};

/// Random spanning tree plus extra edges, each non-tree pair added with
/// probability edge_density.
Topology build_topology(const ScenarioConfig& config);

// ---------------------------------------------------------------------------
// Event queue

enum class EventKind {
  SessionStart,
  QueryIssued,
  AnswerDelivered,
  TrainComplete,
  CandidateAnnounced,
  FeedbackDue,
  RoundResolve,
  PromotionBroadcast,
};

std::string_view to_string(EventKind kind);

struct SimEvent {
  Tick at = 0;
  std::uint64_t seq = 0;  // insertion order; (at, seq) is unique
  EventKind kind = EventKind::SessionStart;
  std::function<void()> action;
};

/// Processes events in (at, insertion order). Single-threaded.
class EventQueue {
 public:
  std::uint64_t schedule(Tick at, EventKind kind, std::function<void()> action);
  bool run_next();
  void run();

  Tick now() const { return now_; }
  bool empty() const { return queue_.empty(); }
  std::uint64_t processed() const { return processed_; }
  void set_observer(std::function<void(const SimEvent&)> observer) { observer_ = std::move(observer); }

 private:
  struct Later {
    bool operator()(const SimEvent& a, const SimEvent& b) const {
      return a.at != b.at ? a.at > b.at : a.seq > b.seq;
    }
  };
  std::priority_queue<SimEvent, std::vector<SimEvent>, Later> queue_;
  std::uint64_t next_seq_ = 0;
  std::uint64_t processed_ = 0;
  Tick now_ = 0;
  std::function<void(const SimEvent&)> observer_;
};

// ---------------------------------------------------------------------------
// Reports

struct RoundRecord {
  consensus::RoundId round_id = 0;
  std::size_t wave = 0;
  HubId source_hub;
  std::string source_robot;
  consensus::RoundState outcome = consensus::RoundState::Open;
  double candidate_mean = 0.0;
  double baseline_mean = 0.0;
  std::size_t candidate_count = 0;
  std::size_t quorum = 0;
  std::size_t late_feedback = 0;
  std::size_t returned_updates = 0;
  std::string baseline_id;
  std::string candidate_id;
  std::string promoted_id;  // empty unless accepted
  std::string update_hash;
  std::uint64_t notarization_block = 0;
  std::uint32_t notarization_tx = 0;
  Tick opened_at = 0;
  Tick resolved_at = 0;
  double holdout_mse_after = 0.0;
};

struct AuditTally {
  std::size_t queries_issued = 0;
  std::size_t answers_delivered = 0;
  std::size_t suppressed_answers = 0;
  std::size_t audit_transactions = 0;
  std::size_t verified_pairs = 0;
  std::size_t stored_pairs = 0;
};

struct RunReport {
  ScenarioConfig config;
  std::vector<RoundRecord> rounds;
  double initial_holdout_mse = 0.0;
  std::vector<double> holdout_trajectory;  // consensual baseline after each round
  std::size_t promotions = 0;
  std::size_t convergence_violations = 0;  // promotions that raised held-out MSE
  ledger::ValidationReport ledger_validation;
  std::size_t ledger_blocks = 0;
  std::size_t model_consensus_transactions = 0;
  AuditTally audit;
  std::string final_consensual_id;
  std::map<HubId, std::string> hub_consensual_heads;
  std::uint64_t events_processed = 0;
  Tick final_tick = 0;

  nlohmann::ordered_json to_json() const;
  /// Stable text form; identical configs give identical bytes.
  std::string serialize() const;
};

/// Raw values a leak scan should never find in persisted artifacts.
struct PrivacyProbes {
  std::vector<std::string> record_ids;
  std::vector<double> raw_values;  // assessment scores, interaction features, therapist targets
};

struct ScenarioResult {
  RunReport report;
  std::filesystem::path out_dir;
  PrivacyProbes probes;  // empty unless SimOptions::collect_privacy_probes
};

/// Runs the full lifecycle and writes artifacts to `out_dir`:
///   ledger.chain, pairs/, hubs/<hub>/, rounds/<id>.json, identities.json,
///   keys/network.key, report.json.
/// Fail-fast: an invariant violation throws Error{InvariantViolation}.
ScenarioResult run_scenario(const ScenarioConfig& config, const std::filesystem::path& out_dir,
                            const SimOptions& options = {});

void emit_report(const RunReport& report, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Replay

struct RoundCheck {
  consensus::RoundId round_id = 0;
  bool update_hash_matches = false;
  bool signature_valid = false;
  std::optional<bool> payload_matches;  // nullopt when no key was given
  std::string detail;
};

struct VerificationSummary {
  ledger::ValidationReport chain;
  std::size_t pairs_checked = 0;
  std::vector<std::string> failed_pairs;  // pair hashes (hex)
  std::size_t audit_transactions = 0;
  std::vector<RoundCheck> rounds;
  bool payloads_checked = false;
  std::vector<std::string> notices;
  bool hubs_agree = false;

  bool ok() const;
  nlohmann::ordered_json to_json() const;
};

VerificationSummary replay(const std::filesystem::path& out_dir,
                           const std::optional<crypto::NetworkKey>& key = std::nullopt);

/// Same, with the spelled-out artifact locations.
VerificationSummary replay(const std::filesystem::path& ledger_path,
                           const std::filesystem::path& store_path,
                           const std::filesystem::path& out_dir,
                           const std::optional<crypto::NetworkKey>& key);

/// Files under `dir` containing any needle; each hit names file and needle.
std::vector<std::string> scan_artifacts(const std::filesystem::path& dir,
                                        const std::vector<std::string>& text_needles,
                                        const std::vector<Bytes>& binary_needles);

/// Text and binary renderings of the probes, for scan_artifacts.
std::pair<std::vector<std::string>, std::vector<Bytes>> probe_needles(const PrivacyProbes& probes);

}  // namespace robochain::simnet
