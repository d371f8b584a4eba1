#include "robochain/simnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "robochain/audit.hpp"
#include "robochain/errors.hpp"
#include "robochain/learner.hpp"
#include "robochain/opal.hpp"

namespace robochain::simnet {

namespace fs = std::filesystem;
using consensus::RoundState;
using modelstore::ModelVersion;

// ---------------------------------------------------------------------------
// Rng: xoshiro256** seeded through splitmix64.

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) {
  for (auto& s : state_) s = splitmix64(seed);
}

Rng Rng::stream(std::uint64_t seed, std::string_view label) {
  CanonicalWriter w;
  w.u64(seed).field(label);
  Digest d = crypto::sha256(w.bytes());
  return Rng(load_u64le(d.bytes.data()));
}

std::uint64_t Rng::next() {
  const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw Error(ErrorCode::InvalidConfig, "index over an empty range");
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t v;
  do v = next();
  while (v >= limit);
  return static_cast<std::size_t>(v % n);
}

double Rng::normal(double mean, double stddev) {
  if (spare_normal_) {
    double z = *spare_normal_;
    spare_normal_.reset();
    return mean + stddev * z;
  }
  double u1;
  do u1 = uniform();
  while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_normal_ = r * std::sin(theta);
  return mean + stddev * r * std::cos(theta);
}

// ---------------------------------------------------------------------------
// Topology

modelstore::Adjacency Topology::adjacency() const {
  modelstore::Adjacency adj;
  for (const auto& h : hubs) adj[h];
  for (const auto& [a, b] : edges) {
    adj[a].insert(b);
    adj[b].insert(a);
  }
  return adj;
}

bool Topology::connected() const {
  if (hubs.empty()) return true;
  return modelstore::flood_schedule(adjacency(), hubs.front()).size() == hubs.size();
}

HubId Topology::hub_of(const std::string& robot_id) const {
  for (const auto& [hub, robots] : robots_per_hub)
    if (std::find(robots.begin(), robots.end(), robot_id) != robots.end()) return hub;
  throw Error(ErrorCode::InvalidConfig, "unknown robot " + robot_id);
}

namespace {

std::string hub_name(std::size_t i) { return "hub-" + std::to_string(i); }
std::string robot_name(std::size_t h, std::size_t r) {
  return "robot-" + std::to_string(h) + "-" + std::to_string(r);
}

}  // namespace

Topology build_topology(const ScenarioConfig& config) {
  config.validate();
  Topology t;
  for (std::size_t h = 0; h < config.num_hubs; ++h) {
    t.hubs.push_back(hub_name(h));
    auto& robots = t.robots_per_hub[hub_name(h)];
    for (std::size_t r = 0; r < config.robots_per_hub; ++r) robots.push_back(robot_name(h, r));
    t.data_parties.push_back(hub_name(h));
  }
  auto edge = [](const HubId& a, const HubId& b) {
    return a < b ? std::make_pair(a, b) : std::make_pair(b, a);
  };
  Rng rng = Rng::stream(config.seed, "topology");
  std::vector<std::size_t> order(config.num_hubs);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  for (std::size_t i = 1; i < order.size(); ++i)
    t.edges.insert(edge(t.hubs[order[i]], t.hubs[order[rng.index(i)]]));
  for (std::size_t i = 0; i < t.hubs.size(); ++i)
    for (std::size_t j = i + 1; j < t.hubs.size(); ++j) {
      auto e = edge(t.hubs[i], t.hubs[j]);
      if (t.edges.count(e)) continue;
      if (rng.bernoulli(config.edge_density)) t.edges.insert(e);
    }
  return t;
}

// ---------------------------------------------------------------------------
// Event queue

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::SessionStart: return "session-start";
    case EventKind::QueryIssued: return "query-issued";
    case EventKind::AnswerDelivered: return "answer-delivered";
    case EventKind::TrainComplete: return "train-complete";
    case EventKind::CandidateAnnounced: return "candidate-announced";
    case EventKind::FeedbackDue: return "feedback-due";
    case EventKind::RoundResolve: return "round-resolve";
    case EventKind::PromotionBroadcast: return "promotion-broadcast";
  }
  return "unknown";
}

std::uint64_t EventQueue::schedule(Tick at, EventKind kind, std::function<void()> action) {
  if (at < now_)
    throw Error(ErrorCode::InvariantViolation, "event scheduled in the past: " +
                                                   std::to_string(at) + " < " +
                                                   std::to_string(now_));
  const std::uint64_t seq = next_seq_++;
  queue_.push(SimEvent{at, seq, kind, std::move(action)});
  return seq;
}

bool EventQueue::run_next() {
  if (queue_.empty()) return false;
  SimEvent ev = queue_.top();
  queue_.pop();
  now_ = ev.at;
  ev.action();
  ++processed_;
  if (observer_) observer_(ev);
  return true;
}

void EventQueue::run() {
  while (run_next()) {
  }
}

// ---------------------------------------------------------------------------
// Report

nlohmann::ordered_json RunReport::to_json() const {
  nlohmann::ordered_json j;
  j["config"] = config.to_json();
  j["initial_holdout_mse"] = initial_holdout_mse;
  j["holdout_trajectory"] = holdout_trajectory;
  j["promotions"] = promotions;
  j["convergence_violations"] = convergence_violations;
  auto& rs = j["rounds"] = nlohmann::ordered_json::array();
  for (const auto& r : rounds) {
    nlohmann::ordered_json o;
    o["round_id"] = r.round_id;
    o["wave"] = r.wave;
    o["source_hub"] = r.source_hub;
    o["source_robot"] = r.source_robot;
    o["outcome"] = consensus::to_string(r.outcome);
    o["candidate_mean"] = r.candidate_mean;
    o["baseline_mean"] = r.baseline_mean;
    o["candidate_count"] = r.candidate_count;
    o["quorum"] = r.quorum;
    o["late_feedback"] = r.late_feedback;
    o["returned_updates"] = r.returned_updates;
    o["baseline_id"] = r.baseline_id;
    o["candidate_id"] = r.candidate_id;
    o["promoted_id"] = r.promoted_id;
    o["update_hash"] = r.update_hash;
    o["notarization"] = {{"block", r.notarization_block}, {"tx", r.notarization_tx}};
    o["opened_at"] = r.opened_at;
    o["resolved_at"] = r.resolved_at;
    o["holdout_mse_after"] = r.holdout_mse_after;
    rs.push_back(std::move(o));
  }
  j["ledger"] = {{"ok", ledger_validation.ok},
                 {"blocks", ledger_blocks},
                 {"blocks_checked", ledger_validation.blocks_checked},
                 {"first_broken", ledger_validation.first_broken
                                      ? nlohmann::ordered_json(*ledger_validation.first_broken)
                                      : nlohmann::ordered_json(nullptr)},
                 {"model_consensus_transactions", model_consensus_transactions}};
  j["audit"] = {{"queries_issued", audit.queries_issued},
                {"answers_delivered", audit.answers_delivered},
                {"suppressed_answers", audit.suppressed_answers},
                {"audit_transactions", audit.audit_transactions},
                {"stored_pairs", audit.stored_pairs},
                {"verified_pairs", audit.verified_pairs}};
  j["final_consensual_id"] = final_consensual_id;
  j["hub_consensual_heads"] = hub_consensual_heads;
  j["events_processed"] = events_processed;
  j["final_tick"] = final_tick;
  return j;
}

std::string RunReport::serialize() const { return to_json().dump(2) + "\n"; }

void emit_report(const RunReport& report, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << report.serialize();
  if (!out) throw Error(ErrorCode::CorruptData, "cannot write report " + path.string());
}

// ---------------------------------------------------------------------------
// Scenario run

namespace {

constexpr std::string_view kServiceId = "opal-service";
constexpr std::string_view kStoreParty = "opal";
constexpr std::size_t kBdFeatures = 2;
const std::vector<std::string> kConditionTags = {"asd-level-1", "asd-level-2", "asd-level-3"};

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Digest seed_digest(std::uint64_t seed, std::string_view label) {
  CanonicalWriter w;
  w.u64(seed).field(label);
  return crypto::sha256(w.bytes());
}

struct Patient {
  std::size_t index = 0;
  HubId hub;
  std::string robot;
  opal::PatientRecord record;
};

struct WaveState {
  std::size_t wave = 0;
  std::size_t pending_sessions = 0;
  std::map<HubId, std::map<std::string, learner::Batch>> samples;  // hub -> robot -> sessions
  consensus::RoundId round_id = 0;
  modelstore::Announcement candidate_ann;
  modelstore::Announcement promotion_ann;
  std::map<HubId, std::size_t> hops;
  std::size_t expected_reports = 0;
  std::size_t arrived_reports = 0;
  std::size_t late_reports = 0;
  std::size_t pending_broadcasts = 0;
  bool resolved = false;
};

class Simulation {
 public:
  Simulation(const ScenarioConfig& config, const fs::path& out_dir, const SimOptions& options)
      : config_(config),
        options_(options),
        out_(out_dir),
        topology_(build_topology(config)),
        chain_(make_policy(), 0),
        store_(out_dir / "pairs", std::string(kStoreParty)),
        service_(crypto::Identity::from_seed(std::string(kServiceId),
                                             seed_digest(config.seed, "identity:opal-service"))),
        auditor_(store_, chain_, service_),
        network_key_(crypto::NetworkKey::from_seed(seed_digest(config.seed, "network-key"))),
        dimension_(options.id_features + kBdFeatures + 1) {}

  ScenarioResult run();

 private:
  ledger::AccessPolicy make_policy() const;
  void setup();
  void schedule_wave(std::size_t wave, Tick at);
  void on_session_start(std::size_t p);
  void on_query_issued(std::size_t p);
  void on_answer_delivered(std::size_t p, std::vector<double> bd);
  void on_train_complete();
  void on_candidate_announced(ModelVersion candidate, HubId source_hub, std::string source_robot,
                              double locked_score);
  void on_candidate_delivery(const HubId& hub);
  void on_feedback_arrival(consensus::RoundId id, consensus::FeedbackScore cand, consensus::FeedbackScore base,
                           std::optional<consensus::ReturnedUpdate> update);
  void on_round_resolve(consensus::RoundId id, bool all_reported);
  void on_broadcast(const HubId& hub);
  void finish_wave();
  void check_invariants();
  void build_holdout();
  double holdout_mse(const ModelVersion& m) const;
  std::vector<HubId> destination_hubs(const HubId& source) const;
  HubId source_hub_for(std::size_t wave) const;
  learner::TrainOptions train_options() const;
  learner::OptimizerState fresh_optimizer() const;
  ModelVersion consensual_model() const;
  void write_artifacts();
  void probe(double v) {
    if (options_.collect_privacy_probes) probes_.raw_values.push_back(v);
  }

  ScenarioConfig config_;
  SimOptions options_;
  fs::path out_;
  Topology topology_;
  ledger::Ledger chain_;
  audit::PairStore store_;
  crypto::Identity service_;
  audit::AuditService auditor_;
  crypto::NetworkKey network_key_;
  std::size_t dimension_;

  std::map<std::string, crypto::Identity> robots_;
  std::shared_ptr<opal::AlgorithmRegistry> registry_;
  std::vector<opal::ProtectedDatabase> databases_;
  std::vector<Patient> patients_;
  modelstore::HubNetwork network_;
  consensus::Coordinator coordinator_;
  EventQueue events_;

  std::vector<double> truth_;  // ground-truth weights, bias last
  Rng session_rng_{0};
  Rng noise_rng_{0};
  std::vector<std::vector<double>> bd_pool_;
  learner::Batch holdout_;

  WaveState wave_;
  RunReport report_;
  PrivacyProbes probes_;
};

ledger::AccessPolicy Simulation::make_policy() const {
  ledger::AccessPolicy p;
  p.mode = config_.ledger_mode;
  p.writers.insert(std::string(kServiceId));
  p.members.insert(std::string(kServiceId));
  for (std::size_t h = 0; h < config_.num_hubs; ++h)
    for (std::size_t r = 0; r < config_.robots_per_hub; ++r) {
      p.writers.insert(robot_name(h, r));
      p.members.insert(robot_name(h, r));
    }
  return p;
}

learner::TrainOptions Simulation::train_options() const {
  learner::TrainOptions t;
  t.epochs = options_.epochs;
  t.learning_rate = options_.learning_rate;
  return t;
}

learner::OptimizerState Simulation::fresh_optimizer() const {
  return learner::OptimizerState::adadelta(dimension_, options_.rho, options_.epsilon);
}

void Simulation::setup() {
  fs::create_directories(out_);
  fs::create_directories(out_ / "rounds");
  chain_.register_identity(service_.public_identity());
  for (const auto& [hub, robots] : topology_.robots_per_hub)
    for (const auto& r : robots) {
      auto id = crypto::Identity::from_seed(r, seed_digest(config_.seed, "identity:" + r));
      chain_.register_identity(id.public_identity());
      robots_.emplace(r, std::move(id));
    }
  chain_.attach_file(out_ / "ledger.chain");

  registry_ = std::make_shared<opal::AlgorithmRegistry>();
  {
    opal::VettedAlgorithm mean;
    mean.algo_id = std::string(kCohortMeanAlgorithm);
    mean.aggregation = opal::Aggregation::Mean;
    mean.allowed_fields = {"gender_code", "age", "score_0"};
    mean.min_group_size = config_.k_per_algorithm.at(mean.algo_id);
    mean.expert_verified = true;
    registry_->register_vetted_algorithm(mean);
    opal::VettedAlgorithm share;
    share.algo_id = std::string(kCohortShareAlgorithm);
    share.aggregation = opal::Aggregation::ProportionAbove;
    share.allowed_fields = {std::string(opal::kTagsField), "score_1"};
    share.min_group_size = config_.k_per_algorithm.at(share.algo_id);
    share.expert_verified = true;
    share.threshold = 0.5;
    registry_->register_vetted_algorithm(share);
  }

  Rng pop = Rng::stream(config_.seed, "population");
  std::map<HubId, std::vector<opal::PatientRecord>> by_party;
  const std::size_t H = config_.num_hubs;
  const std::size_t R = config_.robots_per_hub;
  for (std::size_t p = 0; p < config_.num_patients; ++p) {
    Patient pt;
    pt.index = p;
    pt.hub = hub_name(p % H);
    pt.robot = robot_name(p % H, (p / H) % R);
    auto& rec = pt.record;
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(pop.next()));
    rec.record_id = std::string("patient-") + buf;
    rec.age = 4 + static_cast<std::int64_t>(pop.index(12));
    rec.gender_code = static_cast<std::int64_t>(pop.index(2));
    for (int s = 0; s < 3; ++s) rec.assessment_scores.push_back(pop.uniform());
    rec.condition_tags.insert(kConditionTags[pop.index(kConditionTags.size())]);
    rec.party_id = pt.hub;
    if (options_.collect_privacy_probes) {
      probes_.record_ids.push_back(rec.record_id);
      for (double v : rec.assessment_scores) probes_.raw_values.push_back(v);
    }
    by_party[pt.hub].push_back(rec);
    patients_.push_back(std::move(pt));
  }
  for (const auto& hub : topology_.hubs)
    databases_.emplace_back(hub, by_party[hub], registry_);

  Rng gt = Rng::stream(config_.seed, "ground-truth");
  for (std::size_t i = 0; i + 1 < dimension_; ++i) truth_.push_back(gt.normal(0.0, 1.0));
  truth_.push_back(gt.normal(0.0, 0.5));
  session_rng_ = Rng::stream(config_.seed, "sessions");
  noise_rng_ = Rng::stream(config_.seed, "therapist-noise");

  modelstore::Hyperparams hyper{{"learning_rate", options_.learning_rate},
                                {"rho", options_.rho},
                                {"epsilon", options_.epsilon},
                                {"epochs", static_cast<double>(options_.epochs)}};
  for (const auto& hub : topology_.hubs) {
    modelstore::Repository repo(dimension_);
    auto m0 = repo.commit(std::vector<double>(dimension_, 0.0), hyper, 0);
    repo.promote(m0.version_id);
    modelstore::Hub h(hub, std::move(repo));
    for (const auto& r : topology_.robots_per_hub.at(hub)) h.subscribe(r);
    network_.add_hub(std::move(h));
  }
  for (const auto& [a, b] : topology_.edges) network_.connect(a, b);
  if (!topology_.connected())
    throw Error(ErrorCode::InvariantViolation, "hub topology is not connected");

  events_.set_observer([this](const SimEvent&) {
    if (coordinator_.open_count() > 1)
      throw Error(ErrorCode::InvariantViolation, "more than one consensus round open");
  });
}

ModelVersion Simulation::consensual_model() const {
  const auto& repo = network_.hub(topology_.hubs.front()).repository();
  return repo.checkout(*repo.consensual_head());
}

HubId Simulation::source_hub_for(std::size_t wave) const {
  std::vector<HubId> eligible;
  for (std::size_t h = 0; h < config_.num_hubs && h < config_.num_patients; ++h)
    eligible.push_back(hub_name(h));
  return eligible[wave % eligible.size()];
}

std::vector<HubId> Simulation::destination_hubs(const HubId& source) const {
  if (topology_.hubs.size() == 1) return topology_.hubs;
  std::vector<HubId> out;
  for (const auto& h : topology_.hubs)
    if (h != source) out.push_back(h);
  return out;
}

void Simulation::schedule_wave(std::size_t wave, Tick at) {
  wave_ = WaveState{};
  wave_.wave = wave;
  wave_.pending_sessions = patients_.size();
  for (std::size_t p = 0; p < patients_.size(); ++p)
    events_.schedule(at, EventKind::SessionStart, [this, p] { on_session_start(p); });
}

void Simulation::on_session_start(std::size_t p) {
  events_.schedule(events_.now() + 1, EventKind::QueryIssued, [this, p] { on_query_issued(p); });
}

void Simulation::on_query_issued(std::size_t p) {
  const Patient& pt = patients_[p];
  const Tick now = events_.now();
  const std::string prefix =
      "q-" + std::to_string(wave_.wave) + "-" + std::to_string(p) + "-";

  // The robot knows the patient's profile (it asks about the patient's cohort),
  // never the other parties' records.
  const std::int64_t band_lo = 4 + 4 * ((pt.record.age - 4) / 4);
  opal::Query mean_q;
  mean_q.query_id = prefix + "mean";
  mean_q.algo_id = std::string(kCohortMeanAlgorithm);
  mean_q.filter = {{"gender_code", opal::CompareOp::Eq, {double(pt.record.gender_code)}, {}},
                   {"age", opal::CompareOp::Ge, {double(band_lo)}, {}},
                   {"age", opal::CompareOp::Lt, {double(band_lo + 4)}, {}}};
  mean_q.target_field = "score_0";
  mean_q.requester_id = pt.robot;
  mean_q.timestamp = now;

  opal::Query share_q;
  share_q.query_id = prefix + "share";
  share_q.algo_id = std::string(kCohortShareAlgorithm);
  share_q.filter = {{std::string(opal::kTagsField), opal::CompareOp::In, {},
                     {*pt.record.condition_tags.begin()}}};
  share_q.target_field = "score_1";
  share_q.requester_id = pt.robot;
  share_q.timestamp = now;

  std::vector<const opal::ProtectedDatabase*> parties;
  for (const auto& db : databases_) parties.push_back(&db);

  std::vector<double> bd;
  for (const auto* q : {&mean_q, &share_q}) {
    ++report_.audit.queries_issued;
    opal::FederatedAnswer fa = opal::federate_query(parties, *q);
    if (!fa.failures.empty())
      throw Error(ErrorCode::InvariantViolation,
                  "party " + fa.failures.front().party_id + " failed: " + fa.failures.front().error);
    // Audit before release: nothing reaches the robot without a ledger entry.
    auditor_.audit(*q, fa.answer, now);
    ++report_.audit.audit_transactions;
    if (fa.answer.suppressed()) ++report_.audit.suppressed_answers;
    bd.push_back(fa.answer.statistic.value_or(0.0));
  }
  events_.schedule(now + 1, EventKind::AnswerDelivered,
                   [this, p, bd = std::move(bd)]() mutable { on_answer_delivered(p, std::move(bd)); });
}

void Simulation::on_answer_delivered(std::size_t p, std::vector<double> bd) {
  const Patient& pt = patients_[p];
  const Tick now = events_.now();
  report_.audit.answers_delivered += bd.size();
  if (wave_.wave == 0) bd_pool_.push_back(bd);

  learner::FeatureVector x;
  for (std::size_t i = 0; i < options_.id_features; ++i) {
    x.id_features.push_back(session_rng_.normal());
    probe(x.id_features.back());
  }
  x.bd_features = std::move(bd);
  double z = truth_.back();
  for (std::size_t i = 0; i < x.dimension(); ++i) z += truth_[i] * x.at(i);
  const double observed = sigmoid(z) + noise_rng_.normal(0.0, config_.feedback_noise_stddev);
  auto tf = learner::TherapistFeedback::make(
      observed, pt.robot, "s-" + std::to_string(wave_.wave) + "-" + std::to_string(p), now);
  probe(tf.target);
  wave_.samples[pt.hub][pt.robot].push_back({std::move(x), std::move(tf)});

  if (--wave_.pending_sessions == 0)
    events_.schedule(now + 1, EventKind::TrainComplete, [this] { on_train_complete(); });
}

void Simulation::build_holdout() {
  Rng rng = Rng::stream(config_.seed, "holdout");
  for (std::size_t i = 0; i < options_.holdout_size; ++i) {
    learner::FeatureVector x;
    for (std::size_t f = 0; f < options_.id_features; ++f) x.id_features.push_back(rng.normal());
    x.bd_features = bd_pool_[rng.index(bd_pool_.size())];
    double z = truth_.back();
    for (std::size_t f = 0; f < x.dimension(); ++f) z += truth_[f] * x.at(f);
    holdout_.push_back({std::move(x), learner::TherapistFeedback::make(sigmoid(z), "holdout",
                                                                       "h-" + std::to_string(i), 0)});
  }
}

double Simulation::holdout_mse(const ModelVersion& m) const { return learner::evaluate(m, holdout_); }

void Simulation::on_train_complete() {
  const Tick now = events_.now();
  if (wave_.wave == 0) {
    build_holdout();
    report_.initial_holdout_mse = holdout_mse(consensual_model());
  }
  const HubId source = source_hub_for(wave_.wave);
  const std::string robot = topology_.robots_per_hub.at(source).front();
  const ModelVersion baseline = consensual_model();

  ModelVersion candidate;
  double locked = 0.0;
  if (options_.epochs == 0) {
    candidate = ModelVersion::make(baseline.params, baseline.hyperparams, baseline.version_id, now);
  } else {
    learner::Batch batch;
    for (const auto& [r, samples] : wave_.samples[source])
      batch.insert(batch.end(), samples.begin(), samples.end());
    auto result =
        learner::fine_tune(baseline, std::move(batch), fresh_optimizer(), train_options(), now);
    locked = learner::feedback_score(result.loss_trace.back());
    candidate = std::move(result.model);
  }
  network_.hub(source).repository().commit(candidate);
  events_.schedule(now + 1, EventKind::CandidateAnnounced,
                   [this, candidate = std::move(candidate), source, robot, locked]() mutable {
                     on_candidate_announced(std::move(candidate), source, robot, locked);
                   });
}

void Simulation::on_candidate_announced(ModelVersion candidate, HubId source_hub,
                                        std::string source_robot, double locked_score) {
  const Tick now = events_.now();
  const ModelVersion baseline = consensual_model();
  auto& source_repo = network_.hub(source_hub).repository();
  consensus::CandidateModel cm{std::move(candidate), source_hub, source_robot, locked_score, now};
  auto& round = coordinator_.open_round(std::move(cm), baseline, config_.consensus_window,
                                        config_.effective_quorum(), now, &source_repo);
  wave_.round_id = round.round_id;
  wave_.candidate_ann = modelstore::make_announcement(round.candidate_delta, source_hub);
  wave_.hops = modelstore::flood_schedule(network_.adjacency(), source_hub);

  for (const auto& hub : destination_hubs(source_hub))
    for (const auto& [robot, samples] : wave_.samples[hub])
      if (!samples.empty()) ++wave_.expected_reports;

  for (const auto& [hub, hops] : wave_.hops) {
    const Tick at = now + hops * options_.hop_latency + options_.evaluation_delay;
    events_.schedule(at, EventKind::FeedbackDue, [this, hub = hub] { on_candidate_delivery(hub); });
  }
  const consensus::RoundId id = round.round_id;
  events_.schedule(round.deadline, EventKind::RoundResolve, [this, id] { on_round_resolve(id, false); });
  if (wave_.expected_reports == 0)
    events_.schedule(now, EventKind::RoundResolve, [this, id] { on_round_resolve(id, true); });
}

void Simulation::on_candidate_delivery(const HubId& hub_id) {
  const Tick now = events_.now();
  auto& hub = network_.hub(hub_id);
  hub.notify_subscribers(wave_.candidate_ann, now);

  const auto& round = coordinator_.round(wave_.round_id);
  const auto dests = destination_hubs(round.candidate.source_hub);
  if (std::find(dests.begin(), dests.end(), hub_id) == dests.end()) return;

  const ModelVersion baseline = hub.repository().checkout(*hub.repository().consensual_head());
  for (const auto& [robot, samples] : wave_.samples[hub_id]) {
    if (samples.empty()) continue;
    const auto& wc = hub.working_copy(robot);
    if (wc.version_id != round.candidate.model.version_id)
      throw Error(ErrorCode::InvariantViolation, robot + " did not receive the candidate");
    const double cand_loss = learner::mean_squared_error(wc.params, samples);
    const double base_loss = learner::evaluate(baseline, samples);
    consensus::FeedbackScore cs{robot, wc.version_id, learner::feedback_score(cand_loss), 0};
    consensus::FeedbackScore bs{robot, baseline.version_id, learner::feedback_score(base_loss), 0};

    std::optional<consensus::ReturnedUpdate> update;
    if (config_.fold_destination_updates && options_.epochs > 0) {
      const ModelVersion cand = modelstore::reconstruct(baseline, wave_.candidate_ann.delta, now);
      learner::Batch copy = samples;
      auto local = learner::fine_tune(cand, std::move(copy), fresh_optimizer(), train_options(), now);
      update = consensus::ReturnedUpdate{robot, modelstore::make_delta(cand, local.model),
                                         static_cast<double>(samples.size())};
    }
    const Tick arrival = now + wave_.hops.at(hub_id) * options_.hop_latency;
    cs.received_at = bs.received_at = arrival;
    events_.schedule(arrival, EventKind::FeedbackDue,
                     [this, id = round.round_id, cs = std::move(cs), bs = std::move(bs),
                      update = std::move(update)]() mutable {
                       on_feedback_arrival(id, std::move(cs), std::move(bs), std::move(update));
                     });
  }
}

void Simulation::on_feedback_arrival(consensus::RoundId id, consensus::FeedbackScore cand, consensus::FeedbackScore base,
                                     std::optional<consensus::ReturnedUpdate> update) {
  if (id != wave_.round_id) return;  // round already finalized
  try {
    coordinator_.submit_feedback(id, cand, base);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::LateFeedback && e.code() != ErrorCode::RoundClosed) throw;
    ++wave_.late_reports;
    return;
  }
  if (update) coordinator_.return_update(wave_.round_id, std::move(*update));
  if (++wave_.arrived_reports == wave_.expected_reports)
    events_.schedule(events_.now(), EventKind::RoundResolve, [this, id] { on_round_resolve(id, true); });
}

void Simulation::on_round_resolve(consensus::RoundId id, bool all_reported) {
  if (id != wave_.round_id || wave_.resolved) return;
  const Tick now = events_.now();
  wave_.resolved = true;
  consensus::Decision d = coordinator_.resolve(wave_.round_id, now, all_reported);
  auto& round = coordinator_.round(wave_.round_id);
  auto& source = network_.hub(round.candidate.source_hub);
  if (d.outcome == RoundState::Accepted)
    wave_.promotion_ann =
        consensus::prepare_promotion(round, source, config_.fold_destination_updates, now);
  consensus::notarize(chain_, round, network_key_, robots_.at(round.candidate.source_robot), now);

  for (const auto& [hub, hops] : wave_.hops) {
    ++wave_.pending_broadcasts;
    events_.schedule(now + hops * options_.hop_latency, EventKind::PromotionBroadcast,
                     [this, hub = hub] { on_broadcast(hub); });
  }
}

void Simulation::on_broadcast(const HubId& hub_id) {
  const auto& round = coordinator_.round(wave_.round_id);
  auto& hub = network_.hub(hub_id);
  if (round.state == RoundState::Accepted)
    hub.adopt(wave_.promotion_ann, events_.now());
  else
    hub.rollback();
  if (--wave_.pending_broadcasts == 0) finish_wave();
}

void Simulation::finish_wave() {
  const Tick now = events_.now();
  const auto& round = coordinator_.round(wave_.round_id);
  check_invariants();

  RoundRecord rec;
  rec.round_id = round.round_id;
  rec.wave = wave_.wave;
  rec.source_hub = round.candidate.source_hub;
  rec.source_robot = round.candidate.source_robot;
  rec.outcome = round.state;
  rec.candidate_mean = round.decision->candidate_mean;
  rec.baseline_mean = round.decision->baseline_mean;
  rec.candidate_count = round.decision->candidate_count;
  rec.quorum = round.quorum;
  rec.late_feedback = wave_.late_reports;
  rec.returned_updates = round.returned_updates.size();
  rec.baseline_id = round.baseline.version_id.hex();
  rec.candidate_id = round.candidate.model.version_id.hex();
  if (round.promoted) rec.promoted_id = round.promoted->version_id.hex();
  rec.update_hash = consensus::notarized_update_hash(round).hex();
  rec.notarization_block = round.notarization->block_index;
  rec.notarization_tx = round.notarization->tx_index;
  rec.opened_at = round.opened_at;
  rec.resolved_at = now;
  const ModelVersion current = consensual_model();
  rec.holdout_mse_after = holdout_mse(current);
  if (round.state == RoundState::Accepted) {
    ++report_.promotions;
    const double before =
        report_.holdout_trajectory.empty() ? report_.initial_holdout_mse : report_.holdout_trajectory.back();
    if (rec.holdout_mse_after > before) ++report_.convergence_violations;
  }
  report_.holdout_trajectory.push_back(rec.holdout_mse_after);

  report_.rounds.push_back(rec);
  {
    std::ofstream f(out_ / "rounds" / (std::to_string(rec.round_id) + ".json"),
                    std::ios::binary | std::ios::trunc);
    f << report_.to_json()["rounds"].back().dump(2) << "\n";
  }

  // Interaction data never outlives its round.
  for (auto& [hub, robots] : wave_.samples)
    for (auto& [robot, batch] : robots) learner::secure_discard(batch);
  wave_.samples.clear();

  if (wave_.wave + 1 < config_.sessions_per_patient) schedule_wave(wave_.wave + 1, now + 1);
}

void Simulation::check_invariants() {
  const auto& round = coordinator_.round(wave_.round_id);
  std::optional<modelstore::VersionId> head;
  for (const auto& id : topology_.hubs) {
    const auto& hub = network_.hub(id);
    const auto& cons = hub.repository().consensual_head();
    if (!cons) throw Error(ErrorCode::InvariantViolation, id + " has no consensual head");
    if (head && *head != *cons)
      throw Error(ErrorCode::InvariantViolation, "hubs disagree on the consensual model");
    head = cons;
    if (hub.repository().head() != cons)
      throw Error(ErrorCode::InvariantViolation, id + " head is not the consensual model");
    const ModelVersion m = hub.repository().checkout(*cons);
    for (const auto& robot : hub.subscribers()) {
      const auto& wc = hub.working_copy(robot);
      if (wc.version_id != *cons || wc.params != m.params)
        throw Error(ErrorCode::InvariantViolation, robot + " working copy is not the consensual model");
    }
  }
  const auto expected = round.state == RoundState::Accepted ? round.promoted->version_id
                                                             : round.baseline.version_id;
  if (*head != expected)
    throw Error(ErrorCode::InvariantViolation, "consensual model does not match the round outcome");
  if (round.state != RoundState::Accepted && consensual_model().params != round.baseline.params)
    throw Error(ErrorCode::InvariantViolation, "rollback did not restore the baseline exactly");
  if (!round.notarization) throw Error(ErrorCode::InvariantViolation, "round was not notarized");
  auto v = chain_.validate(kServiceId);
  if (!v.ok) throw Error(ErrorCode::InvariantViolation, "ledger invalid: " + v.reason);
}

void Simulation::write_artifacts() {
  nlohmann::ordered_json ids;
  ids[std::string(kServiceId)] = to_hex(service_.public_key());
  for (const auto& [id, identity] : robots_) ids[id] = to_hex(identity.public_key());
  {
    std::ofstream f(out_ / "identities.json", std::ios::binary | std::ios::trunc);
    f << ids.dump(2) << "\n";
  }
  fs::create_directories(out_ / "keys");
  network_key_.save(out_ / "keys" / "network.key");
  for (const auto& id : topology_.hubs) network_.hub(id).repository().save(out_ / "hubs" / id);
  {
    nlohmann::ordered_json topo;
    topo["hubs"] = topology_.hubs;
    auto& edges = topo["edges"] = nlohmann::ordered_json::array();
    for (const auto& [a, b] : topology_.edges) edges.push_back({a, b});
    topo["robots"] = topology_.robots_per_hub;
    std::ofstream f(out_ / "topology.json", std::ios::binary | std::ios::trunc);
    f << topo.dump(2) << "\n";
  }
}

ScenarioResult Simulation::run() {
  setup();
  report_.config = config_;
  if (config_.sessions_per_patient > 0 && !patients_.empty()) schedule_wave(0, 1);
  events_.run();

  const auto blocks = chain_.snapshot(kServiceId);
  report_.ledger_validation = ledger::validate_chain(blocks);
  report_.ledger_blocks = blocks.size();
  for (const auto& b : blocks)
    for (const auto& tx : b.transactions)
      if (std::holds_alternative<ledger::ModelConsensusTx>(tx)) ++report_.model_consensus_transactions;
  for (const auto& h : store_.list()) {
    ++report_.audit.stored_pairs;
    auto pair = store_.get(h);
    if (pair && audit::verify_pair(std::span<const ledger::Block>(blocks), *pair))
      ++report_.audit.verified_pairs;
  }
  for (const auto& id : topology_.hubs)
    report_.hub_consensual_heads[id] = network_.hub(id).repository().consensual_head()->hex();
  report_.final_consensual_id = consensual_model().version_id.hex();
  report_.events_processed = events_.processed();
  report_.final_tick = events_.now();

  write_artifacts();
  emit_report(report_, out_ / "report.json");
  return ScenarioResult{report_, out_, std::move(probes_)};
}

}  // namespace

ScenarioResult run_scenario(const ScenarioConfig& config, const fs::path& out_dir,
                            const SimOptions& options) {
  config.validate();
  Simulation sim(config, out_dir, options);
  return sim.run();
}

}  // namespace robochain::simnet
