#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>

#include <unistd.h>

#include "robochain/errors.hpp"
#include "robochain/simnet.hpp"

using namespace robochain;
using namespace robochain::simnet;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::InvariantViolation;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("robochain-simnet-" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  return p;
}

ScenarioConfig small_config() {
  auto c = ScenarioConfig::defaults();
  c.num_hubs = 3;
  c.robots_per_hub = 2;
  c.num_patients = 24;
  c.sessions_per_patient = 4;
  return c;
}

std::size_t count_outcome(const RunReport& r, consensus::RoundState s) {
  std::size_t n = 0;
  for (const auto& round : r.rounds) n += round.outcome == s;
  return n;
}

}  // namespace

class SimnetEnv : public ::testing::Environment {
 public:
  void TearDown() override {
    fs::remove_all(fs::temp_directory_path() / ("robochain-simnet-" + std::to_string(::getpid())));
  }
};
static auto* const env = ::testing::AddGlobalTestEnvironment(new SimnetEnv);

TEST(Rng, DeterministicStreams) {
  auto a = Rng::stream(7, "x");
  auto b = Rng::stream(7, "x");
  auto c = Rng::stream(7, "y");
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    auto va = a.next();
    EXPECT_EQ(va, b.next());
    differs |= va != c.next();
  }
  EXPECT_TRUE(differs);
  Rng r(3);
  for (int i = 0; i < 1000; ++i) {
    double u = r.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(r.index(7), 7u);
  }
}

TEST(Config, ValidationRules) {
  auto c = ScenarioConfig::defaults();
  EXPECT_NO_THROW(c.validate());
  auto bad = c;
  bad.num_hubs = 0;
  EXPECT_EQ(code_of([&] { bad.validate(); }), ErrorCode::InvalidConfig);
  bad = c;
  bad.edge_density = 1.5;
  EXPECT_EQ(code_of([&] { bad.validate(); }), ErrorCode::InvalidConfig);
  bad = c;
  bad.k_per_algorithm[std::string(kCohortMeanAlgorithm)] = 1;
  EXPECT_EQ(code_of([&] { bad.validate(); }), ErrorCode::InvalidConfig);
  bad = c;
  bad.quorum = c.destination_count() + 1;
  EXPECT_EQ(code_of([&] { bad.validate(); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(c.destination_count(), (c.num_hubs - 1) * c.robots_per_hub);
  EXPECT_EQ(c.effective_quorum(), (c.destination_count() + 1) / 2);
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
  auto c = small_config();
  c.fold_destination_updates = true;
  auto back = ScenarioConfig::from_json(nlohmann::json::parse(c.to_json().dump()));
  EXPECT_EQ(back.to_json(), c.to_json());
  auto j = nlohmann::json::parse(c.to_json().dump());
  j["surprise"] = 1;
  EXPECT_EQ(code_of([&] { ScenarioConfig::from_json(j); }), ErrorCode::InvalidConfig);
  j = nlohmann::json::parse(c.to_json().dump());
  j.erase("seed");
  EXPECT_EQ(code_of([&] { ScenarioConfig::from_json(j); }), ErrorCode::InvalidConfig);
}

TEST(Topology, Properties) {
  auto c = ScenarioConfig::defaults();
  c.num_hubs = 1;
  auto t1 = build_topology(c);
  EXPECT_EQ(t1.hubs.size(), 1u);
  EXPECT_TRUE(t1.edges.empty());

  c.num_hubs = 9;
  c.edge_density = 0.0;
  auto tree = build_topology(c);
  EXPECT_EQ(tree.edges.size(), 8u);
  EXPECT_TRUE(tree.connected());

  c.edge_density = 0.6;
  auto a = build_topology(c);
  auto b = build_topology(c);
  EXPECT_EQ(a.edges, b.edges);
  EXPECT_TRUE(a.connected());
  EXPECT_GE(a.edges.size(), 8u);
  for (const auto& [robot_hub, robots] : a.robots_per_hub)
    for (const auto& r : robots) EXPECT_EQ(a.hub_of(r), robot_hub);
}

TEST(EventQueue, OrdersByTickThenInsertion) {
  EventQueue q;
  std::vector<int> order;
  q.schedule(2, EventKind::RoundResolve, [&] { order.push_back(3); });
  q.schedule(1, EventKind::SessionStart, [&] { order.push_back(1); });
  q.schedule(1, EventKind::QueryIssued, [&] {
    order.push_back(2);
    q.schedule(1, EventKind::AnswerDelivered, [&] { order.push_back(25); });
  });
  q.run();
  EXPECT_EQ(order, (std::vector<int>{1, 2, 25, 3}));
  EXPECT_EQ(q.now(), 2u);
  EXPECT_EQ(q.processed(), 4u);
  EXPECT_EQ(code_of([&] { q.schedule(1, EventKind::SessionStart, [] {}); }), ErrorCode::InvariantViolation);
}

TEST(Scenario, SingleRobotLifecycle) {
  auto c = ScenarioConfig::defaults();
  c.num_hubs = 1;
  c.robots_per_hub = 1;
  c.quorum = 1;
  c.num_patients = 12;
  c.sessions_per_patient = 1;
  auto out = scratch("single");
  auto r = run_scenario(c, out).report;
  ASSERT_EQ(r.rounds.size(), 1u);
  EXPECT_EQ(r.rounds[0].candidate_count, 1u);
  EXPECT_EQ(r.rounds[0].outcome, consensus::RoundState::Accepted);
  EXPECT_EQ(r.promotions, 1u);
  EXPECT_EQ(r.model_consensus_transactions, 1u);
  EXPECT_GE(r.audit.audit_transactions, 1u);
  EXPECT_TRUE(r.ledger_validation.ok);
  EXPECT_EQ(r.final_consensual_id, r.rounds[0].promoted_id);
}

TEST(Scenario, ZeroEpochCandidateTiesAndIsRejected) {
  auto c = small_config();
  c.feedback_noise_stddev = 0.0;
  SimOptions opt;
  opt.epochs = 0;
  auto r = run_scenario(c, scratch("tie"), opt).report;
  EXPECT_EQ(count_outcome(r, consensus::RoundState::Rejected), r.rounds.size());
  EXPECT_EQ(r.promotions, 0u);
  ASSERT_FALSE(r.rounds.empty());
  for (const auto& [hub, head] : r.hub_consensual_heads) EXPECT_EQ(head, r.rounds[0].baseline_id) << hub;
  for (const auto& round : r.rounds) EXPECT_EQ(round.candidate_mean, round.baseline_mean);
}

TEST(Scenario, DeterministicReport) {
  auto c = small_config();
  auto a = run_scenario(c, scratch("det-a")).report.serialize();
  auto b = run_scenario(c, scratch("det-b")).report.serialize();
  EXPECT_EQ(a, b);
  c.seed += 1;
  EXPECT_NE(run_scenario(c, scratch("det-c")).report.serialize(), a);
}

TEST(Scenario, QuorumAboveReachableExpires) {
  auto c = small_config();
  c.quorum = c.destination_count();
  c.consensus_window = 1;  // too short for two-hop feedback
  c.num_hubs = 4;
  c.edge_density = 0.0;
  auto r = run_scenario(c, scratch("expire")).report;
  EXPECT_GT(count_outcome(r, consensus::RoundState::Expired), 0u);
  EXPECT_TRUE(r.ledger_validation.ok);
  EXPECT_EQ(r.model_consensus_transactions, r.rounds.size());
}

TEST(Replay, CleanRunPassesWithAndWithoutKey) {
  auto out = scratch("replay");
  auto r = run_scenario(small_config(), out).report;
  auto key = crypto::NetworkKey::load(out / "keys" / "network.key");
  auto with = replay(out, key);
  EXPECT_TRUE(with.ok()) << with.to_json().dump(2);
  EXPECT_EQ(with.rounds.size(), r.rounds.size());
  for (const auto& rc : with.rounds) EXPECT_EQ(rc.payload_matches, std::optional<bool>(true));
  auto without = replay(out);
  EXPECT_TRUE(without.ok());
  EXPECT_FALSE(without.payloads_checked);
  EXPECT_FALSE(without.notices.empty());
  EXPECT_EQ(without.audit_transactions, r.audit.audit_transactions);
}

TEST(Replay, TamperedPairIsPinpointed) {
  auto out = scratch("tamper");
  run_scenario(small_config(), out);
  std::vector<fs::path> pairs;
  for (const auto& e : fs::directory_iterator(out / "pairs"))
    if (e.path().extension() == ".pair") pairs.push_back(e.path());
  std::sort(pairs.begin(), pairs.end());
  ASSERT_FALSE(pairs.empty());
  const auto victim = pairs[pairs.size() / 2];
  {
    std::fstream f(victim, std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(12);
    char ch = 0;
    f.get(ch);
    f.seekp(12);
    f.put(static_cast<char>(ch ^ 0x01));
  }
  auto s = replay(out);
  EXPECT_FALSE(s.ok());
  ASSERT_EQ(s.failed_pairs.size(), 1u);
  EXPECT_EQ(s.failed_pairs[0], victim.stem().string());
  EXPECT_TRUE(s.chain.ok);
}

TEST(Replay, MissingLedgerIsReported) {
  EXPECT_EQ(code_of([] { replay(scratch("nothing")); }), ErrorCode::MissingArtifacts);
}

TEST(Privacy, ArtifactsHoldNoRawValues) {
  auto out = scratch("privacy");
  SimOptions opt;
  opt.collect_privacy_probes = true;
  auto res = run_scenario(small_config(), out, opt);
  ASSERT_FALSE(res.probes.record_ids.empty());
  ASSERT_FALSE(res.probes.raw_values.empty());
  auto [text, binary] = probe_needles(res.probes);
  auto hits = scan_artifacts(out, text, binary);
  EXPECT_TRUE(hits.empty()) << hits.size() << " hits, first: " << (hits.empty() ? "" : hits[0]);
}

TEST(Privacy, ScannerFindsPlantedValue) {
  auto out = scratch("plant");
  fs::create_directories(out);
  double v = 0.123456789012345;
  std::ofstream(out / "leak.bin", std::ios::binary).write(reinterpret_cast<const char*>(&v), 8);
  PrivacyProbes p;
  p.raw_values = {v};
  p.record_ids = {"patient-00ff"};
  auto [text, binary] = probe_needles(p);
  EXPECT_EQ(scan_artifacts(out, text, binary).size(), 1u);
  std::ofstream(out / "leak.txt") << "id patient-00ff\n";
  EXPECT_EQ(scan_artifacts(out, text, binary).size(), 2u);
}
