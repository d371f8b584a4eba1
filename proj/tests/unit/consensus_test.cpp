#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "oracles.hpp"
#include "robochain/consensus.hpp"
#include "robochain/errors.hpp"

using namespace robochain;
using namespace robochain::consensus;

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

struct RoundSetup {
  ModelVersion baseline = ModelVersion::make({0.0, 0.0}, {}, std::nullopt, 0);
  ModelVersion cand = ModelVersion::make({0.5, 0.1}, {}, baseline.version_id, 1);
  Coordinator coord;

  CandidateModel candidate() const { return CandidateModel{cand, "h0", "robot-0-0", 0.0, 0}; }

  void score(RoundId id, const std::string& robot, double c, double b, Tick t) {
    coord.submit_feedback(id, FeedbackScore{robot, cand.version_id, c, t},
                          FeedbackScore{robot, baseline.version_id, b, t});
  }
};

}  // namespace

TEST(Decide, Examples) {
  RoundSetup s;
  auto& r = s.coord.open_round(s.candidate(), s.baseline, 10, 2, 0);
  s.score(r.round_id, "a", 0.7, 0.6, 1);
  s.score(r.round_id, "b", 0.9, 0.6, 2);
  auto d = s.coord.resolve(r.round_id, 10);
  EXPECT_EQ(d.outcome, RoundState::Accepted);
  EXPECT_DOUBLE_EQ(d.candidate_mean, 0.8);
  EXPECT_DOUBLE_EQ(d.baseline_mean, 0.6);

  EXPECT_EQ(decide(0.6, 0.6, 2, 2), RoundState::Rejected);
  EXPECT_EQ(decide(0.9, 0.1, 1, 3), RoundState::Expired);
  EXPECT_EQ(default_quorum(5), 3u);
  EXPECT_EQ(default_quorum(0), 1u);
}

TEST(Decide, MeanIsOrderIndependent) {
  std::vector<FeedbackScore> a{{"x", {}, 0.1, 0}, {"y", {}, 0.2, 0}, {"z", {}, 0.3, 0}};
  std::vector<FeedbackScore> b{{"z", {}, 0.3, 0}, {"x", {}, 0.1, 0}, {"y", {}, 0.2, 0}};
  EXPECT_EQ(mean_score(a), mean_score(b));
  EXPECT_EQ(mean_score({}), 0.0);
}

TEST(Feedback, DeadlineIsInclusive) {
  RoundSetup s;
  auto& r = s.coord.open_round(s.candidate(), s.baseline, 5, 1, 10);
  s.score(r.round_id, "a", 0.5, 0.4, 15);
  EXPECT_EQ(code_of([&] { s.score(r.round_id, "b", 0.5, 0.4, 16); }), ErrorCode::LateFeedback);
  EXPECT_EQ(code_of([&] { s.score(r.round_id, "a", 0.5, 0.4, 12); }), ErrorCode::DuplicateFeedback);
  EXPECT_EQ(code_of([&] {
              s.coord.submit_feedback(r.round_id, FeedbackScore{"c", s.baseline.version_id, 0.5, 11},
                                      FeedbackScore{"c", s.baseline.version_id, 0.5, 11});
            }),
            ErrorCode::WrongModel);
  EXPECT_EQ(code_of([&] {
              s.coord.submit_feedback(r.round_id, FeedbackScore{"c", s.cand.version_id, 0.5, 11},
                                      FeedbackScore{"d", s.baseline.version_id, 0.5, 11});
            }),
            ErrorCode::MismatchedIds);
}

TEST(Round, SingleProposerAndLineage) {
  RoundSetup s;
  s.coord.open_round(s.candidate(), s.baseline, 5, 1, 0);
  EXPECT_EQ(code_of([&] { s.coord.open_round(s.candidate(), s.baseline, 5, 1, 0); }),
            ErrorCode::RoundInProgress);
  EXPECT_EQ(s.coord.open_count(), 1u);

  Coordinator fresh;
  auto stranger = ModelVersion::make({9, 9}, {}, std::nullopt, 0);
  EXPECT_EQ(code_of([&] {
              fresh.open_round(CandidateModel{stranger, "h0", "r", 0, 0}, s.baseline, 5, 1, 0);
            }),
            ErrorCode::OrphanCandidate);
  EXPECT_EQ(code_of([&] { fresh.open_round(s.candidate(), s.baseline, 5, 0, 0); }),
            ErrorCode::InvalidConfig);
}

TEST(Round, ResolveTimingRules) {
  RoundSetup s;
  auto id = s.coord.open_round(s.candidate(), s.baseline, 5, 1, 0).round_id;
  EXPECT_EQ(code_of([&] { s.coord.resolve(id, 3); }), ErrorCode::RoundInProgress);
  s.score(id, "a", 0.4, 0.5, 1);
  EXPECT_EQ(s.coord.resolve(id, 3, true).outcome, RoundState::Rejected);
  EXPECT_EQ(code_of([&] { s.coord.resolve(id, 6); }), ErrorCode::RoundNotOpen);
  EXPECT_EQ(code_of([&] { s.score(id, "b", 0.4, 0.5, 2); }), ErrorCode::RoundClosed);
  EXPECT_FALSE(s.coord.open_round_id().has_value());
  EXPECT_EQ(code_of([&] { s.coord.round(77); }), ErrorCode::RoundNotOpen);
}

TEST(Round, FuzzedDecisionsMatchOracle) {
  std::mt19937_64 rng(1234);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> n_dist(0, 6), q_dist(1, 4);
  RoundSetup s;
  for (int t = 0; t < 200; ++t) {
    auto id = s.coord.open_round(s.candidate(), s.baseline, 10, q_dist(rng), 0).round_id;
    std::vector<double> c, b;
    int n = n_dist(rng);
    for (int i = 0; i < n; ++i) {
      double x = u(rng), y = rng() % 4 == 0 ? x : u(rng);
      s.score(id, "r" + std::to_string(i), x, y, 5);
      c.push_back(x);
      b.push_back(y);
    }
    EXPECT_EQ(s.coord.resolve(id, 10).outcome, oracle::decide(c, b, s.coord.round(id).quorum));
  }
}

TEST(Payload, EncodeDecodeRoundTrip) {
  ConsensusPayload p;
  p.entries = {{"robot-1-0", 0.75, 0.5}, {"robot-2-1", 0.125, 0.25}};
  p.quorum = 2;
  p.decision = RoundState::Accepted;
  EXPECT_EQ(decode_payload(encode_payload(p)), p);
  EXPECT_EQ(recompute_decision(p), RoundState::Accepted);  // 0.4375 > 0.375
  Bytes bad = encode_payload(p);
  bad.back() = 0x7f;
  EXPECT_EQ(code_of([&] { decode_payload(bad); }), ErrorCode::CorruptData);
}

TEST(Notarize, RoundTripAndKeys) {
  RoundSetup s;
  auto source = crypto::Identity::generate("robot-0-0");
  auto other = crypto::Identity::generate("robot-1-0");
  ledger::Ledger chain(ledger::AccessPolicy{ledger::PermissionMode::SemiPrivate, {"robot-0-0", "robot-1-0"}, {}});
  chain.register_identity(source.public_identity());
  chain.register_identity(other.public_identity());
  auto key = crypto::NetworkKey::generate();

  auto& r = s.coord.open_round(s.candidate(), s.baseline, 5, 1, 0);
  EXPECT_EQ(code_of([&] { notarize(chain, r, key, source, 1); }), ErrorCode::RoundNotResolved);
  s.score(r.round_id, "robot-1-0", 0.3, 0.6, 1);
  s.coord.resolve(r.round_id, 5);
  EXPECT_EQ(code_of([&] { notarize(chain, r, key, other, 5); }), ErrorCode::WrongSigner);
  auto ref = notarize(chain, r, key, source, 5);
  EXPECT_EQ(code_of([&] { notarize(chain, r, key, source, 6); }), ErrorCode::InvariantViolation);

  auto tx = std::get<ledger::ModelConsensusTx>(chain.transaction(ref, "auditor"));
  EXPECT_EQ(tx.model_update_hash, r.candidate_delta.update_hash);
  auto payload = decode_payload(crypto::decrypt_payload(tx.encrypted_payload, key));
  EXPECT_EQ(payload, payload_of(r));
  EXPECT_EQ(payload.decision, RoundState::Rejected);
  EXPECT_EQ(code_of([&] { crypto::decrypt_payload(tx.encrypted_payload, crypto::NetworkKey::generate()); }),
            ErrorCode::AuthenticationFailure);
}

TEST(Promotion, AcceptedRoundPropagatesAndRejectedRollsBack) {
  modelstore::HubNetwork net;
  for (int i = 0; i < 3; ++i) {
    modelstore::Repository repo(2);
    auto m0 = repo.commit({0.0, 0.0}, {}, 0);
    repo.promote(m0.version_id);
    modelstore::Hub hub("h" + std::to_string(i), std::move(repo));
    hub.subscribe("r" + std::to_string(i));
    net.add_hub(std::move(hub));
  }
  net.connect("h0", "h1");
  net.connect("h1", "h2");
  RoundSetup s;
  Coordinator& coord = s.coord;

  auto& r = open_round(coord, net, s.candidate(), s.baseline, 5, 2, 0);
  EXPECT_EQ(net.hub("h2").working_copy("r2").version_id, s.cand.version_id);
  s.score(r.round_id, "r1", 0.9, 0.5, 1);
  s.score(r.round_id, "r2", 0.8, 0.5, 1);
  EXPECT_EQ(resolve(coord, r.round_id, 5).outcome, RoundState::Accepted);
  auto promoted = promote(coord, net, r.round_id, false, 5);
  EXPECT_EQ(promoted.parent_id, s.baseline.version_id);
  for (const auto& id : net.hub_ids()) EXPECT_EQ(net.hub(id).repository().consensual_head(), promoted.version_id);

  auto next = ModelVersion::make({1.0, 1.0}, {}, promoted.version_id, 6);
  net.hub("h0").repository().commit(next);
  auto& r2 = open_round(coord, net, CandidateModel{next, "h0", "robot-0-0", 0, 6}, promoted, 5, 2, 6);
  EXPECT_EQ(resolve(coord, r2.round_id, 11).outcome, RoundState::Expired);
  EXPECT_EQ(code_of([&] { prepare_promotion(r2, net.hub("h0"), false, 11); }), ErrorCode::NotAccepted);
  roll_back(net, r2);
  for (const auto& id : net.hub_ids()) {
    EXPECT_EQ(net.hub(id).repository().head(), promoted.version_id);
    EXPECT_EQ(net.hub(id).working_copy("r" + id.substr(1)).params, promoted.params);
  }
}

TEST(Promotion, FoldedUpdatesAverageAndKeepBaselineParent) {
  RoundSetup s;
  auto& r = s.coord.open_round(s.candidate(), s.baseline, 5, 1, 0);
  auto t1 = ModelVersion::make({1.0, 0.1}, {}, s.cand.version_id, 1);
  auto t2 = ModelVersion::make({0.0, 0.1}, {}, s.cand.version_id, 1);
  s.coord.return_update(r.round_id, ReturnedUpdate{"a", modelstore::make_delta(s.cand, t1), 1.0});
  s.coord.return_update(r.round_id, ReturnedUpdate{"b", modelstore::make_delta(s.cand, t2), 3.0});
  auto folded = next_baseline(r, true, 2);
  EXPECT_EQ(folded.params[0], 0.5 + (1.0 * 0.5 + 3.0 * -0.5) / 4.0);
  EXPECT_EQ(folded.params[1], 0.1);
  EXPECT_EQ(folded.parent_id, s.baseline.version_id);
  EXPECT_EQ(next_baseline(r, false, 2).version_id, s.cand.version_id);
  EXPECT_EQ(code_of([&] {
              s.coord.return_update(r.round_id, ReturnedUpdate{"c", modelstore::make_delta(s.baseline, s.cand), 1});
            }),
            ErrorCode::StaleBase);
}
