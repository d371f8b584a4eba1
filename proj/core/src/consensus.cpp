#include "robochain/consensus.hpp"

#include "robochain/errors.hpp"
#include "robochain/learner.hpp"
#include "robochain/opal.hpp"

namespace robochain::consensus {

std::string_view to_string(RoundState s) {
  switch (s) {
    case RoundState::Open: return "open";
    case RoundState::Accepted: return "accepted";
    case RoundState::Rejected: return "rejected";
    case RoundState::Expired: return "expired";
  }
  return "unknown";
}

double mean_score(const std::vector<FeedbackScore>& scores) {
  if (scores.empty()) return 0.0;
  // Exact summation: the decision must not depend on arrival order.
  opal::ExactSum total;
  for (const auto& s : scores) total.add(s.score);
  return total.value() / static_cast<double>(scores.size());
}

RoundState decide(double candidate_mean, double baseline_mean, std::size_t candidate_count,
                  std::size_t quorum) {
  if (candidate_count < quorum) return RoundState::Expired;
  return candidate_mean > baseline_mean ? RoundState::Accepted : RoundState::Rejected;
}

std::size_t default_quorum(std::size_t destinations) {
  return std::max<std::size_t>(1, (destinations + 1) / 2);
}

// ---------------------------------------------------------------------------
// Coordinator

ConsensusRound& Coordinator::open_round(CandidateModel candidate, ModelVersion baseline,
                                        Tick window, std::size_t quorum, Tick now,
                                        const modelstore::Repository* lineage) {
  if (open_)
    throw Error(ErrorCode::RoundInProgress,
                "round " + std::to_string(*open_) + " is still open; one proposer at a time");
  bool descends = lineage ? lineage->is_ancestor(baseline.version_id, candidate.model.version_id)
                          : candidate.model.parent_id == baseline.version_id;
  if (!descends)
    throw Error(ErrorCode::OrphanCandidate, "candidate " + candidate.model.version_id.short_hex() +
                                                " does not descend from baseline " +
                                                baseline.version_id.short_hex());
  if (quorum == 0) throw Error(ErrorCode::InvalidConfig, "quorum must be positive");

  ConsensusRound r;
  r.round_id = next_id_++;
  r.candidate_delta = modelstore::make_delta(baseline, candidate.model);
  r.candidate = std::move(candidate);
  r.candidate.announced_at = now;
  r.baseline = std::move(baseline);
  r.opened_at = now;
  r.deadline = now + window;
  r.quorum = quorum;
  auto [it, _] = rounds_.emplace(r.round_id, std::move(r));
  open_ = it->first;
  return it->second;
}

bool Coordinator::submit_feedback(RoundId id, FeedbackScore candidate_score,
                                  FeedbackScore baseline_score) {
  ConsensusRound& r = round(id);
  if (r.state != RoundState::Open)
    throw Error(ErrorCode::RoundClosed, "round " + std::to_string(id) + " is closed");
  if (candidate_score.robot_id != baseline_score.robot_id)
    throw Error(ErrorCode::MismatchedIds, "paired scores come from different robots");
  if (candidate_score.received_at > r.deadline || baseline_score.received_at > r.deadline)
    throw Error(ErrorCode::LateFeedback, "feedback from " + candidate_score.robot_id +
                                             " arrived after tick " + std::to_string(r.deadline));
  for (const auto& s : r.candidate_scores)
    if (s.robot_id == candidate_score.robot_id)
      throw Error(ErrorCode::DuplicateFeedback, candidate_score.robot_id + " already scored");
  if (candidate_score.model_hash != r.candidate.model.version_id)
    throw Error(ErrorCode::WrongModel, "candidate score names a different model");
  if (baseline_score.model_hash != r.baseline.version_id)
    throw Error(ErrorCode::WrongModel, "baseline score names a different model");
  r.candidate_scores.push_back(std::move(candidate_score));
  r.baseline_scores.push_back(std::move(baseline_score));
  return true;
}

void Coordinator::return_update(RoundId id, ReturnedUpdate update) {
  ConsensusRound& r = round(id);
  if (r.state != RoundState::Open)
    throw Error(ErrorCode::RoundClosed, "round " + std::to_string(id) + " is closed");
  if (update.delta.from_id != r.candidate.model.version_id)
    throw Error(ErrorCode::StaleBase, "returned update is not based on the candidate");
  r.returned_updates.push_back(std::move(update));
}

Decision Coordinator::resolve(RoundId id, Tick now, bool all_reported) {
  ConsensusRound& r = round(id);
  if (r.state != RoundState::Open)
    throw Error(ErrorCode::RoundNotOpen, "round " + std::to_string(id) + " already resolved");
  if (now < r.deadline && !all_reported)
    throw Error(ErrorCode::RoundInProgress, "deadline not reached and feedback outstanding");
  Decision d;
  d.candidate_mean = mean_score(r.candidate_scores);
  d.baseline_mean = mean_score(r.baseline_scores);
  d.candidate_count = r.candidate_scores.size();
  d.quorum = r.quorum;
  d.outcome = decide(d.candidate_mean, d.baseline_mean, d.candidate_count, d.quorum);
  r.state = d.outcome;
  r.decision = d;
  open_.reset();
  return d;
}

const ConsensusRound& Coordinator::round(RoundId id) const {
  auto it = rounds_.find(id);
  if (it == rounds_.end()) throw Error(ErrorCode::RoundNotOpen, "no round " + std::to_string(id));
  return it->second;
}

ConsensusRound& Coordinator::round(RoundId id) {
  auto it = rounds_.find(id);
  if (it == rounds_.end()) throw Error(ErrorCode::RoundNotOpen, "no round " + std::to_string(id));
  return it->second;
}

std::size_t Coordinator::open_count() const {
  std::size_t n = 0;
  for (const auto& [_, r] : rounds_)
    if (r.state == RoundState::Open) ++n;
  return n;
}

// ---------------------------------------------------------------------------
// Network-level lifecycle

ConsensusRound& open_round(Coordinator& coordinator, modelstore::HubNetwork& network,
                           CandidateModel candidate, ModelVersion baseline, Tick window,
                           std::size_t quorum, Tick now) {
  modelstore::Hub& source = network.hub(candidate.source_hub);
  ConsensusRound& r =
      coordinator.open_round(std::move(candidate), std::move(baseline), window, quorum, now);
  auto& repo = source.repository();
  if (repo.head() != r.candidate.model.version_id) repo.commit(r.candidate.model);
  network.publish_update(r.candidate.source_hub, r.candidate_delta,
                         modelstore::AnnouncementKind::Candidate);
  network.deliver_all(now);
  return r;
}

bool submit_feedback(Coordinator& coordinator, RoundId id, FeedbackScore candidate_score,
                     FeedbackScore baseline_score) {
  return coordinator.submit_feedback(id, std::move(candidate_score), std::move(baseline_score));
}

Decision resolve(Coordinator& coordinator, RoundId id, Tick now, bool all_reported) {
  return coordinator.resolve(id, now, all_reported);
}

ModelVersion next_baseline(const ConsensusRound& round, bool fold_destination_updates, Tick now) {
  if (!fold_destination_updates || round.returned_updates.empty()) {
    ModelVersion v = round.candidate.model;
    v.consensual = false;
    return v;
  }
  std::vector<ModelDelta> deltas;
  std::vector<double> weights;
  for (const auto& u : round.returned_updates) {
    deltas.push_back(u.delta);
    weights.push_back(u.weight);
  }
  ModelVersion folded = learner::federated_average(round.candidate.model, deltas, weights, now);
  return ModelVersion::make(std::move(folded.params), std::move(folded.hyperparams),
                            round.baseline.version_id, now);
}

modelstore::Announcement prepare_promotion(ConsensusRound& round, modelstore::Hub& source_hub,
                                           bool fold_destination_updates, Tick now) {
  if (round.state != RoundState::Accepted)
    throw Error(ErrorCode::NotAccepted,
                "round " + std::to_string(round.round_id) + " is " + std::string(to_string(round.state)));
  ModelVersion next = next_baseline(round, fold_destination_updates, now);
  auto& repo = source_hub.repository();
  repo.import_version(next);
  ModelVersion promoted = repo.promote(next.version_id);
  for (const auto& robot : source_hub.subscribers()) source_hub.checkout_to(robot, promoted.version_id);
  round.adopted_delta = modelstore::make_delta(round.baseline, promoted);
  round.promoted = promoted;
  return modelstore::make_announcement(*round.adopted_delta, source_hub.id());
}

ModelVersion promote(Coordinator& coordinator, modelstore::HubNetwork& network, RoundId id,
                     bool fold_destination_updates, Tick now) {
  ConsensusRound& r = coordinator.round(id);
  modelstore::Announcement ann =
      prepare_promotion(r, network.hub(r.candidate.source_hub), fold_destination_updates, now);
  network.publish_update(r.candidate.source_hub, ann.delta, modelstore::AnnouncementKind::Promotion);
  network.deliver_all(now);
  return *r.promoted;
}

void roll_back(modelstore::HubNetwork& network, const ConsensusRound& round) {
  if (round.state == RoundState::Open)
    throw Error(ErrorCode::RoundNotResolved, "round still open");
  if (round.state == RoundState::Accepted)
    throw Error(ErrorCode::InvariantViolation, "accepted rounds are promoted, not rolled back");
  for (const auto& id : network.hub_ids()) network.hub(id).rollback();
}

// ---------------------------------------------------------------------------
// Notarization

namespace {

std::uint8_t decision_byte(RoundState s) {
  switch (s) {
    case RoundState::Accepted: return kDecisionAccepted;
    case RoundState::Rejected: return kDecisionRejected;
    case RoundState::Expired: return kDecisionExpired;
    case RoundState::Open: break;
  }
  throw Error(ErrorCode::RoundNotResolved, "open rounds have no decision");
}

RoundState decision_from_byte(std::uint8_t b) {
  switch (b) {
    case kDecisionAccepted: return RoundState::Accepted;
    case kDecisionRejected: return RoundState::Rejected;
    case kDecisionExpired: return RoundState::Expired;
  }
  throw Error(ErrorCode::CorruptData, "unknown decision byte");
}

}  // namespace

Bytes encode_payload(const ConsensusPayload& payload) {
  CanonicalWriter w;
  w.raw_u32(static_cast<std::uint32_t>(payload.entries.size()));
  for (const auto& e : payload.entries) {
    w.field(e.public_id);
    w.raw_f64(e.candidate_score).raw_f64(e.baseline_score);
  }
  w.raw_u64(payload.quorum);
  w.raw_u8(decision_byte(payload.decision));
  return std::move(w).take();
}

ConsensusPayload decode_payload(ByteView data) {
  CanonicalReader r(data);
  ConsensusPayload p;
  std::uint32_t n = r.raw_u32();
  if (n > r.remaining()) throw Error(ErrorCode::CorruptData, "implausible participant count");
  for (std::uint32_t i = 0; i < n; ++i) {
    PayloadEntry e;
    e.public_id = r.string_field();
    e.candidate_score = r.raw_f64();
    e.baseline_score = r.raw_f64();
    p.entries.push_back(std::move(e));
  }
  p.quorum = r.raw_u64();
  p.decision = decision_from_byte(r.raw_u8());
  r.expect_done();
  return p;
}

ConsensusPayload payload_of(const ConsensusRound& round) {
  ConsensusPayload p;
  for (std::size_t i = 0; i < round.candidate_scores.size(); ++i) {
    p.entries.push_back({round.candidate_scores[i].robot_id, round.candidate_scores[i].score,
                         round.baseline_scores[i].score});
  }
  p.quorum = round.quorum;
  p.decision = round.state;
  return p;
}

RoundState recompute_decision(const ConsensusPayload& payload) {
  std::vector<FeedbackScore> cand, base;
  for (const auto& e : payload.entries) {
    cand.push_back({e.public_id, {}, e.candidate_score, 0});
    base.push_back({e.public_id, {}, e.baseline_score, 0});
  }
  return decide(mean_score(cand), mean_score(base), cand.size(),
                static_cast<std::size_t>(payload.quorum));
}

Digest notarized_update_hash(const ConsensusRound& round) {
  if (round.state == RoundState::Open)
    throw Error(ErrorCode::RoundNotResolved, "round still open");
  if (round.state == RoundState::Accepted) {
    if (!round.adopted_delta)
      throw Error(ErrorCode::RoundNotResolved, "accepted round has not been promoted yet");
    return round.adopted_delta->update_hash;
  }
  return round.candidate_delta.update_hash;
}

ledger::BlockRef notarize(ledger::Ledger& chain, ConsensusRound& round,
                          const crypto::NetworkKey& network_key, const crypto::Identity& signer,
                          Tick broadcast_time) {
  if (round.state == RoundState::Open)
    throw Error(ErrorCode::RoundNotResolved, "cannot notarize an open round");
  if (signer.id() != round.candidate.source_robot)
    throw Error(ErrorCode::WrongSigner, "round must be notarized by its source robot " +
                                            round.candidate.source_robot);
  if (round.notarization)
    throw Error(ErrorCode::InvariantViolation, "round already notarized");
  Digest update_hash = notarized_update_hash(round);
  Bytes ciphertext = crypto::encrypt_payload(encode_payload(payload_of(round)), network_key);
  auto tx = ledger::ModelConsensusTx::make(broadcast_time, update_hash, std::move(ciphertext), signer);
  round.notarization = chain.append_transaction(std::move(tx), signer);
  return *round.notarization;
}

}  // namespace robochain::consensus
