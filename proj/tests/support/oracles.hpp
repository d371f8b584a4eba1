#pragma once

// Independent reference computations. Nothing here calls into the code under
// test except for plain data types.

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "robochain/consensus.hpp"
#include "robochain/ledger.hpp"
#include "robochain/learner.hpp"
#include "robochain/opal.hpp"

namespace oracle {

/// Correctly rounded sum via 4096-bit MPFR accumulation.
double exact_sum(std::span<const double> xs);

/// Sign of (sum(a) - sum(b)), computed exactly.
int compare_sums(std::span<const double> a, std::span<const double> b);

/// Block hash from the documented layout, hashed with libsodium directly.
robochain::Digest block_hash(const robochain::ledger::Block& b);

/// Byte offsets [begin, end) of each record in an encoded ledger file.
std::vector<std::pair<std::size_t, std::size_t>> record_spans(std::span<const std::uint8_t> file);

struct Pooled {
  std::uint64_t count = 0;
  double mean = 0.0;      // correctly rounded sum / count
  double variance = 0.0;  // population variance, high precision
  double proportion = 0.0;
};

/// Brute-force aggregate of `target` over every record matching all conditions.
Pooled pooled(const std::vector<robochain::opal::PatientRecord>& records,
              const std::vector<robochain::opal::Condition>& filter, const std::string& target,
              double threshold);

/// Independent filter evaluation (does not use opal::matches).
bool record_matches(const robochain::opal::PatientRecord& r, const robochain::opal::Condition& c);
std::optional<double> record_field(const robochain::opal::PatientRecord& r, const std::string& field);

/// Strict-mean and quorum rule over recorded scores.
robochain::consensus::RoundState decide(std::span<const double> candidate,
                                        std::span<const double> baseline, std::size_t quorum);

/// Loss of a logistic/identity linear model by a naive per-sample loop.
double naive_mse(std::span<const double> params, const robochain::learner::Batch& batch,
                 bool identity_activation = false);

/// Central finite-difference gradient of naive_mse.
std::vector<double> numeric_gradient(std::span<const double> params,
                                     const robochain::learner::Batch& batch, double h = 1e-6);

/// Random synthetic database for the privacy and federation suites.
std::vector<robochain::opal::PatientRecord> random_records(std::mt19937_64& rng, std::size_t n,
                                                           const std::string& party);

}  // namespace oracle
