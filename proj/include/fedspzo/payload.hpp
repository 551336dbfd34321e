#pragma once

// Client upload: per-step projected-gradient scalars, plus either the seeds
// used (with_seeds) or a single root seed from which the server regenerates
// them (scalars_only).
//
// Wire format, all little-endian:
//   "FSPB" | version u32 | client_id u32 | round_id u32 | mode u8 | K u32 |
//   P1 u32 | P2 u32 | [root_seed u64, scalars_only only]
//   K x ( g1 f64 | g2 f64 | [S1: P1 x u64 | S2: P2 x u64, with_seeds only] )

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedspzo/rng.hpp"

namespace fedspzo {

enum class PayloadMode : std::uint8_t { with_seeds = 0, scalars_only = 1 };

std::string to_string(PayloadMode m);
PayloadMode payload_mode_from_string(const std::string& s);

inline constexpr std::uint32_t kPayloadVersion = 1;

struct StepRecord {
  double g1 = 0.0;
  double g2 = 0.0;
  std::vector<Seed> s1;  // empty in scalars_only mode
  std::vector<Seed> s2;

  bool operator==(const StepRecord&) const = default;
};

struct ClientPayload {
  std::uint32_t client_id = 0;
  std::uint32_t round_id = 0;
  PayloadMode mode = PayloadMode::with_seeds;
  std::uint32_t p1 = 0;
  std::uint32_t p2 = 0;
  std::optional<Seed> root_seed;  // required in scalars_only mode
  std::vector<StepRecord> steps;

  std::size_t k() const { return steps.size(); }

  // ContractError on a malformed payload: seed arrays of the wrong length,
  // seeds present in scalars_only mode, missing root seed, non-finite g.
  void validate() const;

  bool operator==(const ClientPayload&) const = default;
};

std::vector<std::uint8_t> encode_payload(const ClientPayload& payload);
ClientPayload decode_payload(std::span<const std::uint8_t> bytes);

// Field-by-field dump with hex offsets, for `fedspzo inspect-payload`.
std::string describe_payload(std::span<const std::uint8_t> bytes);

}  // namespace fedspzo
