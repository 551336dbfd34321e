#include "fedspzo/payload.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "fedspzo/byte_io.hpp"
#include "fedspzo/errors.hpp"

namespace fedspzo {

std::string to_string(PayloadMode m) {
  return m == PayloadMode::with_seeds ? "with_seeds" : "scalars_only";
}

PayloadMode payload_mode_from_string(const std::string& s) {
  if (s == "with_seeds") return PayloadMode::with_seeds;
  if (s == "scalars_only") return PayloadMode::scalars_only;
  throw ConfigError("unknown payload mode '" + s + "' (expected with_seeds or scalars_only)");
}

void ClientPayload::validate() const {
  if (mode == PayloadMode::scalars_only && !root_seed)
    throw ContractError("scalars_only payload carries no root seed");
  if (mode == PayloadMode::with_seeds && root_seed)
    throw ContractError("with_seeds payload must not carry a root seed");
  for (std::size_t k = 0; k < steps.size(); ++k) {
    const StepRecord& r = steps[k];
    if (!std::isfinite(r.g1) || !std::isfinite(r.g2))
      throw ContractError("step " + std::to_string(k) + ": non-finite projected gradient");
    const bool seeded = mode == PayloadMode::with_seeds;
    if (r.s1.size() != (seeded ? p1 : 0) || r.s2.size() != (seeded ? p2 : 0))
      throw ContractError("step " + std::to_string(k) + ": seed arrays do not match mode " +
                          to_string(mode) + " with P1=" + std::to_string(p1) +
                          ", P2=" + std::to_string(p2));
  }
}

std::vector<std::uint8_t> encode_payload(const ClientPayload& p) {
  p.validate();
  std::vector<std::uint8_t> out;
  bytes::put_magic(out, "FSPB");
  bytes::put_u32(out, kPayloadVersion);
  bytes::put_u32(out, p.client_id);
  bytes::put_u32(out, p.round_id);
  bytes::put_u8(out, static_cast<std::uint8_t>(p.mode));
  bytes::put_u32(out, static_cast<std::uint32_t>(p.steps.size()));
  bytes::put_u32(out, p.p1);
  bytes::put_u32(out, p.p2);
  if (p.mode == PayloadMode::scalars_only) bytes::put_u64(out, *p.root_seed);
  for (const StepRecord& r : p.steps) {
    bytes::put_f64(out, r.g1);
    bytes::put_f64(out, r.g2);
    for (Seed s : r.s1) bytes::put_u64(out, s);
    for (Seed s : r.s2) bytes::put_u64(out, s);
  }
  return out;
}

ClientPayload decode_payload(std::span<const std::uint8_t> data) {
  bytes::Reader in(data);
  in.expect_magic("FSPB");
  const std::uint32_t version = in.u32();
  if (version != kPayloadVersion)
    throw FormatError("unsupported payload version " + std::to_string(version));
  ClientPayload p;
  p.client_id = in.u32();
  p.round_id = in.u32();
  const std::uint8_t mode = in.u8();
  if (mode > 1) throw FormatError("bad payload mode " + std::to_string(mode));
  p.mode = static_cast<PayloadMode>(mode);
  const std::uint32_t k = in.u32();
  p.p1 = in.u32();
  p.p2 = in.u32();
  if (p.mode == PayloadMode::scalars_only) p.root_seed = in.u64();
  const bool seeded = p.mode == PayloadMode::with_seeds;
  const std::size_t record = 16 + (seeded ? 8 * (std::size_t{p.p1} + p.p2) : 0);
  if (in.remaining() != record * k)
    throw FormatError("payload body is " + std::to_string(in.remaining()) + " bytes, expected " +
                      std::to_string(record * k));
  p.steps.resize(k);
  for (StepRecord& r : p.steps) {
    r.g1 = in.f64();
    r.g2 = in.f64();
    if (seeded) {
      r.s1.resize(p.p1);
      r.s2.resize(p.p2);
      for (Seed& s : r.s1) s = in.u64();
      for (Seed& s : r.s2) s = in.u64();
    }
  }
  p.validate();
  return p;
}

namespace {

std::string hex_bytes(std::span<const std::uint8_t> data, std::size_t from, std::size_t n) {
  std::string out;
  char buf[4];
  for (std::size_t i = from; i < from + n && i < data.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%02x", data[i]);
    if (!out.empty()) out += ' ';
    out += buf;
  }
  return out;
}

}  // namespace

std::string describe_payload(std::span<const std::uint8_t> data) {
  const ClientPayload p = decode_payload(data);
  std::ostringstream os;
  std::size_t off = 0;
  auto field = [&](const char* name, std::size_t width, const std::string& value) {
    char head[48];
    std::snprintf(head, sizeof head, "%06zx  %-10s ", off, name);
    os << head << value << "  [" << hex_bytes(data, off, width) << "]\n";
    off += width;
  };
  field("magic", 4, "FSPB");
  field("version", 4, std::to_string(kPayloadVersion));
  field("client_id", 4, std::to_string(p.client_id));
  field("round_id", 4, std::to_string(p.round_id));
  field("mode", 1, to_string(p.mode));
  field("K", 4, std::to_string(p.k()));
  field("P1", 4, std::to_string(p.p1));
  field("P2", 4, std::to_string(p.p2));
  if (p.root_seed) field("root_seed", 8, std::to_string(*p.root_seed));
  for (std::size_t k = 0; k < p.steps.size(); ++k) {
    const StepRecord& r = p.steps[k];
    std::ostringstream g;
    g.precision(17);
    g << "step " << k << " g1=" << r.g1;
    field("g1", 8, g.str());
    g.str("");
    g << "step " << k << " g2=" << r.g2;
    field("g2", 8, g.str());
    for (std::size_t i = 0; i < r.s1.size(); ++i) field("s1", 8, std::to_string(r.s1[i]));
    for (std::size_t i = 0; i < r.s2.size(); ++i) field("s2", 8, std::to_string(r.s2[i]));
  }
  os << "total " << data.size() << " bytes\n";
  return os.str();
}

}  // namespace fedspzo
