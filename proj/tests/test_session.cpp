#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "flexsim/rng.hpp"
#include "flexsim/session.hpp"

using namespace flexsim;

namespace {

struct Fixture {
  VendorIdentity vendor = make_vendor(11);
  crypto::AeadKey provision_key{};
  FrameworkBinary binary;
  PhysicalMemory mem{MemoryLayout::tiny()};
  EventLog log;

  Fixture() {
    provision_key.fill(0x5a);
    binary = build_framework_binary(vendor, 22, /*code_bytes=*/3000, provision_key);
  }

  OpCtx ctx() {
    OpCtx c;
    c.log = &log;
    return c;
  }

  SecureFramework boot() {
    OpCtx c = ctx();
    auto fw = SecureFramework::secure_boot_load(mem, binary, vendor.keypair.pk,
                                                provision_key, c);
    REQUIRE(fw.ok());
    return std::move(fw).take();
  }
};

SecureFramework::RunFn echo_runner() {
  return [](const InferenceRequest& req, std::string& model_id) -> Result<crypto::Bytes> {
    model_id = "echo-" + std::to_string(req.model_index);
    crypto::Bytes out = req.prompt;
    out.push_back(0xEE);
    return out;
  };
}

}  // namespace

TEST_CASE("secure boot accepts a vendor-signed binary and rejects any flip") {
  Fixture f;
  (void)f.boot();

  // One flipped byte anywhere in the image fails the signature.
  for (std::size_t probe : {std::size_t{0}, f.binary.ciphertext.size() / 2,
                            f.binary.ciphertext.size() - 1}) {
    Fixture g;
    g.binary.ciphertext[probe] ^= 0x01;
    OpCtx c = g.ctx();
    auto fw = SecureFramework::secure_boot_load(g.mem, g.binary, g.vendor.keypair.pk,
                                                g.provision_key, c);
    CHECK(fw.code() == StatusCode::BadSignature);
  }

  // A binary larger than the static secure region cannot instantiate.
  Fixture h;
  h.binary = build_framework_binary(h.vendor, 22, /*code_bytes=*/3 * 4096, h.provision_key);
  OpCtx c = h.ctx();
  auto fw = SecureFramework::secure_boot_load(h.mem, h.binary, h.vendor.keypair.pk,
                                              h.provision_key, c);
  CHECK(fw.code() == StatusCode::OutOfMemory);
}

TEST_CASE("honest session attests; tampered measurement does not") {
  Fixture f;
  SecureFramework fw = f.boot();
  OpCtx c = f.ctx();

  SessionClient client(77, f.vendor.keypair.pk);
  auto opening = fw.open_session(client.kx_pk(), c);
  REQUIRE(opening.ok());
  CHECK(client.accept_opening(opening.value(), fw.binary_digest()).ok());

  // Altered digest in the evidence chain fails attestation.
  SecureFramework fw2 = f.boot();
  fw2.tamper_binary_digest();
  SessionClient client2(78, f.vendor.keypair.pk);
  auto opening2 = fw2.open_session(client2.kx_pk(), c);
  REQUIRE(opening2.ok());
  CHECK(client2.accept_opening(opening2.value()).code ==
        StatusCode::AttestationFailure);

  // Distinct sessions derive distinct keys.
  SessionClient client3(79, f.vendor.keypair.pk);
  auto opening3 = fw.open_session(client3.kx_pk(), c);
  REQUIRE(opening3.ok());
  REQUIRE(client3.accept_opening(opening3.value()).ok());
  CHECK(client.keys().tx != client3.keys().tx);
}

TEST_CASE("request-response round trip verifies end to end") {
  Fixture f;
  SecureFramework fw = f.boot();
  OpCtx c = f.ctx();
  SessionClient client(101, f.vendor.keypair.pk);
  auto opening = fw.open_session(client.kx_pk(), c);
  REQUIRE(opening.ok());
  REQUIRE(client.accept_opening(opening.value()).ok());

  InferenceRequest req;
  req.model_index = 3;
  req.prompt_tokens = 16;
  req.new_tokens = 4;
  req.prompt = {10, 20, 30};
  auto env = client.seal_request(req);
  REQUIRE(env.ok());
  auto reply = fw.invoke(env.value(), echo_runner(), c);
  REQUIRE(reply.ok());

  auto output = client.verify_and_open(env.value(), reply.value(), fw.sign_pk());
  REQUIRE(output.ok());
  CHECK(output.value() == crypto::Bytes{10, 20, 30, 0xEE});
  CHECK(reply.value().proof.model_id == "echo-3");
}

TEST_CASE("replayed envelopes are rejected") {
  Fixture f;
  SecureFramework fw = f.boot();
  OpCtx c = f.ctx();
  SessionClient client(102, f.vendor.keypair.pk);
  auto opening = fw.open_session(client.kx_pk(), c);
  REQUIRE(opening.ok());
  REQUIRE(client.accept_opening(opening.value()).ok());

  InferenceRequest req;
  req.prompt = {1};
  auto env = client.seal_request(req);
  REQUIRE(env.ok());
  REQUIRE(fw.invoke(env.value(), echo_runner(), c).ok());
  // Same envelope again, and a stale counter.
  CHECK(fw.invoke(env.value(), echo_runner(), c).code() == StatusCode::ReplayDetected);
  RequestEnvelope stale = env.value();
  stale.counter = 0;
  CHECK(fw.invoke(stale, echo_runner(), c).code() == StatusCode::ReplayDetected);
}

TEST_CASE("every single-bit corruption of output or proof is caught") {
  Fixture f;
  SecureFramework fw = f.boot();
  OpCtx c = f.ctx();
  SessionClient client(103, f.vendor.keypair.pk);
  auto opening = fw.open_session(client.kx_pk(), c);
  REQUIRE(opening.ok());
  REQUIRE(client.accept_opening(opening.value()).ok());

  InferenceRequest req;
  req.prompt = {42, 43, 44, 45};
  auto env = client.seal_request(req);
  REQUIRE(env.ok());
  auto reply = fw.invoke(env.value(), echo_runner(), c);
  REQUIRE(reply.ok());

  // Sealed output bit flips: AEAD rejects them all.
  const crypto::Bytes& sealed = reply.value().sealed_output;
  for (std::size_t byte = 0; byte < sealed.size(); ++byte) {
    for (int bit = 0; bit < 8; ++bit) {
      InvokeReply bad = reply.value();
      bad.sealed_output[byte] ^= static_cast<std::uint8_t>(1u << bit);
      auto out = client.verify_and_open(env.value(), bad, fw.sign_pk());
      REQUIRE_FALSE(out.ok());
    }
  }

  // Proof bit flips over the canonical serialization: parse or verify fails.
  crypto::Bytes wire = reply.value().proof.serialize();
  auto output = client.open_output(env.value(), reply.value().sealed_output);
  REQUIRE(output.ok());
  for (std::size_t byte = 0; byte < wire.size(); ++byte) {
    for (int bit = 0; bit < 8; ++bit) {
      crypto::Bytes bad = wire;
      bad[byte] ^= static_cast<std::uint8_t>(1u << bit);
      auto parsed = ResponseProof::parse(bad);
      if (!parsed.ok()) continue;  // malformed wire counts as rejected
      CHECK(verify_response(output.value(), parsed.value(), fw.sign_pk(), {}) ==
            VerifyResult::Tampered);
    }
  }

  // Forged proof without the private key.
  ResponseProof forged = reply.value().proof;
  forged.output_hash = crypto::sha256(crypto::Bytes{9, 9, 9});
  auto honest_sig_kp = crypto::sign_keypair_from_seed(std::vector<std::uint8_t>(32, 1));
  forged.signature = crypto::sign(honest_sig_kp.sk, crypto::Bytes{1});
  CHECK(verify_response(output.value(), forged, fw.sign_pk(), {}) == VerifyResult::Tampered);
}

TEST_CASE("proof serialization round trips canonically") {
  ResponseProof p;
  p.model_id = "qwen3-8b";
  p.request_hash.fill(0x11);
  p.output_hash.fill(0x22);
  p.signature.fill(0x33);
  crypto::Bytes wire = p.serialize();
  auto q = ResponseProof::parse(wire);
  REQUIRE(q.ok());
  CHECK(q.value().model_id == p.model_id);
  CHECK(q.value().request_hash == p.request_hash);
  CHECK(q.value().output_hash == p.output_hash);
  CHECK(q.value().signature == p.signature);
  CHECK(q.value().serialize() == wire);
}

TEST_CASE("no key material ever lands in normal-world pages") {
  Fixture f;
  SecureFramework fw = f.boot();
  OpCtx c = f.ctx();
  SessionClient client(104, f.vendor.keypair.pk);
  auto opening = fw.open_session(client.kx_pk(), c);
  REQUIRE(opening.ok());
  REQUIRE(client.accept_opening(opening.value()).ok());
  InferenceRequest req;
  req.prompt = {5};
  auto env = client.seal_request(req);
  REQUIRE(env.ok());
  REQUIRE(fw.invoke(env.value(), echo_runner(), c).ok());

  // Scan every unprotected or lazily reclaimed frame for session key bytes.
  auto contains = [](const PageBytes& hay, const std::uint8_t* needle, std::size_t n) {
    return std::search(hay.begin(), hay.end(), needle, needle + n) != hay.end();
  };
  for (std::uint32_t i = 0; i < f.mem.total_frames(); ++i) {
    PageState st = f.mem.state(PageId{i});
    if (st != PageState::Unprotected && st != PageState::LazyReclaim) continue;
    PageBytes bytes = f.mem.content(PageId{i}).materialize();
    CHECK_FALSE(contains(bytes, client.keys().tx.data(), 16));
    CHECK_FALSE(contains(bytes, client.keys().rx.data(), 16));
  }
}
