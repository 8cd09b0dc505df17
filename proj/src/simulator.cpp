#include "flexsim/simulator.hpp"

#include "flexsim/rng.hpp"

namespace flexsim {

Simulator::Simulator(SimulatorConfig cfg)
    : cfg_(cfg),
      engine_(cfg.enable_log ? &log_ : nullptr),
      mem_(cfg.layout),
      monitor_(mem_, cfg.timing, derive_seed(cfg.seed, "monitor-image")),
      daemon_(mem_, monitor_),
      memmgr_(&mem_, &monitor_, &daemon_, cfg.memcfg),
      ch_alloc_(engine_, "alloc"),
      ch_io_(engine_, "io"),
      ch_decrypt_(engine_, "decrypt"),
      ch_compute_(engine_, "compute") {
  crypto::init();
  cfg_.timing.validate();
  daemon_.set_reclaim_delegate(&memmgr_);

  rt_.engine = &engine_;
  rt_.log = cfg_.enable_log ? &log_ : nullptr;
  rt_.mem = &mem_;
  rt_.monitor = &monitor_;
  rt_.daemon = &daemon_;
  rt_.memmgr = &memmgr_;
  rt_.timing = cfg_.timing;
  rt_.ch_alloc = &ch_alloc_;
  rt_.ch_io = &ch_io_;
  rt_.ch_decrypt = &ch_decrypt_;
  rt_.ch_compute = &ch_compute_;

  if (cfg_.start_frozen) {
    OpCtx ctx = rt_.ctx_at_now();
    monitor_.freeze(mem_, ctx);
  }
}

PrefillResult Simulator::run_prefill_blocking(const ModelManifest& model,
                                              const PrefillParams& params) {
  PrefillResult result;
  bool got = false;
  Pipeline pipeline(rt_);
  pipeline.start_prefill(model, params, [&](PrefillResult r) {
    result = std::move(r);
    got = true;
  });
  engine_.run_until_quiescent();
  if (!got) {
    result.status = Status::error(StatusCode::ConfigError, "prefill never completed");
  }
  return result;
}

DecodeResult Simulator::run_decode_blocking(const ModelManifest& model,
                                            const DecodeParams& params) {
  DecodeResult result;
  bool got = false;
  Pipeline pipeline(rt_);
  pipeline.start_decode(model, params, [&](DecodeResult r) {
    result = std::move(r);
    got = true;
  });
  engine_.run_until_quiescent();
  if (!got) {
    result.status = Status::error(StatusCode::ConfigError, "decode never completed");
  }
  return result;
}

}  // namespace flexsim
