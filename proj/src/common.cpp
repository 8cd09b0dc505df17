#include "flexsim/common.hpp"

namespace flexsim {

const char* actor_name(Actor a) {
  switch (a) {
    case Actor::NormalKernel: return "normal_kernel";
    case Actor::NormalApp: return "normal_app";
    case Actor::SecureWorld: return "secure_world";
    case Actor::Monitor: return "monitor";
  }
  return "unknown";
}

const char* status_code_name(StatusCode c) {
  switch (c) {
    case StatusCode::Ok: return "Ok";
    case StatusCode::InvalidPage: return "InvalidPage";
    case StatusCode::UnknownDevice: return "UnknownDevice";
    case StatusCode::NotMonitor: return "NotMonitor";
    case StatusCode::InvariantViolation: return "InvariantViolation";
    case StatusCode::NotPinned: return "NotPinned";
    case StatusCode::AlreadyProtected: return "AlreadyProtected";
    case StatusCode::NotProtected: return "NotProtected";
    case StatusCode::NotLazy: return "NotLazy";
    case StatusCode::TaskInFlight: return "TaskInFlight";
    case StatusCode::ResourcesHeld: return "ResourcesHeld";
    case StatusCode::IntegrityViolation: return "IntegrityViolation";
    case StatusCode::OutOfMemory: return "OutOfMemory";
    case StatusCode::Unsatisfiable: return "Unsatisfiable";
    case StatusCode::Insufficient: return "Insufficient";
    case StatusCode::DigestMismatch: return "DigestMismatch";
    case StatusCode::SealVerifyFailure: return "SealVerifyFailure";
    case StatusCode::ReplayDetected: return "ReplayDetected";
    case StatusCode::SealFailure: return "SealFailure";
    case StatusCode::BadSignature: return "BadSignature";
    case StatusCode::AttestationFailure: return "AttestationFailure";
    case StatusCode::Tampered: return "Tampered";
    case StatusCode::ConfigError: return "ConfigError";
    case StatusCode::IoError: return "IoError";
  }
  return "unknown";
}

std::string Status::to_string() const {
  std::string s = status_code_name(code);
  if (!message.empty()) {
    s += ": ";
    s += message;
  }
  return s;
}

}  // namespace flexsim
