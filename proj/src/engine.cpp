#include "flexsim/engine.hpp"

#include <utility>

namespace flexsim {

std::uint64_t Engine::at(SimTime time_us, EventFn fn) {
  if (time_us < now_) {
    throw std::logic_error("Engine::at: scheduling into the past");
  }
  std::uint64_t seq = next_seq_++;
  queue_.push(Scheduled{time_us, seq, std::move(fn)});
  return seq;
}

std::uint64_t Engine::make_completion(std::string label) {
  std::uint64_t token = next_token_++;
  completions_.emplace(token, CompletionState{std::move(label), false, {}});
  return token;
}

void Engine::on_complete(std::uint64_t token, EventFn fn) {
  auto it = completions_.find(token);
  if (it == completions_.end()) {
    throw std::logic_error("Engine::on_complete: unknown completion token");
  }
  if (it->second.done) {
    at(now_, std::move(fn));
  } else {
    it->second.waiters.push_back(std::move(fn));
  }
}

void Engine::complete(std::uint64_t token) {
  auto it = completions_.find(token);
  if (it == completions_.end()) {
    throw std::logic_error("Engine::complete: unknown completion token");
  }
  if (it->second.done) return;
  it->second.done = true;
  for (auto& fn : it->second.waiters) {
    at(now_, std::move(fn));
  }
  it->second.waiters.clear();
}

bool Engine::completed(std::uint64_t token) const {
  auto it = completions_.find(token);
  return it != completions_.end() && it->second.done;
}

void Engine::run_until_quiescent() {
  if (running_) {
    throw std::logic_error("Engine::run_until_quiescent: already running");
  }
  running_ = true;
  while (!queue_.empty()) {
    Scheduled next = queue_.top();
    queue_.pop();
    now_ = next.time;
    next.fn();
  }
  running_ = false;
  for (const auto& [token, state] : completions_) {
    if (!state.done && !state.waiters.empty()) {
      throw CycleDetected("event dependency never completed: " + state.label);
    }
  }
}

void Channel::submit(WorkFn work, DoneFn done) {
  queue_.push_back(Job{std::move(work), std::move(done)});
  if (!busy_) start_next();
}

void Channel::start_next() {
  if (queue_.empty()) {
    busy_ = false;
    return;
  }
  busy_ = true;
  Job job = std::move(queue_.front());
  queue_.pop_front();
  SimTime start_at = std::max(engine_->now(), free_at_);
  engine_->at(start_at, [this, job = std::move(job)]() mutable {
    SimTime start = engine_->now();
    SimDuration dur = job.work ? job.work() : 0;
    SimTime end = start + dur;
    free_at_ = end;
    engine_->at(end, [this, done = std::move(job.done), start, end]() {
      if (done) done(start, end);
      start_next();
    });
  });
}

}  // namespace flexsim
