#include "flexsim/event_log.hpp"

#include <algorithm>
#include <ostream>
#include <sstream>

namespace flexsim {

std::uint64_t EventLog::record(SimTime time_us, Actor actor, std::string action,
                               std::string detail, std::uint64_t parent) {
  SimEvent ev;
  ev.id = next_id_++;
  ev.time_us = time_us;
  ev.actor = actor;
  ev.action = std::move(action);
  ev.detail = std::move(detail);
  ev.parent = parent;
  events_.push_back(std::move(ev));
  return events_.back().id;
}

void EventLog::clear() {
  events_.clear();
  next_id_ = 1;
}

std::vector<SimEvent> EventLog::ordered() const {
  std::vector<SimEvent> out = events_;
  std::stable_sort(out.begin(), out.end(), [](const SimEvent& a, const SimEvent& b) {
    if (a.time_us != b.time_us) return a.time_us < b.time_us;
    return a.id < b.id;
  });
  return out;
}

namespace {

void append_record_line(std::string& line, const SimEvent& e, bool json) {
  std::ostringstream os;
  if (json) {
    os << "{\"id\":" << e.id << ",\"time_us\":" << e.time_us << ",\"actor\":\""
       << actor_name(e.actor) << "\",\"action\":\"" << e.action
       << "\",\"detail\":\"" << e.detail << "\",\"parent\":" << e.parent << "}";
  } else {
    os << e.id << ',' << e.time_us << ',' << actor_name(e.actor) << ','
       << e.action << ",\"" << e.detail << "\"," << e.parent;
  }
  line = os.str();
}

}  // namespace

crypto::Digest256 EventLog::digest() const {
  crypto::Sha256Stream h;
  std::string line;
  for (const SimEvent& e : ordered()) {
    append_record_line(line, e, /*json=*/false);
    line.push_back('\n');
    h.update(line.data(), line.size());
  }
  return h.finish();
}

void EventLog::write_jsonl(std::ostream& os) const {
  std::string line;
  for (const SimEvent& e : ordered()) {
    append_record_line(line, e, /*json=*/true);
    os << line << '\n';
  }
}

void EventLog::write_csv(std::ostream& os) const {
  os << "id,time_us,actor,action,detail,parent\n";
  std::string line;
  for (const SimEvent& e : ordered()) {
    append_record_line(line, e, /*json=*/false);
    os << line << '\n';
  }
}

}  // namespace flexsim
