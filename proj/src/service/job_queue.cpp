#include "cloudcap/service/job_queue.hpp"

#include <algorithm>
#include <stdexcept>

namespace cloudcap::service {

JobQueue::JobQueue(unsigned workers, Handler handler) : handler_(std::move(handler)) {
  if (workers == 0) throw std::invalid_argument("job queue needs at least one worker");
  threads_.reserve(workers);
  for (unsigned i = 0; i < workers; ++i) threads_.emplace_back([this] { run(); });
}

JobQueue::~JobQueue() { stop(); }

bool JobQueue::enqueue(const std::string& capture_id) {
  {
    std::lock_guard lock(mutex_);
    if (stopping_) return false;
    if (in_flight_.count(capture_id) != 0) return false;
    if (std::find(pending_.begin(), pending_.end(), capture_id) != pending_.end()) return false;
    pending_.push_back(capture_id);
  }
  work_cv_.notify_one();
  return true;
}

void JobQueue::stop() {
  {
    std::lock_guard lock(mutex_);
    if (stopping_ && threads_.empty()) return;
    stopping_ = true;
    pending_.clear();
  }
  work_cv_.notify_all();
  for (auto& t : threads_) {
    if (t.joinable()) t.join();
  }
  threads_.clear();
  idle_cv_.notify_all();
}

void JobQueue::wait_idle() {
  std::unique_lock lock(mutex_);
  idle_cv_.wait(lock, [this] { return pending_.empty() && in_flight_.empty(); });
}

std::size_t JobQueue::pending() const {
  std::lock_guard lock(mutex_);
  return pending_.size();
}

std::vector<std::string> JobQueue::in_flight() const {
  std::lock_guard lock(mutex_);
  return {in_flight_.begin(), in_flight_.end()};
}

void JobQueue::run() {
  for (;;) {
    std::string id;
    {
      std::unique_lock lock(mutex_);
      work_cv_.wait(lock, [this] { return stopping_ || !pending_.empty(); });
      if (stopping_) return;
      id = std::move(pending_.front());
      pending_.pop_front();
      in_flight_.insert(id);
    }
    try {
      handler_(id);
    } catch (...) {
      // The handler records its own failures; a stray exception must not
      // take the worker down.
    }
    {
      std::lock_guard lock(mutex_);
      in_flight_.erase(id);
      if (pending_.empty() && in_flight_.empty()) idle_cv_.notify_all();
    }
  }
}

}  // namespace cloudcap::service
