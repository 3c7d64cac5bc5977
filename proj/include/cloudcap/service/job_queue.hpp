#pragma once

#include <condition_variable>
#include <deque>
#include <functional>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace cloudcap::service {

/// Fixed pool of workers draining a FIFO of capture ids. An id that is
/// already pending or running is not queued again, so no two jobs for the
/// same capture ever overlap.
class JobQueue {
 public:
  using Handler = std::function<void(const std::string& capture_id)>;

  JobQueue(unsigned workers, Handler handler);
  ~JobQueue();
  JobQueue(const JobQueue&) = delete;
  JobQueue& operator=(const JobQueue&) = delete;

  /// Returns false if the id was already pending or in flight.
  bool enqueue(const std::string& capture_id);

  /// Stops accepting work, lets running jobs finish and joins the workers.
  /// Jobs still pending are dropped.
  void stop();

  /// Blocks until nothing is pending or in flight.
  void wait_idle();

  std::size_t pending() const;
  std::vector<std::string> in_flight() const;
  unsigned workers() const { return static_cast<unsigned>(threads_.size()); }

 private:
  void run();

  Handler handler_;
  mutable std::mutex mutex_;
  std::condition_variable work_cv_;
  std::condition_variable idle_cv_;
  std::deque<std::string> pending_;
  std::set<std::string> in_flight_;
  bool stopping_ = false;
  std::vector<std::thread> threads_;
};

}  // namespace cloudcap::service
