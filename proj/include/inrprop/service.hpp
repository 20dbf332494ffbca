#pragma once

// HTTP front end: volume upload, asynchronous fit jobs, propagation and
// interactive KDE re-thresholding. Endpoints are listed in docs/FORMATS.md.

#include <memory>
#include <string>

#include <json.hpp>

namespace inrprop {

struct ServiceOptions {
  std::string host = "127.0.0.1";
  /// 0 picks a free port.
  int port = 8080;
  /// Job workers. Fits of one video never run concurrently.
  int workers = 1;
};

enum class JobKind { fit_features, fit_flow };
enum class JobState { queued, running, done, failed };

struct JobRecord {
  std::string id;
  JobKind kind = JobKind::fit_features;
  JobState state = JobState::queued;
  double progress = 0.0;
  std::string result_ref;
  std::string error;  ///< empty unless failed
  std::string stage;  ///< stage tag of the failure
};

std::string to_string(JobKind k);
std::string to_string(JobState s);
nlohmann::json to_json(const JobRecord& r);

class Service {
 public:
  explicit Service(ServiceOptions opts);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds the listening socket and returns the port.
  int bind();
  /// Serves until stop(). Binds first if needed.
  void run();
  /// run() on a background thread; returns once the server accepts requests.
  void start();
  /// Stops the listener, cancels running fits and joins every worker.
  void stop();
  int port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace inrprop
