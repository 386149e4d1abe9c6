#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "eyecue/annotation.hpp"
#include "eyecue/dataset.hpp"

namespace httplib {
class Server;
}

namespace eyecue {

struct ApiRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct ApiResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// HTTP labeling API over a read-only manifest and an append-only label log.
/// Requests can be dispatched directly through handle() or served over HTTP.
class LabelingService {
 public:
  LabelingService(std::vector<ClipRecord> clips, std::filesystem::path frames_dir, std::filesystem::path log_path,
                  std::vector<ProtocolRow> protocol, DensityMapSpec density = {});
  ~LabelingService();

  ApiResponse handle(const ApiRequest& request);

  /// Blocks until stop(). Port 0 picks a free port; bound_port() reports it.
  void listen(const std::string& host, int port);
  /// Binds without blocking; call run() afterwards to serve.
  int bind(const std::string& host, int port);
  void run();
  void stop();
  int bound_port() const { return port_; }

  const AnnotationStore& store() const { return store_; }

 private:
  ApiResponse list_clips(const ApiRequest& r);
  ApiResponse clip_detail(const std::string& id, const ApiRequest& r);
  ApiResponse frame_image(const std::string& id, const std::string& t, const ApiRequest& r);
  ApiResponse post_label(const std::string& id, const ApiRequest& r);
  nlohmann::json label_state(const std::string& clip_id, const std::string& viewer) const;
  const DensityMap& video_map(const std::string& video_id);
  void install_routes();

  std::filesystem::path frames_dir_;
  DensityMapSpec density_;
  AnnotationStore store_;
  std::map<std::string, DensityMap> video_maps_;
  std::mutex video_maps_mutex_;
  std::unique_ptr<httplib::Server> server_;
  int port_ = 0;
};

}  // namespace eyecue
