#pragma once

// HTTP JSON service: asynchronous decomposition jobs plus interactive
// recoloring against cached layer sets.

#include <httplib.h>

#include <condition_variable>
#include <deque>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "chromalayer/image_io.hpp"
#include "chromalayer/layers.hpp"
#include "chromalayer/pipeline.hpp"

namespace chromalayer {

struct ServiceOptions {
  std::size_t cache_capacity = 8;
  DecomposeOptions defaults;
};

/// Reads decomposition settings from a JSON object, starting from `base`.
/// Unknown keys are ignored.
inline DecomposeOptions decompose_options_from_json(const nlohmann::json& j, DecomposeOptions base = {}) {
  if (!j.is_object()) throw InvalidArgument("params must be a JSON object");
  auto get_size = [&](const char* key, std::size_t& dst) {
    if (!j.contains(key)) return;
    const long long v = j[key].get<long long>();
    if (v < 0) throw InvalidArgument(std::string(key) + " must be >= 0");
    dst = static_cast<std::size_t>(v);
  };
  auto get_double = [&](const char* key, double& dst) {
    if (j.contains(key)) dst = j[key].get<double>();
  };
  get_size("num_layers", base.num_layers);
  get_size("superpixels", base.superpixels);
  get_size("k_s", base.k_s);
  get_size("k_p", base.k_p);
  if (j.contains("seed")) base.seed = j["seed"].get<std::uint64_t>();
  get_double("lambda_m", base.solver.lambda_m);
  get_double("lambda_r", base.solver.lambda_r);
  get_double("lambda_u", base.solver.lambda_u);
  get_double("lambda_e", base.solver.lambda_e);
  get_double("lambda_n", base.solver.lambda_n);
  if (j.contains("suppression_iters")) base.solver.suppression_iters = j["suppression_iters"].get<int>();
  get_double("tau", base.tau);
  if (j.contains("auto_constraints")) base.auto_constraints = j["auto_constraints"].get<bool>();
  if (j.contains("palette")) {
    const auto& p = j["palette"];
    base.palette = palette_from_json(p.is_array() ? nlohmann::json{{"colors", p}} : p);
    base.num_layers = base.palette->size();
  }
  if (j.contains("strokes")) base.strokes = strokes_from_json(j);
  base.validate();
  return base;
}

class LayerService {
public:
  enum class JobState { queued, running, done, failed };

  explicit LayerService(ServiceOptions options = {}) : options_(std::move(options)) {
    if (options_.cache_capacity == 0) options_.cache_capacity = 1;
    install_routes();
    worker_ = std::thread([this] { work(); });
  }

  ~LayerService() {
    stop();
    {
      std::lock_guard lock(mutex_);
      shutting_down_ = true;
    }
    wake_.notify_all();
    if (worker_.joinable()) worker_.join();
  }

  LayerService(const LayerService&) = delete;
  LayerService& operator=(const LayerService&) = delete;

  /// Binds the port; false when it is unavailable.
  bool bind(const std::string& host, int port) { return server_.bind_to_port(host, port); }
  /// Binds any free port and returns it (or -1).
  int bind_any(const std::string& host) { return server_.bind_to_any_port(host); }
  /// Serves until stop(); call after bind().
  bool serve() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  bool running() const { return server_.is_running(); }
  void wait_until_ready() const { server_.wait_until_ready(); }

  /// Queues a decomposition; returns the job id.
  std::string submit(PixelVolume volume, DecomposeOptions options) {
    auto job = std::make_shared<Job>();
    job->volume = std::make_shared<const PixelVolume>(std::move(volume));
    job->options = std::move(options);
    std::lock_guard lock(mutex_);
    job->id = "job-" + std::to_string(++job_counter_);
    jobs_[job->id] = job;
    queue_.push_back(job);
    wake_.notify_one();
    return job->id;
  }

private:
  struct Job {
    std::string id;
    JobState state = JobState::queued;
    std::shared_ptr<const PixelVolume> volume;
    DecomposeOptions options;
    nlohmann::json report;
    std::string error;
    std::string layer_id;
  };

  struct CacheEntry {
    std::shared_ptr<const LayerSet> layers;
    std::shared_ptr<const PixelVolume> source;
    DecomposeOptions options;
  };

  static const char* state_name(JobState s) {
    switch (s) {
    case JobState::queued: return "queued";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
    }
    return "?";
  }

  static void send_error(httplib::Response& res, int status, const std::string& message) {
    res.status = status;
    res.set_content(nlohmann::json{{"error", message}}.dump(), "application/json");
  }

  static void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static std::size_t frame_param(const httplib::Request& req, const LayerSet& layers) {
    if (!req.has_param("t")) return 0;
    const long long t = std::stoll(req.get_param_value("t"));
    if (t < 0 || static_cast<std::size_t>(t) >= layers.frames) throw InvalidArgument("frame index out of range");
    return static_cast<std::size_t>(t);
  }

  std::optional<CacheEntry> lookup(const std::string& id) {
    std::lock_guard lock(mutex_);
    auto it = cache_index_.find(id);
    if (it == cache_index_.end()) return std::nullopt;
    lru_.splice(lru_.begin(), lru_, it->second.second);
    return it->second.first;
  }

  std::string insert(CacheEntry entry) {
    std::lock_guard lock(mutex_);
    const std::string id = "layers-" + std::to_string(++layer_counter_);
    lru_.push_front(id);
    cache_index_[id] = {std::move(entry), lru_.begin()};
    while (lru_.size() > options_.cache_capacity) {
      cache_index_.erase(lru_.back());
      lru_.pop_back();
    }
    return id;
  }

  void work() {
    for (;;) {
      std::shared_ptr<Job> job;
      {
        std::unique_lock lock(mutex_);
        wake_.wait(lock, [&] { return shutting_down_ || !queue_.empty(); });
        if (shutting_down_) return;
        job = queue_.front();
        queue_.pop_front();
        job->state = JobState::running;
      }
      try {
        DecomposeResult result = decompose(*job->volume, job->options);
        nlohmann::json report = result.report();
        CacheEntry entry{std::make_shared<const LayerSet>(std::move(result.layers)), job->volume, job->options};
        const std::string layer_id = insert(std::move(entry));
        std::lock_guard lock(mutex_);
        job->report = std::move(report);
        job->layer_id = layer_id;
        job->state = JobState::done;
      } catch (const std::exception& e) {
        std::lock_guard lock(mutex_);
        job->error = e.what();
        job->state = JobState::failed;
      }
      std::lock_guard lock(mutex_);
      job->volume.reset();
    }
  }

  template <typename Handler>
  auto guarded(Handler handler) {
    return [handler](const httplib::Request& req, httplib::Response& res) {
      try {
        handler(req, res);
      } catch (const nlohmann::json::exception& e) {
        send_error(res, 400, std::string("invalid JSON: ") + e.what());
      } catch (const InvalidArgument& e) {
        send_error(res, 400, e.what());
      } catch (const FormatError& e) {
        send_error(res, 400, e.what());
      } catch (const std::invalid_argument& e) {
        send_error(res, 400, e.what());
      } catch (const std::out_of_range& e) {
        send_error(res, 400, e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, e.what());
      }
    };
  }

  PixelVolume volume_from_request(const httplib::Request& req) const {
    if (req.is_multipart_form_data()) {
      auto files = req.get_file_values("image");
      if (files.empty()) throw InvalidArgument("multipart field \"image\" is required");
      std::sort(files.begin(), files.end(),
                [](const httplib::MultipartFormData& a, const httplib::MultipartFormData& b) {
                  return a.filename < b.filename;
                });
      std::vector<PixelVolume> frames;
      for (const auto& f : files) {
        frames.push_back(decode_png(reinterpret_cast<const unsigned char*>(f.content.data()), f.content.size()));
      }
      return stack_frames(frames);
    }
    if (req.body.empty()) throw InvalidArgument("request carries no image");
    return decode_png(reinterpret_cast<const unsigned char*>(req.body.data()), req.body.size());
  }

  void install_routes() {
    server_.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                 {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                 {"Access-Control-Allow-Headers", "Content-Type"}});
    server_.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server_.Post("/decompose", guarded([this](const httplib::Request& req, httplib::Response& res) {
      DecomposeOptions opts = options_.defaults;
      if (req.is_multipart_form_data()) {
        if (req.has_file("params")) {
          opts = decompose_options_from_json(nlohmann::json::parse(req.get_file_value("params").content), opts);
        }
        if (req.has_file("palette")) {
          opts.palette = palette_from_json(nlohmann::json::parse(req.get_file_value("palette").content));
          opts.num_layers = opts.palette->size();
        }
        if (req.has_file("constraints")) {
          opts.strokes = strokes_from_json(nlohmann::json::parse(req.get_file_value("constraints").content));
        }
      }
      PixelVolume volume = volume_from_request(req);
      const std::string id = submit(std::move(volume), std::move(opts));
      send_json(res, 202, {{"job_id", id}});
    }));

    server_.Get(R"(/jobs/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(mutex_);
      auto it = jobs_.find(req.matches[1].str());
      if (it == jobs_.end()) return send_error(res, 404, "unknown job");
      const Job& job = *it->second;
      nlohmann::json body{{"job_id", job.id}, {"state", state_name(job.state)}};
      if (job.state == JobState::done) {
        body["layer_id"] = job.layer_id;
        body["report"] = job.report;
      }
      if (job.state == JobState::failed) body["error"] = job.error;
      send_json(res, 200, body);
    }));

    server_.Get(R"(/layers/([^/]+)/meta)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto entry = lookup(req.matches[1].str());
      if (!entry) return send_error(res, 404, "unknown layer id");
      const LayerSet& l = *entry->layers;
      send_json(res, 200,
                {{"layer_id", req.matches[1].str()},
                 {"width", l.width},
                 {"height", l.height},
                 {"frames", l.frames},
                 {"num_layers", l.layer_count()},
                 {"palette", palette_to_json(l.palette)}});
    }));

    server_.Get(R"(/layers/([^/]+)/plane/(\d+)\.png)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  auto entry = lookup(req.matches[1].str());
                  if (!entry) return send_error(res, 404, "unknown layer id");
                  const LayerSet& l = *entry->layers;
                  const std::size_t j = std::stoul(req.matches[2].str());
                  if (j >= l.layer_count()) return send_error(res, 404, "no such layer plane");
                  const std::size_t t = frame_param(req, l);
                  auto png = encode_gray_png(l.plane_frame(j, t), l.width, l.height);
                  res.set_content(std::string(png.begin(), png.end()), "image/png");
                }));

    server_.Get(R"(/layers/([^/]+)/reconstruction\.png)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  auto entry = lookup(req.matches[1].str());
                  if (!entry) return send_error(res, 404, "unknown layer id");
                  send_png(res, *entry->layers, entry->layers->palette, frame_param(req, *entry->layers));
                }));

    server_.Post(R"(/layers/([^/]+)/recolor)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto entry = lookup(req.matches[1].str());
      if (!entry) return send_error(res, 404, "unknown layer id");
      const Palette palette = palette_from_json(nlohmann::json::parse(req.body), false);
      const LayerSet& l = *entry->layers;
      if (palette.size() != l.layer_count()) {
        return send_error(res, 400, "palette has " + std::to_string(palette.size()) + " colors, layers have " +
                                        std::to_string(l.layer_count()));
      }
      send_png(res, l, palette, frame_param(req, l));
    }));

    server_.Post(R"(/layers/([^/]+)/constraints)",
                 guarded([this](const httplib::Request& req, httplib::Response& res) {
                   auto entry = lookup(req.matches[1].str());
                   if (!entry) return send_error(res, 404, "unknown layer id");
                   DecomposeOptions opts = entry->options;
                   opts.strokes = strokes_from_json(nlohmann::json::parse(req.body));
                   opts.palette = entry->layers->palette;
                   opts.num_layers = entry->layers->layer_count();
                   // validate strokes against the frame geometry before queueing
                   for (const Stroke& s : opts.strokes) {
                     if (s.x < 0 || s.y < 0 || s.t < 0 || static_cast<std::size_t>(s.x) >= entry->layers->width ||
                         static_cast<std::size_t>(s.y) >= entry->layers->height ||
                         static_cast<std::size_t>(s.t) >= entry->layers->frames) {
                       throw InvalidArgument("stroke coordinate out of bounds");
                     }
                     if (s.layer < 0 || static_cast<std::size_t>(s.layer) >= opts.num_layers) {
                       throw InvalidArgument("layer id out of range");
                     }
                     if (!(s.value >= 0.0 && s.value <= 1.0)) throw InvalidArgument("constraint value out of range");
                   }
                   const std::string id = submit(*entry->source, std::move(opts));
                   send_json(res, 202, {{"job_id", id}});
                 }));
  }

  static void send_png(httplib::Response& res, const LayerSet& layers, const Palette& palette, std::size_t t) {
    std::vector<float> buf(layers.width * layers.height * 3);
    compose_frame(layers, palette, t, buf);
    auto png = encode_png(PixelVolume(layers.width, layers.height, 1, std::move(buf)));
    res.set_content(std::string(png.begin(), png.end()), "image/png");
  }

  ServiceOptions options_;
  httplib::Server server_;
  std::mutex mutex_;
  std::condition_variable wake_;
  bool shutting_down_ = false;
  std::thread worker_;
  std::deque<std::shared_ptr<Job>> queue_;
  std::unordered_map<std::string, std::shared_ptr<Job>> jobs_;
  std::list<std::string> lru_;
  std::unordered_map<std::string, std::pair<CacheEntry, std::list<std::string>::iterator>> cache_index_;
  std::size_t job_counter_ = 0;
  std::size_t layer_counter_ = 0;
};

} // namespace chromalayer
