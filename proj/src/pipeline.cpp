#include "skelebones/pipeline.hpp"

#include "skelebones/errors.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <chrono>
#include <functional>
#include <set>

namespace skelebones {

using nlohmann::json;

namespace {

void require(bool ok, const std::string& field, const std::string& range) {
  if (!ok) throw UsageError("config field '" + field + "' must be " + range);
}

// Reads known keys of one JSON object and rejects the rest.
class Reader {
 public:
  Reader(const json& obj, std::string prefix) : obj_(obj), prefix_(std::move(prefix)) {
    if (!obj_.is_object()) throw UsageError("config section '" + prefix_ + "' must be an object");
  }
  ~Reader() = default;

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw UsageError("config field '" + prefix_ + key + "': " + e.what());
    }
  }

  const json& section(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    auto it = obj_.find(key);
    return it == obj_.end() ? empty : *it;
  }

  void finish() const {
    for (const auto& item : obj_.items()) {
      if (!seen_.count(item.key())) throw UsageError("unknown config field '" + prefix_ + item.key() + "'");
    }
  }

 private:
  const json& obj_;
  std::string prefix_;
  std::set<std::string> seen_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Vec3 center_of_mass(const Points& p) { return p.rowwise().mean(); }

// Runs fn as a named stage; records a failure instead of throwing.
bool run_stage(RigResult& result, const std::string& name, const std::function<void()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    fn();
  } catch (const Error& e) {
    result.error = name + ": " + e.what();
    result.rig.partial = true;
    result.rig.failed_stage = name;
    spdlog::error("stage {} failed: {}", name, e.what());
    return false;
  }
  result.timings.push_back({name, seconds_since(t0)});
  spdlog::info("stage {} finished in {:.3f} s", name, result.timings.back().seconds);
  return true;
}

CurveSkeleton make_skeleton(const Points& rest, const PipelineConfig& config) {
  if (config.import_skeleton.empty()) return extract_curve_skeleton(rest, config.skeleton);
  Points samples;
  std::vector<std::pair<int, int>> edges;
  load_skeleton(config.import_skeleton, samples, edges);
  return skeleton_from_samples(rest, samples, edges);
}

RigResult start(const VertexSequence& seq, const PipelineConfig& config) {
  config.validate();
  if (seq.frame_count() < 1) throw InsufficientFrames("rigging needs at least one frame");
  RigResult result;
  RigArchive& rig = result.rig;
  rig.units = config.units;
  rig.canonical = 0;
  rig.config = config.to_json();
  rig.config_hash = config.hash();
  rig.rest = seq.frame(0);
  return result;
}

void solve_poses(RigResult& result, const VertexSequence& seq, const PipelineConfig& config) {
  RigArchive& rig = result.rig;
  run_stage(result, "ik", [&] {
    const SkeletonBinding binding = bind_vertices(rig.rest, rig.tree);
    rig.poses = solve_sequence(rig.tree, binding, rig.skeleton, rig.rest, seq, config.ik, rig.canonical).track;
  });
}

}  // namespace

void PipelineConfig::validate() const {
  require(clustering.max_bones >= 1, "clustering.max_bones", ">= 1");
  require(clustering.distortion_tol > 0.0, "clustering.distortion_tol", "> 0");
  require(clustering.min_cluster_size >= 3, "clustering.min_cluster_size", ">= 3");
  require(clustering.descriptor_frames >= 1, "clustering.descriptor_frames", ">= 1");
  require(clustering.lloyd_iterations >= 0, "clustering.lloyd_iterations", ">= 0");
  require(ssdr.iters >= 1, "ssdr.iters", ">= 1");
  require(ssdr.weights_per_vertex >= 1, "ssdr.weights_per_vertex", ">= 1");
  require(ssdr.tol >= 0.0, "ssdr.tol", ">= 0");
  require(skeleton.samples >= 2, "skeleton.samples", ">= 2");
  require(skeleton.spur_edges >= 0, "skeleton.spur_edges", ">= 0");
  require(skeleton.contraction.knn >= 3, "skeleton.knn", ">= 3");
  require(skeleton.contraction.contraction_weight > 0.0, "skeleton.contraction_weight", "> 0");
  require(skeleton.contraction.attraction_weight > 0.0, "skeleton.attraction_weight", "> 0");
  require(skeleton.contraction.growth >= 1.0, "skeleton.growth", ">= 1");
  require(skeleton.contraction.max_iterations >= 1, "skeleton.max_iterations", ">= 1");
  require(skeleton.contraction.anisotropy_stop > 0.0, "skeleton.anisotropy_stop", "> 0");
  require(skeleton.contraction.divergence_ratio > 1.0, "skeleton.divergence_ratio", "> 1");
  require(tau >= 0.0, "tau", ">= 0");
  require(ik.lambda >= 0.0, "ik.lambda", ">= 0");
  require(ik.iters >= 0, "ik.iters", ">= 0");
  require(ik.diff_step > 0.0, "ik.diff_step", "> 0");
  require(ik.step > 0.0, "ik.step", "> 0");
  require(ik.max_vertices >= 0, "ik.max_vertices", ">= 0");
  require(partmm.patch_size >= 1, "partmm.patch_size", ">= 1");
  require(partmm.k >= 1, "partmm.k", ">= 1");
  require(partmm.levels >= 0 && partmm.levels <= 16, "partmm.levels", "in [0, 16]");
  require(partmm.lambda_alpha >= 0.0 && partmm.lambda_alpha <= 1.0, "partmm.lambda_alpha", "in [0, 1]");
  require(partmm.parts >= 1, "partmm.parts", ">= 1");
  require(!units.empty(), "units", "non-empty");
}

std::string PipelineConfig::to_json() const {
  const auto& c = skeleton.contraction;
  const json j = {
      {"clustering",
       {{"max_bones", clustering.max_bones},
        {"distortion_tol", clustering.distortion_tol},
        {"min_cluster_size", clustering.min_cluster_size},
        {"seed", clustering.seed},
        {"descriptor_frames", clustering.descriptor_frames},
        {"lloyd_iterations", clustering.lloyd_iterations}}},
      {"ssdr", {{"iters", ssdr.iters}, {"weights_per_vertex", ssdr.weights_per_vertex}, {"tol", ssdr.tol}}},
      {"skeleton",
       {{"samples", skeleton.samples},
        {"spur_edges", skeleton.spur_edges},
        {"knn", c.knn},
        {"contraction_weight", c.contraction_weight},
        {"attraction_weight", c.attraction_weight},
        {"growth", c.growth},
        {"max_iterations", c.max_iterations},
        {"anisotropy_stop", c.anisotropy_stop},
        {"divergence_ratio", c.divergence_ratio}}},
      {"tau", tau},
      {"ik",
       {{"lambda", ik.lambda},
        {"iters", ik.iters},
        {"diff_step", ik.diff_step},
        {"step", ik.step},
        {"max_vertices", ik.max_vertices}}},
      {"partmm",
       {{"patch_size", partmm.patch_size},
        {"k", partmm.k},
        {"levels", partmm.levels},
        {"lambda_alpha", partmm.lambda_alpha},
        {"parts", partmm.parts},
        {"full_body", partmm.full_body}}},
      {"units", units},
      {"import_skeleton", import_skeleton.string()},
  };
  return j.dump();
}

PipelineConfig PipelineConfig::from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw UsageError(std::string("config is not valid JSON: ") + e.what());
  }
  PipelineConfig cfg;
  Reader top(root, "");
  {
    Reader r(top.section("clustering"), "clustering.");
    r.get("max_bones", cfg.clustering.max_bones);
    r.get("distortion_tol", cfg.clustering.distortion_tol);
    r.get("min_cluster_size", cfg.clustering.min_cluster_size);
    r.get("seed", cfg.clustering.seed);
    r.get("descriptor_frames", cfg.clustering.descriptor_frames);
    r.get("lloyd_iterations", cfg.clustering.lloyd_iterations);
    r.finish();
  }
  {
    Reader r(top.section("ssdr"), "ssdr.");
    r.get("iters", cfg.ssdr.iters);
    r.get("weights_per_vertex", cfg.ssdr.weights_per_vertex);
    r.get("tol", cfg.ssdr.tol);
    r.finish();
  }
  {
    auto& c = cfg.skeleton.contraction;
    Reader r(top.section("skeleton"), "skeleton.");
    r.get("samples", cfg.skeleton.samples);
    r.get("spur_edges", cfg.skeleton.spur_edges);
    r.get("knn", c.knn);
    r.get("contraction_weight", c.contraction_weight);
    r.get("attraction_weight", c.attraction_weight);
    r.get("growth", c.growth);
    r.get("max_iterations", c.max_iterations);
    r.get("anisotropy_stop", c.anisotropy_stop);
    r.get("divergence_ratio", c.divergence_ratio);
    r.finish();
  }
  top.get("tau", cfg.tau);
  {
    Reader r(top.section("ik"), "ik.");
    r.get("lambda", cfg.ik.lambda);
    r.get("iters", cfg.ik.iters);
    r.get("diff_step", cfg.ik.diff_step);
    r.get("step", cfg.ik.step);
    r.get("max_vertices", cfg.ik.max_vertices);
    r.finish();
  }
  {
    Reader r(top.section("partmm"), "partmm.");
    r.get("patch_size", cfg.partmm.patch_size);
    r.get("k", cfg.partmm.k);
    r.get("levels", cfg.partmm.levels);
    r.get("lambda_alpha", cfg.partmm.lambda_alpha);
    r.get("parts", cfg.partmm.parts);
    r.get("full_body", cfg.partmm.full_body);
    r.finish();
  }
  top.get("units", cfg.units);
  std::string imported = cfg.import_skeleton.string();
  top.get("import_skeleton", imported);
  cfg.import_skeleton = imported;
  top.finish();
  cfg.validate();
  return cfg;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t PipelineConfig::hash() const { return fnv1a64(to_json()); }

RigResult build_rig(const VertexSequence& seq, const PipelineConfig& config) {
  RigResult result = start(seq, config);
  RigArchive& rig = result.rig;
  ClusterAssignment clusters;
  if (!run_stage(result, "clustering", [&] { clusters = lbg_cluster(seq, config.clustering); })) return result;
  spdlog::info("clustering: {} clusters", clusters.cluster_count);
  if (!run_stage(result, "ssdr", [&] {
        const SsdrResult fit = ssdr_solve(seq, clusters, config.ssdr);
        rig.weights = fit.weights;
        rig.bones = fit.bones;
        spdlog::info("ssdr: {} bones, rmse {:.6g} {}", fit.bones.count(), fit.rmse, config.units);
      }))
    return result;
  if (!run_stage(result, "skeleton", [&] {
        rig.skeleton = make_skeleton(rig.rest, config);
        rig.skeleton.weights = pull_back_weights(rig.skeleton, rig.weights);
      }))
    return result;
  if (!run_stage(result, "joints", [&] {
        const JointDetection detection = detect_joints(rig.skeleton, config.tau);
        rig.tree = build_tree(rig.skeleton, detection, center_of_mass(rig.rest));
        spdlog::info("joints: {} ({})", rig.tree.size(), detection.single_bone ? "single bone" : "articulated");
      }))
    return result;
  solve_poses(result, seq, config);
  return result;
}

RigArchive build_rig_or_throw(const VertexSequence& seq, const PipelineConfig& config) {
  RigResult result = build_rig(seq, config);
  if (!result.ok()) throw StageError(result.rig.failed_stage, result.error);
  return std::move(result.rig);
}

RigResult refine_rig(const RigArchive& prior, const VertexSequence& seq, const PipelineConfig& config) {
  if (prior.partial) throw UsageError("cannot refine a partial rig");
  if (seq.vertex_count() != prior.vertex_count()) throw ShapeError("extended sequence has a different vertex count");
  if (seq.frame_count() < prior.frame_count()) throw UsageError("extended sequence is shorter than the rigged one");
  RigResult result = start(seq, config);
  RigArchive& rig = result.rig;
  ClusterAssignment clusters;
  if (!run_stage(result, "clustering", [&] { clusters = lbg_cluster(seq, config.clustering); })) return result;
  if (!run_stage(result, "ssdr", [&] {
        const SsdrResult fit = ssdr_solve(seq, clusters, config.ssdr);
        rig.weights = fit.weights;
        rig.bones = fit.bones;
      }))
    return result;
  if (!run_stage(result, "skeleton", [&] { rig.skeleton = make_skeleton(rig.rest, config); })) return result;
  if (!run_stage(result, "joints", [&] {
        rig.tree = refine_with_frames(seq, rig.weights, rig.bones, prior.tree, prior.frame_count(), rig.skeleton,
                                      config.tau, rig.canonical);
        rig.skeleton.weights = pull_back_weights(rig.skeleton, rig.weights);
      }))
    return result;
  solve_poses(result, seq, config);
  return result;
}

}  // namespace skelebones
