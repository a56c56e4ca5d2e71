// skelebones: rig, animate, evaluate, generate and export from the command line.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include "skelebones/metrics.hpp"
#include "skelebones/partmm.hpp"
#include "skelebones/pipeline.hpp"
#include "skelebones/rig_archive.hpp"
#include "skelebones/sequence.hpp"
#include "skelebones/synthetic.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace skelebones;

namespace {

struct Overrides {
  std::optional<int> max_bones;
  std::optional<double> distortion_tol;
  std::optional<int> max_iters;
  std::optional<int> weights_per_vertex;
  std::optional<double> tol;
  std::optional<double> tau;
  std::optional<int> skeleton_samples;
  std::optional<std::string> import_skeleton;
  std::optional<double> ik_lambda;
  std::optional<int> ik_iters;
  std::optional<int> patch_size;
  std::optional<int> knn;
  std::optional<int> levels;
  std::optional<double> blend;
  std::optional<int> parts;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> units;
  bool full_body = false;
  std::string config_file;
};

template <typename T>
void apply(const std::optional<T>& v, T& field) {
  if (v) field = *v;
}

void add_rig_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_file, "JSON config file (flags override it)")->check(CLI::ExistingFile);
  cmd->add_option("--max-bones", o.max_bones, "Maximum bone count [50]");
  cmd->add_option("--distortion-tol", o.distortion_tol, "Cluster split tolerance, fraction of bbox diagonal [0.005]");
  cmd->add_option("--max-iters", o.max_iters, "SSDR iterations [20]");
  cmd->add_option("--weights-per-vertex", o.weights_per_vertex, "Non-zero skinning weights per vertex [4]");
  cmd->add_option("--tol", o.tol, "SSDR early-stop tolerance, fraction of bbox diagonal [1e-7]");
  cmd->add_option("--tau", o.tau, "Joint detection threshold on the weight gradient [0.3]");
  cmd->add_option("--skeleton-samples", o.skeleton_samples, "Curve skeleton samples [100]");
  cmd->add_option("--knn", o.knn, "Neighbours of the contraction graph [16]");
  cmd->add_option("--import-skeleton", o.import_skeleton, "Skeleton file used instead of extraction")
      ->check(CLI::ExistingFile);
  cmd->add_option("--ik-lambda", o.ik_lambda, "Weight of the vertex term in pose solving [1]");
  cmd->add_option("--ik-iters", o.ik_iters, "Pose solver iterations per frame [200]");
  cmd->add_option("--seed", o.seed, "Clustering seed [0]");
  cmd->add_option("--units", o.units, "Unit label written to the archive [unitless]");
}

PipelineConfig make_config(const Overrides& o) {
  PipelineConfig cfg;
  if (!o.config_file.empty()) {
    std::ifstream in(o.config_file);
    std::stringstream text;
    text << in.rdbuf();
    cfg = PipelineConfig::from_json(text.str());
  }
  apply(o.max_bones, cfg.clustering.max_bones);
  apply(o.distortion_tol, cfg.clustering.distortion_tol);
  apply(o.seed, cfg.clustering.seed);
  apply(o.max_iters, cfg.ssdr.iters);
  apply(o.weights_per_vertex, cfg.ssdr.weights_per_vertex);
  apply(o.tol, cfg.ssdr.tol);
  apply(o.tau, cfg.tau);
  apply(o.skeleton_samples, cfg.skeleton.samples);
  apply(o.knn, cfg.skeleton.contraction.knn);
  if (o.import_skeleton) cfg.import_skeleton = *o.import_skeleton;
  apply(o.ik_lambda, cfg.ik.lambda);
  apply(o.ik_iters, cfg.ik.iters);
  apply(o.patch_size, cfg.partmm.patch_size);
  apply(o.levels, cfg.partmm.levels);
  apply(o.blend, cfg.partmm.lambda_alpha);
  apply(o.parts, cfg.partmm.parts);
  apply(o.units, cfg.units);
  if (o.full_body) cfg.partmm.full_body = true;
  cfg.validate();
  return cfg;
}

void require_writable(const fs::path& out) {
  const fs::path parent = out.has_parent_path() ? out.parent_path() : fs::path(".");
  if (!fs::is_directory(parent)) throw UsageError("output directory does not exist: " + parent.string());
}

std::string first_token(const fs::path& path) {
  std::ifstream in(path);
  std::string token;
  in >> token;
  return token;
}

// A query is either a poses file or a rig archive whose poses are reused.
JointRotationTrack load_query(const fs::path& path) {
  if (first_token(path) == "SKELEBONES-RIG") return load_rig(path).poses;
  return load_poses(path);
}

int run_rig(const fs::path& input, const fs::path& out, const std::string& refine, const Overrides& o,
            const std::string& dump_config) {
  const PipelineConfig cfg = make_config(o);
  require_writable(out);
  const VertexSequence seq = load_sequence(input);
  std::optional<RigArchive> prior;
  if (!refine.empty()) prior = load_rig(refine);
  const RigResult result = prior ? refine_rig(*prior, seq, cfg) : build_rig(seq, cfg);
  save_rig(result.rig, out);
  if (!dump_config.empty()) {
    std::ofstream(dump_config) << cfg.to_json() << '\n';
  }
  for (const auto& t : result.timings) spdlog::info("{:<10} {:8.3f} s", t.stage, t.seconds);
  if (!result.ok()) {
    spdlog::error("rig failed in stage {}; partial archive written to {}", result.rig.failed_stage, out.string());
    return 1;
  }
  spdlog::info("wrote {} ({} bones, {} joints, {} frames)", out.string(), result.rig.bone_count(),
               result.rig.joint_count(), result.rig.frame_count());
  return 0;
}

int run_animate(const fs::path& rig_path, const fs::path& query_path, const fs::path& out, const Overrides& o,
                int k, const std::string& ply_dir) {
  PipelineConfig cfg = make_config(o);
  if (k > 0) cfg.partmm.k = k;
  cfg.validate();
  require_writable(out);
  const RigArchive rig = load_rig(rig_path);
  const JointRotationTrack query = load_query(query_path);
  if (query.joints() != rig.joint_count()) {
    throw UsageError("query has " + std::to_string(query.joints()) + " joints but the rig has " +
                     std::to_string(rig.joint_count()));
  }
  if (rig.partial) throw UsageError("rig archive is partial (failed stage: " + rig.failed_stage + ")");
  if (!ply_dir.empty() && !fs::is_directory(ply_dir)) throw UsageError("PLY directory does not exist: " + ply_dir);
  const BoneTrack bones = animate_bones(rig, query, cfg.partmm);
  std::vector<Points> frames;
  for (int f = 0; f < bones.frames(); ++f) frames.push_back(lbs_apply(rig.rest, rig.weights.values, bones.frame(f)));
  const VertexSequence seq(std::move(frames));
  save_sequence(seq, out);
  if (!ply_dir.empty()) {
    RigArchive view = rig;
    view.bones = bones;
    view.poses = query;
    for (int f = 0; f < bones.frames(); ++f) {
      export_viewable(view, f, fs::path(ply_dir) / fmt::format("frame_{:05d}.ply", f));
    }
  }
  spdlog::info("wrote {} ({} frames, {})", out.string(), seq.frame_count(), cfg.partmm.full_body ? "FullMM" : "PartMM");
  return 0;
}

int run_eval(const fs::path& pred_path, const fs::path& truth_path, const std::string& json_out,
             const std::string& units) {
  if (!json_out.empty()) require_writable(json_out);
  const VertexSequence pred = load_sequence(pred_path);
  const VertexSequence truth = load_sequence(truth_path);
  const EvalReport report = evaluate(pred, truth, units);
  std::cout << report.to_text();
  if (!json_out.empty()) std::ofstream(json_out) << report.to_json() << '\n';
  return 0;
}

int run_synth(const std::string& kind, const fs::path& out, const SyntheticParams& params, const std::string& poses_out) {
  const auto& kinds = synthetic_kinds();
  if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end()) throw UsageError("unknown synthetic kind '" + kind + "'");
  require_writable(out);
  if (!poses_out.empty()) require_writable(poses_out);
  const SyntheticResult result = generate_synthetic(kind, params);
  save_sequence(result.sequence, out);
  if (!poses_out.empty()) save_poses(result.poses, poses_out);
  spdlog::info("wrote {} ({} frames, {} vertices)", out.string(), result.sequence.frame_count(),
               result.sequence.vertex_count());
  return 0;
}

int run_export(const fs::path& rig_path, int frame, const fs::path& out) {
  require_writable(out);
  const RigArchive rig = load_rig(rig_path);
  if (frame < 0 || frame >= rig.frame_count()) {
    throw UsageError("frame " + std::to_string(frame) + " outside [0, " + std::to_string(rig.frame_count()) + ")");
  }
  export_viewable(rig, frame, out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Skelebones rigging and partwise motion matching"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  Overrides rig_o;
  std::string rig_in, rig_out, refine, dump_config;
  auto* rig = app.add_subcommand("rig", "Rig a vertex sequence (OBJ directory or .vseq)");
  rig->add_option("input", rig_in, "Input sequence")->required()->check(CLI::ExistingPath);
  rig->add_option("-o,--output", rig_out, "Output rig archive")->required();
  rig->add_option("--refine", refine, "Prior rig of a prefix of the input to refine")->check(CLI::ExistingFile);
  rig->add_option("--dump-config", dump_config, "Write the effective config as JSON");
  add_rig_flags(rig, rig_o);

  Overrides anim_o;
  std::string anim_rig, anim_query, anim_out, ply_dir;
  int k = 0;
  auto* anim = app.add_subcommand("animate", "Animate a rig from query joint rotations");
  anim->add_option("rig", anim_rig, "Rig archive")->required()->check(CLI::ExistingFile);
  anim->add_option("query", anim_query, "Query poses file or rig archive")->required()->check(CLI::ExistingFile);
  anim->add_option("-o,--output", anim_out, "Output sequence (.vseq or OBJ directory)")->required();
  anim->add_option("--config", anim_o.config_file, "JSON config file (flags override it)")->check(CLI::ExistingFile);
  anim->add_option("--patch-size", anim_o.patch_size, "Motion patch length in frames [7]");
  anim->add_option("-k", k, "Nearest patches blended per part [7]");
  anim->add_option("--levels", anim_o.levels, "Pyramid levels above the full rate [5]");
  anim->add_option("--blend", anim_o.blend, "Coarse-to-fine blend factor lambda_alpha [0.7]");
  anim->add_option("--parts", anim_o.parts, "Kinematic parts [5]");
  anim->add_flag("--full-body", anim_o.full_body, "Match the whole skeleton as one part (FullMM)");
  anim->add_option("--export-ply", ply_dir, "Directory receiving one PLY per animated frame");

  std::string eval_pred, eval_truth, eval_json, eval_units = "unitless";
  auto* eval = app.add_subcommand("eval", "Compare a predicted sequence against ground truth");
  eval->add_option("predicted", eval_pred, "Predicted sequence")->required()->check(CLI::ExistingPath);
  eval->add_option("truth", eval_truth, "Ground-truth sequence")->required()->check(CLI::ExistingPath);
  eval->add_option("--json", eval_json, "Machine-readable report path");
  eval->add_option("--units", eval_units, "Unit label for the report [unitless]");

  std::string synth_kind, synth_out, synth_poses;
  SyntheticParams sp;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic sequence");
  synth->add_option("kind", synth_kind, "rigid_body, hinge_chain, soft_chain, y_branch or humanoid_stick")->required();
  synth->add_option("-o,--output", synth_out, "Output sequence")->required();
  synth->add_option("--frames", sp.frames, "Frame count [100]");
  synth->add_option("--vertices", sp.vertices, "Vertex count [2000]");
  synth->add_option("--seed", sp.seed, "Sampling seed [0]");
  synth->add_option("--theta-max", sp.theta_max_deg, "Peak joint angle in degrees [60]");
  synth->add_option("--segments", sp.segments, "hinge_chain segments [2]");
  synth->add_option("--stage-split", sp.stage_split, "hinge_chain frame before which later hinges hold still [-1]");
  synth->add_option("--jiggle", sp.jiggle, "soft_chain jiggle amplitude [0.15]");
  synth->add_flag("--held-out", sp.held_out, "soft_chain desynchronized held-out motion");
  synth->add_option("--poses-out", synth_poses, "Write the generating joint rotations");

  std::string exp_rig, exp_out;
  int exp_frame = 0;
  auto* exp = app.add_subcommand("export", "Export one rig frame as a viewable PLY");
  exp->add_option("rig", exp_rig, "Rig archive")->required()->check(CLI::ExistingFile);
  exp->add_option("-o,--output", exp_out, "Output PLY")->required();
  exp->add_option("--frame", exp_frame, "Frame index [0]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);
  spdlog::set_pattern("[%l] %v");

  try {
    if (*rig) return run_rig(rig_in, rig_out, refine, rig_o, dump_config);
    if (*anim) return run_animate(anim_rig, anim_query, anim_out, anim_o, k, ply_dir);
    if (*eval) return run_eval(eval_pred, eval_truth, eval_json, eval_units);
    if (*synth) return run_synth(synth_kind, synth_out, sp, synth_poses);
    if (*exp) return run_export(exp_rig, exp_frame, exp_out);
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const ShapeError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 2;
}
