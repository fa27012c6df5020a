#include "slicemap/run_config.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "json_util.hpp"
#include "slicemap/error.hpp"

namespace slicemap {

using nlohmann::json;

namespace {

void read_mode(const json& j, GenerationMode& mode, const std::string& ctx) {
  if (!j.contains("mode")) return;
  std::string name;
  detail::read_optional(j, "mode", name, ctx);
  mode = parse_generation_mode(name);
}

}  // namespace

void to_json(json& j, const RunConfig& c) {
  j = json{{"model", c.model},
           {"phantom", c.phantom},
           {"data", {{"train", c.data.train}, {"validation", c.data.validation}}},
           {"generate", {{"samples", c.generate.samples}, {"mode", to_string(c.generate.mode)}, {"seed", c.generate.seed}}},
           {"eval",
            {{"context_counts", c.eval.context_counts},
             {"samples", c.eval.samples},
             {"mode", to_string(c.eval.mode)},
             {"seed", c.eval.seed},
             {"motion", c.eval.motion},
             {"motion_stacks", c.eval.motion_stacks},
             {"motion_contexts", c.eval.motion_contexts},
             {"blur_sigma", c.eval.blur_sigma}}}};
}

void from_json(const json& j, RunConfig& c) {
  detail::reject_unknown_keys(j, {"model", "phantom", "data", "generate", "eval"}, "config");
  if (j.contains("model")) from_json(j.at("model"), c.model);
  if (j.contains("phantom")) from_json(j.at("phantom"), c.phantom);
  if (j.contains("data")) {
    const json& d = j.at("data");
    detail::reject_unknown_keys(d, {"train", "validation"}, "data");
    detail::read_optional(d, "train", c.data.train, "data");
    detail::read_optional(d, "validation", c.data.validation, "data");
  }
  if (j.contains("generate")) {
    const json& g = j.at("generate");
    detail::reject_unknown_keys(g, {"samples", "mode", "seed"}, "generate");
    detail::read_optional(g, "samples", c.generate.samples, "generate");
    detail::read_optional(g, "seed", c.generate.seed, "generate");
    read_mode(g, c.generate.mode, "generate");
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    detail::reject_unknown_keys(
        e, {"context_counts", "samples", "mode", "seed", "motion", "motion_stacks", "motion_contexts", "blur_sigma"},
        "eval");
    detail::read_optional(e, "context_counts", c.eval.context_counts, "eval");
    detail::read_optional(e, "samples", c.eval.samples, "eval");
    detail::read_optional(e, "seed", c.eval.seed, "eval");
    detail::read_optional(e, "motion", c.eval.motion, "eval");
    detail::read_optional(e, "motion_stacks", c.eval.motion_stacks, "eval");
    detail::read_optional(e, "motion_contexts", c.eval.motion_contexts, "eval");
    detail::read_optional(e, "blur_sigma", c.eval.blur_sigma, "eval");
    read_mode(e, c.eval.mode, "eval");
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  RunConfig c;
  try {
    from_json(j, c);
  } catch (const json::exception& e) {
    throw ConfigError("invalid config " + path.string() + ": " + e.what());
  }
  c.model.validate();
  return c;
}

std::string dump_run_config(const RunConfig& c) { return json(c).dump(2); }

}  // namespace slicemap
