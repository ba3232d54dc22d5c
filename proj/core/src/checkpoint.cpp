#include "sonetlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "sonetlab/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian; big-endian hosts are unsupported");

namespace sonetlab::blocks {

using nlohmann::json;

namespace {

json solver_to_json(const solvers::SolverConfig& s) {
  return json{{"method", solvers::to_string(s.method)}, {"h", s.h},           {"tol", s.tol},
              {"safety", s.safety},                     {"min_factor", s.min_factor},
              {"max_factor", s.max_factor},             {"max_steps", s.max_steps},
              {"initial_step", s.initial_step}};
}

solvers::SolverConfig solver_from_json(const json& j) {
  solvers::SolverConfig s;
  s.method = solvers::method_from_string(j.at("method").get<std::string>());
  s.h = j.at("h").get<double>();
  s.tol = j.at("tol").get<double>();
  s.safety = j.value("safety", s.safety);
  s.min_factor = j.value("min_factor", s.min_factor);
  s.max_factor = j.value("max_factor", s.max_factor);
  s.max_steps = j.value("max_steps", s.max_steps);
  s.initial_step = j.value("initial_step", s.initial_step);
  return s;
}

json spec_to_json(const NetworkSpec& spec) {
  return json{{"architecture", to_string(spec.architecture)},
              {"channels", spec.channels},
              {"layers", spec.layers},
              {"solver", solver_to_json(spec.solver)},
              {"num_classes", spec.num_classes},
              {"input_shape", spec.input_shape},
              {"dense", spec.dense},
              {"ode_activation", to_string(spec.ode_activation)},
              {"gamma", spec.gamma},
              {"t_end", spec.t_end}};
}

NetworkSpec spec_from_json(const json& j) {
  NetworkSpec spec;
  spec.architecture = architecture_from_string(j.at("architecture").get<std::string>());
  spec.channels = j.at("channels").get<int>();
  spec.layers = j.at("layers").get<int>();
  spec.solver = solver_from_json(j.at("solver"));
  spec.num_classes = j.at("num_classes").get<int>();
  spec.input_shape = j.at("input_shape").get<std::vector<int>>();
  spec.dense = j.at("dense").get<bool>();
  spec.ode_activation = activation_from_string(j.at("ode_activation").get<std::string>());
  spec.gamma = j.at("gamma").get<double>();
  spec.t_end = j.at("t_end").get<double>();
  return spec;
}

}  // namespace

std::string network_spec_to_json(const NetworkSpec& spec) { return spec_to_json(spec).dump(); }

NetworkSpec network_spec_from_json(const std::string& text) {
  return spec_from_json(json::parse(text));
}

void save_checkpoint(const Model& model, const std::string& path) {
  json header;
  header["format"] = "sonetlab-checkpoint";
  header["version"] = 1;
  header["spec"] = spec_to_json(model.spec);

  std::int64_t offset = 0;  // element offset into the payload
  json params = json::array();
  for (const Parameter& p : model.params) {
    params.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"offset", offset}});
    offset += p.value.size();
  }
  header["params"] = params;

  json bns = json::array();
  for (const BnLayer& layer : model.bn) {
    bns.push_back({{"name", layer.name},
                   {"channels", layer.running_mean.size()},
                   {"gamma_param", layer.gamma_param},
                   {"beta_param", layer.beta_param},
                   {"eps", layer.eps},
                   {"momentum", layer.momentum},
                   {"mean_offset", offset},
                   {"var_offset", offset + layer.running_mean.size()}});
    offset += 2 * layer.running_mean.size();
  }
  header["bn"] = bns;
  header["payload_elements"] = offset;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot open checkpoint for writing: " + path);
  const std::string head = header.dump();
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  out.put('\n');
  for (const Parameter& p : model.params) {
    out.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  }
  for (const BnLayer& layer : model.bn) {
    out.write(reinterpret_cast<const char*>(layer.running_mean.data()),
              static_cast<std::streamsize>(layer.running_mean.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(layer.running_var.data()),
              static_cast<std::streamsize>(layer.running_var.size() * sizeof(double)));
  }
  if (!out) throw IngestError("checkpoint write failed: " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open checkpoint: " + path);
  std::string head;
  if (!std::getline(in, head)) throw IngestError("checkpoint header missing: " + path);
  json header = json::parse(head, nullptr, /*allow_exceptions=*/false);
  if (header.is_discarded() || header.value("format", "") != "sonetlab-checkpoint") {
    throw IngestError("not a sonetlab checkpoint: " + path);
  }

  const std::int64_t payload_elements = header.at("payload_elements").get<std::int64_t>();
  std::vector<double> payload(static_cast<std::size_t>(payload_elements));
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(payload.size() * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(payload.size() * sizeof(double))) {
    throw IngestError("checkpoint payload truncated: " + path);
  }

  // Rebuild the model structurally, then overwrite every tensor from the
  // payload. Assembly must be deterministic in the spec, so the layout and
  // parameter order match by construction.
  NetworkSpec spec = spec_from_json(header.at("spec"));
  Rng scratch(0);
  Model model = assemble_network(spec, scratch);

  const json& params = header.at("params");
  if (params.size() != model.params.size()) {
    throw IngestError("checkpoint parameter list does not match architecture");
  }
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const json& pj = params[i];
    if (pj.at("name").get<std::string>() != model.params[i].name) {
      throw IngestError("checkpoint parameter order mismatch at " + model.params[i].name);
    }
    const std::int64_t off = pj.at("offset").get<std::int64_t>();
    Tensor& v = model.params[i].value;
    if (off + v.size() > payload_elements) throw IngestError("checkpoint offset out of range");
    std::memcpy(v.data(), payload.data() + off, static_cast<std::size_t>(v.size()) * sizeof(double));
  }
  const json& bns = header.at("bn");
  if (bns.size() != model.bn.size()) throw IngestError("checkpoint bn list mismatch");
  for (std::size_t i = 0; i < model.bn.size(); ++i) {
    const json& bj = bns[i];
    BnLayer& layer = model.bn[i];
    const std::int64_t moff = bj.at("mean_offset").get<std::int64_t>();
    const std::int64_t voff = bj.at("var_offset").get<std::int64_t>();
    if (voff + layer.running_var.size() > payload_elements) {
      throw IngestError("checkpoint bn offset out of range");
    }
    std::memcpy(layer.running_mean.data(), payload.data() + moff,
                static_cast<std::size_t>(layer.running_mean.size()) * sizeof(double));
    std::memcpy(layer.running_var.data(), payload.data() + voff,
                static_cast<std::size_t>(layer.running_var.size()) * sizeof(double));
  }
  return model;
}

}  // namespace sonetlab::blocks
