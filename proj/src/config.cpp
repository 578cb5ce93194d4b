#include "mct/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace mct {

using nlohmann::json;

namespace {

json parse(const std::string& text, const char* what) {
  json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw Error::config(std::string("invalid JSON in ") + what);
  return j;
}

template <typename V>
V field(const json& j, const char* key, V fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<V>();
  } catch (const json::exception&) {
    throw Error::config(std::string("config field '") + key + "' has the wrong type");
  }
}

json mce_to_json(const MceConfig& m) {
  json j;
  j["groups"] = m.groups;
  j["k_spectral"] = m.k_spectral;
  j["stride_spectral"] = m.stride_spectral;
  j["c1"] = m.c1;
  j["c2"] = m.c2;
  j["d_model"] = m.d_model;
  j["patch"] = m.patch;
  j["bands"] = m.bands;
  j["iie"] = m.iie_enabled;
  j["zero_center_input"] = m.zero_center_input;
  return j;
}

MceConfig mce_from_json(const json& j) {
  MceConfig m;
  m.groups = field(j, "groups", m.groups);
  m.k_spectral = field(j, "k_spectral", m.k_spectral);
  m.stride_spectral = field(j, "stride_spectral", m.stride_spectral);
  m.c1 = field(j, "c1", m.c1);
  m.c2 = field(j, "c2", m.c2);
  m.d_model = field(j, "d_model", m.d_model);
  m.patch = field(j, "patch", m.patch);
  m.bands = field(j, "bands", m.bands);
  m.iie_enabled = field(j, "iie", m.iie_enabled);
  m.zero_center_input = field(j, "zero_center_input", m.zero_center_input);
  return m;
}

json encoder_to_json(const EncoderConfig& e) {
  json j;
  j["depth"] = e.depth;
  j["heads"] = e.heads;
  j["d_model"] = e.d_model;
  j["d_ff"] = e.d_ff;
  j["dropout"] = e.dropout;
  return j;
}

EncoderConfig encoder_from_json(const json& j, int d_model_default) {
  EncoderConfig e;
  e.d_model = d_model_default;
  e.depth = field(j, "depth", e.depth);
  e.heads = field(j, "heads", e.heads);
  e.d_model = field(j, "d_model", e.d_model);
  e.d_ff = field(j, "d_ff", 2 * e.d_model);
  e.dropout = field(j, "dropout", e.dropout);
  return e;
}

json schedule_to_json(const ScheduleConfig& s) {
  json j;
  j["epochs"] = s.epochs;
  j["steps_per_epoch"] = s.steps_per_epoch;
  j["batch"] = s.batch;
  j["lr"] = s.lr;
  j["weight_decay"] = s.weight_decay;
  return j;
}

ScheduleConfig schedule_from_json(const json& j, ScheduleConfig defaults) {
  ScheduleConfig s = defaults;
  s.epochs = field(j, "epochs", s.epochs);
  s.steps_per_epoch = field(j, "steps_per_epoch", s.steps_per_epoch);
  s.batch = field(j, "batch", s.batch);
  s.lr = field(j, "lr", s.lr);
  s.weight_decay = field(j, "weight_decay", s.weight_decay);
  return s;
}

std::string scope_name(TransferScope s) {
  switch (s) {
    case TransferScope::none: return "none";
    case TransferScope::full: return "full";
    case TransferScope::partial: return "partial";
  }
  return "none";
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  const json j = parse(text, "experiment config");
  ExperimentConfig c;
  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    c.cube_path = field(d, "cube", std::string());
    c.gt_path = field(d, "gt", std::string());
    c.split_path = field(d, "split", std::string());
  }
  c.checkpoint_path = field(j, "checkpoint", std::string());
  if (j.contains("mce")) c.mce = mce_from_json(j["mce"]);
  c.encoder = encoder_from_json(j.contains("encoder") ? j["encoder"] : json::object(),
                                c.mce.d_model);
  if (j.contains("head")) c.head_hidden = field(j["head"], "hidden", 0);
  if (j.contains("cmpp")) c.recon_hidden = field(j["cmpp"], "recon_hidden", 0);
  if (j.contains("pretrain")) c.pretrain = schedule_from_json(j["pretrain"], c.pretrain);
  if (j.contains("train")) {
    c.train = schedule_from_json(j["train"], c.train);
    c.pretrained_checkpoint = field(j["train"], "pretrained", std::string());
    c.transfer = transfer_scope_from_string(field(j["train"], "transfer", std::string("none")));
  }
  c.seed = field(j, "seed", static_cast<uint64_t>(0));
  c.deterministic = field(j, "deterministic", true);
  c.out_dir = field(j, "out_dir", std::string());
  c.map_mode = field(j, "map_mode", std::string("labeled"));
  return c;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error::io("cannot open config: " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return from_json_text(os.str());
}

std::string ExperimentConfig::to_json_text() const {
  nlohmann::ordered_json j;
  j["dataset"] = {{"cube", cube_path}, {"gt", gt_path}, {"split", split_path}};
  j["checkpoint"] = checkpoint_path;
  j["mce"] = mce_to_json(mce);
  j["encoder"] = encoder_to_json(encoder);
  j["head"] = {{"hidden", head_hidden}};
  j["cmpp"] = {{"recon_hidden", recon_hidden}};
  j["pretrain"] = schedule_to_json(pretrain);
  nlohmann::ordered_json t = schedule_to_json(train);
  t["pretrained"] = pretrained_checkpoint;
  t["transfer"] = scope_name(transfer);
  j["train"] = t;
  j["seed"] = seed;
  j["deterministic"] = deterministic;
  j["out_dir"] = out_dir;
  j["map_mode"] = map_mode;
  return j.dump(2);
}

std::string model_meta_json(const ModelHyper& hyper, const std::string& phase, int recon_hidden) {
  nlohmann::ordered_json j;
  j["phase"] = phase;
  j["mce"] = mce_to_json(hyper.mce);
  j["encoder"] = encoder_to_json(hyper.encoder);
  j["classes"] = hyper.classes;
  j["head_hidden"] = hyper.head_hidden;
  j["recon_hidden"] = recon_hidden;
  j["version"] = version_string();
  return j.dump();
}

ModelHyper model_hyper_from_meta(const std::string& meta_json, std::string* phase_out,
                                 int* recon_hidden_out) {
  const json j = parse(meta_json, "checkpoint metadata");
  ModelHyper h;
  if (!j.contains("mce") || !j.contains("encoder")) {
    throw Error::data("checkpoint metadata missing model hyperparameters");
  }
  h.mce = mce_from_json(j["mce"]);
  h.encoder = encoder_from_json(j["encoder"], h.mce.d_model);
  h.classes = field(j, "classes", 0);
  h.head_hidden = field(j, "head_hidden", 0);
  if (phase_out) *phase_out = field(j, "phase", std::string());
  if (recon_hidden_out) *recon_hidden_out = field(j, "recon_hidden", 0);
  return h;
}

}  // namespace mct
