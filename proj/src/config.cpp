#include "srtod/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>

namespace srtod {

namespace {

using json = nlohmann::ordered_json;

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("unknown config key '" + it.key() + "' in " + where);
}

std::string background_name(Background b) {
  switch (b) {
    case Background::kFlat: return "flat";
    case Background::kGradient: return "gradient";
    case Background::kNoise: return "noise";
    case Background::kTextured: return "textured";
  }
  return "?";
}

Background background_from(const std::string& s) {
  if (s == "flat") return Background::kFlat;
  if (s == "gradient") return Background::kGradient;
  if (s == "noise") return Background::kNoise;
  if (s == "textured") return Background::kTextured;
  throw ConfigError("unknown background '" + s + "'");
}

std::string threshold_text(const DgfeConfig& d) {
  switch (d.threshold) {
    case ThresholdMode::kLearnable: return "learnable";
    case ThresholdMode::kNone: return "none";
    case ThresholdMode::kFixed: {
      json v = d.threshold_init;
      return "fixed:" + v.dump();
    }
  }
  return "?";
}

void threshold_from(const std::string& s, DgfeConfig& d) {
  if (s == "learnable") {
    d.threshold = ThresholdMode::kLearnable;
  } else if (s == "none") {
    d.threshold = ThresholdMode::kNone;
  } else if (s.rfind("fixed:", 0) == 0) {
    d.threshold = ThresholdMode::kFixed;
    try {
      d.threshold_init = std::stod(s.substr(6));
    } catch (const std::exception&) {
      throw ConfigError("bad fixed threshold '" + s + "'");
    }
  } else {
    throw ConfigError("dgfe threshold must be learnable|fixed:<value>|none, got '" + s + "'");
  }
}

template <typename E>
E enum_from(const std::string& s, std::initializer_list<std::pair<const char*, E>> table,
            const std::string& what) {
  for (const auto& [name, val] : table)
    if (s == name) return val;
  throw ConfigError("unknown " + what + " '" + s + "'");
}

}  // namespace

void RunConfig::validate() const {
  if (pipeline != "srtod" && pipeline != "baseline")
    throw ConfigError("pipeline must be 'srtod' or 'baseline'");
  scene.validate();
  model_config().validate();
  if (optim.lr <= 0) throw ConfigError("lr must be positive");
  if (optim.momentum < 0 || optim.momentum >= 1)
    throw ConfigError("momentum must be in [0,1)");
  if (optim.weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  if (train.epochs < 0 || train.batch_size < 1)
    throw ConfigError("bad train schedule");
  if (dataset.count < 0 || dataset.val_count < 0)
    throw ConfigError("dataset counts must be >= 0");
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.backbone = backbone;
  m.recon_source = recon_source;
  m.detach_recon = detach_recon;
  m.diff_flavor = diff_flavor;
  m.highpass = highpass;
  m.dgfe = dgfe;
  m.anchors = anchors;
  m.num_classes = num_classes;
  m.tower_depth = tower_depth;
  m.lambda = lambda;
  return m;
}

PipelineMode RunConfig::pipeline_mode() const {
  return pipeline == "srtod" ? PipelineMode::kSrtod : PipelineMode::kBaseline;
}

std::string RunConfig::to_json_text() const {
  json j;
  j["seed"] = seed;
  j["pipeline"] = pipeline;
  j["out_dir"] = out_dir;
  j["scene"] = {{"height", scene.height},
                {"width", scene.width},
                {"objects_min", scene.objects_min},
                {"objects_max", scene.objects_max},
                {"size_min", scene.size_min},
                {"size_max", scene.size_max},
                {"background", background_name(scene.background)},
                {"contrast", scene.contrast},
                {"classes", scene.classes}};
  j["dataset"] = {{"train_manifest", dataset.train_manifest},
                  {"val_manifest", dataset.val_manifest},
                  {"count", dataset.count},
                  {"val_count", dataset.val_count}};
  j["backbone"] = {{"channels", backbone.channels},
                   {"stage_depths", backbone.stage_depths},
                   {"norm", backbone.norm == NormKind::kGroup ? "group" : "batch"}};
  j["recon"] = {{"source", recon_source == ReconSource::kP2 ? "P2" : "P3"},
                {"lambda", lambda},
                {"detach_from_backbone", detach_recon}};
  j["diffmap"] = {{"flavor", diff_flavor == DiffFlavor::kPixel ? "pixel" : "high_frequency"},
                  {"rho", highpass.rho}};
  const char* mode_name = dgfe.mode == DgfeMode::kAttention ? "attention"
                          : dgfe.mode == DgfeMode::kConcat  ? "concat"
                          : dgfe.mode == DgfeMode::kMultiply ? "multiply"
                                                             : "off";
  const char* resize_name = dgfe.resize == ResizeMode::kMaxpool ? "maxpool"
                            : dgfe.resize == ResizeMode::kNearest ? "nearest"
                                                                  : "bilinear";
  j["dgfe"] = {{"mode", mode_name},
               {"threshold", threshold_text(dgfe)},
               {"threshold_init", dgfe.threshold_init},
               {"tau", dgfe.tau},
               {"resize", resize_name},
               {"reduction", dgfe.reduction},
               {"stop_grad_diff", dgfe.stop_grad_diff}};
  j["detector"] = {{"anchor_scale", anchors.scale},
                   {"pos_iou", anchors.pos_iou},
                   {"neg_iou", anchors.neg_iou},
                   {"score_thresh", anchors.score_thresh},
                   {"nms_iou", anchors.nms_iou},
                   {"pre_nms_topk", anchors.pre_nms_topk},
                   {"max_dets", anchors.max_dets},
                   {"num_classes", num_classes},
                   {"tower_depth", tower_depth}};
  j["optimizer"] = {{"lr", optim.lr},
                    {"momentum", optim.momentum},
                    {"weight_decay", optim.weight_decay}};
  j["train"] = {{"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"checkpoint_every", train.checkpoint_every},
                {"threads", train.threads}};
  return j.dump(2) + "\n";
}

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  RunConfig c;
  check_keys(j, {"seed", "pipeline", "out_dir", "scene", "dataset", "backbone",
                 "recon", "diffmap", "dgfe", "detector", "optimizer", "train"},
             "top level");
  c.seed = j.value("seed", c.seed);
  c.pipeline = j.value("pipeline", c.pipeline);
  c.out_dir = j.value("out_dir", c.out_dir);
  if (j.contains("scene")) {
    const auto& s = j["scene"];
    check_keys(s, {"height", "width", "objects_min", "objects_max", "size_min",
                   "size_max", "background", "contrast", "classes"}, "scene");
    c.scene.height = s.value("height", c.scene.height);
    c.scene.width = s.value("width", c.scene.width);
    c.scene.objects_min = s.value("objects_min", c.scene.objects_min);
    c.scene.objects_max = s.value("objects_max", c.scene.objects_max);
    c.scene.size_min = s.value("size_min", c.scene.size_min);
    c.scene.size_max = s.value("size_max", c.scene.size_max);
    if (s.contains("background"))
      c.scene.background = background_from(s["background"].get<std::string>());
    c.scene.contrast = s.value("contrast", c.scene.contrast);
    c.scene.classes = s.value("classes", c.scene.classes);
  }
  if (j.contains("dataset")) {
    const auto& s = j["dataset"];
    check_keys(s, {"train_manifest", "val_manifest", "count", "val_count"}, "dataset");
    c.dataset.train_manifest = s.value("train_manifest", c.dataset.train_manifest);
    c.dataset.val_manifest = s.value("val_manifest", c.dataset.val_manifest);
    c.dataset.count = s.value("count", c.dataset.count);
    c.dataset.val_count = s.value("val_count", c.dataset.val_count);
  }
  if (j.contains("backbone")) {
    const auto& s = j["backbone"];
    check_keys(s, {"channels", "stage_depths", "norm"}, "backbone");
    c.backbone.channels = s.value("channels", c.backbone.channels);
    if (s.contains("stage_depths"))
      c.backbone.stage_depths = s["stage_depths"].get<std::vector<int>>();
    if (s.contains("norm"))
      c.backbone.norm = enum_from<NormKind>(s["norm"].get<std::string>(),
                                            {{"group", NormKind::kGroup},
                                             {"batch", NormKind::kBatch}},
                                            "norm");
  }
  if (j.contains("recon")) {
    const auto& s = j["recon"];
    check_keys(s, {"source", "lambda", "detach_from_backbone"}, "recon");
    if (s.contains("source"))
      c.recon_source = enum_from<ReconSource>(s["source"].get<std::string>(),
                                              {{"P2", ReconSource::kP2},
                                               {"P3", ReconSource::kP3}},
                                              "recon source");
    c.lambda = s.value("lambda", c.lambda);
    c.detach_recon = s.value("detach_from_backbone", c.detach_recon);
  }
  if (j.contains("diffmap")) {
    const auto& s = j["diffmap"];
    check_keys(s, {"flavor", "rho"}, "diffmap");
    if (s.contains("flavor"))
      c.diff_flavor = enum_from<DiffFlavor>(s["flavor"].get<std::string>(),
                                            {{"pixel", DiffFlavor::kPixel},
                                             {"high_frequency", DiffFlavor::kHighFrequency}},
                                            "diffmap flavor");
    c.highpass.rho = s.value("rho", c.highpass.rho);
  }
  if (j.contains("dgfe")) {
    const auto& s = j["dgfe"];
    check_keys(s, {"mode", "threshold", "threshold_init", "tau", "resize",
                   "reduction", "stop_grad_diff"}, "dgfe");
    if (s.contains("mode"))
      c.dgfe.mode = enum_from<DgfeMode>(s["mode"].get<std::string>(),
                                        {{"attention", DgfeMode::kAttention},
                                         {"concat", DgfeMode::kConcat},
                                         {"multiply", DgfeMode::kMultiply},
                                         {"off", DgfeMode::kOff}},
                                        "dgfe mode");
    c.dgfe.threshold_init = s.value("threshold_init", c.dgfe.threshold_init);
    if (s.contains("threshold"))
      threshold_from(s["threshold"].get<std::string>(), c.dgfe);
    c.dgfe.tau = s.value("tau", c.dgfe.tau);
    if (s.contains("resize"))
      c.dgfe.resize = enum_from<ResizeMode>(s["resize"].get<std::string>(),
                                            {{"maxpool", ResizeMode::kMaxpool},
                                             {"nearest", ResizeMode::kNearest},
                                             {"bilinear", ResizeMode::kBilinear}},
                                            "dgfe resize");
    c.dgfe.reduction = s.value("reduction", c.dgfe.reduction);
    c.dgfe.stop_grad_diff = s.value("stop_grad_diff", c.dgfe.stop_grad_diff);
  }
  if (j.contains("detector")) {
    const auto& s = j["detector"];
    check_keys(s, {"anchor_scale", "pos_iou", "neg_iou", "score_thresh", "nms_iou",
                   "pre_nms_topk", "max_dets", "num_classes", "tower_depth"},
               "detector");
    c.anchors.scale = s.value("anchor_scale", c.anchors.scale);
    c.anchors.pos_iou = s.value("pos_iou", c.anchors.pos_iou);
    c.anchors.neg_iou = s.value("neg_iou", c.anchors.neg_iou);
    c.anchors.score_thresh = s.value("score_thresh", c.anchors.score_thresh);
    c.anchors.nms_iou = s.value("nms_iou", c.anchors.nms_iou);
    c.anchors.pre_nms_topk = s.value("pre_nms_topk", c.anchors.pre_nms_topk);
    c.anchors.max_dets = s.value("max_dets", c.anchors.max_dets);
    c.num_classes = s.value("num_classes", c.num_classes);
    c.tower_depth = s.value("tower_depth", c.tower_depth);
  }
  if (j.contains("optimizer")) {
    const auto& s = j["optimizer"];
    check_keys(s, {"lr", "momentum", "weight_decay"}, "optimizer");
    c.optim.lr = s.value("lr", c.optim.lr);
    c.optim.momentum = s.value("momentum", c.optim.momentum);
    c.optim.weight_decay = s.value("weight_decay", c.optim.weight_decay);
  }
  if (j.contains("train")) {
    const auto& s = j["train"];
    check_keys(s, {"epochs", "batch_size", "checkpoint_every", "threads"}, "train");
    c.train.epochs = s.value("epochs", c.train.epochs);
    c.train.batch_size = s.value("batch_size", c.train.batch_size);
    c.train.checkpoint_every = s.value("checkpoint_every", c.train.checkpoint_every);
    c.train.threads = s.value("threads", c.train.threads);
  }
  return c;
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw StorageError("cannot write config: " + path.string());
  f << to_json_text();
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw StorageError("cannot open config: " + path.string());
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  return from_json_text(text);
}

uint64_t RunConfig::hash() const {
  const std::string text = to_json_text();
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace srtod
