#include "uq/cli/config.hpp"

#include <set>

#include "uq/common/error.hpp"
#include "uq/common/io.hpp"

namespace uq::cli {

using nlohmann::json;

void RunConfig::derive_seeds() {
  world.seed = seed;
  splits.seed = seed + 1;
  lm.seed = seed + 2;
  lm_training.seed = seed + 3;
  head.seed = seed + 4;
  head_training.seed = seed + 5;
  saplma.seed = seed + 6;
}

std::vector<std::string> RunConfig::domain_list() const {
  if (!domains.empty()) return domains;
  std::vector<std::string> all;
  for (const auto& d : data::domains()) all.push_back(d.name);
  return all;
}

std::vector<std::string> RunConfig::eval_split_list() const {
  if (!eval_splits.empty()) return eval_splits;
  std::vector<std::string> out{"test"};
  for (const auto& d : domain_list())
    if (d != data::kInDomain) out.push_back(d);
  return out;
}

void RunConfig::validate() const {
  if (jobs == 0) fail(ErrorCode::kConfig, "jobs must be at least 1");
  world.validate();
  const auto names = domain_list();
  for (const auto& d : names) data::domain(d);
  if (std::find(names.begin(), names.end(), data::kInDomain) == names.end()) {
    fail(ErrorCode::kConfig, "the domain list must include " + data::kInDomain);
  }
  auto lmc = lm;
  lmc.vocab = std::max<std::size_t>(lmc.vocab, 16);
  lmc.validate();
  if (lm_training.epochs == 0 || lm_training.batch_tokens == 0) fail(ErrorCode::kConfig, "LM epochs and batch must be positive");
  lm_training.adam.validate();
  if (max_new == 0) fail(ErrorCode::kConfig, "max_new must be positive");
  if (annotator == data::AnnotatorKind::kRemote) remote.validate();
  if (features.families.empty()) fail(ErrorCode::kConfig, "feature spec enables no family");
  auto hc = head;
  hc.input_dim = std::max<std::size_t>(hc.input_dim, 1);
  hc.validate();
  if (head_training.epochs == 0 || head_training.batch_claims == 0) {
    fail(ErrorCode::kConfig, "head epochs and batch must be positive");
  }
  head_training.adam.validate();
  if (saplma.hidden == 0 || saplma.epochs == 0) fail(ErrorCode::kConfig, "SAPLMA width and epochs must be positive");
  if (lookback.iterations == 0 || !(lookback.learning_rate > 0)) fail(ErrorCode::kConfig, "bad lookback settings");
  if (factoscope_top_m == 0) fail(ErrorCode::kConfig, "factoscope top_m must be positive");
  if (sweep_windows.empty()) fail(ErrorCode::kConfig, "sweep needs at least one window");
  for (auto k : sweep_windows)
    if (k < 1 || k > 10) fail(ErrorCode::kConfig, "sweep windows must lie in 1..10");
  if (analyze_offsets.empty()) fail(ErrorCode::kConfig, "analyze needs at least one offset");
  for (auto o : analyze_offsets)
    if (o == 0) fail(ErrorCode::kConfig, "analyze offsets start at 1");
  if (permutations == 0) fail(ErrorCode::kConfig, "permutations must be positive");
  if (bench_prompts < 20) fail(ErrorCode::kConfig, "bench needs at least 20 prompts");
  if (bench_repetitions < 5) fail(ErrorCode::kConfig, "bench needs at least 5 repetitions");
}

namespace {

json adam_json(const num::AdamConfig& a) {
  return {{"lr", a.peak_lr}, {"warmup", a.warmup_fraction}, {"weight_decay", a.weight_decay}, {"clip_norm", a.clip_norm}};
}

// Reads keys from one object and remembers which were consumed, so that a
// typo in a config file is reported instead of silently ignored.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) fail(ErrorCode::kConfig, "'" + name_ + "' must be an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) fail(ErrorCode::kConfig, "unknown key '" + name_ + "." + it.key() + "'");
    }
  }
  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      fail(ErrorCode::kConfig, name_ + "." + key + ": " + e.what());
    }
  }
  const json* sub(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

void read_adam(const json* j, const std::string& name, num::AdamConfig& a) {
  if (!j) return;
  Section s(*j, name);
  s.get("lr", a.peak_lr);
  s.get("warmup", a.warmup_fraction);
  s.get("weight_decay", a.weight_decay);
  s.get("clip_norm", a.clip_norm);
}

}  // namespace

json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["out"] = out.string();
  j["jobs"] = jobs;
  j["world"] = {{"entities_per_domain", world.entities_per_domain},
                {"tier_fractions", world.tier_fractions},
                {"frequent_repeats", world.frequent_repeats},
                {"zipf_exponent", world.zipf_exponent},
                {"domains", domains}};
  j["splits"] = {{"val", splits.val}, {"test", splits.test}, {"ood_per_domain", splits.ood_per_domain}};
  j["lm"] = {{"layers", lm.layers},
             {"heads", lm.heads},
             {"width", lm.width},
             {"ff_width", lm.ff_width},
             {"max_len", lm.max_len},
             {"epochs", lm_training.epochs},
             {"batch_tokens", lm_training.batch_tokens},
             {"adam", adam_json(lm_training.adam)}};
  j["generation"] = {{"max_new", max_new}};
  j["annotator"] = {{"kind", annotator == data::AnnotatorKind::kOracle ? "oracle" : "remote"},
                    {"endpoint", remote.endpoint},
                    {"model", remote.model},
                    {"token_env", remote.token_env},
                    {"max_retries", remote.max_retries},
                    {"timeout_seconds", remote.timeout_seconds},
                    {"backoff_seconds", remote.backoff_seconds},
                    {"max_in_flight", remote.max_in_flight}};
  j["features"] = json::parse(features.to_json());
  auto h = json::parse(head.to_json());
  h.erase("input_dim");
  h.erase("seed");
  j["head"] = h;
  j["head_training"] = {{"epochs", head_training.epochs},
                        {"batch_claims", head_training.batch_claims},
                        {"adam", adam_json(head_training.adam)},
                        {"tune_budget", tune_budget}};
  j["baselines"] = {{"saplma",
                     {{"layer", saplma.layer == SIZE_MAX ? json(nullptr) : json(saplma.layer)},
                      {"hidden", saplma.hidden},
                      {"epochs", saplma.epochs},
                      {"batch_tokens", saplma.batch_tokens},
                      {"adam", adam_json(saplma.adam)}}},
                    {"lookback", {{"iterations", lookback.iterations}, {"lr", lookback.learning_rate}, {"l2", lookback.l2}}},
                    {"factoscope_top_m", factoscope_top_m}};
  j["eval"] = {{"splits", eval_splits}};
  j["sweep"] = {{"windows", sweep_windows}};
  j["analyze"] = {{"offsets", analyze_offsets}, {"split", analyze_split}, {"permutations", permutations}};
  j["bench"] = {{"prompts", bench_prompts}, {"repetitions", bench_repetitions}};
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  {
    Section top(j, "config");
    top.get("seed", c.seed);
    std::string out = c.out.string();
    top.get("out", out);
    c.out = out;
    top.get("jobs", c.jobs);
    if (const auto* w = top.sub("world")) {
      Section s(*w, "world");
      if (s.sub("entities_per_domain")) c.world.entities_per_domain.clear();
      s.get("entities_per_domain", c.world.entities_per_domain);
      s.get("tier_fractions", c.world.tier_fractions);
      s.get("frequent_repeats", c.world.frequent_repeats);
      s.get("zipf_exponent", c.world.zipf_exponent);
      s.get("domains", c.domains);
    }
    if (const auto* sp = top.sub("splits")) {
      Section s(*sp, "splits");
      s.get("val", c.splits.val);
      s.get("test", c.splits.test);
      s.get("ood_per_domain", c.splits.ood_per_domain);
    }
    if (const auto* l = top.sub("lm")) {
      Section s(*l, "lm");
      s.get("layers", c.lm.layers);
      s.get("heads", c.lm.heads);
      s.get("width", c.lm.width);
      s.get("ff_width", c.lm.ff_width);
      s.get("max_len", c.lm.max_len);
      s.get("epochs", c.lm_training.epochs);
      s.get("batch_tokens", c.lm_training.batch_tokens);
      read_adam(s.sub("adam"), "lm.adam", c.lm_training.adam);
    }
    if (const auto* g = top.sub("generation")) {
      Section s(*g, "generation");
      s.get("max_new", c.max_new);
    }
    if (const auto* a = top.sub("annotator")) {
      Section s(*a, "annotator");
      std::string kind = "oracle";
      s.get("kind", kind);
      if (kind == "oracle") {
        c.annotator = data::AnnotatorKind::kOracle;
      } else if (kind == "remote") {
        c.annotator = data::AnnotatorKind::kRemote;
      } else {
        fail(ErrorCode::kConfig, "annotator.kind must be 'oracle' or 'remote', got '" + kind + "'");
      }
      s.get("endpoint", c.remote.endpoint);
      s.get("model", c.remote.model);
      s.get("token_env", c.remote.token_env);
      s.get("max_retries", c.remote.max_retries);
      s.get("timeout_seconds", c.remote.timeout_seconds);
      s.get("backoff_seconds", c.remote.backoff_seconds);
      s.get("max_in_flight", c.remote.max_in_flight);
    }
    if (const auto* f = top.sub("features")) {
      Section s(*f, "features");
      for (const char* k : {"families", "window", "top_m", "layers"}) s.sub(k);
      c.features = feat::FeatureSpec::from_json(f->dump());
    }
    if (const auto* h = top.sub("head")) {
      Section s(*h, "head");
      for (const char* k : {"reduction_width", "encoder_layers", "encoder_width", "encoder_heads", "classifier_hidden",
                            "dropout", "max_len", "positive_weight"})
        s.sub(k);
      c.head = head::UQHeadConfig::from_json(h->dump());
    }
    if (const auto* t = top.sub("head_training")) {
      Section s(*t, "head_training");
      s.get("epochs", c.head_training.epochs);
      s.get("batch_claims", c.head_training.batch_claims);
      s.get("tune_budget", c.tune_budget);
      read_adam(s.sub("adam"), "head_training.adam", c.head_training.adam);
    }
    if (const auto* b = top.sub("baselines")) {
      Section s(*b, "baselines");
      if (const auto* sp = s.sub("saplma")) {
        Section ss(*sp, "baselines.saplma");
        if (const auto* layer = ss.sub("layer"); layer && !layer->is_null()) c.saplma.layer = layer->get<std::size_t>();
        ss.get("hidden", c.saplma.hidden);
        ss.get("epochs", c.saplma.epochs);
        ss.get("batch_tokens", c.saplma.batch_tokens);
        read_adam(ss.sub("adam"), "baselines.saplma.adam", c.saplma.adam);
      }
      if (const auto* lb = s.sub("lookback")) {
        Section ls(*lb, "baselines.lookback");
        ls.get("iterations", c.lookback.iterations);
        ls.get("lr", c.lookback.learning_rate);
        ls.get("l2", c.lookback.l2);
      }
      s.get("factoscope_top_m", c.factoscope_top_m);
    }
    if (const auto* e = top.sub("eval")) {
      Section s(*e, "eval");
      s.get("splits", c.eval_splits);
    }
    if (const auto* sw = top.sub("sweep")) {
      Section s(*sw, "sweep");
      s.get("windows", c.sweep_windows);
    }
    if (const auto* an = top.sub("analyze")) {
      Section s(*an, "analyze");
      s.get("offsets", c.analyze_offsets);
      s.get("split", c.analyze_split);
      s.get("permutations", c.permutations);
    }
    if (const auto* be = top.sub("bench")) {
      Section s(*be, "bench");
      s.get("prompts", c.bench_prompts);
      s.get("repetitions", c.bench_repetitions);
    }
  }
  c.derive_seeds();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::kConfig, "config file not found: " + path.string());
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, path.string() + ": " + e.what());
  }
  return from_json(j);
}

json stage_config(const RunConfig& c, const std::string& stage) {
  const auto j = c.to_json();
  json s{{"seed", c.seed}};
  if (stage == "world") {
    s["world"] = j["world"];
    s["splits"] = j["splits"];
  } else if (stage == "train-lm") {
    s["lm"] = j["lm"];
  } else if (stage == "gen-data") {
    s["generation"] = j["generation"];
    s["annotator"] = j["annotator"];
  } else if (stage == "features") {
    s["features"] = j["features"];
    s["saplma_layer"] = j["baselines"]["saplma"]["layer"];
    s["factoscope_top_m"] = j["baselines"]["factoscope_top_m"];
  } else if (stage == "train-head") {
    s["head"] = j["head"];
    s["head_training"] = j["head_training"];
    s["baselines"] = j["baselines"];
  } else if (stage == "eval") {
    s["eval"] = j["eval"];
  } else if (stage == "sweep") {
    s["sweep"] = j["sweep"];
    s["features"] = j["features"];
    s["head"] = j["head"];
    s["head_training"] = j["head_training"];
  } else if (stage == "analyze") {
    s["analyze"] = j["analyze"];
  } else if (stage == "bench") {
    s["bench"] = j["bench"];
    s["generation"] = j["generation"];
  } else {
    fail(ErrorCode::kConfig, "unknown stage '" + stage + "'");
  }
  return s;
}

}  // namespace uq::cli
