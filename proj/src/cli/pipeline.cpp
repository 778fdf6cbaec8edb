#include "uq/cli/pipeline.hpp"

#include <chrono>
#include <cstring>
#include <map>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "json.hpp"
#include "uq/baselines/baselines.hpp"
#include "uq/common/error.hpp"
#include "uq/common/io.hpp"
#include "uq/eval/analysis.hpp"
#include "uq/eval/bench.hpp"
#include "uq/eval/report.hpp"
#include "uq/features/store.hpp"
#include "uq/head/tune.hpp"

namespace uq::cli {

using nlohmann::json;
namespace fs = std::filesystem;

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"world", "train-lm", "gen-data", "features", "train-head",
                                              "eval",  "sweep",    "analyze",  "bench"};
  return names;
}

const std::vector<std::string>& stage_dependencies(const std::string& stage) {
  static const std::map<std::string, std::vector<std::string>> deps{
      {"world", {}},
      {"train-lm", {"world"}},
      {"gen-data", {"world", "train-lm"}},
      {"features", {"train-lm", "gen-data"}},
      {"train-head", {"train-lm", "gen-data", "features"}},
      {"eval", {"gen-data", "features", "train-head"}},
      {"sweep", {"train-lm", "gen-data"}},
      {"analyze", {"gen-data"}},
      {"bench", {"world", "train-lm", "train-head"}},
  };
  auto it = deps.find(stage);
  if (it == deps.end()) fail(ErrorCode::kConfig, "unknown stage '" + stage + "'");
  return it->second;
}

std::string lm_digest(const lm::LMWeights& weights) {
  std::string bytes;
  for (const auto& p : weights.parameters()) {
    const auto d = p.data();
    bytes.append(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(float));
  }
  return sha256_hex(bytes);
}

namespace {

const char* kUHead = "UHead";
const char* kSaplma = "SAPLMA";
const char* kLookback = "Lookback";
const char* kFactoscope = "Factoscope";
const std::vector<std::string> kMethods{kUHead, kSaplma, kLookback, kFactoscope, "MCP", "Perplexity", "MTE"};

// --- world artifacts --------------------------------------------------------

void write_world(const fs::path& dir, const data::FactWorld& world, const std::vector<data::Prompt>& prompts) {
  fs::create_directories(dir);
  std::string entities;
  for (const auto& e : world.entities) {
    entities += json{{"id", e.id}, {"name", e.name}, {"domain", e.domain}, {"tier", data::tier_name(e.tier)}, {"values", e.values}}
                    .dump() +
                "\n";
  }
  write_text_file(dir / "entities.jsonl", entities);
  std::string vocab;
  for (const auto& w : world.vocabulary()) vocab += w + "\n";
  write_text_file(dir / "vocab.txt", vocab);
  std::string corpus;
  for (const auto& doc : data::render_corpus(world, world.config.seed)) corpus += doc + "\n";
  write_text_file(dir / "corpus.txt", corpus);
  std::string ps;
  for (const auto& p : prompts) {
    ps += json{{"entity", p.entity}, {"domain", p.domain}, {"split", p.split}, {"text", p.text}}.dump() + "\n";
  }
  write_text_file(dir / "prompts.jsonl", ps);
}

data::FactWorld read_world(const fs::path& dir, const data::WorldConfig& config) {
  data::FactWorld w;
  w.config = config;
  for (const auto& line : read_lines(dir / "entities.jsonl")) {
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      data::Entity e;
      e.id = j.at("id");
      e.name = j.at("name");
      e.domain = j.at("domain");
      e.tier = data::tier_from_name(j.at("tier"));
      e.values = j.at("values").get<std::vector<std::string>>();
      if (e.id != w.entities.size()) fail(ErrorCode::kFormat, "entities.jsonl ids are not consecutive");
      w.entities.push_back(std::move(e));
    } catch (const json::exception& e) {
      fail(ErrorCode::kFormat, (dir / "entities.jsonl").string() + ": " + e.what());
    }
  }
  return w;
}

lm::Tokenizer read_tokenizer(const fs::path& dir) {
  std::vector<std::string> words;
  for (const auto& line : read_lines(dir / "vocab.txt"))
    if (!line.empty()) words.push_back(line);
  return lm::Tokenizer(words);
}

std::vector<data::Prompt> read_prompts(const fs::path& dir) {
  std::vector<data::Prompt> out;
  for (const auto& line : read_lines(dir / "prompts.jsonl")) {
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      out.push_back({j.at("entity"), j.at("domain"), j.at("split"), j.at("text")});
    } catch (const json::exception& e) {
      fail(ErrorCode::kFormat, (dir / "prompts.jsonl").string() + ": " + e.what());
    }
  }
  return out;
}

lm::LMWeights read_lm(const fs::path& run) { return lm::load_lm(run / "train-lm" / "lm.uql"); }

std::map<std::size_t, const feat::FeatureMatrix*> by_generation(const std::vector<feat::FeatureMatrix>& mats) {
  std::map<std::size_t, const feat::FeatureMatrix*> out;
  for (const auto& m : mats) out[m.generation] = &m;
  return out;
}

// Feature matrices re-ordered to run parallel to dataset.generations.
std::vector<feat::FeatureMatrix> aligned(const data::Dataset& ds, const std::vector<feat::FeatureMatrix>& mats) {
  const auto index = by_generation(mats);
  std::vector<feat::FeatureMatrix> out;
  for (const auto& g : ds.generations) {
    auto it = index.find(g.id);
    if (it == index.end()) fail(ErrorCode::kCoverage, fmt::format("no features for generation {}", g.id));
    out.push_back(*it->second);
  }
  return out;
}

std::string epoch_csv(const head::HeadTrainReport& r) {
  std::string out = "epoch,train_loss,val_pr_auc\n";
  for (const auto& e : r.epochs) out += fmt::format("{},{:.6f},{:.6f}\n", e.epoch, e.train_loss, e.val_pr_auc);
  return out;
}

std::string fixed(double v) { return fmt::format("{:.6f}", v); }

}  // namespace

Pipeline::Pipeline(RunConfig config, bool force) : config_(std::move(config)), force_(force), manifest_(config_.out) {
  config_.derive_seeds();
  config_.validate();
}

StageStatus Pipeline::run(const std::string& stage) {
  const auto& deps = stage_dependencies(stage);
  const auto hash = config_hash(stage_config(config_, stage));
  std::map<std::string, std::string> inputs;
  for (const auto& d : deps) {
    const auto o = manifest_.verified_outputs(d, config_hash(stage_config(config_, d)));
    inputs.insert(o.begin(), o.end());
  }
  const fs::path sub = stage;
  if (!force_) {
    if (const auto* r = manifest_.find(stage); r && r->config_hash == hash && r->inputs == inputs) {
      bool intact = !r->outputs.empty();
      for (const auto& [rel, sha] : r->outputs) {
        if (!fs::exists(config_.out / rel) || sha256_file(config_.out / rel) != sha) intact = false;
      }
      if (intact) {
        spdlog::info("{}: up to date", stage);
        return StageStatus::kUpToDate;
      }
    }
  }
  spdlog::info("{}: running", stage);
  manifest_.erase(stage);
  manifest_.save();
  fs::remove_all(config_.out / sub);
  fs::create_directories(config_.out / sub);
  const auto t0 = std::chrono::steady_clock::now();
  if (stage == "world") world();
  else if (stage == "train-lm") train_lm();
  else if (stage == "gen-data") gen_data();
  else if (stage == "features") features();
  else if (stage == "train-head") train_head();
  else if (stage == "eval") eval();
  else if (stage == "sweep") sweep();
  else if (stage == "analyze") analyze();
  else if (stage == "bench") bench();
  StageRecord rec;
  rec.config_hash = hash;
  rec.inputs = std::move(inputs);
  rec.outputs = manifest_.hash_tree(sub);
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  spdlog::info("{}: done in {:.1f} s", stage, rec.seconds);
  manifest_.record(stage, std::move(rec));
  manifest_.save();
  return StageStatus::kRan;
}

void Pipeline::run_all() {
  for (const auto& s : stage_names()) run(s);
}

void Pipeline::world() {
  const auto w = data::build_world(config_.world);
  const auto prompts = data::make_prompts(w, config_.domain_list(), config_.splits);
  write_world(config_.out / "world", w, prompts);
  std::map<std::string, std::array<std::size_t, 3>> counts;
  for (const auto& e : w.entities) ++counts[e.domain][static_cast<int>(e.tier)];
  std::string csv = "domain,frequent,rare,unseen\n";
  for (const auto& [d, c] : counts) csv += fmt::format("{},{},{},{}\n", d, c[0], c[1], c[2]);
  write_text_file(config_.out / "world" / "tiers.csv", csv);
  spdlog::info("world: {} entities, {} prompts", w.entities.size(), prompts.size());
}

void Pipeline::train_lm() {
  const auto wdir = config_.out / "world";
  const auto tok = read_tokenizer(wdir);
  const auto w = read_world(wdir, config_.world);
  std::vector<std::vector<lm::TokenId>> corpus;
  for (const auto& line : read_lines(wdir / "corpus.txt"))
    if (!line.empty()) corpus.push_back(data::encode_document(tok, line));
  auto lc = config_.lm;
  lc.vocab = tok.size();
  std::size_t tokens = 0;
  for (const auto& d : corpus) tokens += d.size();
  spdlog::info("train-lm: {} documents, {} tokens, vocab {}", corpus.size(), tokens, lc.vocab);
  auto opts = config_.lm_training;
  opts.on_epoch = [&](std::size_t e, double loss) {
    spdlog::info("train-lm: epoch {}/{} mean loss {:.4f}", e, opts.epochs, loss);
  };
  auto result = lm::train_lm(lc, corpus, opts);
  const auto dir = config_.out / "train-lm";
  lm::save_lm(dir / "lm.uql", result.weights);
  std::string curve = "step,loss\n";
  for (const auto& p : result.loss_curve) curve += fmt::format("{},{:.6f}\n", p.step, p.loss);
  write_text_file(dir / "loss_curve.csv", curve);

  // Answer perplexity per tier: memorized facts should be much easier.
  std::array<double, 3> nll{};
  std::array<std::size_t, 3> n{};
  for (const auto& e : w.entities) {
    const int t = static_cast<int>(e.tier);
    if (n[t] >= 200) continue;
    const auto doc = data::encode_document(tok, data::prompt_text(e) + " " + data::answer_text(e));
    const std::size_t from = 1 + tok.encode(data::prompt_text(e)).size();
    nll[t] += lm::mean_nll(result.weights, doc, from);
    ++n[t];
  }
  std::string mem = "tier,entities,answer_perplexity\n";
  for (int t = 0; t < 3; ++t) {
    if (!n[t]) continue;
    mem += fmt::format("{},{},{:.4f}\n", data::tier_name(static_cast<data::Tier>(t)), n[t],
                       std::exp(nll[t] / static_cast<double>(n[t])));
  }
  write_text_file(dir / "memorization.csv", mem);
}

void Pipeline::gen_data() {
  const auto wdir = config_.out / "world";
  const auto w = read_world(wdir, config_.world);
  const auto tok = read_tokenizer(wdir);
  const auto prompts = read_prompts(wdir);
  const auto weights = read_lm(config_.out);
  data::BuildOptions bo;
  bo.max_new = config_.max_new;
  bo.jobs = config_.jobs;
  bo.annotator = config_.annotator;
  bo.remote = config_.remote;
  const auto ds = data::build_dataset(w, tok, weights, prompts, bo);
  const auto dir = config_.out / "gen-data";
  data::write_dataset(dir / "dataset", ds);

  std::string tiers = "tier,labeled,unsupported,rate\n";
  for (const auto& [t, r] : data::unsupported_rate_by_tier(ds)) {
    tiers += fmt::format("{},{},{},{:.6f}\n", data::tier_name(t), r.labeled, r.unsupported, r.rate());
  }
  write_text_file(dir / "tier_rates.csv", tiers);
  std::string splits = "split,generations,claims,labeled,unsupported\n";
  for (const auto& name : ds.splits()) {
    std::size_t claims = 0, labeled = 0, pos = 0;
    const auto gens = ds.split(name);
    for (const auto* g : gens) {
      claims += g->claims.size();
      for (const auto& c : g->claims) {
        labeled += c.labeled();
        pos += c.positive();
      }
    }
    splits += fmt::format("{},{},{},{},{}\n", name, gens.size(), claims, labeled, pos);
  }
  write_text_file(dir / "splits.csv", splits);
  spdlog::info("gen-data: {} generations, {} labelled training claims", ds.generations.size(), ds.labeled_count("train"));
  // Last, so that the summaries above exist even for a degenerate split.
  data::check_prevalence(ds);
}

namespace {

struct FeatureSets {
  feat::FeatureSpec uhead, saplma, lookback, factoscope;
};

FeatureSets feature_sets(const RunConfig& c, const lm::LMConfig& lm) {
  return {c.features, c.saplma.spec(lm), feat::FeatureSpec::only(feat::Family::kLookback),
          base::factoscope_spec(c.factoscope_top_m)};
}

}  // namespace

void Pipeline::features() {
  const auto weights = read_lm(config_.out);
  const auto ds = data::read_dataset(config_.out / "gen-data" / "dataset");
  const auto sets = feature_sets(config_, weights.config);
  const auto dir = config_.out / "features";
  for (const auto& [name, spec] : std::vector<std::pair<std::string, feat::FeatureSpec>>{
           {"uhead", sets.uhead}, {"saplma", sets.saplma}, {"lookback", sets.lookback}, {"factoscope", sets.factoscope}}) {
    spec.validate(weights.config);
    const auto mats = feat::extract_dataset(ds, spec, weights, config_.jobs);
    feat::append_features(dir / name, mats);
    spdlog::info("features: {} ({} columns)", name, feat::feature_dim(spec, weights.config));
  }
}

void Pipeline::train_head() {
  const auto lm_path = config_.out / "train-lm" / "lm.uql";
  const auto weights = read_lm(config_.out);
  const auto file_before = sha256_file(lm_path);
  const auto digest_before = lm_digest(weights);
  const auto ds = data::read_dataset(config_.out / "gen-data" / "dataset", false);
  const auto fdir = config_.out / "features";
  const auto train = head::claim_examples(ds, "train");
  const auto val = head::claim_examples(ds, "val");
  const auto dir = config_.out / "train-head";

  auto hc = config_.head;
  auto opt = config_.head_training;
  const auto spec = config_.features;
  if (config_.tune_budget > 0) {
    // The window stays at the configured value: the stored UHead features
    // (and so eval) are extracted with it.
    head::SearchSpace space;
    space.windows = {spec.window};
    const auto full = data::read_dataset(config_.out / "gen-data" / "dataset", {"train", "val"}, true);
    const auto r = head::tune_hyperparameters(full, weights, spec, hc, opt, space, config_.tune_budget,
                                              config_.seed + 7, config_.jobs);
    head::write_trial_log(dir / "tuning.csv", r);
    opt.adam.peak_lr = r.best.learning_rate;
    opt.epochs = r.best.epochs;
    opt.adam.warmup_fraction = r.best.warmup;
    opt.adam.weight_decay = r.best.weight_decay;
    hc.dropout = r.best.dropout;
    spdlog::info("train-head: tuned lr={} epochs={} val PR-AUC {:.3f}", opt.adam.peak_lr, opt.epochs, r.best.val_pr_auc);
  }
  {
    const auto mats = aligned(ds, feat::read_features(fdir / "uhead"));
    auto r = head::train_head(mats, train, val, spec, weights.config, hc, opt);
    head::save_head(dir / "uhead.uqh", r.head);
    write_text_file(dir / "uhead_epochs.csv", epoch_csv(r.report));
    spdlog::info("train-head: UHead best epoch {} val PR-AUC {:.3f}", r.report.best_epoch, r.report.best_val_pr_auc);
  }
  {
    const auto mats = aligned(ds, feat::read_features(fdir / "saplma"));
    const auto m = base::saplma_train(mats, train, weights.config, config_.saplma);
    base::save_saplma(dir / "saplma.bin", m);
  }
  {
    const auto mats = aligned(ds, feat::read_features(fdir / "lookback"));
    base::save_lookback(dir / "lookback.bin", base::lookback_train(mats, train, config_.lookback));
  }
  {
    const auto mats = aligned(ds, feat::read_features(fdir / "factoscope"));
    auto r = base::factoscope_head(mats, train, val, weights.config, config_.head, config_.head_training,
                                   config_.factoscope_top_m);
    head::save_head(dir / "factoscope.uqh", r.head);
    write_text_file(dir / "factoscope_epochs.csv", epoch_csv(r.report));
  }
  const auto file_after = sha256_file(lm_path);
  const auto digest_after = lm_digest(weights);
  write_text_file(dir / "frozen_lm.json", json{{"file_before", file_before},
                                               {"file_after", file_after},
                                               {"params_before", digest_before},
                                               {"params_after", digest_after}}
                                              .dump(2) +
                                              "\n");
  if (file_before != file_after || digest_before != digest_after) {
    fail(ErrorCode::kCompatibility, "the LM changed during head or baseline training");
  }
}

void Pipeline::eval() {
  const auto splits = config_.eval_split_list();
  const auto ds = data::read_dataset(config_.out / "gen-data" / "dataset", splits, true);
  const auto hdir = config_.out / "train-head";
  const auto fdir = config_.out / "features";
  const auto uhead = head::load_head(hdir / "uhead.uqh");
  const auto facto = head::load_head(hdir / "factoscope.uqh");
  const auto saplma = base::load_saplma(hdir / "saplma.bin");
  const auto lookback = base::load_lookback(hdir / "lookback.bin");
  const auto fu = feat::read_features(fdir / "uhead");
  const auto fs_ = feat::read_features(fdir / "saplma");
  const auto fl = feat::read_features(fdir / "lookback");
  const auto ff = feat::read_features(fdir / "factoscope");
  const auto iu = by_generation(fu), is = by_generation(fs_), il = by_generation(fl), iff = by_generation(ff);
  auto lookup = [](const std::map<std::size_t, const feat::FeatureMatrix*>& m, std::size_t id) {
    auto it = m.find(id);
    if (it == m.end()) fail(ErrorCode::kCoverage, fmt::format("no features for generation {}", id));
    return it->second;
  };

  std::vector<base::ClaimScore> scores;
  for (const auto& g : ds.generations) {
    if (g.claims.empty()) continue;
    std::vector<std::vector<std::size_t>> rows;
    for (const auto& c : g.claims) {
      std::vector<std::size_t> r;
      for (auto p : c.positions) r.push_back(p - g.prompt_len);
      rows.push_back(std::move(r));
    }
    const auto su = head::score_claims(uhead, *lookup(iu, g.id), rows);
    const auto sf = head::score_claims(facto, *lookup(iff, g.id), rows);
    const auto tok = saplma.token_scores(*lookup(is, g.id));
    for (std::size_t k = 0; k < g.claims.size(); ++k) {
      const auto& c = g.claims[k];
      double sap = 0.0;
      for (auto r : rows[k]) sap += tok.at(r);
      sap /= static_cast<double>(rows[k].size());
      const std::vector<std::pair<const char*, double>> per{
          {kUHead, su[k]},
          {kSaplma, sap},
          {kLookback, base::lookback_score(lookback, *lookup(il, g.id), rows[k])},
          {kFactoscope, sf[k]},
          {"MCP", base::mcp(g.trace, c.positions)},
          {"Perplexity", base::perplexity_score(g.trace, c.positions)},
          {"MTE", base::mean_token_entropy(g.trace, c.positions)}};
      for (const auto& [m, v] : per) scores.push_back({g.id, c.claim, m, v});
    }
  }
  const auto dir = config_.out / "eval";
  base::write_scores(dir / "scores.jsonl", scores);
  const auto table = eval::evaluate_methods(ds, splits, kMethods, scores);
  write_text_file(dir / "results.csv", eval::table_csv(table));
  const std::string text = eval::table_text(table) + "reference at 7B scale, in-domain: UHead 0.66, CCP 0.50\n";
  write_text_file(dir / "results.txt", text);
  spdlog::info("eval:\n{}", text);
}

void Pipeline::sweep() {
  const auto weights = read_lm(config_.out);
  const auto ds = data::read_dataset(config_.out / "gen-data" / "dataset", {"train", "val"}, true);
  const auto pts = eval::sweep_window(ds, weights, config_.sweep_windows, config_.features, config_.head,
                                      config_.head_training, config_.jobs);
  const auto dir = config_.out / "sweep";
  write_text_file(dir / "sweep.csv", eval::sweep_csv(pts));
  std::string text = "   k  val PR-AUC  best epoch\n";
  for (const auto& p : pts) text += fmt::format("{:>4}  {:>10.3f}  {:>10}\n", p.k, p.val_pr_auc, p.best_epoch);
  text += "reference at 7B scale: best windows lie in 2..5\n";
  write_text_file(dir / "sweep.txt", text);
  spdlog::info("sweep:\n{}", text);
}

void Pipeline::analyze() {
  const auto ds = data::read_dataset(config_.out / "gen-data" / "dataset", {config_.analyze_split}, true);
  const auto gens = ds.split(config_.analyze_split);
  const auto table = eval::attention_correlation(gens, config_.analyze_offsets);
  const auto dir = config_.out / "analyze";
  write_text_file(dir / "correlation.csv", eval::correlation_csv(table));
  std::string summary = "offset,tokens,max_abs_rho,null_q99,cells_above_null\n";
  for (std::size_t k = 0; k < table.offsets.size(); ++k) {
    const auto sample = eval::attention_sample(gens, table.offsets[k]);
    const auto null = eval::permutation_null(sample, config_.permutations, config_.seed + 8 + k);
    summary += fmt::format("{},{},{},{},{}\n", table.offsets[k], sample.rows(), fixed(table.max_abs[k]),
                           fixed(null.percentile), null.cells_above);
  }
  write_text_file(dir / "summary.csv", summary);
  spdlog::info("analyze:\n{}", summary);
}

void Pipeline::bench() {
  const auto wdir = config_.out / "world";
  const auto tok = read_tokenizer(wdir);
  const auto weights = read_lm(config_.out);
  const auto h = head::load_head(config_.out / "train-head" / "uhead.uqh");
  // Held-out prompts, in-domain test first.
  std::vector<std::string> prompts;
  const auto all = read_prompts(wdir);
  for (const bool in_domain : {true, false}) {
    for (const auto& p : all) {
      if (prompts.size() == config_.bench_prompts) break;
      if (p.split != "train" && (p.split == "test") == in_domain) prompts.push_back(p.text);
    }
  }
  const auto r = eval::benchmark_overhead(weights, tok, h, prompts, config_.max_new, config_.bench_repetitions,
                                          config_.out / "train-head" / "uhead.uqh");
  const auto dir = config_.out / "bench";
  write_text_file(dir / "overhead.csv", eval::overhead_csv(r));
  write_text_file(dir / "overhead.txt", eval::overhead_text(r));
  spdlog::info("bench:\n{}", eval::overhead_text(r));
}

}  // namespace uq::cli
