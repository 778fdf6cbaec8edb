#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <set>
#include <thread>

#include "error_code.hpp"
#include "httplib.h"
#include "json.hpp"
#include "tiny_pipeline.hpp"
#include "uq/common/io.hpp"
#include "uq/datagen/annotator.hpp"
#include "uq/datagen/claims.hpp"
#include "uq/datagen/dataset.hpp"
#include "uq/datagen/world.hpp"

namespace {

using namespace uq;
using namespace uq::data;
using uq::testing::code_of;

WorldConfig small_world(std::uint64_t seed = 3) {
  WorldConfig c;
  c.seed = seed;
  for (const auto& d : domains()) c.entities_per_domain[d.name] = 30;
  c.entities_per_domain[kInDomain] = 100;
  return c;
}

TEST(World, SameSeedSameWorld) {
  auto a = build_world(small_world(9));
  auto b = build_world(small_world(9));
  ASSERT_EQ(a.entities.size(), b.entities.size());
  for (std::size_t i = 0; i < a.entities.size(); ++i) {
    EXPECT_EQ(a.entities[i].name, b.entities[i].name);
    EXPECT_EQ(a.entities[i].tier, b.entities[i].tier);
    EXPECT_EQ(a.entities[i].values, b.entities[i].values);
  }
  auto c = build_world(small_world(10));
  bool differs = false;
  for (std::size_t i = 0; i < a.entities.size(); ++i) differs |= a.entities[i].values != c.entities[i].values;
  EXPECT_TRUE(differs);
}

TEST(World, TierCountsUseLargestRemainder) {
  EXPECT_EQ(tier_counts(100, {0.5, 0.3, 0.2}), (std::array<std::size_t, 3>{50, 30, 20}));
  EXPECT_EQ(tier_counts(10, {0.34, 0.33, 0.33}), (std::array<std::size_t, 3>{4, 3, 3}));
  // 7 * (1/3) each: remainders tie, earlier tiers win.
  EXPECT_EQ(tier_counts(7, {1.0 / 3, 1.0 / 3, 1.0 / 3}), (std::array<std::size_t, 3>{3, 2, 2}));
}

TEST(World, TierSplitOverHundredEntities) {
  WorldConfig c;
  c.entities_per_domain[kInDomain] = 100;
  c.tier_fractions = {0.5, 0.3, 0.2};
  auto w = build_world(c);
  std::array<int, 3> n{};
  for (const auto& e : w.entities) ++n[static_cast<int>(e.tier)];
  EXPECT_EQ(n, (std::array<int, 3>{50, 30, 20}));
}

TEST(World, ValuesComeFromTheirPools) {
  auto w = build_world(small_world());
  for (const auto& e : w.entities) {
    const auto& d = domain(e.domain);
    ASSERT_EQ(e.values.size(), d.attributes.size());
    EXPECT_GE(e.values.size(), 3u);
    for (std::size_t a = 0; a < e.values.size(); ++a) {
      const auto& pool = value_pool(d.attributes[a].pool);
      EXPECT_NE(std::find(pool.begin(), pool.end(), e.values[a]), pool.end()) << e.name << " " << d.attributes[a].name;
    }
  }
}

TEST(World, EveryDomainHasEveryTier) {
  auto w = build_world(small_world());
  for (const auto& d : domains()) {
    std::set<Tier> seen;
    for (const auto& e : w.entities)
      if (e.domain == d.name) seen.insert(e.tier);
    EXPECT_EQ(seen.size(), 3u) << d.name;
  }
}

TEST(World, RejectsBadFractions) {
  auto c = small_world();
  c.tier_fractions = {0.5, 0.5, 0.1};
  EXPECT_EQ(code_of([&] { build_world(c); }), ErrorCode::kConfig);
  c.tier_fractions = {1.0, 0.0, 0.0};
  EXPECT_EQ(code_of([&] { build_world(c); }), ErrorCode::kConfig);
}

TEST(World, ZipfSkewsValueFrequencies) {
  WorldConfig c;
  c.entities_per_domain[kInDomain] = 2000;
  auto w = build_world(c);
  std::map<std::string, int> counts;
  for (const auto& e : w.entities) ++counts[*e.value_of("occupation")];
  std::vector<int> v;
  for (const auto& [k, n] : counts) v.push_back(n);
  std::sort(v.rbegin(), v.rend());
  // Harmonic weights over 24 values: the mode carries 1/H_24 ~ 26%.
  EXPECT_GT(v.front(), 4 * v.back());
  EXPECT_NEAR(v.front() / 2000.0, 0.265, 0.04);
}

TEST(Corpus, UnseenEntitiesNeverAppear) {
  auto w = build_world(small_world());
  auto docs = render_corpus(w, 1);
  std::set<std::string> words;
  for (const auto& d : docs)
    for (const auto& t : lm::Tokenizer::split_words(d)) words.insert(t);
  for (const auto& e : w.entities) {
    EXPECT_EQ(words.count(e.name) > 0, e.tier != Tier::kUnseen) << e.name;
  }
}

TEST(Corpus, FrequentEntityRepeatedExactly) {
  auto c = small_world();
  c.frequent_repeats = 50;
  auto w = build_world(c);
  auto docs = render_corpus(w, 2);
  for (const auto& e : w.entities) {
    if (e.tier == Tier::kUnseen) continue;
    const auto needle = " " + e.name + ".";
    const auto n = std::count_if(docs.begin(), docs.end(), [&](const std::string& d) { return d.find(needle) != std::string::npos; });
    EXPECT_EQ(n, e.tier == Tier::kFrequent ? 50 : 1) << e.name;
  }
}

TEST(Corpus, TokenCountIsSumOfDocuments) {
  auto w = build_world(small_world());
  lm::Tokenizer tok(w.vocabulary());
  auto docs = render_corpus(w, 3);
  std::size_t total = 0;
  std::string joined;
  for (const auto& d : docs) {
    total += encode_document(tok, d).size();
    joined += d + " ";
  }
  // Each document gains <bos> and <eos>; no word maps to <unk>.
  auto flat = tok.encode(joined);
  EXPECT_EQ(total, flat.size() + 2 * docs.size());
  EXPECT_EQ(std::count(flat.begin(), flat.end(), lm::Tokenizer::kUnk), 0);
}

TEST(Corpus, ShuffleDependsOnSeed) {
  auto w = build_world(small_world());
  EXPECT_EQ(render_corpus(w, 4), render_corpus(w, 4));
  EXPECT_NE(render_corpus(w, 4), render_corpus(w, 5));
}

TEST(Prompts, BiographyTemplate) {
  Entity e;
  e.name = "E17";
  e.domain = kInDomain;
  EXPECT_EQ(prompt_text(e), "Tell me a bio of E17.");
}

TEST(Prompts, SplitsAreDisjointAndSized) {
  WorldConfig c;
  c.seed = 2;
  for (const auto& d : domains()) c.entities_per_domain[d.name] = 150;
  c.entities_per_domain[kInDomain] = 350;
  auto w = build_world(c);
  std::vector<std::string> names;
  for (const auto& d : domains()) names.push_back(d.name);
  auto prompts = make_prompts(w, names, SplitConfig{});
  std::map<std::string, std::size_t> per_split;
  std::set<std::size_t> seen;
  for (const auto& p : prompts) {
    ++per_split[p.split];
    EXPECT_TRUE(seen.insert(p.entity).second) << "entity prompted twice";
    const auto& e = w.entity(p.entity);
    EXPECT_EQ(p.text, prompt_text(e));
    EXPECT_EQ(p.domain, e.domain);
    if (p.domain == kInDomain) {
      EXPECT_TRUE(p.split == "train" || p.split == "val" || p.split == "test");
    } else {
      EXPECT_EQ(p.split, p.domain);
    }
  }
  EXPECT_EQ(per_split["val"], 100u);
  EXPECT_EQ(per_split["test"], 100u);
  EXPECT_EQ(per_split["train"], 150u);
  for (const auto& d : domains())
    if (d.name != kInDomain) EXPECT_EQ(per_split[d.name], 100u) << d.name;
}

TEST(Prompts, UnknownDomainRejected) {
  auto w = build_world(small_world());
  EXPECT_EQ(code_of([&] { make_prompts(w, {"poems"}, SplitConfig{}); }), ErrorCode::kDomain);
  EXPECT_EQ(code_of([&] { make_prompts(w, {}, SplitConfig{}); }), ErrorCode::kDomain);
}

class Claims : public ::testing::Test {
 protected:
  void SetUp() override {
    world_ = build_world(small_world());
    tok_ = std::make_unique<lm::Tokenizer>(world_.vocabulary());
    entity_ = &world_.entities.front();
    ASSERT_EQ(entity_->domain, kInDomain);
  }
  std::vector<lm::TokenId> sequence(const std::string& answer, std::size_t* prompt_len) {
    auto ids = tok_->encode(prompt_text(*entity_));
    ids.insert(ids.begin(), lm::Tokenizer::kBos);
    *prompt_len = ids.size();
    auto body = tok_->encode(answer);
    ids.insert(ids.end(), body.begin(), body.end());
    ids.push_back(lm::Tokenizer::kEos);
    return ids;
  }
  FactWorld world_;
  std::unique_ptr<lm::Tokenizer> tok_;
  const Entity* entity_ = nullptr;
};

TEST_F(Claims, ThreeTemplateClausesGiveThreeDisjointClaims) {
  std::size_t n = 0;
  auto ids = sequence("They were born in 1854. They worked as poet. They lived in Avon.", &n);
  auto claims = extract_claims(*tok_, ids, n);
  ASSERT_EQ(claims.size(), 3u);
  EXPECT_EQ(claims[0].attribute, "born");
  EXPECT_EQ(claims[0].value, "1854");
  EXPECT_EQ(claims[1].attribute, "occupation");
  EXPECT_EQ(claims[2].attribute, "residence");
  EXPECT_EQ(claims[2].value, "Avon");
  std::set<std::size_t> used;
  for (const auto& c : claims) {
    EXPECT_EQ(c.positions.size(), lm::Tokenizer::split_words(find_attribute(c.attribute)->clause).size() + 1);
    for (auto p : c.positions) {
      EXPECT_GE(p, n);
      EXPECT_TRUE(used.insert(p).second) << "overlapping spans";
    }
  }
  // The span covers the clause words and leaves the period out.
  EXPECT_EQ(tok_->token(ids[claims[0].positions.back() + 1]), ".");
}

TEST_F(Claims, MalformedClauseIsUnparsed) {
  std::size_t n = 0;
  auto ids = sequence("They were born 1854. They worked as poet painter. It lies in Avon.", &n);
  auto claims = extract_claims(*tok_, ids, n);
  ASSERT_EQ(claims.size(), 3u);
  EXPECT_EQ(claims[0].attribute, kUnparsed);
  EXPECT_EQ(claims[0].value, "They were born 1854");
  EXPECT_EQ(claims[1].attribute, kUnparsed);
  // A clause from another domain's template still parses; the oracle decides.
  EXPECT_EQ(claims[2].attribute, "country");
  EXPECT_EQ(oracle_label(claims[2].attribute, claims[2].value, *entity_), Label::kUnsupported);
}

TEST_F(Claims, TrailingFragmentWithoutPeriodAndEarlyEos) {
  std::size_t n = 0;
  auto ids = sequence("They worked as poet. They lived", &n);
  auto claims = extract_claims(*tok_, ids, n);
  ASSERT_EQ(claims.size(), 2u);
  EXPECT_EQ(claims[1].attribute, kUnparsed);
  // Nothing after <eos> is read.
  ids.push_back(tok_->id("They"));
  EXPECT_EQ(extract_claims(*tok_, ids, n).size(), 2u);
  // An empty generation gives no claims.
  ids.resize(n);
  EXPECT_TRUE(extract_claims(*tok_, ids, n).empty());
}

TEST_F(Claims, RandomTokenStreamsNeverCrashAndRespectInvariants) {
  std::mt19937_64 rng(17);
  std::size_t n = 0;
  const auto prompt = sequence("", &n);
  for (int trial = 0; trial < 300; ++trial) {
    auto ids = std::vector<lm::TokenId>(prompt.begin(), prompt.begin() + static_cast<std::ptrdiff_t>(n));
    const std::size_t len = rng() % 40;
    for (std::size_t i = 0; i < len; ++i) {
      // Bias towards periods so clauses are short.
      ids.push_back(rng() % 5 == 0 ? tok_->id(".") : static_cast<lm::TokenId>(rng() % tok_->size()));
    }
    auto claims = extract_claims(*tok_, ids, n);
    std::set<std::size_t> used;
    for (const auto& c : claims) {
      ASSERT_FALSE(c.positions.empty());
      for (auto p : c.positions) {
        ASSERT_GE(p, n);
        ASSERT_LT(p, ids.size());
        ASSERT_TRUE(used.insert(p).second);
      }
    }
  }
}

TEST_F(Claims, OracleLabels) {
  const auto& e = *entity_;
  const auto gold = *e.value_of("born");
  EXPECT_EQ(oracle_label("born", gold, e), Label::kSupported);
  EXPECT_EQ(oracle_label("born", gold == "1801" ? "1802" : "1801", e), Label::kUnsupported);
  EXPECT_EQ(oracle_label(kUnparsed, "They were", e), Label::kUnknown);
  EXPECT_EQ(oracle_label("director", "Abbott", e), Label::kUnsupported);
}

TEST(Labels, NamesRoundTrip) {
  for (auto l : {Label::kSupported, Label::kUnsupported, Label::kUnknown}) EXPECT_EQ(label_from_name(label_name(l)), l);
  EXPECT_EQ(code_of([] { label_from_name("true"); }), ErrorCode::kLabel);
}

// --- remote annotator against a local server -------------------------------

class FakeAnnotator {
 public:
  explicit FakeAnnotator(std::string verdict) : verdict_(std::move(verdict)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const int n = ++requests_;
      if (n <= failures_) {
        res.status = 503;
        return;
      }
      if (!required_token_.empty() && req.get_header_value("Authorization") != "Bearer " + required_token_) {
        res.status = 401;
        return;
      }
      const auto body = nlohmann::json::parse(req.body);
      const auto& messages = body.at("messages");
      last_model_ = body.at("model").get<std::string>();
      last_message_count_ = messages.size();
      const std::string content =
          messages.size() > 2 ? verdict_ : "The reference facts list the same value, so the claim holds.";
      nlohmann::json out{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}};
      res.set_content(out.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeAnnotator() {
    server_.stop();
    thread_.join();
  }
  RemoteAnnotatorConfig config() const {
    RemoteAnnotatorConfig c;
    c.endpoint = "http://127.0.0.1:" + std::to_string(port_) + "/v1";
    c.model = "checker";
    c.backoff_seconds = 0.01;
    c.timeout_seconds = 5;
    return c;
  }
  void fail_first(int n) { failures_ = n; }
  void require_token(std::string t) { required_token_ = std::move(t); }
  int requests() const { return requests_; }
  std::size_t last_message_count() const { return last_message_count_; }
  std::string last_model() const { return last_model_; }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::string verdict_;
  std::atomic<int> requests_{0};
  int failures_ = 0;
  std::string required_token_;
  std::size_t last_message_count_ = 0;
  std::string last_model_;
};

TEST(RemoteAnnotator, TwoStagesMapSupported) {
  FakeAnnotator server("Supported.");
  auto r = remote_label("E1 was born in 1854.", "E1: born 1854", server.config(), "0:0");
  EXPECT_EQ(r.label, Label::kSupported);
  EXPECT_EQ(r.retries, 0);
  EXPECT_EQ(server.requests(), 2);
  // Stage two carries the stage-one exchange plus the one-word request.
  EXPECT_EQ(server.last_message_count(), 4u);
  EXPECT_EQ(server.last_model(), "checker");
  EXPECT_FALSE(r.rationale.empty());
}

TEST(RemoteAnnotator, UnmappableVerdictIsUnknown) {
  FakeAnnotator server("maybe");
  auto r = remote_label("claim", "facts", server.config(), "0:1");
  EXPECT_EQ(r.label, Label::kUnknown);
  EXPECT_EQ(r.summary, "maybe");
}

TEST(RemoteAnnotator, RetriesTransientFailures) {
  FakeAnnotator server("unsupported");
  server.fail_first(2);
  auto r = remote_label("claim", "facts", server.config(), "3:2");
  EXPECT_EQ(r.label, Label::kUnsupported);
  EXPECT_EQ(r.retries, 2);
  EXPECT_EQ(server.requests(), 4);
}

TEST(RemoteAnnotator, GivesUpAfterMaxRetriesNamingTheClaim) {
  FakeAnnotator server("supported");
  server.fail_first(100);
  auto cfg = server.config();
  cfg.max_retries = 2;
  try {
    remote_label("claim", "facts", cfg, "7:3");
    FAIL() << "expected an annotation error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAnnotation);
    EXPECT_NE(std::string(e.what()).find("7:3"), std::string::npos);
  }
  EXPECT_EQ(server.requests(), 3);
}

TEST(RemoteAnnotator, TokenComesFromNamedEnvironmentVariable) {
  FakeAnnotator server("supported");
  server.require_token("s3cret");
  auto cfg = server.config();
  cfg.token_env = "UQ_TEST_ANNOTATOR_TOKEN";
  ::unsetenv("UQ_TEST_ANNOTATOR_TOKEN");
  EXPECT_EQ(code_of([&] { remote_label("c", "f", cfg, "0:0"); }), ErrorCode::kConfig);
  ::setenv("UQ_TEST_ANNOTATOR_TOKEN", "wrong", 1);
  EXPECT_EQ(code_of([&] { remote_label("c", "f", cfg, "0:0"); }), ErrorCode::kAnnotation);
  ::setenv("UQ_TEST_ANNOTATOR_TOKEN", "s3cret", 1);
  EXPECT_EQ(remote_label("c", "f", cfg, "0:0").label, Label::kSupported);
  ::unsetenv("UQ_TEST_ANNOTATOR_TOKEN");
}

TEST(RemoteAnnotator, UnreachableEndpointFails) {
  RemoteAnnotatorConfig cfg;
  cfg.endpoint = "http://127.0.0.1:1/v1";
  cfg.model = "m";
  cfg.max_retries = 1;
  cfg.backoff_seconds = 0.0;
  cfg.timeout_seconds = 1;
  EXPECT_EQ(code_of([&] { remote_label("c", "f", cfg, "0:0"); }), ErrorCode::kAnnotation);
  cfg.endpoint = "ftp://x";
  EXPECT_EQ(code_of([&] { remote_label("c", "f", cfg, "0:0"); }), ErrorCode::kConfig);
}

TEST(RemoteAnnotator, VerdictMapping) {
  bool ok = false;
  EXPECT_EQ(map_verdict(" Unsupported. ", &ok), Label::kUnsupported);
  EXPECT_TRUE(ok);
  EXPECT_EQ(map_verdict("UNKNOWN", &ok), Label::kUnknown);
  EXPECT_TRUE(ok);
  EXPECT_EQ(map_verdict("yes", &ok), Label::kUnknown);
  EXPECT_FALSE(ok);
}

// --- datasets built from a trained toy LM ----------------------------------

TEST(Dataset, ClaimsRespectInvariantsAndOracleIsExact) {
  const auto& p = uq::testing::tiny_pipeline();
  const auto& ds = p.dataset;
  ASSERT_EQ(ds.generations.size(), p.prompts.size());
  std::size_t rows = 0;
  for (const auto& g : ds.generations) {
    std::set<std::size_t> used;
    for (const auto& c : g.claims) {
      ++rows;
      EXPECT_EQ(c.generation, g.id);
      for (auto pos : c.positions) {
        EXPECT_GE(pos, g.prompt_len);
        EXPECT_TRUE(used.insert(pos).second);
      }
      EXPECT_EQ(oracle_label(c.attribute, c.value, p.world.entity(g.entity)), c.label);
    }
    EXPECT_EQ(g.trace.tokens, g.tokens);
  }
  EXPECT_EQ(rows, ds.claim_count());
  EXPECT_GT(ds.labeled_count("train"), 200u);
  EXPECT_NO_THROW(check_prevalence(ds));
}

TEST(Dataset, UnseenEntitiesHallucinateMoreThanFrequentOnes) {
  const auto rates = unsupported_rate_by_tier(uq::testing::tiny_pipeline().dataset);
  ASSERT_TRUE(rates.count(Tier::kFrequent) && rates.count(Tier::kUnseen));
  const double freq = rates.at(Tier::kFrequent).rate();
  const double unseen = rates.at(Tier::kUnseen).rate();
  EXPECT_GT(unseen, freq);
  EXPECT_LT(freq, 0.2);
  EXPECT_GT(unseen, 0.5);
}

TEST(Dataset, RebuildIsDeterministicAndRoundTrips) {
  const auto& p = uq::testing::tiny_pipeline();
  std::vector<Prompt> subset;
  for (const auto& pr : p.prompts)
    if (pr.split == "val" || pr.split == "movies") subset.push_back(pr);
  BuildOptions opt;
  opt.jobs = 3;
  auto a = build_dataset(p.world, p.tokenizer, p.lm, subset, opt);
  opt.jobs = 1;
  auto b = build_dataset(p.world, p.tokenizer, p.lm, subset, opt);
  const auto da = uq::testing::scratch_path("ds_a");
  const auto db = uq::testing::scratch_path("ds_b");
  write_dataset(da, a);
  write_dataset(db, b);
  for (const auto* f : {"val.jsonl", "val.traces", "movies.jsonl", "movies.traces", "splits.json"}) {
    EXPECT_EQ(sha256_file(da / f), sha256_file(db / f)) << f;
  }
  auto back = read_dataset(da);
  ASSERT_EQ(back.generations.size(), a.generations.size());
  for (std::size_t i = 0; i < a.generations.size(); ++i) {
    const auto& x = a.generations[i];
    const auto& y = back.generations[i];
    EXPECT_EQ(x.tokens, y.tokens);
    EXPECT_EQ(x.trace.logits, y.trace.logits);
    EXPECT_EQ(x.trace.attention, y.trace.attention);
    ASSERT_EQ(x.claims.size(), y.claims.size());
    for (std::size_t k = 0; k < x.claims.size(); ++k) {
      EXPECT_EQ(x.claims[k].positions, y.claims[k].positions);
      EXPECT_EQ(x.claims[k].label, y.claims[k].label);
    }
  }
  auto no_traces = read_dataset(da, {"movies"}, false);
  EXPECT_TRUE(no_traces.generations.front().trace.tokens.empty());
  EXPECT_EQ(no_traces.splits(), std::vector<std::string>{"movies"});
  std::filesystem::remove_all(da);
  std::filesystem::remove_all(db);
}

TEST(Dataset, DegenerateSplitIsRejectedByName) {
  Dataset ds;
  GenerationRecord g;
  g.split = "books";
  g.claims.push_back({0, 0, {5}, "author", "Abbott", Label::kSupported});
  g.claims.push_back({0, 1, {7}, kUnparsed, "x", Label::kUnknown});
  ds.generations.push_back(g);
  try {
    check_prevalence(ds);
    FAIL() << "expected a degenerate-data error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateData);
    EXPECT_NE(std::string(e.what()).find("books"), std::string::npos);
  }
  ds.generations[0].claims[1].label = Label::kUnsupported;
  EXPECT_NO_THROW(check_prevalence(ds));
}

TEST(Dataset, RemoteAnnotatorLabelsEveryClaim) {
  const auto& p = uq::testing::tiny_pipeline();
  std::vector<Prompt> subset(p.prompts.begin(), p.prompts.begin() + 3);
  FakeAnnotator server("unsupported");
  BuildOptions opt;
  opt.annotator = AnnotatorKind::kRemote;
  opt.remote = server.config();
  opt.remote.max_in_flight = 2;
  opt.jobs = 4;
  auto ds = build_dataset(p.world, p.tokenizer, p.lm, subset, opt);
  ASSERT_GT(ds.claim_count(), 0u);
  for (const auto& g : ds.generations)
    for (const auto& c : g.claims) EXPECT_EQ(c.label, Label::kUnsupported);
  EXPECT_EQ(server.requests(), static_cast<int>(2 * ds.claim_count()));
}

}  // namespace
