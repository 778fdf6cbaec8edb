#include "uq/datagen/world.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>

#include "uq/common/error.hpp"
#include "uq/common/random.hpp"

namespace uq::data {

const char* tier_name(Tier tier) {
  switch (tier) {
    case Tier::kFrequent: return "frequent";
    case Tier::kRare: return "rare";
    case Tier::kUnseen: return "unseen";
  }
  return "?";
}

Tier tier_from_name(const std::string& name) {
  if (name == "frequent") return Tier::kFrequent;
  if (name == "rare") return Tier::kRare;
  if (name == "unseen") return Tier::kUnseen;
  fail(ErrorCode::kFormat, "unknown tier '" + name + "'");
}

namespace {

std::vector<std::string> numbered(int first, int last) {
  std::vector<std::string> v;
  for (int y = first; y <= last; ++y) v.push_back(std::to_string(y));
  return v;
}

const std::map<std::string, std::vector<std::string>>& pools() {
  static const std::map<std::string, std::vector<std::string>> p{
      {"year", numbered(1801, 1900)},
      {"place",
       {"Avon",    "Brill",   "Corve",   "Dunmore", "Elsing",  "Farrow",  "Galt",    "Hexley",  "Ilford",  "Jessop",
        "Kendal",  "Lowick",  "Marden",  "Norley",  "Otley",   "Pelham",  "Quarry",  "Redmire", "Selby",   "Thame",
        "Ulvers",  "Varley",  "Wexcombe", "Yarrow", "Zennor",  "Ashby",   "Burford", "Calder",  "Denby",   "Eskdale",
        "Fenwick", "Garston", "Holme",   "Irwell",  "Jarrow",  "Kirkby",  "Langley", "Morvah",  "Nettle",  "Orford"}},
      {"person",
       {"Abbott",  "Barlow",  "Carver",  "Dalton",  "Ellery",  "Fowler",  "Grant",   "Hollis",  "Ingram",  "Jarvis",
        "Keller",  "Lister",  "Mercer",  "Nolan",   "Osborne", "Porter",  "Quinlan", "Rowe",    "Sutton",  "Tanner",
        "Upton",   "Vance",   "Walsh",   "Yates",   "Ashdown", "Blythe",  "Crane",   "Drury",   "Elwood",  "Finch",
        "Gale",    "Hartley", "Irving",  "Joyce",   "Kemp",    "Lowry",   "Marsh",   "Nash",    "Oakley",  "Pryce"}},
      {"occupation",
       {"painter", "chemist", "poet",    "sailor",  "judge",   "weaver",  "surgeon", "banker",  "composer", "engineer",
        "printer", "farmer",  "teacher", "soldier", "botanist", "mason",  "merchant", "baker",  "tailor",  "architect",
        "jeweller", "singer", "brewer",  "miner"}},
      {"field",
       {"physics", "botany", "law", "medicine", "music", "history", "geology", "astronomy", "theology", "mathematics",
        "zoology", "rhetoric", "anatomy", "economics", "philosophy", "optics"}},
      {"country",
       {"Arcadia", "Belmora", "Carith", "Dovria", "Estmark", "Florin", "Gallia", "Harwen", "Istra", "Jorvik",
        "Kesh", "Lorrain", "Mirova", "Norland", "Ostrava", "Pellia", "Ruthen", "Solvay", "Tarsis", "Valen"}},
      {"product",
       {"wool", "salt", "glass", "cheese", "lace", "copper", "cider", "pottery", "timber", "silk", "tin", "leather",
        "paper", "cloth", "wine", "coal"}},
      {"river",
       {"Ash", "Bure", "Cam", "Dart", "Exe", "Frome", "Glen", "Hull", "Isis", "Kennet", "Lune", "Mole", "Nene",
        "Ouse", "Tamar", "Wye"}},
      {"genre",
       {"drama", "comedy", "romance", "western", "mystery", "thriller", "fantasy", "horror", "satire", "tragedy",
        "adventure", "musical"}},
      {"material", {"granite", "marble", "brick", "sandstone", "limestone", "iron", "oak", "basalt", "slate", "flint"}},
      {"subject",
       {"horse", "ship", "harbour", "garden", "storm", "orchard", "mill", "bridge", "village", "forest", "lighthouse",
        "market", "cathedral", "meadow", "shepherd", "fisherman"}},
      {"use",
       {"farming", "printing", "weaving", "mining", "sailing", "cooking", "heating", "measuring", "signalling",
        "writing", "pumping", "lifting", "sewing", "brewing", "lighting", "surveying"}},
      {"outcome",
       {"peace", "victory", "defeat", "treaty", "stalemate", "surrender", "reform", "exile", "truce", "ruin"}},
  };
  return p;
}

}  // namespace

const std::vector<DomainDef>& domains() {
  static const std::vector<DomainDef> d{
      {"biographies",
       "Tell me a bio of",
       {{"born", "They were born in", "year"},
        {"occupation", "They worked as", "occupation"},
        {"residence", "They lived in", "place"},
        {"field", "They studied", "field"}}},
      {"cities",
       "Tell me about the city",
       {{"country", "It lies in", "country"},
        {"founded", "It was founded in", "year"},
        {"product", "It is known for", "product"},
        {"river", "It sits on the river", "river"}}},
      {"movies",
       "Tell me about the movie",
       {{"released", "It was released in", "year"},
        {"director", "It was directed by", "person"},
        {"movie_genre", "Its genre is", "genre"},
        {"filmed", "It was filmed in", "place"}}},
      {"inventions",
       "Tell me about the invention",
       {{"invented", "It was invented in", "year"},
        {"inventor", "It was created by", "person"},
        {"purpose", "It is used for", "use"},
        {"origin", "It was first made in", "place"}}},
      {"books",
       "Tell me about the book",
       {{"published", "It was published in", "year"},
        {"author", "It was written by", "person"},
        {"book_genre", "It is a book of", "genre"},
        {"setting", "It is set in", "place"}}},
      {"artworks",
       "Tell me about the artwork",
       {{"painted", "It was painted in", "year"},
        {"artist", "It was made by", "person"},
        {"subject", "It shows a", "subject"},
        {"museum", "It hangs in", "place"}}},
      {"landmarks",
       "Tell me about the landmark",
       {{"built", "It was built in", "year"},
        {"location", "It stands in", "place"},
        {"material", "It is made of", "material"},
        {"architect", "It was designed by", "person"}}},
      {"events",
       "Tell me about the event",
       {{"happened", "It happened in", "year"},
        {"venue", "It took place in", "place"},
        {"leader", "It was led by", "person"},
        {"outcome", "It ended in", "outcome"}}},
  };
  return d;
}

const DomainDef& domain(const std::string& name) {
  for (const auto& d : domains()) {
    if (d.name == name) return d;
  }
  fail(ErrorCode::kDomain, "unknown domain '" + name + "'");
}

const AttributeDef* find_attribute(const std::string& name) {
  for (const auto& d : domains())
    for (const auto& a : d.attributes)
      if (a.name == name) return &a;
  return nullptr;
}

const std::vector<std::string>& value_pool(const std::string& pool) {
  auto it = pools().find(pool);
  if (it == pools().end()) fail(ErrorCode::kDomain, "unknown value pool '" + pool + "'");
  return it->second;
}

const std::string* Entity::value_of(const std::string& attribute) const {
  const auto& attrs = data::domain(domain).attributes;
  for (std::size_t k = 0; k < attrs.size(); ++k) {
    if (attrs[k].name == attribute) return &values[k];
  }
  return nullptr;
}

WorldConfig WorldConfig::defaults() {
  WorldConfig c;
  for (const auto& d : domains()) c.entities_per_domain[d.name] = d.name == kInDomain ? 800 : 100;
  return c;
}

void WorldConfig::validate() const {
  double total = 0;
  for (double f : tier_fractions) {
    if (f < 0) fail(ErrorCode::kConfig, "tier fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) fail(ErrorCode::kConfig, "tier fractions must sum to 1");
  for (const auto& [name, n] : entities_per_domain) {
    domain(name);
    if (n > 0) {
      auto c = tier_counts(n, tier_fractions);
      if (c[0] == 0 || c[1] == 0 || c[2] == 0) {
        fail(ErrorCode::kConfig, "domain '" + name + "' with " + std::to_string(n) + " entities leaves a tier empty");
      }
    }
  }
  if (frequent_repeats < 1) fail(ErrorCode::kConfig, "frequent_repeats must be at least 1");
  if (!(zipf_exponent >= 0)) fail(ErrorCode::kConfig, "zipf_exponent must be non-negative");
}

std::array<std::size_t, 3> tier_counts(std::size_t n, const std::array<double, 3>& fractions) {
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (int t = 0; t < 3; ++t) {
    const double exact = fractions[t] * static_cast<double>(n);
    counts[t] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[t] = exact - static_cast<double>(counts[t]);
    used += counts[t];
  }
  while (used < n) {
    int best = 0;
    for (int t = 1; t < 3; ++t) {
      if (rem[t] > rem[best] + 1e-12) best = t;
    }
    ++counts[best];
    rem[best] = -1;
    ++used;
  }
  return counts;
}

const Entity* FactWorld::find(const std::string& name) const {
  if (name.size() < 2 || name[0] != 'E') return nullptr;
  try {
    std::size_t pos = 0;
    const auto id = std::stoul(name.substr(1), &pos);
    if (pos + 1 != name.size() || id >= entities.size()) return nullptr;
    return &entities[id];
  } catch (const std::exception&) {
    return nullptr;
  }
}

std::vector<std::string> FactWorld::vocabulary() const {
  std::vector<std::string> words;
  std::set<std::string> seen;
  auto add = [&](const std::string& w) {
    if (!lm::Tokenizer::is_punctuation(w) && seen.insert(w).second) words.push_back(w);
  };
  for (const auto& d : domains()) {
    for (const auto& w : lm::Tokenizer::split_words(d.prompt)) add(w);
    for (const auto& a : d.attributes)
      for (const auto& w : lm::Tokenizer::split_words(a.clause)) add(w);
  }
  for (const auto& [name, values] : pools())
    for (const auto& v : values) add(v);
  for (const auto& e : entities) add(e.name);
  return words;
}

FactWorld build_world(const WorldConfig& config) {
  config.validate();
  FactWorld world;
  world.config = config;
  std::mt19937_64 rng(config.seed);

  // A per-attribute popularity order over each pool, so the most common
  // value differs between attributes that share a pool.
  std::unordered_map<std::string, std::vector<std::size_t>> ranking;
  for (const auto& d : domains()) {
    for (const auto& a : d.attributes) {
      std::vector<std::size_t> order(value_pool(a.pool).size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      shuffle_in_place(order, rng);
      ranking[a.name] = std::move(order);
    }
  }

  for (const auto& d : domains()) {
    auto it = config.entities_per_domain.find(d.name);
    const std::size_t n = it == config.entities_per_domain.end() ? 0 : it->second;
    if (n == 0) continue;
    const std::size_t first = world.entities.size();
    for (std::size_t k = 0; k < n; ++k) {
      Entity e;
      e.id = world.entities.size();
      e.name = "E" + std::to_string(e.id);
      e.domain = d.name;
      for (const auto& a : d.attributes) {
        const auto& pool = value_pool(a.pool);
        std::vector<double> weights(pool.size());
        for (std::size_t r = 0; r < pool.size(); ++r) {
          weights[r] = 1.0 / std::pow(static_cast<double>(r + 1), config.zipf_exponent);
        }
        e.values.push_back(pool[ranking[a.name][sample_weighted(weights, rng)]]);
      }
      world.entities.push_back(std::move(e));
    }
    std::vector<std::size_t> order(n);
    for (std::size_t k = 0; k < n; ++k) order[k] = first + k;
    shuffle_in_place(order, rng);
    const auto counts = tier_counts(n, config.tier_fractions);
    for (std::size_t k = 0; k < n; ++k) {
      world.entities[order[k]].tier = k < counts[0] ? Tier::kFrequent : k < counts[0] + counts[1] ? Tier::kRare
                                                                                                  : Tier::kUnseen;
    }
  }
  return world;
}

std::string prompt_text(const Entity& entity) { return domain(entity.domain).prompt + " " + entity.name + "."; }

std::string answer_text(const Entity& entity) {
  const auto& attrs = domain(entity.domain).attributes;
  std::string out;
  for (std::size_t k = 0; k < attrs.size(); ++k) {
    if (k) out += ' ';
    out += attrs[k].clause + " " + entity.values[k] + ".";
  }
  return out;
}

std::vector<std::string> render_corpus(const FactWorld& world, std::uint64_t seed) {
  std::vector<std::string> docs;
  for (const auto& e : world.entities) {
    const std::size_t copies = e.tier == Tier::kFrequent ? world.config.frequent_repeats : e.tier == Tier::kRare ? 1 : 0;
    const std::string text = prompt_text(e) + " " + answer_text(e);
    for (std::size_t r = 0; r < copies; ++r) docs.push_back(text);
  }
  std::mt19937_64 rng(seed);
  shuffle_in_place(docs, rng);
  return docs;
}

std::vector<lm::TokenId> encode_document(const lm::Tokenizer& tok, const std::string& text) {
  std::vector<lm::TokenId> ids{lm::Tokenizer::kBos};
  auto body = tok.encode(text);
  ids.insert(ids.end(), body.begin(), body.end());
  ids.push_back(lm::Tokenizer::kEos);
  return ids;
}

std::vector<Prompt> make_prompts(const FactWorld& world, const std::vector<std::string>& domain_names,
                                 const SplitConfig& config) {
  if (domain_names.empty()) fail(ErrorCode::kDomain, "no domains selected for prompts");
  for (const auto& name : domain_names) domain(name);
  std::mt19937_64 rng(config.seed);
  std::vector<Prompt> prompts;
  auto emit = [&](std::vector<std::size_t> ids, const std::string& split) {
    std::sort(ids.begin(), ids.end());
    for (auto id : ids) {
      const auto& e = world.entity(id);
      prompts.push_back({id, e.domain, split, prompt_text(e)});
    }
  };
  for (const auto& d : domains()) {
    if (std::find(domain_names.begin(), domain_names.end(), d.name) == domain_names.end()) continue;
    std::array<std::vector<std::size_t>, 3> by_tier;
    std::size_t total = 0;
    for (const auto& e : world.entities) {
      if (e.domain == d.name) {
        by_tier[static_cast<int>(e.tier)].push_back(e.id);
        ++total;
      }
    }
    for (auto& ids : by_tier) shuffle_in_place(ids, rng);
    if (d.name == kInDomain) {
      if (config.val + config.test >= total) {
        fail(ErrorCode::kConfig, "in-domain val+test sizes leave no training prompts");
      }
      std::array<double, 3> share{};
      for (int t = 0; t < 3; ++t) share[t] = static_cast<double>(by_tier[t].size()) / static_cast<double>(total);
      const auto val = tier_counts(config.val, share);
      const auto test = tier_counts(config.test, share);
      std::vector<std::size_t> v, te, tr;
      for (int t = 0; t < 3; ++t) {
        const auto& ids = by_tier[t];
        const std::size_t nv = std::min(val[t], ids.size());
        const std::size_t nt = std::min(test[t], ids.size() - nv);
        v.insert(v.end(), ids.begin(), ids.begin() + nv);
        te.insert(te.end(), ids.begin() + nv, ids.begin() + nv + nt);
        tr.insert(tr.end(), ids.begin() + nv + nt, ids.end());
      }
      emit(tr, "train");
      emit(v, "val");
      emit(te, "test");
    } else {
      std::vector<std::size_t> all;
      for (auto& ids : by_tier) all.insert(all.end(), ids.begin(), ids.end());
      shuffle_in_place(all, rng);
      all.resize(std::min(all.size(), config.ood_per_domain));
      emit(all, d.name);
    }
  }
  return prompts;
}

}  // namespace uq::data
