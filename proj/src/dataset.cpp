#include "stackparse/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "stackparse/interpreter.hpp"
#include "stackparse/random.hpp"

namespace stackparse {

ParseError::ParseError(int line, int column, const std::string& message)
    : std::runtime_error("line " + std::to_string(line) + ", column " + std::to_string(column) +
                         ": " + message),
      line_(line),
      column_(column) {}

namespace {

char colorCode(Color c) {
  switch (c) {
    case Color::Red: return 'r';
    case Color::Yellow: return 'y';
    case Color::Green: return 'g';
    case Color::Orange: return 'o';
    case Color::Purple: return 'p';
    case Color::Brown:
    case Color::Blue: return 'b';
    case Color::NoHat: return '_';
  }
  return '?';
}

std::optional<Color> colorFromCode(Domain d, char ch) {
  for (Color c : domainColors(d))
    if (colorCode(c) == ch) return c;
  return std::nullopt;
}

struct Item {
  std::string_view text;
  int column;  // 1-based column of the item start
};

std::vector<Item> splitItems(std::string_view text, int column) {
  std::vector<Item> items;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) items.push_back({text.substr(i, j - i), column + static_cast<int>(i)});
    i = j;
  }
  return items;
}

std::optional<int> parseInt(std::string_view s) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

// Splits "k:rest"; returns k and rest.
std::pair<int, std::string_view> splitSlot(const Item& item, int line) {
  auto colon = item.text.find(':');
  if (colon == std::string_view::npos)
    throw ParseError(line, item.column, "expected 'position:contents' in '" +
                                            std::string(item.text) + "'");
  auto k = parseInt(item.text.substr(0, colon));
  if (!k) throw ParseError(line, item.column, "bad position '" + std::string(item.text) + "'");
  return {*k, item.text.substr(colon + 1)};
}

WorldState parseAlchemy(std::string_view text, int line, int column) {
  AlchemyWorld w;
  std::array<bool, AlchemyWorld::kBeakers> seen{};
  for (const auto& item : splitItems(text, column)) {
    auto [k, contents] = splitSlot(item, line);
    if (k < 1 || k > AlchemyWorld::kBeakers)
      throw ParseError(line, item.column, "beaker index " + std::to_string(k) + " out of range");
    if (seen[k - 1]) throw ParseError(line, item.column, "duplicate beaker " + std::to_string(k));
    seen[k - 1] = true;
    if (contents == "_") continue;
    if (contents.size() > Beaker::kCapacity)
      throw InvariantError("line " + std::to_string(line) + ": beaker " + std::to_string(k) +
                           " holds more than 4 units");
    Beaker& b = w.beakers[k - 1];
    for (std::size_t u = 0; u < contents.size(); ++u) {
      auto c = colorFromCode(Domain::Alchemy, contents[u]);
      const int col = item.column + static_cast<int>(item.text.size() - contents.size() + u);
      if (!c) throw ParseError(line, col, std::string("unknown color code '") + contents[u] + "'");
      b.units[b.count++] = *c;
    }
  }
  return w;
}

WorldState parseScene(std::string_view text, int line, int column) {
  SceneWorld w;
  std::array<bool, SceneWorld::kPositions> seen{};
  for (const auto& item : splitItems(text, column)) {
    auto [k, contents] = splitSlot(item, line);
    if (k < 1 || k > SceneWorld::kPositions)
      throw ParseError(line, item.column, "position " + std::to_string(k) + " out of range");
    if (seen[k - 1]) throw ParseError(line, item.column, "duplicate position " + std::to_string(k));
    seen[k - 1] = true;
    const int col = item.column + static_cast<int>(item.text.size() - contents.size());
    if (contents.size() != 2) throw ParseError(line, col, "expected two color codes");
    if (contents == "__") continue;
    auto shirt = colorFromCode(Domain::Scene, contents[0]);
    if (!shirt) throw ParseError(line, col, "bad shirt code");
    std::optional<Color> hat = contents[1] == '_' ? Color::NoHat : colorFromCode(Domain::Scene, contents[1]);
    if (!hat) throw ParseError(line, col + 1, "bad hat code");
    w.slots[k - 1] = Person{*shirt, *hat, 0};
  }
  for (auto& slot : w.slots)
    if (slot) slot->id = w.nextId++;
  return w;
}

WorldState parseTangrams(std::string_view text, int line, int column) {
  TangramsWorld w;
  auto items = splitItems(text, column);
  if (items.size() == 1 && items[0].text == "_") items.clear();
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto [k, contents] = splitSlot(items[i], line);
    if (k != static_cast<int>(i) + 1)
      throw ParseError(line, items[i].column, "positions must be 1..n in order");
    auto shape = parseInt(contents);
    if (!shape || *shape < 0) throw ParseError(line, items[i].column, "bad shape id");
    if (std::find(w.row.begin(), w.row.end(), *shape) != w.row.end())
      throw InvariantError("line " + std::to_string(line) + ": duplicate shape " +
                           std::to_string(*shape));
    w.row.push_back(*shape);
  }
  for (int s = 0; s < TangramsWorld::kShapes; ++s)
    if (std::find(w.row.begin(), w.row.end(), s) == w.row.end()) w.removed.push_back(s);
  return w;
}

std::vector<std::string_view> splitTabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string_view::npos ? line.npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return fields;
}

}  // namespace

WorldState parseWorld(Domain d, std::string_view text, int line, int column) {
  WorldState w;
  switch (d) {
    case Domain::Alchemy: w = parseAlchemy(text, line, column); break;
    case Domain::Scene: w = parseScene(text, line, column); break;
    case Domain::Tangrams: w = parseTangrams(text, line, column); break;
  }
  if (auto violation = checkInvariants(w))
    throw InvariantError("line " + std::to_string(line) + ": " + *violation);
  return w;
}

std::string serializeWorld(const WorldState& w) {
  std::string out;
  auto sep = [&] {
    if (!out.empty()) out += ' ';
  };
  switch (w.domain()) {
    case Domain::Alchemy:
      for (int i = 0; i < AlchemyWorld::kBeakers; ++i) {
        sep();
        out += std::to_string(i + 1) + ':';
        const auto& b = w.alchemy().beakers[i];
        if (b.empty()) out += '_';
        for (Color c : b.contents()) out += colorCode(c);
      }
      break;
    case Domain::Scene:
      for (int i = 0; i < SceneWorld::kPositions; ++i) {
        sep();
        out += std::to_string(i + 1) + ':';
        const auto& slot = w.scene().slots[i];
        if (!slot) {
          out += "__";
        } else {
          out += colorCode(slot->shirt);
          out += colorCode(slot->hat);
        }
      }
      break;
    case Domain::Tangrams: {
      const auto& row = w.tangrams().row;
      if (row.empty()) return "_";
      for (std::size_t i = 0; i < row.size(); ++i) {
        sep();
        out += std::to_string(i + 1) + ':' + std::to_string(row[i]);
      }
      break;
    }
  }
  return out;
}

Utterance tokenizeUtterance(std::string_view text) {
  Utterance words;
  std::string current;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isspace(u)) {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    } else if (!std::ispunct(u) || ch == '-') {
      current += static_cast<char>(std::tolower(u));
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

std::vector<RawExample> parseDataset(std::istream& in, Domain d) {
  std::vector<RawExample> out;
  std::string line;
  int lineNo = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = splitTabs(line);
    if (fields.size() < 2 || fields.size() % 2 != 0)
      throw ParseError(lineNo, 1, "expected id, w0 and (utterance, world) pairs; got " +
                                      std::to_string(fields.size()) + " fields");
    std::vector<int> columns;
    int col = 1;
    for (auto f : fields) {
      columns.push_back(col);
      col += static_cast<int>(f.size()) + 1;
    }
    RawExample e;
    e.id = std::string(fields[0]);
    e.start = parseWorld(d, fields[1], lineNo, columns[1]);
    for (std::size_t k = 2; k + 1 < fields.size(); k += 2) {
      e.utterances.push_back(tokenizeUtterance(fields[k]));
      e.worlds.push_back(parseWorld(d, fields[k + 1], lineNo, columns[k + 1]));
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<RawExample> parseDatasetFile(const std::string& path, Domain d) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file '" + path + "'");
  return parseDataset(in, d);
}

void writeDataset(std::ostream& out, const std::vector<RawExample>& examples) {
  for (const auto& e : examples) {
    out << e.id << '\t' << serializeWorld(e.start);
    for (std::size_t m = 0; m < e.utterances.size(); ++m) {
      out << '\t';
      for (std::size_t i = 0; i < e.utterances[m].size(); ++i) {
        if (i) out << ' ';
        out << e.utterances[m][i];
      }
      out << '\t' << serializeWorld(e.worlds[m]);
    }
    out << '\n';
  }
}

std::vector<TrainingExample> decompose(const RawExample& e) {
  std::vector<TrainingExample> out;
  const int m = static_cast<int>(e.utterances.size());
  auto worldBefore = [&](int i) -> const WorldState& { return i == 0 ? e.start : e.worlds[i - 1]; };
  for (int len = 1; len <= 2; ++len) {
    for (int i = 0; i + len <= m; ++i) {
      TrainingExample t;
      t.id = e.id + ":" + std::to_string(i + 1) + "-" + std::to_string(i + len);
      t.utterances.assign(e.utterances.begin() + i, e.utterances.begin() + i + len);
      t.start = worldBefore(i);
      t.target = e.worlds[i + len - 1];
      out.push_back(std::move(t));
    }
  }
  return out;
}

std::vector<TrainingExample> decomposeAll(const std::vector<RawExample>& examples) {
  std::vector<TrainingExample> out;
  for (const auto& e : examples) {
    auto parts = decompose(e);
    std::move(parts.begin(), parts.end(), std::back_inserter(out));
  }
  return out;
}

TrainingExample prefixExample(const RawExample& e, std::optional<int> utterances) {
  const int m = utterances.value_or(static_cast<int>(e.utterances.size()));
  if (m < 1 || m > static_cast<int>(e.utterances.size()))
    throw std::invalid_argument("prefix length out of range");
  TrainingExample t;
  t.id = e.id;
  t.utterances.assign(e.utterances.begin(), e.utterances.begin() + m);
  t.start = e.start;
  t.target = e.worlds[m - 1];
  return t;
}

// ---------------------------------------------------------------------------
// Synthetic generator

namespace {

struct Candidate {
  std::string text;
  std::string program;
};

using Template = std::function<std::optional<Candidate>(Rng&, const MachineState&)>;

const char* const kOrdinals[] = {"first", "second", "third", "fourth", "fifth", "sixth", "seventh"};
const char* const kCounts[] = {"zero", "one", "two", "three", "four"};

template <class T>
const T& pick(Rng& rng, const std::vector<T>& v) {
  return v[rng.uniformInt(v.size())];
}

std::string cname(Color c) { return std::string(colorName(c)); }

// Ordinal phrase and index token for the k-th (0-based) of n objects.
std::pair<std::string, std::string> ordinal(Rng& rng, int k, int n) {
  if (k == n - 1 && rng.bernoulli(0.3)) return {"last", "-1"};
  return {kOrdinals[k], std::to_string(k + 1)};
}

struct ScenePeople {
  std::vector<int> slots;  // occupied, left to right
  std::vector<int> empty;
  std::map<Color, int> shirtCount, hatCount;
};

ScenePeople survey(const SceneWorld& w) {
  ScenePeople s;
  for (int i = 0; i < SceneWorld::kPositions; ++i) {
    if (w.slots[i]) {
      s.slots.push_back(i);
      s.shirtCount[w.slots[i]->shirt]++;
      s.hatCount[w.slots[i]->hat]++;
    } else {
      s.empty.push_back(i);
    }
  }
  return s;
}

std::vector<Template> sceneTemplates() {
  std::vector<Template> t;
  auto uniqueShirtSlots = [](const SceneWorld& w, const ScenePeople& s) {
    std::vector<int> out;
    for (int slot : s.slots)
      if (s.shirtCount.at(w.slots[slot]->shirt) == 1) out.push_back(slot);
    return out;
  };
  auto uniqueHatSlots = [](const SceneWorld& w, const ScenePeople& s) {
    std::vector<int> out;
    for (int slot : s.slots) {
      Color h = w.slots[slot]->hat;
      if (h != Color::NoHat && s.hatCount.at(h) == 1) out.push_back(slot);
    }
    return out;
  };
  // move by shirt
  t.push_back([=](Rng& rng, const MachineState& st) -> std::optional<Candidate> {
    const auto& w = st.world.scene();
    auto s = survey(w);
    auto who = uniqueShirtSlots(w, s);
    if (who.empty() || s.empty.empty()) return std::nullopt;
    int p = pick(rng, who);
    int to = pick(rng, s.empty);
    Color c = w.slots[p]->shirt;
    return Candidate{"the person in the " + cname(c) + " shirt moves to position " +
                         std::to_string(to + 1),
                     cname(c) + " hasShirt " + std::to_string(to + 1) + " move"};
  });
  // move next to someone
  t.push_back([=](Rng& rng, const MachineState& st) -> std::optional<Candidate> {
    const auto& w = st.world.scene();
    auto s = survey(w);
    auto movers = uniqueHatSlots(w, s);
    auto anchors = uniqueShirtSlots(w, s);
    if (movers.empty() || anchors.empty()) return std::nullopt;
    int a = pick(rng, movers);
    int b = pick(rng, anchors);
    if (a == b) return std::nullopt;
    const bool left = rng.bernoulli(0.5);
    int to = b + (left ? -1 : 1);
    if (to < 0 || to >= SceneWorld::kPositions || w.slots[to]) return std::nullopt;
    Color hat = w.slots[a]->hat, shirt = w.slots[b]->shirt;
    return Candidate{"the person with the " + cname(hat) + " hat moves to the " +
                         (left ? "left" : "right") + " of the person in the " + cname(shirt) +
                         " shirt",
                     cname(hat) + " hasHat " + cname(shirt) + " hasShirt " +
                         (left ? "leftOf" : "rightOf") + " move"};
  });
  // create
  t.push_back([=](Rng& rng, const MachineState& st) -> std::optional<Candidate> {
    const auto& w = st.world.scene();
    auto s = survey(w);
    if (s.empty.empty() || s.slots.size() >= 5) return std::nullopt;
    auto colors = domainColors(Domain::Scene);
    std::vector<Color> palette(colors.begin(), colors.end());
    int to = pick(rng, s.empty);
    Color shirt = pick(rng, palette);
    if (rng.bernoulli(0.3)) {
      return Candidate{"a person in a " + cname(shirt) + " shirt and no hat appears at position " +
                           std::to_string(to + 1),
                       std::to_string(to + 1) + " " + cname(shirt) + " noHat create"};
    }
    Color hat = pick(rng, palette);
    return Candidate{"a person in a " + cname(shirt) + " shirt and a " + cname(hat) +
                         " hat appears at position " + std::to_string(to + 1),
                     std::to_string(to + 1) + " " + cname(shirt) + " " + cname(hat) + " create"};
  });
  // leave by shirt
  t.push_back([=](Rng& rng, const MachineState& st) -> std::optional<Candidate> {
    const auto& w = st.world.scene();
    auto s = survey(w);
    auto who = uniqueShirtSlots(w, s);
    if (who.empty() || s.slots.size() < 2) return std::nullopt;
    Color c = w.slots[pick(rng, who)]->shirt;
    return Candidate{"the person in the " + cname(c) + " shirt leaves", cname(c) + " hasShirt leave"};
  });
  // leave by ordinal
  t.push_back([=](Rng& rng, const MachineState& st) -> std::optional<Candidate> {
    auto s = survey(st.world.scene());
    const int n = static_cast<int>(s.slots.size());
    if (n < 2) return std::nullopt;
    auto [word, index] = ordinal(rng, rng.uniformInt(0, n - 1), n);
    return Candidate{"the " + word + " person from the left leaves",
                     "allObjects " + index + " index leave"};
  });
  // swap hats
  t.push_back([=](Rng& rng, const MachineState& st) -> std::optional<Candidate> {
    const auto& w = st.world.scene();
    auto s = survey(w);
    auto who = uniqueShirtSlots(w, s);
    if (who.size() < 2) return std::nullopt;
    int a = pick(rng, who), b = pick(rng, who);
    if (a == b || w.slots[a]->hat == w.slots[b]->hat) return std::nullopt;
    Color ca = w.slots[a]->shirt, cb = w.slots[b]->shirt;
    return Candidate{"the people in the " + cname(ca) + " and " + cname(cb) + " shirts swap hats",
                     cname(ca) + " hasShirt " + cname(cb) + " hasShirt swapHats"};
  });
  // anaphora
  t.push_back([=](Rng& rng, const MachineState& st) -> std::optional<Candidate> {
    if (st.history.empty()) return std::nullopt;
    const auto& last = st.history.back();
    if (last.args.empty() || !std::holds_alternative<PersonRef>(last.args[0])) return std::nullopt;
    auto s = survey(st.world.scene());
    if (s.empty.empty()) return std::nullopt;
    int to = pick(rng, s.empty);
    return Candidate{"then he moves to position " + std::to_string(to + 1),
                     "-1 prevArg1 " + std::to_string(to + 1) + " move"};
  });
  // move by ordinal
  t.push_back([=](Rng& rng, const MachineState& st) -> std::optional<Candidate> {
    auto s = survey(st.world.scene());
    const int n = static_cast<int>(s.slots.size());
    if (n < 1 || s.empty.empty()) return std::nullopt;
    auto [word, index] = ordinal(rng, rng.uniformInt(0, n - 1), n);
    int to = pick(rng, s.empty);
    return Candidate{"the " + word + " person moves to position " + std::to_string(to + 1),
                     "allObjects " + index + " index " + std::to_string(to + 1) + " move"};
  });
  return t;
}

std::vector<Template> alchemyTemplates() {
  std::vector<Template> t;
  auto uniqueColorBeakers = [](const AlchemyWorld& w) {
    std::map<Color, std::vector<int>> byColor;
    for (int i = 0; i < AlchemyWorld::kBeakers; ++i)
      if (auto c = w.beakers[i].uniformColor()) byColor[*c].push_back(i);
    std::vector<int> out;
    for (auto& [c, v] : byColor)
      if (v.size() == 1) out.push_back(v[0]);
    return out;
  };
  auto nonEmpty = [](const AlchemyWorld& w) {
    std::vector<int> out;
    for (int i = 0; i < AlchemyWorld::kBeakers; ++i)
      if (!w.beakers[i].empty()) out.push_back(i);
    return out;
  };
  auto fits = [](const AlchemyWorld& w, int from, int to) {
    return from != to && w.beakers[from].count + w.beakers[to].count <= Beaker::kCapacity;
  };
  t.push_back([=](Rng& rng, const MachineState& st) -> std::optional<Candidate> {
    const auto& w = st.world.alchemy();
    auto src = uniqueColorBeakers(w);
    if (src.empty()) return std::nullopt;
    int from = pick(rng, src);
    int to = rng.uniformInt(0, AlchemyWorld::kBeakers - 1);
    if (!fits(w, from, to)) return std::nullopt;
    Color c = *w.beakers[from].uniformColor();
    auto [word, index] = ordinal(rng, to, AlchemyWorld::kBeakers);
    return Candidate{"pour the " + cname(c) + " beaker into the " + word + " beaker",
                     cname(c) + " hasColor allObjects " + index + " index pour"};
  });
  t.push_back([=](Rng& rng, const MachineState& st) -> std::optional<Candidate> {
    const auto& w = st.world.alchemy();
    auto src = nonEmpty(w);
    if (src.empty()) return std::nullopt;
    int from = pick(rng, src);
    int to = rng.uniformInt(0, AlchemyWorld::kBeakers - 1);
    if (!fits(w, from, to)) return std::nullopt;
    auto [w1, i1] = ordinal(rng, from, AlchemyWorld::kBeakers);
    auto [w2, i2] = ordinal(rng, to, AlchemyWorld::kBeakers);
    return Candidate{"pour the " + w1 + " beaker into the " + w2 + " one",
                     "allObjects " + i1 + " index allObjects " + i2 + " index pour"};
  });
  t.push_back([=](Rng& rng, const MachineState& st) -> std::optional<Candidate> {
    const auto& w = st.world.alchemy();
    auto src = nonEmpty(w);
    if (src.empty()) return std::nullopt;
    int b = pick(rng, src);
    int n = rng.uniformInt(1, w.beakers[b].count);
    auto [word, index] = ordinal(rng, b, AlchemyWorld::kBeakers);
    return Candidate{std::string("drain ") + kCounts[n] + (n == 1 ? " unit" : " units") +
                         " from the " + word + " beaker",
                     "allObjects " + index + " index " + std::to_string(n) + " drain"};
  });
  t.push_back([=](Rng& rng, const MachineState& st) -> std::optional<Candidate> {
    const auto& w = st.world.alchemy();
    auto src = uniqueColorBeakers(w);
    if (src.empty()) return std::nullopt;
    Color c = *w.beakers[pick(rng, src)].uniformColor();
    return Candidate{"throw out the " + cname(c) + " chemical", cname(c) + " hasColor 1/1 drain"};
  });
  t.push_back([=](Rng&, const MachineState& st) -> std::optional<Candidate> {
    if (st.history.empty() || st.history.back().action != ActionName::Pour) return std::nullopt;
    return Candidate{"mix it", "-1 prevArg2 mix"};
  });
  t.push_back([=](Rng& rng, const MachineState& st) -> std::optional<Candidate> {
    const auto& w = st.world.alchemy();
    std::vector<int> mixable;
    for (int i = 0; i < AlchemyWorld::kBeakers; ++i)
      if (!w.beakers[i].empty() && w.beakers[i].uniformColor() != Color::Brown) mixable.push_back(i);
    if (mixable.empty()) return std::nullopt;
    auto [word, index] = ordinal(rng, pick(rng, mixable), AlchemyWorld::kBeakers);
    return Candidate{"mix the " + word + " beaker", "allObjects " + index + " index mix"};
  });
  return t;
}

std::vector<Template> tangramsTemplates() {
  std::vector<Template> t;
  t.push_back([](Rng& rng, const MachineState& st) -> std::optional<Candidate> {
    const int n = static_cast<int>(st.world.tangrams().row.size());
    if (n < 2) return std::nullopt;
    int a = rng.uniformInt(0, n - 1), b = rng.uniformInt(0, n - 1);
    if (a == b) return std::nullopt;
    auto [w1, i1] = ordinal(rng, a, n);
    auto [w2, i2] = ordinal(rng, b, n);
    return Candidate{"swap the " + w1 + " and " + w2 + " figures", i1 + " " + i2 + " swap"};
  });
  t.push_back([](Rng& rng, const MachineState& st) -> std::optional<Candidate> {
    const int n = static_cast<int>(st.world.tangrams().row.size());
    if (n < 2) return std::nullopt;
    auto [word, index] = ordinal(rng, rng.uniformInt(0, n - 1), n);
    return Candidate{"remove the " + word + " figure", index + " remove"};
  });
  t.push_back([](Rng& rng, const MachineState& st) -> std::optional<Candidate> {
    if (st.history.empty() || st.history.back().action != ActionName::Remove) return std::nullopt;
    const int n = static_cast<int>(st.world.tangrams().row.size());
    int pos = rng.uniformInt(1, n + 1);
    return Candidate{"add it back in position " + std::to_string(pos),
                     std::to_string(pos) + " -1 prevArg1 add"};
  });
  return t;
}

WorldState randomWorld(Domain d, Rng& rng) {
  switch (d) {
    case Domain::Alchemy: {
      AlchemyWorld w;
      auto colors = domainColors(d);
      for (auto& b : w.beakers) {
        b.count = static_cast<std::uint8_t>(rng.uniformInt(0, Beaker::kCapacity));
        Color c = colors[rng.uniformInt(colors.size())];
        for (int k = 0; k < b.count; ++k) b.units[k] = c;
      }
      return w;
    }
    case Domain::Tangrams: {
      TangramsWorld w;
      for (int s = 0; s < TangramsWorld::kShapes; ++s) w.row.push_back(s);
      for (int i = TangramsWorld::kShapes - 1; i > 0; --i)
        std::swap(w.row[i], w.row[rng.uniformInt(0, i)]);
      return w;
    }
    case Domain::Scene: {
      SceneWorld w;
      auto colors = domainColors(d);
      const int population = rng.uniformInt(1, 5);
      std::vector<int> slots(SceneWorld::kPositions);
      for (int i = 0; i < SceneWorld::kPositions; ++i) slots[i] = i;
      for (int i = 0; i < population; ++i)
        std::swap(slots[i], slots[rng.uniformInt(i, SceneWorld::kPositions - 1)]);
      std::sort(slots.begin(), slots.begin() + population);
      for (int i = 0; i < population; ++i) {
        Person p;
        p.shirt = colors[rng.uniformInt(colors.size())];
        p.hat = rng.bernoulli(0.3) ? Color::NoHat : colors[rng.uniformInt(colors.size())];
        p.id = w.nextId++;
        w.slots[slots[i]] = p;
      }
      return w;
    }
  }
  return {};
}

}  // namespace

std::vector<RawExample> generateSynthetic(Domain d, int count, std::uint64_t seed,
                                          const SyntheticOptions& options) {
  const Vocabulary vocab = Vocabulary::forDomain(d);
  std::vector<Template> templates;
  switch (d) {
    case Domain::Alchemy: templates = alchemyTemplates(); break;
    case Domain::Tangrams: templates = tangramsTemplates(); break;
    case Domain::Scene: templates = sceneTemplates(); break;
  }
  Rng rng(seed);
  std::vector<RawExample> out;
  out.reserve(count);
  for (int n = 0; n < count; ++n) {
    // A world can run out of groundable actions (e.g. every beaker drained);
    // such examples are restarted from a fresh world.
    std::optional<RawExample> made;
    for (int restart = 0; restart < options.maxRetries && !made; ++restart) {
      RawExample e;
      e.id = std::string(domainName(d)) + "-synth-" + std::to_string(n);
      e.start = randomWorld(d, rng);
      MachineState state = MachineState::initial(e.start, options.utterances);
      std::string gold;
      bool stuck = false;
      for (int m = 0; m < options.utterances && !stuck; ++m) {
        bool grounded = false;
        for (int attempt = 0; attempt < options.maxRetries && !grounded; ++attempt) {
          auto cand = templates[rng.uniformInt(templates.size())](rng, state);
          if (!cand) continue;
          MachineState trial = state;
          bool ok = true;
          for (TokenId tok : parseProgram(cand->program, vocab)) {
            auto next = tryStep(trial, vocab[tok]);
            if (!next) {
              ok = false;
              break;
            }
            trial = std::move(next).value();
          }
          if (!ok || trial.pointer != state.pointer + 1 || trial.world == state.world) continue;
          state = std::move(trial);
          e.utterances.push_back(tokenizeUtterance(cand->text));
          e.worlds.push_back(state.world);
          if (!gold.empty()) gold += ' ';
          gold += cand->program;
          grounded = true;
        }
        stuck = !grounded;
      }
      if (stuck) continue;
      e.goldProgram = std::move(gold);
      made = std::move(e);
    }
    if (!made)
      throw GenerationError("no template sequence could be grounded for " + std::string(domainName(d)) +
                            "-synth-" + std::to_string(n));
    out.push_back(std::move(*made));
  }
  return out;
}

}  // namespace stackparse
