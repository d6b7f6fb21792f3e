#include "cotasr/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cotasr/errors.hpp"

namespace cotasr::eval {

Words normalize(std::string_view text) {
  std::string lowered(text);
  std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::istringstream in(lowered);
  Words out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

double AlignmentResult::wer() const {
  if (ref_length == 0) throw UndefinedMetricError("WER of an empty reference");
  return static_cast<double>(errors()) / static_cast<double>(ref_length);
}

AlignmentResult align(const Words& ref, const Words& hyp) {
  const std::size_t R = ref.size(), H = hyp.size();
  std::vector<std::size_t> d((R + 1) * (H + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (H + 1) + j]; };
  for (std::size_t i = 0; i <= R; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= H; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= R; ++i) {
    for (std::size_t j = 1; j <= H; ++j) {
      const std::size_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      at(i, j) = std::min({diag, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }

  AlignmentResult res;
  res.ref_length = R;
  std::size_t i = R, j = H;
  while (i > 0 || j > 0) {
    const std::size_t here = at(i, j);
    if (i > 0 && j > 0 && ref[i - 1] == hyp[j - 1] && here == at(i - 1, j - 1)) {
      res.ops.push_back({Op::Match, i - 1, j - 1});
      --i, --j;
    } else if (i > 0 && j > 0 && ref[i - 1] != hyp[j - 1] && here == at(i - 1, j - 1) + 1) {
      res.ops.push_back({Op::Substitute, i - 1, j - 1});
      ++res.substitutions;
      --i, --j;
    } else if (i > 0 && here == at(i - 1, j) + 1) {
      res.ops.push_back({Op::Delete, i - 1, kNoIndex});
      ++res.deletions;
      --i;
    } else {
      res.ops.push_back({Op::Insert, kNoIndex, j - 1});
      ++res.insertions;
      --j;
    }
  }
  std::reverse(res.ops.begin(), res.ops.end());
  return res;
}

namespace {

template <class A, class B>
void check_lengths(const A& refs, const B& hyps) {
  if (refs.size() != hyps.size()) {
    throw InputError("scoring: " + std::to_string(refs.size()) + " references but " +
                     std::to_string(hyps.size()) + " hypotheses");
  }
}

std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double wer(const std::vector<Words>& refs, const std::vector<Words>& hyps) {
  check_lengths(refs, hyps);
  std::size_t errors = 0, total = 0;
  for (std::size_t k = 0; k < refs.size(); ++k) {
    const auto a = align(refs[k], hyps[k]);
    errors += a.errors();
    total += a.ref_length;
  }
  if (total == 0) throw UndefinedMetricError("WER: references contain no words");
  return static_cast<double>(errors) / static_cast<double>(total);
}

EntityCounts entity_counts(const std::vector<EntityReference>& refs,
                           const std::vector<Words>& hyps) {
  check_lengths(refs, hyps);
  EntityCounts counts;
  for (std::size_t k = 0; k < refs.size(); ++k) {
    const auto& ref = refs[k];
    const auto a = align(ref.words, hyps[k]);
    std::vector<unsigned char> matched(ref.words.size(), 0);
    for (const auto& op : a.ops)
      if (op.op == Op::Match) matched[op.ref] = 1;
    for (const auto& span : ref.entities) {
      if (span.first >= span.end || span.end > ref.words.size()) {
        throw InputError("entity span out of range");
      }
      ++counts.total;
      if (std::all_of(matched.begin() + static_cast<long>(span.first),
                      matched.begin() + static_cast<long>(span.end),
                      [](unsigned char m) { return m != 0; })) {
        ++counts.recalled;
      }
    }
  }
  return counts;
}

double eer(const std::vector<EntityReference>& refs, const std::vector<Words>& hyps) {
  const auto c = entity_counts(refs, hyps);
  if (c.total == 0) throw UndefinedMetricError("EER: the set contains no entities");
  return 1.0 - static_cast<double>(c.recalled) / static_cast<double>(c.total);
}

BiasList::BiasList(const std::vector<std::string>& words) {
  for (const auto& w : words)
    for (auto& n : normalize(w)) words_.insert(n);
}

BiasList BiasList::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read bias list: " + path.string());
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) words.push_back(line);
  return BiasList(words);
}

BiasedCounts biased_counts(const Words& ref, const Words& hyp, const BiasList& bias) {
  BiasedCounts c;
  const auto a = align(ref, hyp);
  c.errors = a.errors();
  c.ref_words = ref.size();
  for (const auto& w : ref) {
    if (bias.contains(w)) {
      ++c.biased_ref_words;
    } else {
      ++c.unbiased_ref_words;
    }
  }
  for (const auto& op : a.ops) {
    switch (op.op) {
      case Op::Match:
        break;
      case Op::Substitute:
      case Op::Delete:
        ++(bias.contains(ref[op.ref]) ? c.biased_errors : c.unbiased_errors);
        break;
      case Op::Insert:
        ++(bias.contains(hyp[op.hyp]) ? c.biased_errors : c.unbiased_errors);
        break;
    }
  }
  return c;
}

BiasedWer biased_wer(const std::vector<Words>& refs, const std::vector<Words>& hyps,
                     const BiasList& bias) {
  check_lengths(refs, hyps);
  BiasedWer out;
  auto& t = out.counts;
  for (std::size_t k = 0; k < refs.size(); ++k) {
    const auto c = biased_counts(refs[k], hyps[k], bias);
    t.errors += c.errors;
    t.ref_words += c.ref_words;
    t.biased_errors += c.biased_errors;
    t.biased_ref_words += c.biased_ref_words;
    t.unbiased_errors += c.unbiased_errors;
    t.unbiased_ref_words += c.unbiased_ref_words;
  }
  if (t.ref_words == 0) throw UndefinedMetricError("WER: references contain no words");
  out.wer = static_cast<double>(t.errors) / static_cast<double>(t.ref_words);
  out.b_wer = ratio(t.biased_errors, t.biased_ref_words);
  out.u_wer = ratio(t.unbiased_errors, t.unbiased_ref_words);
  return out;
}

// Reporting ------------------------------------------------------------------

namespace {

using Field = std::optional<double> SetMetrics::*;

struct Column {
  const char* label;
  Field field;
  bool percent;
  bool always;      // shown even when undefined everywhere
  Field companion;  // shown whenever this one has a value
};

constexpr Column kColumns[] = {
    {"WER", &SetMetrics::wer, true, true, nullptr},
    {"EER", &SetMetrics::eer, true, true, nullptr},
    {"B-WER", &SetMetrics::b_wer, true, false, &SetMetrics::u_wer},
    {"U-WER", &SetMetrics::u_wer, true, false, &SetMetrics::b_wer},
    {"RTF", &SetMetrics::rtf, false, false, nullptr},
};

std::optional<double> mean_of(const std::vector<SetMetrics>& sets, Field f) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : sets) {
    if (s.*f) {
      sum += *(s.*f);
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

std::string cell(const std::optional<double>& v, bool percent) {
  if (!v) return std::string(kUndefined);
  char buf[32];
  if (percent) {
    std::snprintf(buf, sizeof buf, "%.2f", *v * 100.0);
  } else {
    std::snprintf(buf, sizeof buf, "%.4f", *v);
  }
  return buf;
}

nlohmann::json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> opt_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

SetMetrics average(const SystemMetrics& system) {
  SetMetrics avg;
  avg.name = "average";
  for (const auto& s : system.sets) avg.utterances += s.utterances;
  for (const auto& col : kColumns) avg.*(col.field) = mean_of(system.sets, col.field);
  return avg;
}

std::string format_table(const Report& report) {
  // Columns: WER and EER, then every other metric present anywhere, for each system.
  std::vector<const Column*> active;
  for (const auto& col : kColumns) {
    const bool any = std::any_of(report.systems.begin(), report.systems.end(), [&](const auto& sys) {
      return std::any_of(sys.sets.begin(), sys.sets.end(),
                         [&](const SetMetrics& s) {
                           return (s.*(col.field)).has_value() ||
                                  (col.companion && (s.*(col.companion)).has_value());
                         });
    });
    if (any || col.always) active.push_back(&col);
  }

  // Row names: union of set names in first-seen order, then "average".
  std::vector<std::string> rows;
  for (const auto& sys : report.systems)
    for (const auto& s : sys.sets)
      if (std::find(rows.begin(), rows.end(), s.name) == rows.end()) rows.push_back(s.name);

  std::vector<std::vector<std::string>> table;
  std::vector<std::string> header{"set"};
  for (const auto& sys : report.systems)
    for (const auto* col : active) header.push_back(sys.name + " " + col->label);
  table.push_back(header);

  auto add_row = [&](const std::string& name, auto&& lookup) {
    std::vector<std::string> line{name};
    for (const auto& sys : report.systems) {
      const SetMetrics* m = lookup(sys);
      for (const auto* col : active)
        line.push_back(m ? cell(m->*(col->field), col->percent) : std::string(kUndefined));
    }
    table.push_back(std::move(line));
  };
  for (const auto& name : rows) {
    add_row(name, [&](const SystemMetrics& sys) -> const SetMetrics* {
      for (const auto& s : sys.sets)
        if (s.name == name) return &s;
      return nullptr;
    });
  }
  std::vector<SetMetrics> averages;
  for (const auto& sys : report.systems) averages.push_back(average(sys));
  std::size_t k = 0;
  add_row("average", [&](const SystemMetrics&) { return &averages[k++]; });

  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : table)
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  std::ostringstream out;
  for (std::size_t r = 0; r < table.size(); ++r) {
    for (std::size_t c = 0; c < table[r].size(); ++c) {
      if (c) out << "  ";
      const auto& v = table[r][c];
      if (c == 0) {
        out << v << std::string(width[c] - v.size(), ' ');
      } else {
        out << std::string(width[c] - v.size(), ' ') << v;
      }
    }
    out << "\n";
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w;
      out << std::string(total + 2 * (width.size() - 1), '-') << "\n";
    }
  }
  return out.str();
}

std::string report_to_json(const Report& report) {
  nlohmann::json j;
  j["schema_version"] = kReportSchemaVersion;
  auto systems = nlohmann::json::array();
  for (const auto& sys : report.systems) {
    nlohmann::json js;
    js["name"] = sys.name;
    auto sets = nlohmann::json::array();
    for (const auto& s : sys.sets) {
      sets.push_back({{"name", s.name},
                      {"utterances", s.utterances},
                      {"wer", opt_json(s.wer)},
                      {"eer", opt_json(s.eer)},
                      {"b_wer", opt_json(s.b_wer)},
                      {"u_wer", opt_json(s.u_wer)},
                      {"rtf", opt_json(s.rtf)}});
    }
    js["sets"] = sets;
    const auto avg = average(sys);
    js["average"] = {{"wer", opt_json(avg.wer)},     {"eer", opt_json(avg.eer)},
                     {"b_wer", opt_json(avg.b_wer)}, {"u_wer", opt_json(avg.u_wer)},
                     {"rtf", opt_json(avg.rtf)}};
    systems.push_back(js);
  }
  j["systems"] = systems;
  return j.dump(2) + "\n";
}

Report report_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("schema_version").get<int>() != kReportSchemaVersion) {
      throw InputError("unsupported report schema version");
    }
    Report report;
    for (const auto& js : j.at("systems")) {
      SystemMetrics sys;
      sys.name = js.at("name").get<std::string>();
      for (const auto& s : js.at("sets")) {
        SetMetrics m;
        m.name = s.at("name").get<std::string>();
        m.utterances = s.at("utterances").get<std::size_t>();
        m.wer = opt_from(s, "wer");
        m.eer = opt_from(s, "eer");
        m.b_wer = opt_from(s, "b_wer");
        m.u_wer = opt_from(s, "u_wer");
        m.rtf = opt_from(s, "rtf");
        sys.sets.push_back(std::move(m));
      }
      report.systems.push_back(std::move(sys));
    }
    return report;
  } catch (const nlohmann::json::exception& ex) {
    throw InputError(std::string("malformed report: ") + ex.what());
  }
}

}  // namespace cotasr::eval
