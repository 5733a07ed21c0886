// Copyright 2026 the prlab authors
// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "prlab/runner.hpp"

namespace prlab {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

std::string fmt(const nlohmann::json& v) {
  if (v.is_null()) return "";
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_float()) return fmt(v.get<double>());
  return v.dump();
}

std::string policy_label(const nlohmann::json& doc) {
  const auto& p = doc.at("policy");
  if (p.is_string()) return p.get<std::string>();
  return p.value("name", std::string("custom"));
}

// True when the record completed and actually carries the task payload
// (tasks can be skipped with a note, e.g. margins on a decoder).
bool has_task(const nlohmann::json& doc, const std::string& task) {
  return doc.value("status", "") == "ok" && doc.contains("tasks") &&
         doc.at("tasks").contains(task) && !doc.at("tasks").at(task).contains("skipped");
}

using CellKey = std::tuple<std::string, int64_t, int64_t>;  // model, batch, seq

CellKey cell_key(const nlohmann::json& doc) {
  return {doc.at("model_name").get<std::string>(), doc.at("batch").get<int64_t>(),
          doc.at("seq").get<int64_t>()};
}

// Mean latency per (model, batch, seq, policy), averaged over seeds.
ReportTable report_speedup(const std::vector<nlohmann::json>& records) {
  struct Acc {
    double sum = 0.0;
    uint64_t n = 0;
    double mean() const { return sum / static_cast<double>(n); }
  };
  std::map<CellKey, std::map<std::string, Acc>> cells;
  std::set<std::string> policies;
  for (const auto& doc : records) {
    if (!has_task(doc, "bench")) continue;
    Acc& acc = cells[cell_key(doc)][policy_label(doc)];
    acc.sum += doc.at("tasks").at("bench").at("mean_ms").get<double>();
    acc.n += 1;
    policies.insert(policy_label(doc));
  }
  if (cells.empty()) {
    throw std::invalid_argument("speedup report: no benchmark payloads in the records");
  }
  ReportTable t;
  t.note = "speedup = fp32 mean latency / policy mean latency per (model, batch, seq); "
           "means over seeds; missing cells left blank";
  t.columns = {"model", "batch", "seq", "policy", "mean_ms", "speedup_vs_fp32"};
  for (const auto& [key, by_policy] : cells) {
    const auto base = by_policy.find("fp32");
    if (base == by_policy.end()) {
      const auto& [model, batch, seq] = key;
      throw std::invalid_argument("speedup report: no fp32 baseline for model '" + model +
                                  "' batch " + std::to_string(batch) + " seq " +
                                  std::to_string(seq));
    }
    const double base_mean = base->second.mean();
    for (const std::string& policy : policies) {
      const auto& [model, batch, seq] = key;
      const auto it = by_policy.find(policy);
      if (it == by_policy.end()) {
        // Explicit gap: the policy was never measured at this cell.
        t.rows.push_back({model, std::to_string(batch), std::to_string(seq), policy, "", ""});
        continue;
      }
      t.rows.push_back({model, std::to_string(batch), std::to_string(seq), policy,
                        fmt(it->second.mean()), fmt(base_mean / it->second.mean())});
    }
  }
  return t;
}

ReportTable report_fidelity(const std::vector<nlohmann::json>& records) {
  // Worst case across seeds per (model, policy, batch, seq) group.
  struct Group {
    double max_err = 0.0;
    double mean_err_sum = 0.0;
    nlohmann::json min_cosine;  // null until seen
    uint64_t runs = 0;
    uint64_t affected = 0;
  };
  std::map<std::tuple<std::string, std::string, int64_t, int64_t>, Group> groups;
  for (const auto& doc : records) {
    if (!has_task(doc, "fidelity")) continue;
    const auto& f = doc.at("tasks").at("fidelity");
    Group& g = groups[{doc.at("model_name").get<std::string>(), policy_label(doc),
                       doc.at("batch").get<int64_t>(), doc.at("seq").get<int64_t>()}];
    g.max_err = std::max(g.max_err, f.at("max_abs_error").get<double>());
    g.mean_err_sum += f.at("mean_abs_error").get<double>();
    const auto& cos = f.at("cosine");
    if (!cos.is_null() &&
        (g.min_cosine.is_null() || cos.get<double>() < g.min_cosine.get<double>())) {
      g.min_cosine = cos;
    }
    g.runs += 1;
    if (f.at("nan_affected").get<bool>()) g.affected += 1;
  }
  ReportTable t;
  t.note = "worst case over seeds: max_abs_error is the max, min_cosine the min; "
           "nan_rate is the fraction of NaN-affected runs";
  t.columns = {"model",         "policy",         "batch",      "seq",     "seeds",
               "max_abs_error", "mean_abs_error", "min_cosine", "nan_rate"};
  for (const auto& [key, g] : groups) {
    const auto& [model, policy, batch, seq] = key;
    t.rows.push_back({model, policy, std::to_string(batch), std::to_string(seq),
                      std::to_string(g.runs), fmt(g.max_err),
                      fmt(g.mean_err_sum / static_cast<double>(g.runs)), fmt(g.min_cosine),
                      fmt(static_cast<double>(g.affected) / static_cast<double>(g.runs))});
  }
  return t;
}

ReportTable report_attention(const std::vector<nlohmann::json>& records) {
  ReportTable t;
  t.columns = {"model",       "policy",        "batch",        "seq",
               "seed",        "layer",         "kurtosis",     "max_abs_score",
               "interhead_r", "kurtosis_mean", "kurtosis_std"};
  for (const auto& doc : records) {
    if (!has_task(doc, "attention_profile")) continue;
    const auto& a = doc.at("tasks").at("attention_profile");
    const auto& layers = a.at("layers");
    for (size_t l = 0; l < layers.size(); ++l) {
      t.rows.push_back({doc.at("model_name").get<std::string>(), policy_label(doc),
                        std::to_string(doc.at("batch").get<int64_t>()),
                        std::to_string(doc.at("seq").get<int64_t>()),
                        std::to_string(doc.at("seed").get<uint64_t>()), std::to_string(l),
                        fmt(layers[l].at("kurtosis")), fmt(layers[l].at("max_abs_score")),
                        fmt(layers[l].at("interhead_r")), fmt(a.at("kurtosis_mean")),
                        fmt(a.at("kurtosis_std"))});
    }
  }
  return t;
}

ReportTable report_roofline(const std::vector<nlohmann::json>& records) {
  ReportTable t;
  t.note = "cold-traffic model (no cache reuse); published qualitative bands for "
           "comparison: Linear >=45 F/B, Softmax 2-4 F/B, Embedding ~1.5 F/B";
  t.columns = {"model", "batch",     "seq",   "dtype",     "op_class",
               "flops", "bytes",     "intensity", "attainable_flops", "bound"};
  std::set<std::tuple<std::string, int64_t, int64_t, std::string>> seen;
  for (const auto& doc : records) {
    if (!has_task(doc, "roofline")) continue;
    for (const char* dn : {"f32", "f16e"}) {
      const auto& [model, batch, seq] = cell_key(doc);
      if (!seen.insert({model, batch, seq, dn}).second) continue;  // policy/seed invariant
      for (const auto& row : doc.at("tasks").at("roofline").at(dn)) {
        t.rows.push_back({model, std::to_string(batch), std::to_string(seq), dn,
                          row.at("op_class").get<std::string>(), fmt(row.at("flops")),
                          fmt(row.at("bytes")), fmt(row.at("intensity")),
                          fmt(row.at("attainable_flops")), row.at("bound").get<std::string>()});
      }
    }
  }
  return t;
}

}  // namespace

std::string ReportTable::to_csv() const {
  std::ostringstream os;
  if (!note.empty()) os << "# " << note << '\n';
  for (size_t i = 0; i < columns.size(); ++i) {
    if (i) os << ',';
    os << columns[i];
  }
  os << '\n';
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) os << ',';
      os << row[i];
    }
    os << '\n';
  }
  return os.str();
}

nlohmann::json ReportTable::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json obj = nlohmann::json::object();
    for (size_t i = 0; i < columns.size() && i < row.size(); ++i) obj[columns[i]] = row[i];
    arr.push_back(obj);
  }
  nlohmann::json out = {{"rows", arr}};
  if (!note.empty()) out["note"] = note;
  return out;
}

ReportTable make_report(const std::string& kind, const std::vector<nlohmann::json>& records) {
  if (kind == "speedup") return report_speedup(records);
  if (kind == "fidelity") return report_fidelity(records);
  if (kind == "attention") return report_attention(records);
  if (kind == "roofline") return report_roofline(records);
  throw std::invalid_argument("unknown report kind '" + kind +
                              "' (valid: speedup, fidelity, attention, roofline)");
}

}  // namespace prlab
