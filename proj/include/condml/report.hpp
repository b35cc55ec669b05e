#pragma once

#include "condml/config.hpp"
#include "condml/csv.hpp"
#include "condml/engine.hpp"
#include "condml/sim.hpp"

#include <cmath>
#include <fstream>
#include <string>

namespace condml {

namespace reportdetail {

inline void escape_into(const std::string& s, std::string& out) {
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
}

inline void dump_into(const json& j, std::string& out, int indent, int depth) {
  const std::string pad(static_cast<std::size_t>(indent) * depth, ' ');
  const std::string pad_in(static_cast<std::size_t>(indent) * (depth + 1), ' ');
  switch (j.type()) {
    case json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ",\n";
        first = false;
        out += pad_in;
        out += '"';
        escape_into(it.key(), out);
        out += "\": ";
        dump_into(it.value(), out, indent, depth + 1);
      }
      out += "\n" + pad + "}";
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      out += "[\n";
      bool first = true;
      for (const auto& v : j) {
        if (!first) out += ",\n";
        first = false;
        out += pad_in;
        dump_into(v, out, indent, depth + 1);
      }
      out += "\n" + pad + "]";
      return;
    }
    case json::value_t::string:
      out += '"';
      escape_into(j.get<std::string>(), out);
      out += '"';
      return;
    case json::value_t::boolean:
      out += j.get<bool>() ? "true" : "false";
      return;
    case json::value_t::number_integer:
      out += std::to_string(j.get<long long>());
      return;
    case json::value_t::number_unsigned:
      out += std::to_string(j.get<unsigned long long>());
      return;
    case json::value_t::number_float: {
      const double v = j.get<double>();
      if (std::isnan(v)) {
        out += "null";
      } else {
        out += format_g17(v);
      }
      return;
    }
    default:
      out += "null";
      return;
  }
}

}  // namespace reportdetail

/// Serialize with 17 significant digits on every float so the text
/// round-trips to the identical binary values on re-parse.
inline std::string dump_json_17(const json& j, int indent = 2) {
  std::string out;
  reportdetail::dump_into(j, out, indent, 0);
  out += '\n';
  return out;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("cannot open file for writing: " + path);
  out << text;
}

inline json curve_to_json(const LocalLinearCurve& curve) {
  json c;
  c["h"] = curve.h;
  c["kernel"] = kernel_name(curve.kernel);
  json grid = json::array();
  json theta = json::array();
  json beta = json::array();
  json se = json::array();
  json ess = json::array();
  json flagged = json::array();
  for (Index g = 0; g < curve.points(); ++g) {
    json point = json::array();
    for (Index j = 0; j < curve.grid.cols(); ++j) point.push_back(curve.grid(g, j));
    grid.push_back(point);
    theta.push_back(curve.theta_hat[g]);
    json brow = json::array();
    for (Index j = 0; j < curve.beta_hat.cols(); ++j) brow.push_back(curve.beta_hat(g, j));
    beta.push_back(brow);
    se.push_back(curve.se[g]);
    ess.push_back(curve.ess[g]);
    flagged.push_back(static_cast<bool>(curve.flagged[static_cast<std::size_t>(g)]));
  }
  c["grid"] = grid;
  c["theta_hat"] = theta;
  c["beta_hat"] = beta;
  c["se"] = se;
  c["ess"] = ess;
  c["flagged"] = flagged;
  return c;
}

/// curve.csv columns: the grid coordinates, the estimate, its standard error,
/// the effective sample size, and the flag.
inline void write_curve_csv(const std::string& path, const LocalLinearCurve& curve) {
  std::vector<std::string> header;
  std::vector<std::vector<double>> cols;
  const Index r = curve.grid.cols();
  for (Index j = 0; j < r; ++j) {
    header.push_back(r == 1 ? "v" : "v" + std::to_string(j + 1));
    cols.emplace_back(curve.grid.col(j).data(), curve.grid.col(j).data() + curve.points());
  }
  header.insert(header.end(), {"theta_hat", "se", "ess", "flagged"});
  cols.emplace_back(curve.theta_hat.data(), curve.theta_hat.data() + curve.points());
  cols.emplace_back(curve.se.data(), curve.se.data() + curve.points());
  cols.emplace_back(curve.ess.data(), curve.ess.data() + curve.points());
  std::vector<double> flags;
  for (auto f : curve.flagged) flags.push_back(static_cast<double>(f));
  cols.push_back(std::move(flags));
  write_csv(path, header, cols);
}

inline json fold_diagnostics_to_json(const std::vector<FoldDiagnostics>& folds) {
  json out = json::array();
  for (const auto& f : folds) {
    json d;
    d["fold"] = f.fold;
    d["train_size"] = static_cast<long long>(f.train_size);
    d["gamma_lambda"] = f.gamma_lambda;
    d["gamma_heldout_loss"] = f.gamma_heldout_loss;
    d["alpha_moment_residual_max"] = f.alpha_moment_residual_max;
    out.push_back(d);
  }
  return out;
}

inline json estimation_report_to_json(const EstimationReport& report, const json& config_echo) {
  json out;
  out["command"] = "estimate";
  out["seed"] = report.seed;
  out["config"] = config_echo;
  json bw;
  bw["h_cv"] = report.h_cv;  // NaN -> null when the bandwidth was fixed
  bw["h_used"] = report.h_used;
  out["bandwidth"] = bw;
  out["curve"] = curve_to_json(report.curve);
  out["folds"] = fold_diagnostics_to_json(report.fold_diagnostics);
  return out;
}

inline json equivalence_report_to_json(const EquivalenceReport& r) {
  json out;
  json rows = json::array();
  for (const auto& row : r.rows) {
    json jr;
    jr["n"] = static_cast<long long>(row.n);
    jr["bandwidth"] = row.bandwidth;
    jr["delta"] = row.delta;
    jr["spread"] = row.spread;
    jr["ratio"] = row.ratio;
    rows.push_back(jr);
  }
  out["rows"] = rows;
  out["strictly_decreasing"] = r.strictly_decreasing;
  out["low_confidence"] = r.low_confidence;
  return out;
}

inline json orthogonality_report_to_json(const OrthogonalityReport& r) {
  json out;
  out["n"] = static_cast<long long>(r.n);
  out["reps"] = r.reps;
  out["bins"] = r.bins;
  out["eps_list"] = r.eps_list;
  out["joint_max_dev"] = r.joint_max_dev;
  out["joint_slope"] = r.joint_slope;
  out["gamma_max_dev"] = r.gamma_max_dev;
  out["gamma_slope"] = r.gamma_slope;
  out["alpha_max_abs_z"] = r.alpha_max_abs_z;
  out["alpha_within_3se"] = r.alpha_within_3se;
  return out;
}

inline json rate_report_to_json(const RateReport& r) {
  json out;
  json rows = json::array();
  for (const auto& row : r.rows) {
    json jr;
    jr["n"] = static_cast<long long>(row.n);
    jr["rms_gamma"] = row.rms_gamma;
    jr["rms_alpha"] = row.rms_alpha;
    jr["bandwidth"] = row.bandwidth;
    jr["gamma_ratio"] = row.gamma_ratio;
    jr["alpha_ratio"] = row.alpha_ratio;
    jr["product_ratio"] = row.product_ratio;
    rows.push_back(jr);
  }
  out["rows"] = rows;
  out["gamma_slope"] = r.gamma_slope;
  out["alpha_slope"] = r.alpha_slope;
  out["product_flagged"] = r.product_flagged;
  out["r"] = r.r;
  out["d"] = r.d;
  out["smoothness_note"] = r.smoothness_note;
  return out;
}

inline json coverage_report_to_json(const CoverageReport& r) {
  json out;
  out["n"] = static_cast<long long>(r.n);
  out["reps"] = r.reps;
  out["valid_reps"] = r.valid_reps;
  out["bandwidth"] = r.bandwidth;
  out["coverage_central"] = r.coverage_central;
  out["coverage_interior"] = r.coverage_interior;
  out["bias_central"] = r.bias_central;
  out["se_median"] = r.se_median;
  if (r.paired) {
    out["plugin_coverage_central"] = r.plugin_coverage_central;
    out["plugin_bias_central"] = r.plugin_bias_central;
  }
  return out;
}

}  // namespace condml
