#pragma once

// Renders summary rows and regression tables as Markdown (human artifact,
// paper-style precision) and CSV (machine artifact, fixed 3 decimals).
// Stars are passed through from the stats module, never recomputed here.

#include <cstdio>
#include <string>
#include <vector>

#include "conjoint/errors.hpp"
#include "conjoint/stats.hpp"

namespace conjoint {

enum class TableFormat { Markdown, Csv };

struct RenderedTable {
  std::string title;
  TableFormat format = TableFormat::Markdown;
  std::string body;
  std::string footer;
};

namespace detail {

inline std::string fmt_fixed(double x, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, x);
  std::string s = buf;
  if (s == "-0" || s.rfind("-0.", 0) == 0) {
    bool all_zero = true;
    for (char c : s)
      if (c >= '1' && c <= '9') all_zero = false;
    if (all_zero) s.erase(0, 1);
  }
  return s;
}

// Paper-style mixed precision: four significant digits with trailing zeros
// kept (2.938, -15.94, -17.50).
inline std::string fmt_estimate(double x) {
  const double a = x < 0 ? -x : x;
  int decimals = 3;
  if (a >= 1000)
    decimals = 0;
  else if (a >= 100)
    decimals = 1;
  else if (a >= 10)
    decimals = 2;
  return fmt_fixed(x, decimals);
}

inline std::string fmt_thousands(long n) {
  std::string digits = std::to_string(n < 0 ? -n : n);
  std::string out;
  int count = 0;
  for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
    if (count && count % 3 == 0) out.insert(out.begin(), ',');
    out.insert(out.begin(), *it);
    ++count;
  }
  return (n < 0 ? "-" : "") + out;
}

inline bool is_integral(double x) { return x == static_cast<long long>(x); }

// Integers render bare (65), everything else with one decimal (64.5).
inline std::string fmt_summary_value(double x) {
  if (is_integral(x)) return std::to_string(static_cast<long long>(x));
  return fmt_fixed(x, 1);
}

inline std::string csv_escape(const std::string& field) {
  bool needs_quotes = false;
  for (char c : field)
    if (c == ',' || c == '"' || c == '\n' || c == '\r') needs_quotes = true;
  if (!needs_quotes) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string join_csv(const std::vector<std::string>& fields) {
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) line += ',';
    line += csv_escape(fields[i]);
  }
  return line;
}

inline std::string join_markdown(const std::vector<std::string>& fields) {
  std::string line = "|";
  for (const auto& f : fields) {
    line += ' ';
    line += f;
    line += " |";
  }
  return line;
}

}  // namespace detail

// Minimal RFC 4180 parser, exposed so the round-trip invariant is checkable.
inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  if (!field.empty() || !row.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

// Rows = factor coefficients in canonical order, one column per table, cell
// "est*** (se)"; trailing Observations and R-squared rows; footer carries the
// clustering note, FE note, stars legend and exclusion counts.
inline RenderedTable render_regression_table(const std::vector<RegressionTable>& tables, TableFormat format,
                                             std::vector<std::string> column_labels = {},
                                             const std::string& title = "Regression results") {
  if (tables.empty()) throw EmptyData("no regression tables to render");
  for (const auto& t : tables) {
    if (t.rows.size() != tables.front().rows.size())
      throw ShapeMismatch("regression tables have different row sets");
    for (std::size_t i = 0; i < t.rows.size(); ++i)
      if (t.rows[i].label != tables.front().rows[i].label)
        throw ShapeMismatch("regression tables have different row sets");
  }
  if (column_labels.empty())
    for (const auto& t : tables) column_labels.push_back(t.title.empty() ? "Estimate" : t.title);
  if (column_labels.size() != tables.size())
    throw ShapeMismatch("column label count does not match table count");

  RenderedTable out;
  out.title = title;
  out.format = format;

  if (format == TableFormat::Markdown) {
    std::vector<std::string> header{"Dep. var: policy score (0 to 100)"};
    for (const auto& label : column_labels) header.push_back(label);
    out.body += detail::join_markdown(header) + '\n';
    std::vector<std::string> rule(header.size(), "---");
    out.body += detail::join_markdown(rule) + '\n';
    for (std::size_t i = 0; i < tables.front().rows.size(); ++i) {
      std::vector<std::string> cells{tables.front().rows[i].label};
      for (const auto& t : tables)
        cells.push_back(detail::fmt_estimate(t.rows[i].estimate) + t.rows[i].stars + " (" +
                        detail::fmt_fixed(t.rows[i].clustered_se, 3) + ")");
      out.body += detail::join_markdown(cells) + '\n';
    }
    std::vector<std::string> obs{"Observations"};
    for (const auto& t : tables) obs.push_back(detail::fmt_thousands(t.n_obs));
    out.body += detail::join_markdown(obs) + '\n';
    std::vector<std::string> r2{"R-squared"};
    for (const auto& t : tables) r2.push_back(detail::fmt_fixed(t.r_squared, 3));
    out.body += detail::join_markdown(r2) + '\n';
  } else {
    std::vector<std::string> header{"row"};
    for (const auto& label : column_labels) {
      header.push_back(label + " estimate");
      header.push_back(label + " se");
      header.push_back(label + " p");
      header.push_back(label + " stars");
    }
    out.body += detail::join_csv(header) + '\n';
    for (std::size_t i = 0; i < tables.front().rows.size(); ++i) {
      std::vector<std::string> cells{tables.front().rows[i].label};
      for (const auto& t : tables) {
        cells.push_back(detail::fmt_fixed(t.rows[i].estimate, 3));
        cells.push_back(detail::fmt_fixed(t.rows[i].clustered_se, 3));
        cells.push_back(detail::fmt_fixed(t.rows[i].p_value, 3));
        cells.push_back(t.rows[i].stars);
      }
      out.body += detail::join_csv(cells) + '\n';
    }
    std::vector<std::string> obs{"Observations"};
    std::vector<std::string> r2{"R-squared"};
    std::vector<std::string> clusters{"Clusters"};
    for (const auto& t : tables) {
      obs.insert(obs.end(), {std::to_string(t.n_obs), "", "", ""});
      r2.insert(r2.end(), {detail::fmt_fixed(t.r_squared, 3), "", "", ""});
      clusters.insert(clusters.end(), {std::to_string(t.cluster_count), "", "", ""});
    }
    out.body += detail::join_csv(obs) + '\n';
    out.body += detail::join_csv(r2) + '\n';
    out.body += detail::join_csv(clusters) + '\n';
  }

  out.footer = "Standard errors clustered on vignette in parentheses.";
  for (const auto& t : tables)
    if (!t.fixed_effects.empty()) {
      out.footer += " " + (t.title.empty() ? std::string("Pooled") : t.title) + " regression uses " +
                    t.fixed_effects + " fixed effect.";
      break;
    }
  out.footer += "\n*** p<0.01, ** p<0.05, * p<0.1";
  long parse_failed = 0, provider_error = 0;
  for (const auto& t : tables) {
    parse_failed += t.n_excluded_parse_failed;
    provider_error += t.n_excluded_provider_error;
  }
  if (parse_failed || provider_error)
    out.footer += "\nExcluded from estimation: " + std::to_string(parse_failed) + " parse failures, " +
                  std::to_string(provider_error) + " provider errors.";
  return out;
}

// Columns Mean / Std. dev / Median / Min / Max; means and deviations to one
// decimal, medians and extrema bare when integral.
inline RenderedTable render_summary_table(const std::vector<SummaryRow>& rows, TableFormat format,
                                          const std::string& title = "Summary statistics",
                                          long n_excluded_parse_failed = 0,
                                          long n_excluded_provider_error = 0) {
  if (rows.empty()) throw EmptyData("no summary rows to render");

  RenderedTable out;
  out.title = title;
  out.format = format;

  if (format == TableFormat::Markdown) {
    out.body += detail::join_markdown({"", "Mean", "Std. dev", "Median", "Min", "Max"}) + '\n';
    out.body += detail::join_markdown({"---", "---", "---", "---", "---", "---"}) + '\n';
    for (const auto& r : rows)
      out.body += detail::join_markdown({r.label, detail::fmt_fixed(r.mean, 1), detail::fmt_fixed(r.std_dev, 1),
                                         detail::fmt_summary_value(r.median), detail::fmt_summary_value(r.min),
                                         detail::fmt_summary_value(r.max)}) +
                  '\n';
  } else {
    out.body += detail::join_csv({"group", "mean", "std_dev", "median", "min", "max", "n"}) + '\n';
    for (const auto& r : rows)
      out.body += detail::join_csv({r.label, detail::fmt_fixed(r.mean, 1), detail::fmt_fixed(r.std_dev, 1),
                                    detail::fmt_summary_value(r.median), detail::fmt_summary_value(r.min),
                                    detail::fmt_summary_value(r.max), std::to_string(r.n)}) +
                  '\n';
  }

  for (const auto& r : rows)
    if (r.n == 1) out.footer += r.label + ": single observation; std. dev reported as 0.\n";
  if (n_excluded_parse_failed || n_excluded_provider_error)
    out.footer += "Excluded: " + std::to_string(n_excluded_parse_failed) + " parse failures, " +
                  std::to_string(n_excluded_provider_error) + " provider errors.\n";
  while (!out.footer.empty() && out.footer.back() == '\n') out.footer.pop_back();
  return out;
}

// File rendering: Markdown gets a heading; CSV footers become '#' comments.
inline std::string rendered_file_text(const RenderedTable& table) {
  std::string text;
  if (table.format == TableFormat::Markdown) {
    text += "### " + table.title + "\n\n";
    text += table.body;
    if (!table.footer.empty()) text += '\n' + table.footer + '\n';
  } else {
    text += table.body;
    if (!table.footer.empty()) {
      std::string line;
      for (char c : table.footer) {
        if (c == '\n') {
          text += "# " + line + '\n';
          line.clear();
        } else {
          line += c;
        }
      }
      if (!line.empty()) text += "# " + line + '\n';
    }
  }
  return text;
}

}  // namespace conjoint
