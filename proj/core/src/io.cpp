#include "marginlab/io.hpp"

#include <array>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string_view>
#include <system_error>

#include "json.hpp"
#include "marginlab/errors.hpp"
#include "marginlab/version.hpp"

namespace marginlab {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double v) {
  std::array<char, 64> buf;
  auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc()) throw ValidationError("unformattable number");
  return std::string(buf.data(), p);
}

std::string provenance_line(const std::string& hash_hex) {
  return std::string("# marginlab ") + kVersion + " config_hash=" + hash_hex;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  out << content;
  if (!out) throw ValidationError("write to '" + path + "' failed");
}

namespace {

constexpr const char* kTrajectoryHeader =
    "epoch,train_error,test_error,train_loss,test_loss,rho,min_margin,"
    "auc_gamma,active_n";
constexpr const char* kMarginsHeader =
    "epoch,global_index,raw_margin,normalized_margin,label";
constexpr const char* kEnsembleHeader =
    "init_std,seed,test_error,auc_gamma,gamma,small_margin_count,min_margin,"
    "separation_epoch";
constexpr const char* kReplaceOneHeader =
    "trial,arm,delta_test_loss,delta_test_error,delta_rho,delta_norm_output,"
    "delta_margin";

// Splits one CSV data line into exactly n fields, or dies with the line
// number. None of our formats quote or embed commas.
std::vector<std::string_view> split_fields(std::string_view line,
                                           std::size_t n, long line_no) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  if (fields.size() != n)
    throw ParseError("expected " + std::to_string(n) + " fields, got " +
                         std::to_string(fields.size()),
                     line_no);
  return fields;
}

double field_double(std::string_view f, long line_no) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (ec != std::errc() || p != f.data() + f.size())
    throw ParseError("bad number '" + std::string(f) + "'", line_no);
  return v;
}

std::uint64_t field_u64(std::string_view f, long line_no) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (ec != std::errc() || p != f.data() + f.size())
    throw ParseError("bad integer '" + std::string(f) + "'", line_no);
  return v;
}

// Comment-skipping line reader that checks the column header row.
std::vector<std::pair<long, std::string>> data_lines(
    const std::string& path, const char* expected_header) {
  std::istringstream in(read_text_file(path));
  std::vector<std::pair<long, std::string>> lines;
  std::string raw;
  long line_no = 0;
  bool header_seen = false;
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (raw.empty() || raw[0] == '#') continue;
    if (!header_seen) {
      if (raw != expected_header)
        throw ParseError("unexpected column header '" + raw + "' in '" +
                             path + "'",
                         line_no);
      header_seen = true;
      continue;
    }
    lines.emplace_back(line_no, raw);
  }
  if (!header_seen)
    throw ParseError("missing column header in '" + path + "'", 0);
  return lines;
}

}  // namespace

void write_trajectory_csv(const std::string& path, const RunTrajectory& run,
                          const std::string& provenance) {
  std::string out = provenance + "\n" + kTrajectoryHeader + "\n";
  for (const TrajectoryRow& r : run.rows) {
    out += std::to_string(r.epoch);
    out += ',' + format_double(r.train_error);
    out += ',' + format_double(r.test_error);
    out += ',' + format_double(r.train_loss);
    out += ',' + format_double(r.test_loss);
    out += ',' + format_double(r.rho);
    out += ',' + format_double(r.min_margin);
    out += ',' + format_double(r.auc_gamma);
    out += ',' + std::to_string(r.active_n);
    out += '\n';
  }
  write_text_file(path, out);
}

std::vector<TrajectoryRow> read_trajectory_csv(const std::string& path) {
  std::vector<TrajectoryRow> rows;
  for (const auto& [line_no, line] : data_lines(path, kTrajectoryHeader)) {
    auto f = split_fields(line, 9, line_no);
    TrajectoryRow r;
    r.epoch = static_cast<std::size_t>(field_u64(f[0], line_no));
    r.train_error = field_double(f[1], line_no);
    r.test_error = field_double(f[2], line_no);
    r.train_loss = field_double(f[3], line_no);
    r.test_loss = field_double(f[4], line_no);
    r.rho = field_double(f[5], line_no);
    r.min_margin = field_double(f[6], line_no);
    r.auc_gamma = field_double(f[7], line_no);
    r.active_n = static_cast<std::size_t>(field_u64(f[8], line_no));
    rows.push_back(r);
  }
  return rows;
}

void write_margin_snapshot_csv(const std::string& path,
                               const MarginSnapshot& snap,
                               const std::string& provenance) {
  std::string out = provenance + "\n" + kMarginsHeader + "\n";
  for (const MarginRecord& r : snap.records) {
    out += std::to_string(snap.epoch);
    out += ',' + std::to_string(r.global_index);
    out += ',' + format_double(r.raw_margin);
    out += ',' + format_double(r.normalized_margin);
    out += ',' + std::to_string(r.label);
    out += '\n';
  }
  write_text_file(path, out);
}

MarginSnapshot read_margin_snapshot_csv(const std::string& path) {
  MarginSnapshot snap;
  bool first = true;
  for (const auto& [line_no, line] : data_lines(path, kMarginsHeader)) {
    auto f = split_fields(line, 5, line_no);
    std::size_t epoch = static_cast<std::size_t>(field_u64(f[0], line_no));
    if (first) {
      snap.epoch = epoch;
      first = false;
    } else if (epoch != snap.epoch) {
      throw ParseError("mixed epochs in margin snapshot '" + path + "'",
                       line_no);
    }
    MarginRecord r;
    r.global_index = static_cast<std::size_t>(field_u64(f[1], line_no));
    r.raw_margin = field_double(f[2], line_no);
    r.normalized_margin = field_double(f[3], line_no);
    r.label = static_cast<std::uint32_t>(field_u64(f[4], line_no));
    snap.records.push_back(r);
  }
  if (snap.records.empty())
    throw ParseError("no data rows in margin snapshot '" + path + "'", 0);
  return snap;
}

void write_events_jsonl(const std::string& path, const RunTrajectory& run,
                        const std::string& hash_hex) {
  std::string out;
  json meta = {{"type", "meta"},
               {"epoch", 0},
               {"payload",
                {{"tool", "marginlab"},
                 {"version", kVersion},
                 {"config_hash", hash_hex}}}};
  out += meta.dump();
  out += '\n';

  if (run.separation_epoch) {
    json payload = json::object();
    for (const TrajectoryRow& r : run.rows)
      if (r.epoch == *run.separation_epoch) {
        payload["active_n"] = r.active_n;
        payload["test_error"] = r.test_error;
        break;
      }
    json ev = {{"type", "separation"},
               {"epoch", *run.separation_epoch},
               {"payload", payload}};
    out += ev.dump();
    out += '\n';
  }

  for (const CompressionEvent& c : run.events) {
    json ev = {{"type", "compression"},
               {"epoch", c.epoch},
               {"payload",
                {{"size_before", c.size_before},
                 {"size_after", c.size_after},
                 {"removed", c.removed},
                 {"test_error_before", c.test_error_before},
                 {"test_error_after", c.test_error_after},
                 {"separated_after_removal", c.separated_after_removal},
                 {"retrain_cap_exceeded", c.retrain_cap_exceeded}}}};
    out += ev.dump();
    out += '\n';
  }

  if (run.aborted) {
    std::size_t epoch = run.rows.empty() ? 0 : run.rows.back().epoch;
    json ev = {{"type", "abort"},
               {"epoch", epoch},
               {"payload", {{"reason", run.abort_reason}}}};
    out += ev.dump();
    out += '\n';
  }

  write_text_file(path, out);
}

void write_ensemble_csv(const std::string& path, const EnsembleReport& report,
                        const std::string& provenance) {
  std::string out = provenance + "\n" + kEnsembleHeader + "\n";
  for (const EnsembleRow& r : report.rows) {
    out += format_double(r.init_std);
    out += ',' + std::to_string(r.seed);
    out += ',' + format_double(r.test_error);
    out += ',' + format_double(r.auc_gamma);
    out += ',' + format_double(r.gamma);
    out += ',' + std::to_string(r.small_margin_count);
    out += ',' + format_double(r.min_margin);
    out += ',' + std::to_string(r.separation_epoch);
    out += '\n';
  }
  write_text_file(path, out);
}

void write_replace_one_csv(const std::string& path,
                           const ReplaceOneReport& report,
                           const std::string& provenance) {
  std::string out = provenance + "\n" + kReplaceOneHeader + "\n";
  for (const ReplaceOneRow& r : report.rows) {
    out += std::to_string(r.trial);
    out += ',';
    out += r.arm == ReplaceArm::smallest_margin ? "smallest_margin" : "random";
    out += ',' + format_double(r.delta_test_loss);
    out += ',' + format_double(r.delta_test_error);
    out += ',' + format_double(r.delta_rho);
    out += ',' + format_double(r.delta_norm_output);
    out += ',' + format_double(r.delta_margin);
    out += '\n';
  }
  write_text_file(path, out);
}

void write_plot_series(const std::string& path, const PlotSeries& series,
                       const std::string& provenance) {
  if (series.x.size() != series.y.size())
    throw ValidationError("plot series '" + path +
                          "': x and y sizes disagree");
  bool grouped = !series.group_label.empty();
  if (grouped && series.group.size() != series.x.size())
    throw ValidationError("plot series '" + path +
                          "': group column size disagrees");
  auto clean = [&](const std::string& s) {
    if (s.empty() || s.find_first_of(",\n\r#") != std::string::npos)
      throw ValidationError("plot series '" + path + "': token '" + s +
                            "' is empty or holds a delimiter");
    return s;
  };
  std::string out = provenance + "\n";
  out += clean(series.x_label) + ',' + clean(series.y_label);
  if (grouped) out += ',' + clean(series.group_label);
  out += '\n';
  for (std::size_t i = 0; i < series.x.size(); ++i) {
    out += format_double(series.x[i]);
    out += ',' + format_double(series.y[i]);
    if (grouped) out += ',' + clean(series.group[i]);
    out += '\n';
  }
  write_text_file(path, out);
}

void prepare_out_dir(const std::string& dir, bool overwrite) {
  fs::path p(dir);
  std::error_code ec;
  if (fs::exists(p, ec)) {
    if (!fs::is_directory(p, ec))
      throw ValidationError("output path '" + dir + "' is not a directory");
    bool empty = fs::directory_iterator(p, ec) == fs::directory_iterator();
    if (!empty && !overwrite)
      throw ValidationError("output directory '" + dir +
                            "' is not empty; pass --overwrite to reuse it");
    fs::remove(p / "FAILED", ec);  // stale marker from an overwritten run
  } else {
    fs::create_directories(p, ec);
    if (ec)
      throw ValidationError("cannot create output directory '" + dir +
                            "': " + ec.message());
  }
}

void write_failed_marker(const std::string& dir, const std::string& reason) {
  write_text_file((fs::path(dir) / "FAILED").string(), reason + "\n");
}

}  // namespace marginlab
