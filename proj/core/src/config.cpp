#include "marginlab/config.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string_view>
#include <system_error>

#include "marginlab/errors.hpp"

namespace marginlab {
namespace {

std::string trim(std::string_view s) {
  const char* ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.push_back(trim(s.substr(start)));
      return parts;
    }
    parts.push_back(trim(s.substr(start, pos - start)));
    start = pos + 1;
  }
}

std::size_t to_count(const std::string& text, const std::string& what) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size())
    throw ValidationError(what + ": cannot parse '" + text +
                          "' as a nonnegative integer");
  return v;
}

}  // namespace

ExperimentKind parse_kind(const std::string& name) {
  if (name == "train") return ExperimentKind::train;
  if (name == "compress-continuous") return ExperimentKind::compress_continuous;
  if (name == "compress-immediate") return ExperimentKind::compress_immediate;
  if (name == "replace-one") return ExperimentKind::replace_one;
  if (name == "ensemble") return ExperimentKind::ensemble;
  if (name == "label-compare") return ExperimentKind::label_compare;
  if (name == "margins-report") return ExperimentKind::margins_report;
  throw ValidationError(
      "unknown experiment kind '" + name +
      "' (expected train, compress-continuous, compress-immediate, "
      "replace-one, ensemble, label-compare, or margins-report)");
}

std::string kind_name(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::train: return "train";
    case ExperimentKind::compress_continuous: return "compress-continuous";
    case ExperimentKind::compress_immediate: return "compress-immediate";
    case ExperimentKind::replace_one: return "replace-one";
    case ExperimentKind::ensemble: return "ensemble";
    case ExperimentKind::label_compare: return "label-compare";
    case ExperimentKind::margins_report: return "margins-report";
  }
  throw ValidationError("unrepresentable experiment kind");
}

std::vector<LayerSpec> parse_layers(const std::string& text) {
  std::vector<LayerSpec> layers;
  for (const std::string& token : split(text, ',')) {
    if (token.empty())
      throw ValidationError("empty layer token in '" + text + "'");
    auto parts = split(token, ':');
    const std::string& head = parts[0];
    auto dim = [&](std::size_t i) {
      std::size_t v = to_count(parts[i], "layer '" + token + "'");
      if (v == 0)
        throw ValidationError("layer '" + token + "': dimension must be >= 1");
      return v;
    };
    if (head == "dense") {
      if (parts.size() < 2 || parts.size() > 3)
        throw ValidationError("layer '" + token +
                              "': expected dense:OUT or dense:OUT:IN");
      layers.push_back(
          LayerSpec::dense(dim(1), parts.size() == 3 ? dim(2) : 0));
    } else if (head == "conv") {
      if (parts.size() < 2 || parts.size() > 3)
        throw ValidationError("layer '" + token +
                              "': expected conv:OUTC or conv:OUTC:INC");
      layers.push_back(
          LayerSpec::conv2d(dim(1), parts.size() == 3 ? dim(2) : 0));
    } else if (head == "relu") {
      if (parts.size() != 1)
        throw ValidationError("layer '" + token + "': relu takes no arguments");
      layers.push_back(LayerSpec::relu());
    } else if (head == "bn") {
      if (parts.size() > 2)
        throw ValidationError("layer '" + token + "': expected bn or bn:CH");
      layers.push_back(LayerSpec::batchnorm(parts.size() == 2 ? dim(1) : 0));
    } else {
      throw ValidationError("unknown layer token '" + token +
                            "' (expected dense, conv, relu, or bn)");
    }
  }
  if (layers.empty()) throw ValidationError("empty layer list");
  return layers;
}

std::string format_layers(const std::vector<LayerSpec>& layers) {
  std::string out;
  for (const LayerSpec& spec : layers) {
    if (!out.empty()) out += ',';
    switch (spec.kind) {
      case LayerKind::dense:
        out += "dense:" + std::to_string(spec.out_dim);
        if (spec.in_dim != 0) out += ':' + std::to_string(spec.in_dim);
        break;
      case LayerKind::conv2d:
        out += "conv:" + std::to_string(spec.out_channels);
        if (spec.in_channels != 0)
          out += ':' + std::to_string(spec.in_channels);
        break;
      case LayerKind::relu:
        out += "relu";
        break;
      case LayerKind::batchnorm:
        out += "bn";
        if (spec.channels != 0) out += ':' + std::to_string(spec.channels);
        break;
    }
  }
  return out;
}

ConventionChoice parse_convention_choice(const std::string& name) {
  if (name == "auto") return ConventionChoice::automatic;
  if (name == "conv") return ConventionChoice::conv;
  if (name == "bn") return ConventionChoice::bn;
  if (name == "all") return ConventionChoice::all;
  throw ValidationError("unknown norm convention '" + name +
                        "' (expected auto, conv, bn, or all)");
}

std::string convention_choice_name(ConventionChoice choice) {
  switch (choice) {
    case ConventionChoice::automatic: return "auto";
    case ConventionChoice::conv: return "conv";
    case ConventionChoice::bn: return "bn";
    case ConventionChoice::all: return "all";
  }
  throw ValidationError("unrepresentable convention choice");
}

NormConvention resolve_convention(ConventionChoice choice, const Network& net) {
  NormConvention conv;
  switch (choice) {
    case ConventionChoice::automatic: conv = default_convention(net); break;
    case ConventionChoice::conv: conv = NormConvention::conv_product; break;
    case ConventionChoice::bn: conv = NormConvention::bn_times_last_fc; break;
    case ConventionChoice::all: conv = NormConvention::all_weight_product;
      break;
  }
  check_convention(net, conv);
  return conv;
}

namespace {

// One parsed `key = value` with its source line for error reporting.
struct Entry {
  std::string value;
  long line = 0;
};

using Section = std::map<std::string, Entry>;

struct IniDoc {
  std::map<std::string, Section> sections;
};

IniDoc scan_ini(const std::string& text) {
  IniDoc doc;
  std::istringstream in(text);
  std::string raw;
  std::string current;
  long line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3)
        throw ParseError("malformed section header '" + line + "'", line_no);
      current = trim(std::string_view(line).substr(1, line.size() - 2));
      if (current.empty())
        throw ParseError("empty section name", line_no);
      doc.sections[current];  // a section may legitimately stay empty
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("expected 'key = value', got '" + line + "'", line_no);
    if (current.empty())
      throw ParseError("key before any [section] header", line_no);
    std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ParseError("empty key", line_no);
    auto [it, inserted] =
        doc.sections[current].emplace(key, Entry{value, line_no});
    if (!inserted)
      throw ParseError(
          "duplicate key '" + key + "' in [" + current + "]", line_no);
  }
  return doc;
}

[[noreturn]] void bad_value(const std::string& where, const Entry& e,
                            const std::string& wanted) {
  throw ParseError(where + ": cannot parse '" + e.value + "' as " + wanted,
                   e.line);
}

double entry_double(const std::string& where, const Entry& e) {
  double v = 0.0;
  auto* first = e.value.data();
  auto* last = first + e.value.size();
  auto [p, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || p != last) bad_value(where, e, "a number");
  return v;
}

std::uint64_t entry_u64(const std::string& where, const Entry& e) {
  std::uint64_t v = 0;
  auto* first = e.value.data();
  auto* last = first + e.value.size();
  auto [p, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || p != last)
    bad_value(where, e, "a nonnegative integer");
  return v;
}

std::size_t entry_count(const std::string& where, const Entry& e) {
  return static_cast<std::size_t>(entry_u64(where, e));
}

std::uint32_t entry_u32(const std::string& where, const Entry& e) {
  std::uint64_t v = entry_u64(where, e);
  if (v > std::numeric_limits<std::uint32_t>::max())
    bad_value(where, e, "a 32-bit integer");
  return static_cast<std::uint32_t>(v);
}

bool entry_bool(const std::string& where, const Entry& e) {
  if (e.value == "true" || e.value == "1") return true;
  if (e.value == "false" || e.value == "0") return false;
  bad_value(where, e, "a boolean (true/false)");
}

std::vector<std::size_t> entry_shape(const std::string& where,
                                     const Entry& e) {
  std::vector<std::size_t> shape;
  for (const std::string& part : split(e.value, 'x')) {
    if (part.empty()) bad_value(where, e, "a shape like CxHxW");
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc() || p != part.data() + part.size() || v == 0)
      bad_value(where, e, "a shape like CxHxW");
    shape.push_back(v);
  }
  return shape;
}

// Pulls one entry out of the section map; whatever remains afterwards is an
// unknown key.
class SectionReader {
 public:
  SectionReader(std::string name, Section entries)
      : name_(std::move(name)), entries_(std::move(entries)) {}

  template <typename F>
  void take(const std::string& key, F&& apply) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return;
    apply(name_ + "." + key, it->second);
    entries_.erase(it);
  }

  void finish() const {
    if (!entries_.empty())
      throw ValidationError("unknown key '" + entries_.begin()->first +
                            "' in [" + name_ + "]");
  }

 private:
  std::string name_;
  Section entries_;
};

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  IniDoc doc = scan_ini(text);
  ExperimentConfig cfg;

  auto section = [&](const char* name) {
    auto it = doc.sections.find(name);
    Section entries;
    if (it != doc.sections.end()) {
      entries = std::move(it->second);
      doc.sections.erase(it);
    }
    return SectionReader(name, std::move(entries));
  };

  {
    auto s = section("experiment");
    s.take("kind", [&](const std::string&, const Entry& e) {
      cfg.kind = parse_kind(e.value);
    });
    s.take("seed", [&](const std::string& w, const Entry& e) {
      cfg.seed = entry_u64(w, e);
    });
    s.take("threads", [&](const std::string& w, const Entry& e) {
      cfg.threads = entry_count(w, e);
    });
    s.take("out", [&](const std::string&, const Entry& e) {
      cfg.out = e.value;
    });
    s.finish();
  }
  {
    auto s = section("dataset");
    DataConfig& d = cfg.data;
    s.take("source", [&](const std::string&, const Entry& e) {
      d.source = e.value;
    });
    s.take("classes", [&](const std::string& w, const Entry& e) {
      d.classes = entry_u32(w, e);
    });
    s.take("train_per_class", [&](const std::string& w, const Entry& e) {
      d.train_per_class = entry_count(w, e);
    });
    s.take("test_per_class", [&](const std::string& w, const Entry& e) {
      d.test_per_class = entry_count(w, e);
    });
    s.take("dim", [&](const std::string& w, const Entry& e) {
      d.dim = entry_count(w, e);
    });
    s.take("separation", [&](const std::string& w, const Entry& e) {
      d.separation = entry_double(w, e);
    });
    s.take("noise_std", [&](const std::string& w, const Entry& e) {
      d.noise_std = entry_double(w, e);
    });
    s.take("train_seed", [&](const std::string& w, const Entry& e) {
      d.train_seed = entry_u64(w, e);
    });
    s.take("test_seed", [&](const std::string& w, const Entry& e) {
      d.test_seed = entry_u64(w, e);
    });
    s.take("feature_shape", [&](const std::string& w, const Entry& e) {
      d.feature_shape = entry_shape(w, e);
    });
    s.take("train_path", [&](const std::string&, const Entry& e) {
      d.train_path = e.value;
    });
    s.take("test_path", [&](const std::string&, const Entry& e) {
      d.test_path = e.value;
    });
    s.take("file_classes", [&](const std::string& w, const Entry& e) {
      d.file_classes = entry_u32(w, e);
    });
    s.finish();
  }
  {
    auto s = section("arch");
    ArchConfig& a = cfg.arch;
    s.take("layers", [&](const std::string&, const Entry& e) {
      a.layers = parse_layers(e.value);
    });
    s.take("convention", [&](const std::string&, const Entry& e) {
      a.convention = parse_convention_choice(e.value);
    });
    s.take("init_std", [&](const std::string& w, const Entry& e) {
      a.init_std = entry_double(w, e);
    });
    s.finish();
  }
  {
    auto s = section("train");
    TrainConfig& t = cfg.train;
    s.take("learning_rate", [&](const std::string& w, const Entry& e) {
      t.learning_rate = entry_double(w, e);
    });
    s.take("momentum", [&](const std::string& w, const Entry& e) {
      t.momentum = entry_double(w, e);
    });
    s.take("weight_decay", [&](const std::string& w, const Entry& e) {
      t.weight_decay = entry_double(w, e);
    });
    s.take("batch_size", [&](const std::string& w, const Entry& e) {
      t.batch_size = entry_count(w, e);
    });
    s.take("max_epochs", [&](const std::string& w, const Entry& e) {
      t.max_epochs = entry_count(w, e);
    });
    s.take("eval_every", [&](const std::string& w, const Entry& e) {
      t.eval_every = entry_count(w, e);
    });
    s.take("gamma", [&](const std::string& w, const Entry& e) {
      t.gamma = entry_double(w, e);
    });
    s.take("snapshot_margins", [&](const std::string& w, const Entry& e) {
      t.snapshot_margins = entry_bool(w, e);
    });
    s.take("reset_momentum_on_shrink",
           [&](const std::string& w, const Entry& e) {
             t.reset_momentum_on_shrink = entry_bool(w, e);
           });
    s.finish();
  }
  {
    auto s = section("compress");
    CompressSettings& c = cfg.compress;
    s.take("keep_k", [&](const std::string& w, const Entry& e) {
      c.keep_k = entry_count(w, e);
    });
    s.take("settling_epochs", [&](const std::string& w, const Entry& e) {
      c.settling_epochs = entry_count(w, e);
    });
    s.take("retrain_min_epochs", [&](const std::string& w, const Entry& e) {
      c.retrain_min_epochs = entry_count(w, e);
    });
    s.take("retrain_cap", [&](const std::string& w, const Entry& e) {
      c.retrain_cap = entry_count(w, e);
    });
    s.take("full_gd_after_removal", [&](const std::string& w, const Entry& e) {
      c.full_gd_after_removal = entry_bool(w, e);
    });
    s.take("final_epochs", [&](const std::string& w, const Entry& e) {
      c.final_epochs = entry_count(w, e);
    });
    s.finish();
  }
  {
    auto s = section("replace_one");
    ReplaceOneSettings& r = cfg.replace_one;
    s.take("trials", [&](const std::string& w, const Entry& e) {
      r.trials = entry_count(w, e);
    });
    s.take("retrain_epochs", [&](const std::string& w, const Entry& e) {
      r.retrain_epochs = entry_count(w, e);
    });
    s.take("settling_epochs", [&](const std::string& w, const Entry& e) {
      r.settling_epochs = entry_count(w, e);
    });
    s.take("checkpoint", [&](const std::string&, const Entry& e) {
      r.checkpoint = e.value;
    });
    s.finish();
  }
  {
    auto s = section("ensemble");
    EnsembleSettings& n = cfg.ensemble;
    s.take("std_lo", [&](const std::string& w, const Entry& e) {
      n.std_lo = entry_double(w, e);
    });
    s.take("std_hi", [&](const std::string& w, const Entry& e) {
      n.std_hi = entry_double(w, e);
    });
    s.take("num_stds", [&](const std::string& w, const Entry& e) {
      n.num_stds = entry_count(w, e);
    });
    s.take("runs_per_std", [&](const std::string& w, const Entry& e) {
      n.runs_per_std = entry_count(w, e);
    });
    s.take("post_separation_epochs",
           [&](const std::string& w, const Entry& e) {
             n.post_separation_epochs = entry_count(w, e);
           });
    s.take("delta", [&](const std::string& w, const Entry& e) {
      n.delta = entry_double(w, e);
    });
    s.finish();
  }
  {
    auto s = section("label_compare");
    LabelCompareSettings& l = cfg.label_compare;
    s.take("fraction", [&](const std::string& w, const Entry& e) {
      l.fraction = entry_double(w, e);
    });
    s.take("label_seed", [&](const std::string& w, const Entry& e) {
      l.label_seed = entry_u64(w, e);
    });
    s.take("settling_epochs", [&](const std::string& w, const Entry& e) {
      l.settling_epochs = entry_count(w, e);
    });
    s.take("hist_k", [&](const std::string& w, const Entry& e) {
      l.hist_k = entry_count(w, e);
    });
    s.take("hist_bins", [&](const std::string& w, const Entry& e) {
      l.hist_bins = entry_count(w, e);
    });
    s.finish();
  }
  {
    auto s = section("margins");
    s.take("checkpoint", [&](const std::string&, const Entry& e) {
      cfg.margins.checkpoint = e.value;
    });
    s.finish();
  }

  if (!doc.sections.empty())
    throw ValidationError("unknown config section [" +
                          doc.sections.begin()->first + "]");

  cfg.train.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

std::string num(double v) {
  std::array<char, 64> buf;
  auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc()) throw ValidationError("unformattable number");
  return std::string(buf.data(), p);
}

}  // namespace

void ExperimentConfig::validate() const {
  require(threads >= 1, "experiment.threads must be >= 1");
  require(!out.empty(), "experiment.out must not be empty");

  const DataConfig& d = data;
  require(d.source == "synthetic" || d.source == "csv" || d.source == "binary",
          "dataset.source must be synthetic, csv, or binary (got '" +
              d.source + "')");
  if (d.source == "synthetic") {
    require(d.classes >= 2, "dataset.classes must be >= 2");
    require(d.train_per_class >= 1, "dataset.train_per_class must be >= 1");
    require(d.test_per_class >= 1, "dataset.test_per_class must be >= 1");
    require(d.dim >= 1, "dataset.dim must be >= 1");
    require(std::isfinite(d.separation), "dataset.separation must be finite");
    require(std::isfinite(d.noise_std) && d.noise_std >= 0.0,
            "dataset.noise_std must be finite and >= 0");
    require(d.train_path.empty() && d.test_path.empty(),
            "dataset.train_path/test_path apply only to file sources");
    require(d.file_classes == 0,
            "dataset.file_classes applies only to csv sources");
    if (!d.feature_shape.empty()) {
      require(d.feature_shape.size() == 3,
              "dataset.feature_shape must have exactly three dims (CxHxW)");
      std::size_t product = 1;
      for (std::size_t v : d.feature_shape) product *= v;
      require(product == d.dim,
              "dataset.feature_shape product must equal dataset.dim");
    }
  } else {
    require(!d.train_path.empty(), "dataset.train_path is required for " +
                                       d.source + " sources");
    require(!d.test_path.empty(),
            "dataset.test_path is required for " + d.source + " sources");
    if (d.source == "csv") {
      require(d.file_classes >= 2,
              "dataset.file_classes must be >= 2 for csv sources");
    } else {
      require(d.file_classes == 0,
              "dataset.file_classes applies only to csv sources (the binary "
              "header carries its own class count)");
    }
  }

  require(!arch.layers.empty(), "arch.layers must not be empty");
  require(std::isfinite(arch.init_std) && arch.init_std > 0.0,
          "arch.init_std must be > 0 (got " + num(arch.init_std) + ")");

  train.validate();

  require(compress.keep_k >= 1, "compress.keep_k must be >= 1");
  require(compress.retrain_cap >= 1, "compress.retrain_cap must be >= 1");

  require(replace_one.trials >= 1, "replace_one.trials must be >= 1");
  require(replace_one.retrain_epochs >= 1,
          "replace_one.retrain_epochs must be >= 1");

  const EnsembleSettings& n = ensemble;
  require(std::isfinite(n.std_lo) && n.std_lo > 0.0,
          "ensemble.std_lo must be > 0");
  require(std::isfinite(n.std_hi) && n.std_hi >= n.std_lo,
          "ensemble.std_hi must be >= ensemble.std_lo");
  require(n.num_stds >= 1, "ensemble.num_stds must be >= 1");
  require(n.runs_per_std >= 1, "ensemble.runs_per_std must be >= 1");
  require(std::isfinite(n.delta) && n.delta >= 0.0,
          "ensemble.delta must be >= 0");

  const LabelCompareSettings& l = label_compare;
  require(std::isfinite(l.fraction) && l.fraction >= 0.0 && l.fraction <= 1.0,
          "label_compare.fraction must be within [0, 1] (got " +
              num(l.fraction) + ")");
  require(l.hist_k >= 1, "label_compare.hist_k must be >= 1");
  require(l.hist_bins >= 1, "label_compare.hist_bins must be >= 1");

  if (kind == ExperimentKind::margins_report)
    require(!margins.checkpoint.empty(),
            "margins.checkpoint is required by the margins report");
}

std::string dump_config(const ExperimentConfig& cfg) {
  std::string out;
  auto line = [&](const std::string& key, const std::string& value) {
    out += key;
    out += " = ";
    out += value;
    out += '\n';
  };
  auto count = [&](const std::string& key, std::size_t v) {
    line(key, std::to_string(v));
  };
  auto u64 = [&](const std::string& key, std::uint64_t v) {
    line(key, std::to_string(v));
  };
  auto real = [&](const std::string& key, double v) { line(key, num(v)); };
  auto flag = [&](const std::string& key, bool v) {
    line(key, v ? "true" : "false");
  };

  out += "[experiment]\n";
  line("kind", kind_name(cfg.kind));
  u64("seed", cfg.seed);
  count("threads", cfg.threads);
  line("out", cfg.out);

  out += "\n[dataset]\n";
  const DataConfig& d = cfg.data;
  line("source", d.source);
  if (d.source == "synthetic") {
    count("classes", d.classes);
    count("train_per_class", d.train_per_class);
    count("test_per_class", d.test_per_class);
    count("dim", d.dim);
    real("separation", d.separation);
    real("noise_std", d.noise_std);
    u64("train_seed", d.train_seed);
    u64("test_seed", d.test_seed);
    if (!d.feature_shape.empty()) {
      std::string shape;
      for (std::size_t v : d.feature_shape) {
        if (!shape.empty()) shape += 'x';
        shape += std::to_string(v);
      }
      line("feature_shape", shape);
    }
  } else {
    line("train_path", d.train_path);
    line("test_path", d.test_path);
    if (d.source == "csv") count("file_classes", d.file_classes);
  }

  out += "\n[arch]\n";
  line("layers", format_layers(cfg.arch.layers));
  line("convention", convention_choice_name(cfg.arch.convention));
  real("init_std", cfg.arch.init_std);

  out += "\n[train]\n";
  const TrainConfig& t = cfg.train;
  real("learning_rate", t.learning_rate);
  real("momentum", t.momentum);
  real("weight_decay", t.weight_decay);
  count("batch_size", t.batch_size);
  count("max_epochs", t.max_epochs);
  count("eval_every", t.eval_every);
  real("gamma", t.gamma);
  flag("snapshot_margins", t.snapshot_margins);
  flag("reset_momentum_on_shrink", t.reset_momentum_on_shrink);

  out += "\n[compress]\n";
  const CompressSettings& c = cfg.compress;
  count("keep_k", c.keep_k);
  count("settling_epochs", c.settling_epochs);
  count("retrain_min_epochs", c.retrain_min_epochs);
  count("retrain_cap", c.retrain_cap);
  flag("full_gd_after_removal", c.full_gd_after_removal);
  count("final_epochs", c.final_epochs);

  out += "\n[replace_one]\n";
  const ReplaceOneSettings& r = cfg.replace_one;
  count("trials", r.trials);
  count("retrain_epochs", r.retrain_epochs);
  count("settling_epochs", r.settling_epochs);
  if (!r.checkpoint.empty()) line("checkpoint", r.checkpoint);

  out += "\n[ensemble]\n";
  const EnsembleSettings& n = cfg.ensemble;
  real("std_lo", n.std_lo);
  real("std_hi", n.std_hi);
  count("num_stds", n.num_stds);
  count("runs_per_std", n.runs_per_std);
  count("post_separation_epochs", n.post_separation_epochs);
  real("delta", n.delta);

  out += "\n[label_compare]\n";
  const LabelCompareSettings& l = cfg.label_compare;
  real("fraction", l.fraction);
  u64("label_seed", l.label_seed);
  count("settling_epochs", l.settling_epochs);
  count("hist_k", l.hist_k);
  count("hist_bins", l.hist_bins);

  out += "\n[margins]\n";
  if (!cfg.margins.checkpoint.empty())
    line("checkpoint", cfg.margins.checkpoint);

  return out;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : dump_config(cfg)) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string config_hash_hex(const ExperimentConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(config_hash(cfg)));
  return std::string(buf, 16);
}

}  // namespace marginlab
