#include <cstdint>
#include <string>

#include "doctest.h"
#include "marginlab/config.hpp"
#include "marginlab/errors.hpp"

using namespace marginlab;

namespace {

const char* kSample = R"(# sample experiment
[experiment]
kind = compress-immediate
seed = 9
threads = 2
out = runs/demo

[dataset]
source = synthetic
classes = 3
train_per_class = 40
test_per_class = 25
dim = 6
separation = 2.5
noise_std = 0.8
train_seed = 101
test_seed = 102

[arch]
layers = dense:32:6,relu,dense:3
convention = all
init_std = 0.1

[train]
learning_rate = 0.02
momentum = 0.8
weight_decay = 0.0001
batch_size = 16
max_epochs = 250
eval_every = 5
gamma = 0.05
snapshot_margins = true

[compress]
keep_k = 30
settling_epochs = 10
)";

}  // namespace

TEST_CASE("an empty config yields the documented defaults") {
  ExperimentConfig cfg = parse_config("");
  CHECK(cfg.kind == ExperimentKind::train);
  CHECK(cfg.seed == 1);
  CHECK(cfg.threads == 1);
  CHECK(cfg.out == "out");
  CHECK(cfg.data.source == "synthetic");
  CHECK(cfg.data.classes == 2);
  CHECK(cfg.data.train_per_class == 100);
  CHECK(cfg.arch.init_std == 0.05);
  CHECK(cfg.arch.convention == ConventionChoice::automatic);
  CHECK(cfg.train.learning_rate == 0.01);
  CHECK(cfg.train.momentum == 0.9);
  CHECK(cfg.train.batch_size == 32);
  CHECK(cfg.train.seed == 1);  // mirrors the experiment seed
  CHECK(cfg.compress.keep_k == 100);
  CHECK(cfg.ensemble.num_stds == 5);
  CHECK(cfg.label_compare.fraction == 1.0);
}

TEST_CASE("values survive a parse and land in the right fields") {
  ExperimentConfig cfg = parse_config(kSample);
  CHECK(cfg.kind == ExperimentKind::compress_immediate);
  CHECK(cfg.seed == 9);
  CHECK(cfg.threads == 2);
  CHECK(cfg.out == "runs/demo");
  CHECK(cfg.data.classes == 3);
  CHECK(cfg.data.dim == 6);
  CHECK(cfg.data.separation == 2.5);
  CHECK(cfg.data.train_seed == 101);
  REQUIRE(cfg.arch.layers.size() == 3);
  CHECK(cfg.arch.layers[0].out_dim == 32);
  CHECK(cfg.arch.layers[0].in_dim == 6);
  CHECK(cfg.arch.convention == ConventionChoice::all);
  CHECK(cfg.train.learning_rate == 0.02);
  CHECK(cfg.train.weight_decay == 0.0001);
  CHECK(cfg.train.snapshot_margins);
  CHECK(cfg.train.seed == 9);
  CHECK(cfg.compress.keep_k == 30);
  CHECK(cfg.compress.settling_epochs == 10);
  CHECK(cfg.compress.retrain_cap == 50);  // untouched default
}

TEST_CASE("dump then parse is the identity and dump is a fixed point") {
  ExperimentConfig cfg = parse_config(kSample);
  const std::string dumped = dump_config(cfg);
  ExperimentConfig again = parse_config(dumped);
  CHECK(dump_config(again) == dumped);
  CHECK(config_hash(again) == config_hash(cfg));

  // the same holds for a default config and a file-backed one
  CHECK(dump_config(parse_config(dump_config(ExperimentConfig{}))) ==
        dump_config(ExperimentConfig{}));

  ExperimentConfig filecfg = parse_config(
      "[dataset]\nsource = csv\ntrain_path = a.csv\ntest_path = b.csv\n"
      "file_classes = 4\n");
  const std::string fdump = dump_config(filecfg);
  CHECK(dump_config(parse_config(fdump)) == fdump);
  CHECK(fdump.find("train_per_class") == std::string::npos);
  CHECK(fdump.find("train_path = a.csv") != std::string::npos);
}

TEST_CASE("scan errors carry the offending line") {
  try {
    parse_config("[train]\nmomentum = 0.5\nmomentum = 0.7\n");
    FAIL("expected a duplicate-key error");
  } catch (const ParseError& e) {
    CHECK(e.where() == 3);
    CHECK(std::string(e.what()).find("momentum") != std::string::npos);
  }

  try {
    parse_config("momentum = 0.5\n");
    FAIL("expected a key-before-section error");
  } catch (const ParseError& e) {
    CHECK(e.where() == 1);
  }

  try {
    parse_config("[train]\nlearning_rate = fast\n");
    FAIL("expected a bad-number error");
  } catch (const ParseError& e) {
    CHECK(e.where() == 2);
    CHECK(std::string(e.what()).find("train.learning_rate") !=
          std::string::npos);
  }

  CHECK_THROWS_AS(parse_config("[dataset\nsource = synthetic\n"), ParseError);
  CHECK_THROWS_AS(parse_config("[]\n"), ParseError);
  CHECK_THROWS_AS(parse_config("[train]\nno equals sign\n"), ParseError);
  CHECK_THROWS_AS(parse_config("[train]\nsnapshot_margins = yes\n"),
                  ParseError);
}

TEST_CASE("unknown keys and sections are named") {
  try {
    parse_config("[train]\nlearning_rte = 0.1\n");
    FAIL("expected an unknown-key error");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("learning_rte") != std::string::npos);
    CHECK(msg.find("[train]") != std::string::npos);
  }
  try {
    parse_config("[optimizer]\nlr = 0.1\n");
    FAIL("expected an unknown-section error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("optimizer") != std::string::npos);
  }
}

TEST_CASE("comments and spacing are immaterial") {
  ExperimentConfig a = parse_config(
      "# leading note\n; alt comment\n[experiment]\n  seed   =   5  \n\n");
  CHECK(a.seed == 5);
  ExperimentConfig b = parse_config("[experiment]\nseed = 5\n");
  CHECK(config_hash(a) == config_hash(b));
}

TEST_CASE("validation names the field and its range") {
  try {
    parse_config("[arch]\ninit_std = 0\n");
    FAIL("expected an init_std bound error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("arch.init_std") != std::string::npos);
  }
  try {
    parse_config("[train]\ngamma = -1\n");
    FAIL("expected a gamma bound error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("gamma") != std::string::npos);
  }
  try {
    parse_config("[label_compare]\nfraction = 1.5\n");
    FAIL("expected a fraction bound error");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("label_compare.fraction") != std::string::npos);
    CHECK(msg.find("[0, 1]") != std::string::npos);
  }

  CHECK_THROWS_AS(parse_config("[train]\nmomentum = 1\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("[ensemble]\nstd_lo = 0.5\nstd_hi = 0.1\n"),
                  ValidationError);
  CHECK_THROWS_AS(parse_config("[dataset]\nsource = parquet\n"),
                  ValidationError);
  CHECK_THROWS_AS(parse_config("[dataset]\ntrain_path = a.csv\n"),
                  ValidationError);
  CHECK_THROWS_AS(
      parse_config("[dataset]\nsource = csv\ntrain_path = a\ntest_path = b\n"),
      ValidationError);  // csv needs file_classes
  CHECK_THROWS_AS(
      parse_config("[dataset]\nsource = binary\ntest_path = b.bin\n"),
      ValidationError);  // missing train_path
  CHECK_THROWS_AS(parse_config("[dataset]\nfeature_shape = 2x2\ndim = 4\n"),
                  ValidationError);  // shape needs three dims
  CHECK_THROWS_AS(parse_config("[dataset]\nfeature_shape = 1x2x3\ndim = 4\n"),
                  ValidationError);  // product mismatch
  CHECK_NOTHROW(parse_config("[dataset]\nfeature_shape = 1x2x2\ndim = 4\n"));
  CHECK_THROWS_AS(parse_config("[dataset]\nfeature_shape = 1xx2\ndim = 2\n"),
                  ParseError);
  CHECK_THROWS_AS(parse_config("[experiment]\nkind = margins-report\n"),
                  ValidationError);  // margins.checkpoint required
  CHECK_NOTHROW(parse_config(
      "[experiment]\nkind = margins-report\n[margins]\ncheckpoint = c.bin\n"));
}

TEST_CASE("layer grammar round trips and rejects malformed tokens") {
  const std::string text = "conv:8:1,relu,bn,conv:16,relu,bn:16,dense:2:256";
  std::vector<LayerSpec> layers = parse_layers(text);
  REQUIRE(layers.size() == 7);
  CHECK(layers[0].kind == LayerKind::conv2d);
  CHECK(layers[0].out_channels == 8);
  CHECK(layers[0].in_channels == 1);
  CHECK(layers[3].out_channels == 16);
  CHECK(layers[3].in_channels == 0);  // inferred downstream
  CHECK(layers[5].channels == 16);
  CHECK(layers[6].in_dim == 256);
  CHECK(format_layers(layers) == text);

  CHECK_THROWS_AS(parse_layers(""), ValidationError);
  CHECK_THROWS_AS(parse_layers("dense"), ValidationError);
  CHECK_THROWS_AS(parse_layers("dense:0:4"), ValidationError);
  CHECK_THROWS_AS(parse_layers("relu:3"), ValidationError);
  CHECK_THROWS_AS(parse_layers("bn:4:4"), ValidationError);
  CHECK_THROWS_AS(parse_layers("pool:2"), ValidationError);
  CHECK_THROWS_AS(parse_layers("dense:2:4,,relu"), ValidationError);
  CHECK_THROWS_AS(parse_layers("dense:two:4"), ValidationError);
}

TEST_CASE("kind and convention names round trip") {
  for (ExperimentKind kind :
       {ExperimentKind::train, ExperimentKind::compress_continuous,
        ExperimentKind::compress_immediate, ExperimentKind::replace_one,
        ExperimentKind::ensemble, ExperimentKind::label_compare,
        ExperimentKind::margins_report}) {
    CHECK(parse_kind(kind_name(kind)) == kind);
  }
  CHECK_THROWS_AS(parse_kind("compress"), ValidationError);

  for (ConventionChoice choice :
       {ConventionChoice::automatic, ConventionChoice::conv,
        ConventionChoice::bn, ConventionChoice::all}) {
    CHECK(parse_convention_choice(convention_choice_name(choice)) == choice);
  }
  CHECK_THROWS_AS(parse_convention_choice("frobenius"), ValidationError);

  Network mlp = init_network(
      {LayerSpec::dense(4, 3), LayerSpec::relu(), LayerSpec::dense(2)}, 0.1,
      1);
  CHECK(resolve_convention(ConventionChoice::automatic, mlp) ==
        NormConvention::all_weight_product);
  CHECK(resolve_convention(ConventionChoice::conv, mlp) ==
        NormConvention::conv_product);
  CHECK_THROWS_AS(resolve_convention(ConventionChoice::bn, mlp),
                  ConventionError);
}

TEST_CASE("the config hash is fnv-1a over the canonical dump") {
  ExperimentConfig cfg = parse_config(kSample);
  std::uint64_t expected = 14695981039346656037ULL;
  for (unsigned char ch : dump_config(cfg)) {
    expected ^= ch;
    expected *= 1099511628211ULL;
  }
  CHECK(config_hash(cfg) == expected);

  const std::string hex = config_hash_hex(cfg);
  CHECK(hex.size() == 16);
  for (char c : hex) {
    const bool ok = (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
    CHECK(ok);
  }

  ExperimentConfig other = cfg;
  other.seed += 1;
  CHECK(config_hash(other) != config_hash(cfg));
  CHECK(config_hash_hex(other) != hex);
}

TEST_CASE("load_config reports an unopenable path") {
  CHECK_THROWS_AS(load_config("/nonexistent/dir/experiment.ini"),
                  ValidationError);
}
