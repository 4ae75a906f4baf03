#include <catch_amalgamated.hpp>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "sslst/cli/config.hpp"
#include "sslst/cli/pipeline.hpp"

namespace fs = std::filesystem;
using namespace sslst;
using cli::json;

namespace {

struct RunResult {
  int status = -1;
  std::string output;  // stdout and stderr
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(SSLST_CLI_PATH) + " " + args + " 2>&1";
  RunResult r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), static_cast<int>(buf.size()), p)) r.output += buf.data();
  const int st = pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Scratch directory with a tiny synthetic corpus and a small model config.
struct Sandbox {
  fs::path dir;

  explicit Sandbox(const std::string& name) : dir(fs::temp_directory_path() / ("sslst_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Sandbox() { fs::remove_all(dir); }

  std::string p(const std::string& rel) const { return (dir / rel).string(); }

  json base() const {
    return json{{"data",
                 {{"train", p("syn/train.tsv")},
                  {"test", p("syn/test.tsv")},
                  {"synth", {{"n_train", 24}, {"n_test", 6}, {"max_len", 5}}}}},
                {"ssl",
                 {{"cpc",
                   {{"channels", 8}, {"agg_layers", 1}, {"steps_ahead", 2}, {"negatives", 3}, {"codebook_size", 6},
                    {"kmeans_iters", 3}}},
                  {"mlm", {{"width", 8}, {"blocks", 1}, {"heads", 2}, {"ffn", 16}}}}},
                {"model",
                 {{"input_width", 8}, {"conv_channels", 2}, {"enc_layers", 1}, {"enc_hidden", 6}, {"dec_layers", 1},
                  {"dec_hidden", 8}, {"embed_dim", 6}, {"attention_dim", 6}}},
                {"training",
                 {{"epochs", 2}, {"steps", 4}, {"batch", 2}, {"crop_samples", 3200}, {"frame_budget", 200},
                  {"augment", false}}},
                {"decode", {{"beam", 2}, {"max_len", 20}, {"average", 2}}}};
  }

  std::string write(const std::string& name, const json& j) const {
    std::ofstream(dir / name) << j.dump(2);
    return p(name);
  }

  void synth() const { REQUIRE(run("--config " + write("synth.json", base()) + " --out " + p("syn") + " synth").status == 0); }
};

}  // namespace

TEST_CASE("config: defaults resolve and unknown keys are all reported", "[cli]") {
  const json d = cli::resolve_config(json::object());
  CHECK(d == cli::default_config());
  CHECK(d["model"]["dec_layers"] == 2);
  CHECK(d["decode"]["beam"] == 5);
  CHECK(d["decode"]["average"] == 5);

  try {
    cli::resolve_config(json{{"bogus", 1}, {"model", {{"enc_hiden", 3}, {"dec_layers", "two"}}}, {"training", {{"lr", 1}}}});
    FAIL("expected ConfigError");
  } catch (const cli::ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("3 config error(s)") != std::string::npos);
    CHECK(msg.find("'bogus'") != std::string::npos);
    CHECK(msg.find("'model.enc_hiden'") != std::string::npos);
    CHECK(msg.find("'model.dec_layers' must be a non-negative integer") != std::string::npos);
  }
  // Integer literals are valid reals.
  CHECK(cli::resolve_config(json{{"training", {{"lr", 1}}}})["training"]["lr"] == 1);
  CHECK_THROWS_AS(cli::resolve_config(json{{"training", {{"epochs", -1}}}}), cli::ConfigError);
  CHECK_THROWS_AS(cli::resolve_config(json{{"version", 2}}), cli::ConfigError);
  CHECK_THROWS_AS(cli::resolve_config(json::array()), cli::ConfigError);
}

TEST_CASE("score: perfect decode gives BLEU=100.00", "[cli]") {
  Sandbox sb("score");
  std::ofstream(sb.dir / "decode.tsv") << "id\thypothesis\treference\nu1\ta b c d\ta b c d\nu2\tx y\tx y\n";
  auto r = run("--out " + sb.p("o") + " score --input " + sb.p("decode.tsv"));
  CHECK(r.status == 0);
  CHECK(r.output == "BLEU=100.00\n");
  CHECK(slurp(sb.dir / "o" / "score.txt") == "BLEU=100.00\n");
  CHECK(run("--out " + sb.p("o") + " score --metric wer --input " + sb.p("decode.tsv")).output == "WER=0.00\n");

  std::ofstream(sb.dir / "bad.tsv") << "u1\tonly two\n";
  auto bad = run("--out " + sb.p("o") + " score --input " + sb.p("bad.tsv"));
  CHECK(bad.status == 5);
  CHECK(bad.output.find("error[invalid-argument]") != std::string::npos);
}

TEST_CASE("cli: config errors exit nonzero listing every violation", "[cli]") {
  Sandbox sb("badcfg");
  const auto path = sb.write("bad.json", json{{"data", {{"trian", ""}}}, {"decode", {{"beam", "five"}}}, {"extra", 1}});
  auto r = run("--config " + path + " --out " + sb.p("o") + " train-st");
  CHECK(r.status == 2);
  CHECK(r.output.find("error[config]: 3 config error(s)") != std::string::npos);
  CHECK(r.output.find("'data.trian'") != std::string::npos);
  CHECK(r.output.find("'decode.beam'") != std::string::npos);
  CHECK(r.output.find("'extra'") != std::string::npos);

  auto missing = run("--out " + sb.p("o") + " train-st");
  CHECK(missing.status == 2);
  CHECK(missing.output.find("data.train is required") != std::string::npos);
  CHECK(run("--out " + sb.p("o") + " inspect " + sb.p("nope.ckpt")).status == 3);
  CHECK(run("bogus-stage").status != 0);
}

TEST_CASE("cli: end-to-end recipe with encoder transfer", "[cli]") {
  Sandbox sb("e2e");
  sb.synth();
  CHECK(fs::exists(sb.dir / "syn" / "wav" / "en-000000.wav"));
  json c = sb.base();
  REQUIRE(run("--config " + sb.write("cpc.json", c) + " --out " + sb.p("cpc") + " pretrain-cpc").status == 0);
  CHECK(fs::exists(sb.dir / "cpc" / "cpc.ckpt"));

  c["features"] = {{"kind", "cpc"}, {"cpc", sb.p("cpc/cpc.ckpt")}};
  REQUIRE(run("--config " + sb.write("asr.json", c) + " --out " + sb.p("asr") + " train-asr").status == 0);
  CHECK(fs::exists(sb.dir / "asr" / "checkpoints" / "epoch-0002.ckpt"));
  CHECK(fs::exists(sb.dir / "asr" / "averaged.ckpt"));

  c["transfer"] = {{"scope", "encoder"}, {"source", sb.p("asr/model.ckpt")}};
  REQUIRE(run("--config " + sb.write("st.json", c) + " --out " + sb.p("st") + " train-st").status == 0);
  const json resolved = json::parse(slurp(sb.dir / "st" / "config.resolved.json"));
  CHECK(resolved["transfer"]["source_id"] == cli::file_id(sb.p("asr/model.ckpt")));
  CHECK(resolved["transfer"]["scope"] == "encoder");
  const std::string log = slurp(sb.dir / "st" / "metrics.log");
  CHECK(log.find("source_id=" + cli::file_id(sb.p("asr/model.ckpt"))) != std::string::npos);
  CHECK(log.find("step=1 loss=") != std::string::npos);
  CHECK(log.find(" lr=0.001 time=") != std::string::npos);

  c["decode"]["checkpoint"] = sb.p("st/checkpoints");
  c["data"]["vocab"] = sb.p("st/vocab.txt");
  const auto dec = sb.write("dec.json", c);
  REQUIRE(run("--config " + dec + " --out " + sb.p("dec") + " decode").status == 0);
  auto r = run("--config " + dec + " --out " + sb.p("dec") + " score");
  CHECK(r.status == 0);
  CHECK(r.output.starts_with("BLEU="));

  // Rows come out sorted by id regardless of worker count.
  const std::string one = slurp(sb.dir / "dec" / "decode.tsv");
  REQUIRE(run("--config " + dec + " --out " + sb.p("dec2") + " --threads 3 decode").status == 0);
  CHECK(slurp(sb.dir / "dec2" / "decode.tsv") == one);
  CHECK(one.find("en-000024\t") < one.find("en-000029\t"));

  // Scope encoder+decoder across the shared vocabulary also works.
  c["transfer"]["scope"] = "encoder+decoder";
  CHECK(run("--config " + sb.write("st2.json", c) + " --out " + sb.p("st2") + " transfer").status == 0);
}

TEST_CASE("cli: identical configs give bitwise identical checkpoints", "[cli]") {
  Sandbox sb("repro");
  sb.synth();
  const auto cfg = sb.write("st.json", sb.base());
  REQUIRE(run("--config " + cfg + " --out " + sb.p("a") + " train-st").status == 0);
  REQUIRE(run("--config " + cfg + " --out " + sb.p("b") + " train-st").status == 0);
  CHECK(slurp(sb.dir / "a" / "model.ckpt") == slurp(sb.dir / "b" / "model.ckpt"));
  auto ra = json::parse(slurp(sb.dir / "a" / "config.resolved.json"));
  auto rb = json::parse(slurp(sb.dir / "b" / "config.resolved.json"));
  CHECK(ra["output"] != rb["output"]);
  ra.erase("output");
  rb.erase("output");
  CHECK(ra == rb);

  // The resolved config is itself a valid config and reproduces the run.
  REQUIRE(run("--config " + sb.p("a/config.resolved.json") + " --out " + sb.p("c") + " train-st").status == 0);
  CHECK(slurp(sb.dir / "a" / "model.ckpt") == slurp(sb.dir / "c" / "model.ckpt"));

  REQUIRE(run("--config " + cfg + " --seed 9 --out " + sb.p("d") + " train-st").status == 0);
  CHECK(slurp(sb.dir / "a" / "model.ckpt") != slurp(sb.dir / "d" / "model.ckpt"));
}

TEST_CASE("cli: SSL stages, hybrid encoder and feature fine-tuning", "[cli]") {
  Sandbox sb("ssl");
  sb.synth();
  json c = sb.base();
  REQUIRE(run("--config " + sb.write("cpc.json", c) + " --out " + sb.p("cpc") + " pretrain-cpc").status == 0);
  c["features"] = {{"kind", "cpc"}, {"cpc", sb.p("cpc/cpc.ckpt")}};
  REQUIRE(run("--config " + sb.write("vq.json", c) + " --out " + sb.p("vq") + " train-vq").status == 0);
  CHECK(slurp(sb.dir / "vq" / "metrics.log").find("iter=3 distortion=") != std::string::npos);
  c["features"] = {{"kind", "vq"}, {"cpc", sb.p("vq/cpc.ckpt")}};
  REQUIRE(run("--config " + sb.write("mlm.json", c) + " --out " + sb.p("mlm") + " pretrain-mlm").status == 0);

  // Hybrid translator: masked-LM encoder straight from the checkpoint.
  c["features"] = {{"kind", "mlm"}, {"cpc", sb.p("vq/cpc.ckpt")}, {"mlm", sb.p("mlm/mlm.ckpt")}};
  c["model"]["encoder"] = "mlm";
  REQUIRE(run("--config " + sb.write("hyb.json", c) + " --out " + sb.p("hyb") + " train-st").status == 0);
  CHECK(run("inspect " + sb.p("hyb/model.ckpt")).output.find("enc.mlm.") != std::string::npos);

  // The hybrid needs a masked-LM checkpoint, not a CPC one.
  c["features"]["mlm"] = sb.p("vq/cpc.ckpt");
  auto wrong = run("--config " + sb.write("wrong.json", c) + " --out " + sb.p("wrong") + " train-st");
  CHECK(wrong.status == 4);
  CHECK(wrong.output.find("error[checkpoint-mismatch]") != std::string::npos);

  // Fine-tuning writes new checkpoints and never touches the sources.
  c["model"]["encoder"] = "recurrent";
  c["features"] = {{"kind", "mlm"}, {"cpc", sb.p("vq/cpc.ckpt")}, {"mlm", sb.p("mlm/mlm.ckpt")}};
  const auto before = slurp(sb.dir / "mlm" / "mlm.ckpt");
  REQUIRE(run("--config " + sb.write("ft.json", c) + " --out " + sb.p("ft") + " finetune-features").status == 0);
  CHECK(slurp(sb.dir / "mlm" / "mlm.ckpt") == before);
  CHECK(slurp(sb.dir / "ft" / "mlm.ckpt") != before);
}

TEST_CASE("cli: prepare, multilingual mixture and averaging", "[cli]") {
  Sandbox sb("prep");
  sb.synth();
  json x = sb.base();
  x["data"]["synth"]["freq_offset_hz"] = 60.0;
  x["data"]["synth"]["src_lang"] = "xx";
  REQUIRE(run("--config " + sb.write("x.json", x) + " --out " + sb.p("synx") + " synth").status == 0);

  json c = sb.base();
  c["data"]["extra_train"] = sb.p("synx/train.tsv");
  c["data"]["filter"] = {{"min_frames", 30}};
  REQUIRE(run("--config " + sb.write("prep.json", c) + " --out " + sb.p("prep") + " prepare").status == 0);
  const auto kept = corpus::load_manifest(sb.p("prep/train.tsv"));
  for (auto u : kept) CHECK(audio::num_frames(u.waveform().size()) >= 30);
  CHECK(kept.size() < 24);
  CHECK(fs::exists(sb.dir / "prep" / "vocab.txt"));

  c["data"].erase("filter");
  REQUIRE(run("--config " + sb.write("multi.json", c) + " --out " + sb.p("multi") + " train-asr").status == 0);
  CHECK(slurp(sb.dir / "multi" / "metrics.log").find("examples=48 ") != std::string::npos);
  CHECK(run("--config " + sb.p("multi.json") + " --out " + sb.p("bad") + " train-st").status == 2);

  REQUIRE(run("--out " + sb.p("avg") + " average " + sb.p("multi/checkpoints/epoch-0001.ckpt") + " " +
              sb.p("multi/checkpoints/epoch-0002.ckpt"))
              .status == 0);
  auto avg = transfer::load_checkpoint(sb.p("avg/averaged.ckpt"));
  auto a = transfer::load_checkpoint(sb.p("multi/checkpoints/epoch-0001.ckpt"));
  auto b = transfer::load_checkpoint(sb.p("multi/checkpoints/epoch-0002.ckpt"));
  for (const auto& [name, st] : avg.tensors)
    for (std::size_t i = 0; i < st.value.size(); ++i)
      REQUIRE(st.value.data[i] ==
              static_cast<double>(static_cast<float>((a.at(name).data[i] + b.at(name).data[i]) / 2.0)));
  CHECK(avg.meta.step == b.meta.step);
}
