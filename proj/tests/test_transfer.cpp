#include <catch_amalgamated.hpp>

#include <filesystem>

#include "sslst/transfer/checkpoint.hpp"
#include "sslst/transfer/transfer.hpp"
#include "support/seq2seq_cases.hpp"

using namespace sslst;
using namespace sslst::transfer;

namespace {

std::filesystem::path tmp(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

template <typename T>
void randomize(ParamSet<T>& ps, Rng& rng) {
  for (auto& [_, p] : ps) init::normal(p.value, rng, 1.0);
}

Checkpoint scalar_checkpoint(double v, long order, long step = 0) {
  Checkpoint c;
  c.meta.kind = "seq2seq";
  c.meta.arch = {{"toy", 1}};
  c.meta.vocab_fingerprint = "v";
  c.meta.order = order;
  c.meta.step = step;
  c.tensors["enc.w"] = {Dtype::F64, Tensor<double>({1}, std::vector<double>{v})};
  c.tensors["dec.w"] = {Dtype::F64, Tensor<double>({2}, std::vector<double>{v, -v})};
  return c;
}

text::Vocabulary letters() { return text::build_char_vocab({"a b c d e f g"}); }

translator::Seq2SeqModel<float> toy_model(std::size_t vocab, Rng& rng) {
  translator::Seq2SeqModel<float> m(testing::tiny_seq2seq(3, vocab));
  m.init(rng);
  return m;
}

}  // namespace

TEST_CASE("checkpoint: bitwise round trip for every model kind", "[transfer]") {
  Rng rng(1);
  const auto path = tmp("sslst_ckpt_roundtrip.bin").string();

  auto s2s = toy_model(9, rng);
  randomize(s2s.params, rng);
  save_checkpoint(path, make_checkpoint(s2s, "fp", 1234, 7));
  auto c = load_checkpoint(path);
  CHECK(c.meta.step == 1234);
  CHECK(c.meta.order == 7);
  CHECK(c.meta.vocab_fingerprint == "fp");
  CHECK(seq2seq_from_checkpoint<float>(c).params == s2s.params);

  ssl::CpcConfig cc;
  cc.channels = 4;
  cc.agg_layers = 1;
  cc.steps_ahead = 2;
  ssl::CpcModel<float> cpc(cc);
  cpc.init(rng);
  randomize(cpc.params, rng);
  Tensor<float> cb({3, 4});
  for (auto& v : cb.data) v = static_cast<float>(rng.normal());
  cpc.set_codebook(cb);
  save_checkpoint(path, make_checkpoint(cpc, 5, 1));
  auto cpc2 = cpc_from_checkpoint<float>(load_checkpoint(path));
  CHECK(cpc2.quantized());
  CHECK(cpc2.params == cpc.params);

  ssl::MlmConfig mc;
  mc.codes = 5;
  mc.width = 4;
  mc.blocks = 1;
  mc.heads = 2;
  mc.ffn = 6;
  mc.max_len = 16;
  ssl::MlmModel<double> mlm(mc);
  randomize(mlm.params, rng);
  save_checkpoint(path, make_checkpoint(mlm, 9, 2));
  CHECK(mlm_from_checkpoint<double>(load_checkpoint(path)).params == mlm.params);

  ssl::MlmModel<float> mlmf(mc);
  randomize(mlmf.params, rng);
  auto hybrid = translator::Seq2SeqModel<float>::hybrid(mlmf, testing::tiny_seq2seq(3, 9), rng);
  save_checkpoint(path, make_checkpoint(hybrid, "fp", 3, 3));
  auto h2 = seq2seq_from_checkpoint<float>(load_checkpoint(path));
  CHECK(h2.kind == translator::EncoderKind::MaskedLm);
  CHECK(h2.params == hybrid.params);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint: random tensors round trip in both dtypes", "[transfer][property]") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    ParamSet<double> pd;
    ParamSet<float> pf;
    const long n = rng.uniform_int(1, 6);
    for (long i = 0; i < n; ++i) {
      Shape s;
      for (long r = rng.uniform_int(0, 3); r > 0; --r) s.push_back(static_cast<std::size_t>(rng.uniform_int(1, 4)));
      pd.add("t" + std::to_string(i), s);
      pf.add("t" + std::to_string(i), s);
    }
    randomize(pd, rng);
    randomize(pf, rng);
    for (auto& [_, p] : pd) p.value.data[0] = -0.0;
    auto bd = parse_checkpoint(encode_checkpoint(Checkpoint::from_params(pd, {})));
    auto bf = parse_checkpoint(encode_checkpoint(Checkpoint::from_params(pf, {})));
    ParamSet<double> qd = pd;
    ParamSet<float> qf = pf;
    for (auto& [_, p] : qd) p.value.fill(7.0);
    for (auto& [_, p] : qf) p.value.fill(7.0f);
    bd.load_into(qd);
    bf.load_into(qf);
    REQUIRE(qd == pd);
    REQUIRE(qf == pf);
  }
}

TEST_CASE("checkpoint: distinct errors for corrupt files", "[transfer]") {
  Rng rng(3);
  auto m = toy_model(9, rng);
  const std::string good = encode_checkpoint(make_checkpoint(m, "fp", 1, 1));

  CHECK_THROWS_AS(parse_checkpoint("NOTACKPT" + good.substr(8)), CheckpointMagicError);
  CHECK_THROWS_AS(parse_checkpoint(""), CheckpointMagicError);

  const std::string last = m.params.names().back();
  try {
    parse_checkpoint(good.substr(0, good.size() - 3));
    FAIL("expected truncation error");
  } catch (const CheckpointTruncatedError& e) {
    CHECK(std::string(e.what()).find("'" + last + "'") != std::string::npos);
  }

  // Point the first tensor's dtype byte at an unknown tag.
  const auto first = m.params.names().front();
  std::string bad = good;
  const auto pos = bad.find(first) + first.size();
  REQUIRE(bad[pos] == 1);
  bad[pos] = 9;
  CHECK_THROWS_AS(parse_checkpoint(bad), CheckpointDtypeError);

  CHECK_THROWS_AS(parse_checkpoint(good + "x"), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(tmp("sslst_missing.ckpt").string()), IoError);
}

TEST_CASE("checkpoint: load_into rejects mismatched models", "[transfer]") {
  Rng rng(4);
  auto a = toy_model(9, rng);
  auto b = toy_model(10, rng);
  auto c = make_checkpoint(a, "fp", 0, 0);
  try {
    c.load_into(b.params);
    FAIL("expected mismatch");
  } catch (const CheckpointMismatchError& e) {
    CHECK(std::string(e.what()).find("'dec.embed' has shape") != std::string::npos);
  }
  CHECK_THROWS_AS(cpc_from_checkpoint<float>(c), CheckpointMismatchError);
}

TEST_CASE("average: identity, midpoint and last-k selection", "[transfer]") {
  std::vector<Checkpoint> same(5, scalar_checkpoint(1.25, 0));
  for (long i = 0; i < 5; ++i) same[static_cast<std::size_t>(i)].meta.order = i;
  auto avg = average_checkpoints(same);
  CHECK(avg.at("enc.w").data == std::vector<double>{1.25});
  CHECK(avg.at("dec.w").data == std::vector<double>{1.25, -1.25});

  auto mid = average_checkpoints({scalar_checkpoint(0.0, 0, 10), scalar_checkpoint(2.0, 1, 20)});
  CHECK(mid.at("enc.w").data == std::vector<double>{1.0});
  CHECK(mid.meta.step == 20);

  // Seven files: the two oldest carry huge values that must not leak in.
  std::vector<Checkpoint> seven;
  for (long i = 0; i < 7; ++i) seven.push_back(scalar_checkpoint(i < 2 ? 1e6 : static_cast<double>(i), i, 100 * i));
  std::reverse(seven.begin(), seven.end());
  auto last5 = average_checkpoints(seven, 5);
  CHECK(last5.at("enc.w").data == std::vector<double>{(2.0 + 3 + 4 + 5 + 6) / 5});
  CHECK(last5.meta.step == 600);
  CHECK(last5.meta.order == 6);
}

TEST_CASE("average: files on disk", "[transfer]") {
  std::vector<std::string> paths;
  for (long i = 0; i < 7; ++i) {
    paths.push_back(tmp("sslst_avg_" + std::to_string(i) + ".ckpt").string());
    save_checkpoint(paths.back(), scalar_checkpoint(i < 2 ? -50.0 : 1.0, i));
  }
  CHECK(average_checkpoint_files(paths).at("enc.w").data == std::vector<double>{1.0});
  for (const auto& p : paths) std::filesystem::remove(p);
}

TEST_CASE("average: permutation invariant and linear", "[transfer][property]") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Checkpoint> cks, scaled;
    const double a = rng.uniform(-3.0, 3.0);
    for (long i = 0; i < 5; ++i) {
      cks.push_back(scalar_checkpoint(rng.normal(), i));
      scaled.push_back(cks.back());
      for (auto& [_, st] : scaled.back().tensors)
        for (auto& v : st.value.data) v *= a;
    }
    auto base = average_checkpoints(cks);
    auto lin = average_checkpoints(scaled);
    std::vector<std::size_t> perm{0, 1, 2, 3, 4};
    rng.shuffle(perm.begin(), perm.end());
    std::vector<Checkpoint> shuffled;
    for (auto i : perm) shuffled.push_back(cks[i]);
    auto sh = average_checkpoints(shuffled);
    for (const auto& [name, st] : base.tensors)
      for (std::size_t i = 0; i < st.value.size(); ++i) {
        REQUIRE(sh.at(name).data[i] == st.value.data[i]);
        REQUIRE(std::abs(lin.at(name).data[i] - a * st.value.data[i]) < 1e-12);
      }
  }
}

TEST_CASE("average: mismatches rejected", "[transfer]") {
  auto a = scalar_checkpoint(1, 0), b = scalar_checkpoint(1, 1);
  b.tensors["enc.w"].value = Tensor<double>({2});
  CHECK_THROWS_AS(average_checkpoints({a, b}), CheckpointMismatchError);
  auto c = scalar_checkpoint(1, 1);
  c.tensors.erase("dec.w");
  c.tensors["dec.v"] = {Dtype::F64, Tensor<double>({2})};
  CHECK_THROWS_AS(average_checkpoints({a, c}), CheckpointMismatchError);
  auto d = scalar_checkpoint(1, 1);
  d.meta.arch = {{"toy", 2}};
  CHECK_THROWS_AS(average_checkpoints({a, d}), CheckpointMismatchError);
  CHECK_THROWS_AS(average_checkpoints({}), InvalidArgument);
}

TEST_CASE("transfer: scopes copy exactly their namespaces", "[transfer]") {
  Rng rng(6);
  auto source = toy_model(9, rng);
  randomize(source.params, rng);
  const auto ck = make_checkpoint(source, "fp", 0, 0);

  for (auto scope : {TransferScope::Encoder, TransferScope::EncoderDecoder}) {
    auto target = toy_model(9, rng);
    const auto before = tensor_hashes(target.params);
    auto rep = transfer_parameters(ck, target, scope, "fp");
    const auto after = tensor_hashes(target.params);
    std::size_t in = 0;
    for (const auto& [name, p] : target.params) {
      if (in_scope(name, scope)) {
        ++in;
        REQUIRE(bitwise_equal(p.value, source.params.at(name).value));
      } else {
        REQUIRE(before.at(name) == after.at(name));
      }
    }
    CHECK(rep.copied.size() == in);
    if (scope == TransferScope::Encoder) {
      CHECK(before.at("proj.w") == after.at("proj.w"));
    } else {
      CHECK(bitwise_equal(target.params.at("proj.w").value, source.params.at("proj.w").value));
    }
  }
}

TEST_CASE("transfer: rejected transfers leave the target untouched", "[transfer]") {
  Rng rng(7);
  auto source = toy_model(9, rng);
  const auto ck = make_checkpoint(source, "fp-asr", 0, 0);

  auto target = toy_model(9, rng);
  const auto before = tensor_hashes(target.params);
  CHECK_THROWS_AS(transfer_parameters(ck, target, TransferScope::EncoderDecoder, "fp-st"), CheckpointMismatchError);
  CHECK(tensor_hashes(target.params) == before);
  CHECK_NOTHROW(transfer_parameters(ck, target, TransferScope::Encoder, "fp-st"));

  auto cfg = testing::tiny_seq2seq(3, 9);
  cfg.enc_hidden = 4;
  translator::Seq2SeqModel<float> wide(cfg);
  wide.init(rng);
  const auto wide_before = tensor_hashes(wide.params);
  try {
    transfer_parameters(ck, wide, TransferScope::Encoder, "fp-asr");
    FAIL("expected shape mismatch");
  } catch (const CheckpointMismatchError& e) {
    CHECK(std::string(e.what()).find("'enc.") != std::string::npos);
  }
  CHECK(tensor_hashes(wide.params) == wide_before);
}

TEST_CASE("transfer: shared English vocabulary copies the projection", "[transfer]") {
  Rng rng(8);
  // Transcripts and translations over the same letters give one vocabulary.
  auto asr_vocab = text::build_char_vocab({"a b c", "c a b b"});
  auto st_vocab = text::build_char_vocab({"a b c", "c a b b"});
  REQUIRE(asr_vocab.fingerprint() == st_vocab.fingerprint());
  auto asr = toy_model(asr_vocab.size(), rng);
  randomize(asr.params, rng);
  auto st = toy_model(st_vocab.size(), rng);
  transfer_parameters(make_checkpoint(asr, asr_vocab.fingerprint(), 0, 0), st, TransferScope::EncoderDecoder,
                      st_vocab.fingerprint());
  CHECK(bitwise_equal(st.params.at("proj.w").value, asr.params.at("proj.w").value));
  CHECK(st.params == asr.params);
}

TEST_CASE("build_hybrid: needs a masked-LM checkpoint", "[transfer]") {
  Rng rng(9);
  ssl::MlmConfig mc;
  mc.codes = 5;
  mc.width = 4;
  mc.blocks = 1;
  mc.heads = 2;
  mc.ffn = 6;
  mc.max_len = 16;
  ssl::MlmModel<float> mlm(mc);
  randomize(mlm.params, rng);
  const auto ck = make_checkpoint(mlm, 100, 0);
  auto h = build_hybrid<float>(ck, testing::tiny_seq2seq(3, 9), rng);
  for (const auto& [name, p] : mlm.params)
    REQUIRE(bitwise_equal(h.params.at(translator::Seq2SeqModel<float>::kMlmPrefix + name.substr(4)).value, p.value));
  CHECK(h.cfg.input_dim == 4);

  auto s2s = toy_model(9, rng);
  CHECK_THROWS_AS(build_hybrid<float>(make_checkpoint(s2s, "fp", 0, 0), testing::tiny_seq2seq(3, 9), rng),
                  CheckpointMismatchError);
  ssl::CpcConfig cc;
  cc.channels = 4;
  CHECK_THROWS_AS(build_hybrid<float>(make_checkpoint(ssl::CpcModel<float>(cc), 0, 0), testing::tiny_seq2seq(), rng),
                  CheckpointMismatchError);
}

TEST_CASE("multilingual: mixture is the concatenation and vocabularies must agree", "[transfer]") {
  Rng rng(10);
  auto vocab = letters();
  std::vector<LabeledAudio<float>> en, x;
  for (int i = 0; i < 4; ++i) en.push_back({"en-" + std::to_string(i), testing::random_tensor({6, 3}, rng).cast<float>(), "a b"});
  for (int i = 0; i < 3; ++i) x.push_back({"x-" + std::to_string(i), testing::random_tensor({5, 3}, rng).cast<float>(), "c d"});
  auto mix = mix_corpora(en, x, vocab);
  REQUIRE(mix.size() == 7);
  for (int i = 0; i < 4; ++i) CHECK(mix[static_cast<std::size_t>(i)].id == "en-" + std::to_string(i));
  for (int i = 0; i < 3; ++i) CHECK(mix[static_cast<std::size_t>(4 + i)].id == "x-" + std::to_string(i));

  // One epoch's batches cover every utterance of both corpora exactly once.
  std::vector<std::size_t> lengths;
  for (const auto& e : mix) lengths.push_back(e.frames());
  Rng brng(3);
  std::vector<int> seen(mix.size(), 0);
  for (const auto& b : translator::make_batches(lengths, 12, brng))
    for (auto i : b) ++seen[i];
  CHECK(seen == std::vector<int>(mix.size(), 1));

  x.push_back({"x-bad", testing::random_tensor({5, 3}, rng).cast<float>(), "z"});
  try {
    mix_corpora(en, x, vocab);
    FAIL("expected vocabulary error");
  } catch (const translator::VocabularyMismatchError& e) {
    CHECK(std::string(e.what()).find("x-bad") != std::string::npos);
  }
}

TEST_CASE("multilingual: empty X equals monolingual training", "[transfer]") {
  Rng rng(11);
  auto vocab = letters();
  std::vector<LabeledAudio<float>> en;
  for (int i = 0; i < 6; ++i)
    en.push_back({"en-" + std::to_string(i), testing::random_tensor({static_cast<std::size_t>(4 + i), 3}, rng).cast<float>(), "a b c"});
  translator::TrainConfig tc;
  tc.epochs = 2;
  tc.frame_budget = 16;
  tc.seed = 4;
  tc.augment = false;

  Rng init_a(5), init_b(5);
  auto multi = toy_model(vocab.size(), init_a);
  std::vector<long> orders;
  auto last = train_multilingual_asr<float>(en, {}, vocab, multi, tc,
                                            [&](const Checkpoint& c, std::size_t) { orders.push_back(c.meta.order); });
  CHECK(orders == std::vector<long>{1, 2});
  CHECK(last.meta.vocab_fingerprint == vocab.fingerprint());

  auto mono = toy_model(vocab.size(), init_b);
  std::vector<translator::Example<float>> ex;
  for (const auto& u : en) ex.push_back(translator::make_example(u.id, u.features, vocab, u.text));
  OptimizerState<float> opt;
  translator::train(mono, ex, tc, opt);
  CHECK(mono.params == multi.params);

  auto wrong = toy_model(vocab.size() + 1, init_b);
  CHECK_THROWS_AS(train_multilingual_asr<float>(en, {}, vocab, wrong, tc), translator::VocabularyMismatchError);
}
