#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "patchformer/checkpoint.hpp"
#include "patchformer/errors.hpp"
#include "patchformer/results_table.hpp"
#include "test_util.hpp"

using namespace patchformer;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "pf_ckpt_tests";
  fs::create_directories(dir);
  return dir / name;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.seq_len = 16;
  c.pred_len = 8;
  c.channels = 2;
  c.patch_len = 4;
  c.stride = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 16;
  c.seed = 3;
  return c;
}

Checkpoint sample_checkpoint() {
  PatchformerModel m(tiny_config());
  // Values whose decimal forms would not round-trip through short text.
  Tensor w = m.parameters().get("head.w_y");
  w.mutable_values()[0] = 0.1 + 0.2;
  w.mutable_values()[1] = -4.9e-324;
  Scaler s;
  s.mean = {1.0 / 3.0, -2.5};
  s.std = {std::nextafter(1.0, 2.0), 1e-8};
  return make_checkpoint(m, s, {"a", "b"}, {{"dataset", "unit"}, {"epoch", "3"}});
}

ResultRow row(std::string dataset, std::string model, std::size_t o, std::string mode, double mse) {
  return {std::move(dataset), std::move(model), 96, o, std::move(mode), mse, mse / 2, 0};
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  const Checkpoint ckpt = sample_checkpoint();
  const auto p = temp_path("rt.ckpt");
  save_checkpoint(p.string(), ckpt);
  const Checkpoint back = load_checkpoint(p.string());
  EXPECT_EQ(back, ckpt);

  const PatchformerModel original = ckpt.build_model();
  const PatchformerModel rebuilt = back.build_model();
  Rng rng(1);
  const Tensor x = test::random_tensor(rng, {16, 2});
  EXPECT_EQ(test::to_vector(original.forward(x)), test::to_vector(rebuilt.forward(x)));
}

TEST(Checkpoint, LoadWeightsChecksNamesAndShapes) {
  Checkpoint ckpt = sample_checkpoint();
  ModelConfig other = tiny_config();
  other.d_model = 4;
  PatchformerModel wrong(other);
  EXPECT_THROW(load_weights(wrong, ckpt), ConfigError);
  other = tiny_config();
  other.e_layers = 1;
  PatchformerModel fewer(other);
  EXPECT_THROW(load_weights(fewer, ckpt), ConfigError);
  ckpt.param_names[0] = "renamed";
  PatchformerModel same(tiny_config());
  EXPECT_THROW(load_weights(same, ckpt), ConfigError);
}

TEST(Checkpoint, MalformedFilesAreConfigErrors) {
  const auto good = temp_path("good.ckpt");
  save_checkpoint(good.string(), sample_checkpoint());
  std::string bytes;
  {
    std::ifstream in(good, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [](const fs::path& p, const std::string& b) { std::ofstream(p, std::ios::binary) << b; };
  const auto bad = temp_path("bad.ckpt");

  write(bad, "not a checkpoint at all");
  EXPECT_THROW(load_checkpoint(bad.string()), ConfigError);
  write(bad, bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(load_checkpoint(bad.string()), ConfigError);
  write(bad, bytes + "x");
  EXPECT_THROW(load_checkpoint(bad.string()), ConfigError);
  std::string wrong_version = bytes;
  wrong_version[8] = 9;
  write(bad, wrong_version);
  EXPECT_THROW(load_checkpoint(bad.string()), ConfigError);
  write(bad, "");
  EXPECT_THROW(load_checkpoint(bad.string()), ConfigError);
  EXPECT_THROW(load_checkpoint(temp_path("absent.ckpt").string()), ConfigError);
}

TEST(ResultsTable, UpsertReplacesAndSorts) {
  ResultsTable t;
  t.upsert(row("syn", "RepeatLast", 192, "multivariate", 2.0));
  t.upsert(row("syn", "Patchformer", 96, "multivariate", 1.0));
  t.upsert(row("syn", "Patchformer", 192, "multivariate", 1.5));
  t.upsert(row("syn", "Patchformer", 96, "multivariate", 0.5));
  ASSERT_EQ(t.size(), 3u);
  EXPECT_EQ(t.find("syn", "Patchformer", 96, 96, "multivariate")->mse, 0.5);
  EXPECT_EQ(t.find("syn", "Patchformer", 96, 720, "multivariate"), nullptr);
  EXPECT_EQ(t.rows()[0].pred_len, 96u);
  EXPECT_EQ(t.rows()[1].model, "Patchformer");
  EXPECT_EQ(t.rows()[2].model, "RepeatLast");
  EXPECT_THROW(t.upsert(row("a,b", "m", 96, "x", 1.0)), ConfigError);
}

TEST(ResultsTable, InsertionOrderDoesNotMatter) {
  std::vector<ResultRow> rows = {row("d", "P", 96, "average", 1), row("d", "R", 96, "average", 2),
                                 row("d", "P", 336, "electricity", 3), row("e", "P", 96, "average", 4)};
  ResultsTable a, b;
  for (const auto& r : rows) a.upsert(r);
  for (auto it = rows.rbegin(); it != rows.rend(); ++it) b.upsert(*it);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.render(), b.render());
  EXPECT_EQ(a.to_csv(), b.to_csv());
}

TEST(ResultsTable, CsvRoundTripAndFiles) {
  ResultsTable t;
  t.upsert(row("syn", "Patchformer", 96, "all_at_once", 0.1 + 0.2));
  t.upsert(row("syn", "RepeatLast", 720, "gas", 1e-17));
  const std::string csv = t.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "dataset,model,seq_len,pred_len,mode,mse,mae,seed");
  EXPECT_EQ(ResultsTable::from_csv(csv), t);
  const auto p = temp_path("results.csv");
  t.write_csv(p.string());
  EXPECT_EQ(ResultsTable::read_csv(p.string()), t);
  EXPECT_EQ(ResultsTable::read_csv(temp_path("missing.csv").string()).size(), 0u);
  EXPECT_THROW(ResultsTable::from_csv("dataset,model,seq_len,pred_len,mode,mse,mae,seed\nx,y,z,1,m,1,1,0\n"),
               DataError);
}

TEST(ResultsTable, RenderHasOneColumnPairPerModel) {
  ResultsTable t;
  t.upsert(row("syn", "Patchformer", 96, "average", 0.25));
  t.upsert(row("syn", "RepeatLast", 96, "average", 0.75));
  t.upsert(row("syn", "Patchformer", 192, "average", 0.5));
  const std::string text = t.render();
  EXPECT_NE(text.find("Patchformer"), std::string::npos);
  EXPECT_NE(text.find("RepeatLast"), std::string::npos);
  EXPECT_NE(text.find("0.2500"), std::string::npos);
  EXPECT_NE(text.find("0.3750"), std::string::npos);
  // Header plus one line per (dataset, mode, seq_len, pred_len).
  std::size_t lines = 0;
  for (char c : text) lines += c == '\n';
  EXPECT_GE(lines, 3u);
}
