#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "inat/checkpoint.hpp"
#include "inat/data_io.hpp"
#include "inat/runconfig.hpp"
#include "inat/textgen.hpp"

using namespace inat;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir(const char* tag) : path(fs::temp_directory_path() / (std::string("inat_test_") + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ModelConfig tiny_config() {
  ModelConfig c;
  c.variant = Variant::Inattention;
  c.d = 8;
  c.L = 2;
  c.H = 2;
  c.f = 2;
  c.width = ElemWidth::F32;
  c.validate();
  return c;
}

}  // namespace

TEST_CASE("byte tokenizer round trips") {
  const std::string text = "Grey rivers, 100% \t\n\xc3\xa9\xff";
  auto ids = tokenize(text);
  CHECK(ids.size() == text.size());
  for (int32_t id : ids) {
    CHECK(id >= 0);
    CHECK(id < 256);  // never the separator
  }
  CHECK(detokenize(ids) == text);

  // ten binary kilobytes, all byte values
  std::string blob;
  for (int i = 0; i < 10240; ++i) blob.push_back(static_cast<char>(i * 37 % 256));
  CHECK(detokenize(tokenize(blob)) == blob);

  // separators vanish on the way out
  CHECK(detokenize({72, kSepId, 105}) == "Hi");
  CHECK_THROWS_AS(detokenize({257}), Error);
  CHECK_THROWS_AS(detokenize({-1}), Error);
}

TEST_CASE("batchify splits, drops the tail, shuffles by seed") {
  std::vector<int32_t> ids(103);
  for (size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int32_t>(i);
  auto chunks = batchify(ids, 10, 4);
  REQUIRE(chunks.size() == 10);  // 3 trailing ids dropped
  for (const auto& c : chunks) CHECK(c.size() == 10);

  // chunks are contiguous runs: first element identifies the run
  std::vector<int32_t> starts;
  for (const auto& c : chunks) {
    for (size_t j = 1; j < c.size(); ++j) CHECK(c[j] == c[0] + static_cast<int32_t>(j));
    starts.push_back(c[0]);
  }
  std::sort(starts.begin(), starts.end());
  for (size_t i = 0; i < starts.size(); ++i) CHECK(starts[i] == static_cast<int32_t>(10 * i));

  CHECK(batchify(ids, 10, 4) == chunks);       // same seed, same order
  CHECK(batchify(ids, 10, 5) != chunks);       // different seed reshuffles
  CHECK(batchify(ids, 200, 1).empty());        // too short for one chunk
  CHECK_THROWS_AS(batchify(ids, 1, 0), ConfigError);
}

TEST_CASE("corpus loading joins directory files with the separator") {
  TempDir dir("corpus");
  write_file(dir.path / "b.txt", "bb");
  write_file(dir.path / "a.txt", "a");
  write_file(dir.path / "c.txt", "c");
  auto ids = load_corpus(dir.path);
  CHECK(ids == std::vector<int32_t>{'a', kSepId, 'b', 'b', kSepId, 'c'});

  auto single = load_corpus(dir.path / "b.txt");
  CHECK(single == std::vector<int32_t>{'b', 'b'});

  CHECK_THROWS_AS(load_corpus(dir.path / "missing.txt"), IoError);
  TempDir empty("corpus_empty");
  CHECK_THROWS_AS(load_corpus(empty.path), IoError);
}

TEST_CASE("generated text is deterministic and textural") {
  auto a = generate_text(12, 5000);
  auto b = generate_text(12, 5000);
  CHECK(a == b);
  CHECK(a.size() == 5000);
  CHECK(generate_text(13, 5000) != a);
  CHECK(a.find(". ") != std::string::npos);
  CHECK(a.find("\n\n") != std::string::npos);
}

TEST_CASE("checkpoints round trip bit-exactly") {
  TempDir dir("ckpt");
  auto cfg = tiny_config();
  auto params = init_params<float>(cfg, 123);
  CheckpointMeta meta{77, 1500, 32, 2e-4};
  const auto path = dir.path / "model.inat";
  save_checkpoint(params, meta, path);

  // identical bytes when saved again
  save_checkpoint(params, meta, dir.path / "model2.inat");
  CHECK(read_file(path) == read_file(dir.path / "model2.inat"));

  auto loaded = load_checkpoint<float>(path);
  CHECK(loaded.meta.seed == 77);
  CHECK(loaded.meta.step == 1500);
  CHECK(loaded.meta.context_length == 32);
  CHECK(loaded.meta.lr_init == 2e-4);
  CHECK(loaded.params.config.variant == Variant::Inattention);
  CHECK(loaded.params.config.d == cfg.d);

  double worst = 0;
  size_t idx = 0;
  std::vector<std::vector<float>> original;
  params.for_each([&](const std::string&, Tensor<float>& t) {
    original.emplace_back(t.data().begin(), t.data().end());
  });
  loaded.params.for_each([&](const std::string&, Tensor<float>& t) {
    const auto& want = original[idx++];
    REQUIRE(want.size() == t.data().size());
    for (size_t i = 0; i < want.size(); ++i)
      worst = std::max(worst, static_cast<double>(std::abs(want[i] - t.data()[i])));
  });
  CHECK(worst == 0.0);

  // a save of the loaded model reproduces the file byte for byte
  save_checkpoint(loaded.params, loaded.meta, dir.path / "model3.inat");
  CHECK(read_file(path) == read_file(dir.path / "model3.inat"));

  // wrong element type is refused
  CHECK_THROWS_AS(load_checkpoint<double>(path), IoError);
}

TEST_CASE("checkpoint envelope is validated field by field") {
  TempDir dir("ckpt_bad");
  auto params = init_params<float>(tiny_config(), 5);
  const auto path = dir.path / "good.inat";
  save_checkpoint(params, CheckpointMeta{}, path);
  const std::string good = read_file(path);

  const auto expect_rejected = [&](std::string mutated, const char* label) {
    const auto bad_path = dir.path / (std::string(label) + ".inat");
    write_file(bad_path, mutated);
    CHECK_THROWS_AS(read_checkpoint_file(bad_path), IoError);
  };

  expect_rejected(good.substr(0, 10), "truncated");
  {
    std::string s = good;
    s[0] = 'X';
    expect_rejected(s, "magic");
  }
  {
    std::string s = good;
    s[4] = 9;  // unsupported version
    expect_rejected(s, "version");
  }
  {
    std::string s = good;
    const uint64_t huge = s.size() * 2;
    std::memcpy(s.data() + 8, &huge, sizeof(huge));
    expect_rejected(s, "header_len");
  }
  {
    std::string s = good;
    s[16] = '?';  // break the JSON
    expect_rejected(s, "json");
  }
  expect_rejected(good + "junk", "payload_extra");
  expect_rejected(good.substr(0, good.size() - 4), "payload_short");
}

TEST_CASE("the manifest alone describes the payload layout") {
  // parse the raw container with no checkpoint code: offsets + widths from the
  // JSON header must locate each tensor
  TempDir dir("ckpt_manifest");
  auto params = init_params<float>(tiny_config(), 9);
  const auto path = dir.path / "m.inat";
  save_checkpoint(params, CheckpointMeta{1, 2, 3, 4.0}, path);
  const std::string raw = read_file(path);

  REQUIRE(raw.substr(0, 4) == "INAT");
  uint32_t version = 0;
  std::memcpy(&version, raw.data() + 4, 4);
  CHECK(version == 1);
  uint64_t header_len = 0;
  std::memcpy(&header_len, raw.data() + 8, 8);
  const auto header = nlohmann::json::parse(raw.substr(16, header_len));
  const std::string payload = raw.substr(16 + header_len);
  CHECK(header.at("payload_bytes").get<int64_t>() == static_cast<int64_t>(payload.size()));
  CHECK(header.at("tokenizer").at("vocab").get<int>() == 257);
  CHECK(header.at("tokenizer").at("separator_id").get<int>() == 256);

  std::map<std::string, std::vector<float>> by_name;
  for (const auto& t : header.at("tensors")) {
    REQUIRE(t.at("width").get<std::string>() == "f32");
    int64_t numel = 1;
    for (const auto& d : t.at("shape")) numel *= d.get<int64_t>();
    std::vector<float> vals(static_cast<size_t>(numel));
    std::memcpy(vals.data(), payload.data() + t.at("offset").get<int64_t>(),
                static_cast<size_t>(numel) * 4);
    by_name[t.at("name").get<std::string>()] = std::move(vals);
  }
  REQUIRE(by_name.count("embedding") == 1);
  REQUIRE(by_name.count("blocks.0.normn.gain") == 1);
  REQUIRE(by_name.count("blocks.1.mlp.w_out") == 1);
  REQUIRE(by_name.count("decoder") == 1);
  const auto emb = params.embedding.data();
  for (size_t i = 0; i < emb.size(); ++i) CHECK(by_name["embedding"][i] == emb[i]);
  for (float v : by_name["blocks.0.normn.gain"]) CHECK(v == 1.0f);

  const auto text = checkpoint_manifest_text(header);
  CHECK(text.find("embedding") != std::string::npos);
  CHECK(text.find("payload_bytes") != std::string::npos);
}

TEST_CASE("run configs parse, reject, and round trip") {
  const std::string text =
      "# toy setup\n"
      "model.variant = inattention\n"
      "model.d = 64  # hidden width\n"
      "model.L = 3\n"
      "train.steps = 250\n"
      "train.lr_init = 0.002\n"
      "paths.corpus = data/train.txt\n";
  auto cfg = parse_run_config(text);
  CHECK(cfg.model.variant == Variant::Inattention);
  CHECK(cfg.model.d == 64);
  CHECK(cfg.model.L == 3);
  CHECK(cfg.model.H == 4);  // untouched keys keep defaults
  CHECK(cfg.model.rope.rotary_dim == 16);  // resolved to the full head
  CHECK(cfg.train.steps == 250);
  CHECK(cfg.train.lr_init == 0.002);
  CHECK(cfg.corpus_path == "data/train.txt");

  // serialize -> parse -> serialize is a fixed point
  const auto s1 = serialize_run_config(cfg);
  const auto s2 = serialize_run_config(parse_run_config(s1));
  CHECK(s1 == s2);

  CHECK_THROWS_AS(parse_run_config("model.d = 64\nmodel.d = 32\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("model.depth = 4\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("model.d\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("model.d = twelve\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("model.variant = sparse\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("train.seed = -4\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("model.d = 63\n"), ConfigError);  // validate() runs at the end
}
