#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>

#include "ckpt_io.hpp"
#include "kvconfig.hpp"
#include "sha256.hpp"

using namespace plab;

namespace {

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.num_layers = 2;
    cfg.hidden_dim = 8;
    cfg.num_heads = 2;
    cfg.vocab_size = 12;
    cfg.max_seq_len = 10;
    cfg.vision_feature_dim = 4;
    cfg.ffn_dim = 16;
    return cfg;
}

std::string temp_path(const std::string& name) {
    return std::string("/tmp/plab_test_") + name;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    REQUIRE(out.good());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("sha256 matches published vectors") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("The quick brown fox jumps over the lazy dog") ==
          "d7a8fbb307d7809469ca9abcb0082e4f8d5651e46d3cdb762d02d0bf37c9e592");
}

TEST_CASE("sha256 streaming equals one-shot") {
    std::string data;
    Rng r(5);
    for (int i = 0; i < 1000; ++i) data.push_back(static_cast<char>(r.next_u64() & 0xff));
    Sha256 h;
    size_t pos = 0;
    // deliberately awkward chunk sizes to cross block boundaries
    for (size_t chunk : {1ul, 63ul, 64ul, 65ul, 500ul, 307ul}) {
        h.update(data.data() + pos, std::min(chunk, data.size() - pos));
        pos += std::min(chunk, data.size() - pos);
    }
    h.update(data.data() + pos, data.size() - pos);
    auto digest = h.finish();
    std::string hex;
    for (uint8_t b : digest) {
        char buf[3];
        std::snprintf(buf, sizeof(buf), "%02x", b);
        hex += buf;
    }
    CHECK(hex == sha256_hex(data));
}

TEST_CASE("checkpoint round trip is bitwise exact") {
    ModelConfig cfg = small_config();
    Checkpoint ckpt = Checkpoint::init_random(cfg, CkptKind::mllm, 77);
    const std::string path = temp_path("roundtrip.ckpt");
    save_checkpoint(path, ckpt);
    Checkpoint loaded = load_checkpoint(path);
    CHECK(loaded.kind == ckpt.kind);
    CHECK(loaded.config == ckpt.config);
    REQUIRE(loaded.tensors.size() == ckpt.tensors.size());
    for (const auto& [name, t] : ckpt.tensors) {
        REQUIRE(loaded.has(name));
        CHECK(loaded.get(name).shape == t.shape);
        CHECK(loaded.get(name).data == t.data);
    }
    std::remove(path.c_str());
}

TEST_CASE("checkpoint writes are byte-stable") {
    ModelConfig cfg = small_config();
    Checkpoint ckpt = Checkpoint::init_random(cfg, CkptKind::base_lm, 3);
    const std::string p1 = temp_path("stable1.ckpt");
    const std::string p2 = temp_path("stable2.ckpt");
    save_checkpoint(p1, ckpt);
    save_checkpoint(p2, ckpt);
    CHECK(checkpoint_file_digest(p1) == checkpoint_file_digest(p2));
    CHECK(read_file(p1) == read_file(p2));
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("checkpoint loader rejects malformed files") {
    ModelConfig cfg = small_config();
    Checkpoint ckpt = Checkpoint::init_random(cfg, CkptKind::mllm, 9);
    const std::string path = temp_path("malformed.ckpt");
    save_checkpoint(path, ckpt);
    std::string bytes = read_file(path);

    SUBCASE("bad magic") {
        std::string bad = bytes;
        bad[0] = 'X';
        write_file(path, bad);
        CHECK_THROWS_AS(load_checkpoint(path), Error);
    }
    SUBCASE("bad version") {
        std::string bad = bytes;
        bad[8] = 99;
        write_file(path, bad);
        CHECK_THROWS_AS(load_checkpoint(path), Error);
    }
    SUBCASE("truncated") {
        write_file(path, bytes.substr(0, bytes.size() / 2));
        CHECK_THROWS_AS(load_checkpoint(path), Error);
    }
    SUBCASE("non-finite payload") {
        std::string bad = bytes;
        // NaN over the last four payload bytes
        bad[bad.size() - 4] = '\x00';
        bad[bad.size() - 3] = '\x00';
        bad[bad.size() - 2] = '\xc0';
        bad[bad.size() - 1] = '\x7f';
        write_file(path, bad);
        CHECK_THROWS_AS(load_checkpoint(path), Error);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_checkpoint(temp_path("does_not_exist.ckpt")), Error);
    }
    std::remove(path.c_str());
}

TEST_CASE("diff reports per-tensor deltas and asymmetries") {
    ModelConfig cfg = small_config();
    Checkpoint a = Checkpoint::init_random(cfg, CkptKind::mllm, 12);
    Checkpoint b = a;
    CHECK(diff_checkpoints(a, b).identical());

    b.tensors["unembed"].at(1, 2) += 0.25f;
    CkptDiff d = diff_checkpoints(a, b);
    CHECK(!d.identical());
    bool found = false;
    for (const auto& delta : d.deltas) {
        if (delta.name == "unembed") {
            found = true;
            CHECK(delta.n_differing == 1);
            CHECK(delta.max_abs_diff == doctest::Approx(0.25f));
        } else {
            CHECK(delta.n_differing == 0);
        }
    }
    CHECK(found);

    Checkpoint c = a;
    c.tensors.erase("projector");
    CkptDiff d2 = diff_checkpoints(a, c);
    REQUIRE(d2.only_first.size() == 1);
    CHECK(d2.only_first[0] == "projector");
    CHECK(d2.only_second.empty());
    CHECK(!d2.identical());

    Checkpoint e = a;
    e.kind = CkptKind::merged;
    CHECK(!diff_checkpoints(a, e).kinds_match);
}

TEST_CASE("kvconfig parses comments, whitespace, and types") {
    KvConfig cfg = KvConfig::parse_string(
        "# run settings\n"
        "steps = 300\n"
        "lr=3e-4   # inline comment\n"
        "  name =  desk run \n"
        "flag = true\n"
        "\n");
    CHECK(cfg.get_int("steps") == 300);
    CHECK(cfg.get_double("lr") == doctest::Approx(3e-4));
    CHECK(cfg.get_str("name") == "desk run");
    CHECK(cfg.get_bool("flag", false));
    CHECK(cfg.get_int("missing", 7) == 7);
    CHECK(cfg.get_double("missing", 1.5) == 1.5);
    CHECK(cfg.get_str("missing", "x") == "x");
    CHECK_THROWS_AS(cfg.get_str("missing"), Error);
    CHECK_THROWS_AS(cfg.get_int("name"), Error);
}

TEST_CASE("kvconfig rejects malformed input") {
    CHECK_THROWS_AS(KvConfig::parse_string("a = 1\na = 2\n"), Error);
    CHECK_THROWS_AS(KvConfig::parse_string("no equals sign\n"), Error);
    CHECK_THROWS_AS(KvConfig::parse_string("= value\n"), Error);
    CHECK_THROWS_AS(KvConfig::parse_string("b = maybe\n").get_bool("b", false), Error);
}

TEST_CASE("kvconfig to_string round trips") {
    KvConfig cfg = KvConfig::parse_string("b = 2\na = 1\n");
    std::string s = cfg.to_string();
    CHECK(s == "a = 1\nb = 2\n");
    KvConfig back = KvConfig::parse_string(s);
    CHECK(back.values == cfg.values);
}
