#include <doctest.h>

#include <fstream>

#include "cavm/checkpoint.hpp"
#include "cavm/errors.hpp"
#include "cavm/io.hpp"
#include "support.hpp"

using namespace cavm;
using namespace cavm::checkpoint;

namespace {

nn::ParameterStore<float> make_store(std::uint64_t seed) {
    nn::ParameterStore<float> store;
    Rng rng(seed);
    store.add_uniform("a.w", {3, 4}, 4, rng);
    store.add_uniform("a.b", {4}, 4, rng);
    store.add_uniform("b.w", {2, 2, 3, 3}, 18, rng);
    return store;
}

io::Bytes file_bytes(const std::filesystem::path& p) { return io::read_file(p); }

void put_bytes(const std::filesystem::path& p, const io::Bytes& b) {
    std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

} // namespace

TEST_CASE("checkpoint round trip keeps tensors, moments and metadata") {
    testing::TempDir dir("ckpt");
    auto store = make_store(1);
    Adam<float> adam(store.with_prefix("a."), AdamSettings{0.01, 0.8, 0.95, 1e-7});
    for (int s = 0; s < 3; ++s) {
        std::vector<std::vector<float>> grads;
        for (const auto& p : adam.params()) grads.emplace_back(p.size(), 0.5f + static_cast<float>(s));
        adam.step(grads);
    }
    Checkpoint c;
    c.config = {{"k", 1}};
    c.stage = "tokenizer";
    c.step = 42;
    c.tensors = capture(store);
    c.optimizer.push_back(capture("gen", adam, store));
    write(c, dir.path() / "x.ckpt");

    const Checkpoint r = read(dir.path() / "x.ckpt");
    CHECK(r.config == c.config);
    CHECK(r.stage == "tokenizer");
    CHECK(r.step == 42);
    CHECK(r.tensors == c.tensors);
    REQUIRE(r.optimizer.size() == 1);
    CHECK(r.optimizer[0].step_count == 3);
    CHECK(r.optimizer[0].settings.learning_rate == 0.01);
    CHECK(r.optimizer[0].first_moment == c.optimizer[0].first_moment);
    CHECK(r.optimizer[0].second_moment == c.optimizer[0].second_moment);
    REQUIRE(r.find("b.w") != nullptr);
    CHECK(r.find("b.w")->shape == Shape{2, 2, 3, 3});
    CHECK(r.find("nope") == nullptr);

    auto other = make_store(2);
    CHECK(restore(other, r, {"a.", "b."}) == 3);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(testing::bit_equal(other.entries()[i].second, store.entries()[i].second));

    Adam<float> fresh(other.with_prefix("a."), AdamSettings{});
    restore(fresh, r.optimizer[0], other);
    CHECK(fresh.state().step_count == 3);
    CHECK(fresh.state().settings.beta2 == 0.95);
    CHECK(fresh.state().first_moment == adam.state().first_moment);
    CHECK(fresh.state().second_moment == adam.state().second_moment);

    // Writing the re-read checkpoint reproduces the file byte for byte.
    write(r, dir.path() / "y.ckpt");
    CHECK(file_bytes(dir.path() / "x.ckpt") == file_bytes(dir.path() / "y.ckpt"));
}

TEST_CASE("restore rejects mismatched stores") {
    auto store = make_store(1);
    Checkpoint c;
    c.tensors = capture(store);

    nn::ParameterStore<float> smaller;
    Rng rng(3);
    smaller.add_uniform("a.w", {3, 4}, 4, rng);
    CHECK_THROWS_AS(restore(smaller, c, {}), FormatError);

    nn::ParameterStore<float> reshaped;
    reshaped.add("a.w", {4, 3});
    reshaped.add("a.b", {4});
    reshaped.add("b.w", {2, 2, 3, 3});
    CHECK_THROWS_AS(restore(reshaped, c, {}), ShapeError);

    auto bigger = make_store(1);
    bigger.add("c.w", {2});
    CHECK_THROWS_AS(restore(bigger, c, {"c."}), FormatError);
    CHECK(restore(bigger, c, {"a."}) == 3);
}

TEST_CASE("corrupt checkpoint files are rejected") {
    testing::TempDir dir("ckpt-bad");
    auto store = make_store(4);
    Checkpoint c;
    c.stage = "tokenizer";
    c.tensors = capture(store);
    const auto good = dir.path() / "good.ckpt";
    write(c, good);
    const io::Bytes bytes = file_bytes(good);

    io::Bytes magic = bytes;
    magic[0] = 'X';
    put_bytes(dir.path() / "magic.ckpt", magic);
    CHECK_THROWS_AS(read(dir.path() / "magic.ckpt"), FormatError);

    io::Bytes version = bytes;
    version[8] = 7;
    put_bytes(dir.path() / "version.ckpt", version);
    CHECK_THROWS_WITH_AS(read(dir.path() / "version.ckpt"), doctest::Contains("version"), FormatError);

    io::Bytes cut(bytes.begin(), bytes.end() - 5);
    put_bytes(dir.path() / "cut.ckpt", cut);
    CHECK_THROWS_AS(read(dir.path() / "cut.ckpt"), IoError);

    io::Bytes tail = bytes;
    tail.push_back(0);
    put_bytes(dir.path() / "tail.ckpt", tail);
    CHECK_THROWS_AS(read(dir.path() / "tail.ckpt"), IoError);

    CHECK_THROWS_AS(read(dir.path() / "absent.ckpt"), IoError);
}
