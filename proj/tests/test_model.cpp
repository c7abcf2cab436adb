#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <random>

#include "msnet/checkpoint.hpp"
#include "msnet/loss.hpp"
#include "msnet/model.hpp"
#include "testutil.hpp"

using msnet::MsNetArch;
using msnet::MsNetModel;
using msnet::SeqTensor;

namespace {

MsNetArch tiny_arch() {
    MsNetArch a;
    a.input_channels = 8;
    a.block_channels = 4;
    return a;
}

SeqTensor random_input(long l, int channels, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return testutil::random_tensor(l, channels, rng);
}

bool is_kind(const msnet::Error& e, msnet::ErrorKind k) { return e.kind() == k; }

}  // namespace

TEST_CASE("param_count closed form") {
    SECTION("default arch") {
        CHECK(msnet::param_count(MsNetArch{}) == 199363);
    }
    SECTION("no blocks") {
        MsNetArch a;
        a.block_count = 0;
        a.dilations.clear();
        CHECK(msnet::param_count(a) == 133315);  // 131136 + 2080 + 99
    }
    SECTION("matches instantiated parameter vector length") {
        std::mt19937_64 rng(3);
        for (int i = 0; i < 12; ++i) {
            MsNetArch a;
            a.input_channels = 1 + static_cast<int>(rng() % 64);
            a.initial_conv_kernel = 1 + 2 * static_cast<int>(rng() % 3);
            a.block_count = static_cast<int>(rng() % 5);
            a.block_channels = 1 + static_cast<int>(rng() % 16);
            a.block_kernel = 1 + 2 * static_cast<int>(rng() % 3);
            a.dense_hidden = 1 + static_cast<int>(rng() % 40);
            a.dilations.clear();
            for (int b = 0; b < a.block_count; ++b) {
                a.dilations.push_back(1 << b);
            }
            const MsNetModel m = msnet::init_model(a, rng());
            REQUIRE(static_cast<std::int64_t>(m.params.size()) == msnet::param_count(a));
        }
    }
}

TEST_CASE("receptive field") {
    CHECK(msnet::receptive_field(MsNetArch{}) == 31);  // 1 + 2*(1+2+4+8)

    MsNetArch none;
    none.block_count = 0;
    none.dilations.clear();
    CHECK(msnet::receptive_field(none) == 1);

    MsNetArch flat;
    flat.dilations = {1, 1, 1, 1};
    CHECK(msnet::receptive_field(flat) == 9);
}

TEST_CASE("init_model determinism and scheme") {
    const MsNetArch arch;
    const MsNetModel a = msnet::init_model(arch, 1234);
    const MsNetModel b = msnet::init_model(arch, 1234);
    REQUIRE(a.params == b.params);

    const MsNetModel c = msnet::init_model(arch, 4321);
    std::size_t differing = 0;
    for (std::size_t i = 0; i < a.params.size(); ++i) {
        if (a.params[i] != c.params[i]) {
            ++differing;
        }
    }
    CHECK(static_cast<double>(differing) >= 0.99 * static_cast<double>(a.params.size()));

    const auto lay = msnet::ParamLayout::of(arch);
    auto check_zero = [&](const msnet::ParamLayout::Slice& s) {
        for (std::size_t i = 0; i < s.size; ++i) {
            REQUIRE(a.params[s.offset + i] == 0.0);
        }
    };
    check_zero(lay.conv0_b);
    for (const auto& bl : lay.blocks) {
        check_zero(bl.dilated_b);
        check_zero(bl.pointwise_b);
    }
    check_zero(lay.fc1_b);
    check_zero(lay.fc2_b);
}

TEST_CASE("forward produces a valid 3-class distribution for every length") {
    const MsNetArch arch = tiny_arch();
    const MsNetModel m = msnet::init_model(arch, 99);
    for (long l : {1L, 2L, 30L, 31L, 100L, 200L, 1000L}) {
        const SeqTensor in = random_input(l, arch.input_channels, 1000 + l);
        const auto probs = msnet::forward_probs(m, in);
        double sum = 0.0;
        for (double p : probs) {
            CHECK(p > 0.0);
            CHECK(p < 1.0);
            sum += p;
        }
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("forward rejects bad inputs") {
    const MsNetModel m = msnet::init_model(tiny_arch(), 1);
    REQUIRE_THROWS_MATCHES(msnet::forward_probs(m, SeqTensor(5, 7)), msnet::Error,
                           Catch::Matchers::Predicate<msnet::Error>([](const msnet::Error& e) {
                               return is_kind(e, msnet::ErrorKind::ShapeMismatch);
                           }));
    REQUIRE_THROWS_MATCHES(msnet::forward_probs(m, SeqTensor(0, 8)), msnet::Error,
                           Catch::Matchers::Predicate<msnet::Error>([](const msnet::Error& e) {
                               return is_kind(e, msnet::ErrorKind::EmptyInput);
                           }));
}

TEST_CASE("constant sequences give length-invariant probabilities") {
    // Both lengths exceed the receptive field (31), so each channel's max is
    // attained on rows whose neighborhoods look identical in the two inputs.
    const MsNetArch arch = tiny_arch();
    const MsNetModel m = msnet::init_model(arch, 5);
    std::mt19937_64 rng(17);
    const auto row = testutil::random_vector(static_cast<std::size_t>(arch.input_channels), rng);

    auto replicated = [&](long l) {
        SeqTensor t(l, arch.input_channels);
        for (long r = 0; r < l; ++r) {
            std::copy(row.begin(), row.end(), t.row(r));
        }
        return t;
    };
    const auto p40 = msnet::forward_probs(m, replicated(40));
    const auto p200 = msnet::forward_probs(m, replicated(200));
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(std::abs(p40[i] - p200[i]) < 1e-12);
    }
}

TEST_CASE("zeroed blocks collapse to the identity map") {
    const MsNetArch arch = tiny_arch();
    MsNetModel m = msnet::init_model(arch, 8);
    const auto lay = msnet::ParamLayout::of(arch);
    for (const auto& bl : lay.blocks) {
        for (const auto& s : {bl.dilated_w, bl.dilated_b, bl.pointwise_w, bl.pointwise_b}) {
            std::fill_n(m.params.begin() + static_cast<long>(s.offset), s.size, 0.0);
        }
    }
    const SeqTensor in = random_input(23, arch.input_channels, 31);
    const auto fw = msnet::forward(m, in);
    for (const auto& bc : fw.cache.blocks) {
        REQUIRE(bc.block_out.data == fw.cache.conv0_out.data);
    }
}

TEST_CASE("full-model gradient matches finite differences on a shrunken arch", "[gradcheck]") {
    const MsNetArch arch = tiny_arch();
    MsNetModel m = msnet::init_model(arch, 71);
    const SeqTensor in = random_input(40, arch.input_channels, 72);
    const auto label = msnet::DiagnosisLabel::CAP;
    const msnet::ClassWeights weights{{0.8, 1.3, 0.9}};

    const auto loss_fn = [&]() {
        const auto probs = msnet::forward_probs(m, in);
        return msnet::weighted_cce(probs, label, weights);
    };

    const auto fw = msnet::forward(m, in);
    const auto grad = msnet::backward(m, fw.cache, msnet::cce_grad_logits(fw.probs, label, weights));
    REQUIRE(grad.size() == m.params.size());
    REQUIRE(static_cast<std::int64_t>(grad.size()) == msnet::param_count(arch));

    const double worst = testutil::max_grad_rel_err(loss_fn, m.params, grad);
    INFO("worst rel err over " << grad.size() << " params: " << worst);
    CHECK(worst < 1e-5);
}

TEST_CASE("backward contract") {
    const MsNetArch arch = tiny_arch();
    const MsNetModel m = msnet::init_model(arch, 2);
    const SeqTensor in = random_input(12, arch.input_channels, 3);
    const auto fw = msnet::forward(m, in);

    SECTION("zero upstream gradient gives zero parameter gradient") {
        const auto grad = msnet::backward(m, fw.cache, std::array<double, 3>{0.0, 0.0, 0.0});
        for (double g : grad) {
            REQUIRE(g == 0.0);
        }
    }
    SECTION("cache from a different arch is rejected") {
        MsNetArch other = arch;
        other.dilations = {1, 1, 1, 1};
        const MsNetModel m2 = msnet::init_model(other, 2);
        REQUIRE_THROWS_MATCHES(
            msnet::backward(m2, fw.cache, std::array<double, 3>{1.0, 0.0, -1.0}), msnet::Error,
            Catch::Matchers::Predicate<msnet::Error>([](const msnet::Error& e) {
                return is_kind(e, msnet::ErrorKind::MismatchedCache);
            }));
    }
}

TEST_CASE("checkpoint round trip") {
    testutil::TempDir dir("msnet_ckpt");
    const auto path = dir.path() / "model.msnt";
    const MsNetArch arch = tiny_arch();
    const MsNetModel m = msnet::init_model(arch, 77);
    msnet::save_checkpoint(m, path);

    const MsNetModel loaded = msnet::load_checkpoint(path);
    REQUIRE(loaded.arch == m.arch);
    REQUIRE(loaded.params == m.params);

    SECTION("forward on a fixed input is bit-identical") {
        const SeqTensor in = random_input(19, arch.input_channels, 5);
        const auto p1 = msnet::forward_probs(m, in);
        const auto p2 = msnet::forward_probs(loaded, in);
        REQUIRE(std::memcmp(p1.data(), p2.data(), sizeof(p1)) == 0);
    }
    SECTION("save-load-save is byte stable") {
        const std::string first = msnet::encode_checkpoint(m);
        const std::string second = msnet::encode_checkpoint(loaded);
        REQUIRE(first == second);
    }
}

TEST_CASE("checkpoint rejects malformed files") {
    testutil::TempDir dir("msnet_ckpt_bad");
    const auto path = dir.path() / "model.msnt";
    const MsNetModel m = msnet::init_model(tiny_arch(), 4);
    std::string bytes = msnet::encode_checkpoint(m);

    SECTION("bad magic") {
        std::string corrupted = bytes;
        corrupted[0] = 'X';
        msnet::io::write_file(path, corrupted);
        REQUIRE_THROWS_MATCHES(msnet::load_checkpoint(path), msnet::Error,
                               Catch::Matchers::Predicate<msnet::Error>([](const msnet::Error& e) {
                                   return is_kind(e, msnet::ErrorKind::BadMagic);
                               }));
    }
    SECTION("unsupported version") {
        std::string corrupted = bytes;
        corrupted[4] = 9;
        msnet::io::write_file(path, corrupted);
        REQUIRE_THROWS_MATCHES(msnet::load_checkpoint(path), msnet::Error,
                               Catch::Matchers::Predicate<msnet::Error>([](const msnet::Error& e) {
                                   return is_kind(e, msnet::ErrorKind::BadVersion);
                               }));
    }
    SECTION("truncated params") {
        msnet::io::write_file(path, bytes.substr(0, bytes.size() - 11));
        REQUIRE_THROWS_MATCHES(msnet::load_checkpoint(path), msnet::Error,
                               Catch::Matchers::Predicate<msnet::Error>([](const msnet::Error& e) {
                                   return is_kind(e, msnet::ErrorKind::Truncated);
                               }));
    }
    SECTION("declared param count disagreeing with the arch") {
        // Patch the u64 param count field (offset: 4 magic + 4 version +
        // 7*4 scalars + 4 count + 4*4 dilations).
        std::string corrupted = bytes;
        const std::size_t off = 4 + 4 + 28 + 4 + 16;
        corrupted[off] = static_cast<char>(corrupted[off] + 1);
        msnet::io::write_file(path, corrupted);
        REQUIRE_THROWS_MATCHES(msnet::load_checkpoint(path), msnet::Error,
                               Catch::Matchers::Predicate<msnet::Error>([](const msnet::Error& e) {
                                   return is_kind(e, msnet::ErrorKind::ParamMismatch);
                               }));
    }
}
