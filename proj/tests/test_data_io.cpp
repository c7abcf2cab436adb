#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <random>

#include "msnet/data.hpp"
#include "msnet/model.hpp"
#include "testutil.hpp"

using msnet::DiagnosisLabel;
using msnet::FeatureVolume;
using msnet::LabeledVolume;
using msnet::SynthConfig;

namespace {

FeatureVolume random_volume(const std::string& id, long l, long d, std::uint64_t seed) {
    FeatureVolume v;
    v.patient_id = id;
    v.features = msnet::SeqTensor32(l, d);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(-2.0f, 2.0f);
    for (auto& x : v.features.data) {
        x = dist(rng);
    }
    return v;
}

}  // namespace

TEST_CASE("volume file round trip is bit exact") {
    testutil::TempDir dir("msnet_vol");
    const FeatureVolume v = random_volume("p1", 100, 2048, 9);
    const auto path = dir.path() / "p1.fvol";
    msnet::write_volume(v, path);
    const FeatureVolume back = msnet::read_volume(path);
    REQUIRE(back.features.rows == 100);
    REQUIRE(back.features.cols == 2048);
    REQUIRE(back.features.data == v.features.data);
    CHECK(back.patient_id == "p1");
}

TEST_CASE("volume round trip across shapes") {
    testutil::TempDir dir("msnet_vol_shapes");
    std::uint64_t seed = 100;
    for (long l : {1L, 7L, 100L, 200L}) {
        for (long d : {4L, 2048L}) {
            const FeatureVolume v = random_volume("x", l, d, seed++);
            const auto path = dir.path() / "x.fvol";
            msnet::write_volume(v, path);
            REQUIRE(msnet::read_volume(path).features.data == v.features.data);
        }
    }
}

TEST_CASE("narrow volumes load but the model rejects them at forward time") {
    testutil::TempDir dir("msnet_vol_narrow");
    const FeatureVolume v = random_volume("n", 10, 64, 4);
    const auto path = dir.path() / "n.fvol";
    msnet::write_volume(v, path);
    const FeatureVolume loaded = msnet::read_volume(path);  // d is encoded, loader accepts
    REQUIRE(loaded.channels() == 64);

    const msnet::MsNetModel model = msnet::init_model(msnet::MsNetArch{}, 1);
    REQUIRE_THROWS_MATCHES(msnet::forward_probs(model, loaded.as_f64()), msnet::Error,
                           Catch::Matchers::Predicate<msnet::Error>([](const msnet::Error& e) {
                               return e.kind() == msnet::ErrorKind::ShapeMismatch;
                           }));
}

TEST_CASE("volume loader rejects malformed files") {
    testutil::TempDir dir("msnet_vol_bad");
    const FeatureVolume v = random_volume("b", 5, 8, 2);
    std::string bytes = msnet::encode_volume(v);
    const auto path = dir.path() / "b.fvol";

    SECTION("truncated payload") {
        msnet::io::write_file(path, bytes.substr(0, bytes.size() - 7));
        REQUIRE_THROWS_MATCHES(msnet::read_volume(path), msnet::Error,
                               Catch::Matchers::Predicate<msnet::Error>([](const msnet::Error& e) {
                                   return e.kind() == msnet::ErrorKind::Truncated;
                               }));
    }
    SECTION("bad magic") {
        bytes[1] = 'X';
        msnet::io::write_file(path, bytes);
        REQUIRE_THROWS_MATCHES(msnet::read_volume(path), msnet::Error,
                               Catch::Matchers::Predicate<msnet::Error>([](const msnet::Error& e) {
                                   return e.kind() == msnet::ErrorKind::BadMagic;
                               }));
    }
    SECTION("trailing garbage") {
        bytes += "zzzz";
        msnet::io::write_file(path, bytes);
        REQUIRE_THROWS_MATCHES(msnet::read_volume(path), msnet::Error,
                               Catch::Matchers::Predicate<msnet::Error>([](const msnet::Error& e) {
                                   return e.kind() == msnet::ErrorKind::Corrupt;
                               }));
    }
    SECTION("non-finite payload rejected by the writer") {
        FeatureVolume bad = v;
        bad.features.data[3] = std::numeric_limits<float>::infinity();
        REQUIRE_THROWS_MATCHES(msnet::encode_volume(bad), msnet::Error,
                               Catch::Matchers::Predicate<msnet::Error>([](const msnet::Error& e) {
                                   return e.kind() == msnet::ErrorKind::NonFinite;
                               }));
    }
    SECTION("non-finite payload rejected by the reader") {
        // Patch the first payload float (offset 16) to +inf, little-endian.
        bytes[16] = 0x00;
        bytes[17] = 0x00;
        bytes[18] = static_cast<char>(0x80);
        bytes[19] = static_cast<char>(0x7f);
        msnet::io::write_file(path, bytes);
        REQUIRE_THROWS_MATCHES(msnet::read_volume(path), msnet::Error,
                               Catch::Matchers::Predicate<msnet::Error>([](const msnet::Error& e) {
                                   return e.kind() == msnet::ErrorKind::NonFinite;
                               }));
    }
}

TEST_CASE("manifest parsing") {
    testutil::TempDir dir("msnet_manifest");
    // Three real volume files for the rows to reference.
    for (const char* name : {"a.fvol", "b.fvol", "c.fvol"}) {
        msnet::write_volume(random_volume(name, 3, 4, 1), dir.path() / name);
    }
    const auto manifest_path = dir.path() / "manifest.csv";

    auto write_manifest_text = [&](const std::string& body) {
        std::ofstream out(manifest_path);
        out << body;
    };

    SECTION("valid three-row manifest") {
        write_manifest_text(
            "patient_id,path,label,split\n"
            "a,a.fvol,COVID,train\n"
            "b,b.fvol,covid,val\n"  // case-insensitive label
            "c,c.fvol,NORMAL,test\n");
        const auto m = msnet::load_manifest(manifest_path);
        REQUIRE(m.entries.size() == 3);
        CHECK(m.entries[0].label == DiagnosisLabel::COVID);
        CHECK(m.entries[1].label == DiagnosisLabel::COVID);
        CHECK(m.entries[1].split == msnet::SplitTag::Val);
        CHECK(m.entries[2].label == DiagnosisLabel::NORMAL);
        CHECK(std::filesystem::exists(m.entries[0].path));
    }
    SECTION("duplicate patient_id names the id") {
        write_manifest_text(
            "patient_id,path,label,split\n"
            "a,a.fvol,COVID,train\n"
            "a,b.fvol,CAP,train\n");
        try {
            msnet::load_manifest(manifest_path);
            FAIL("expected an error");
        } catch (const msnet::Error& e) {
            CHECK(e.kind() == msnet::ErrorKind::DuplicateId);
            CHECK(std::string(e.what()).find("\"a\"") != std::string::npos);
        }
    }
    SECTION("unknown label names the row") {
        write_manifest_text(
            "patient_id,path,label,split\n"
            "a,a.fvol,PNEUMONIA,train\n");
        try {
            msnet::load_manifest(manifest_path);
            FAIL("expected an error");
        } catch (const msnet::Error& e) {
            CHECK(e.kind() == msnet::ErrorKind::UnknownLabel);
            CHECK(std::string(e.what()).find("row 2") != std::string::npos);
        }
    }
    SECTION("missing referenced file") {
        write_manifest_text(
            "patient_id,path,label,split\n"
            "a,missing.fvol,COVID,train\n");
        REQUIRE_THROWS_MATCHES(msnet::load_manifest(manifest_path), msnet::Error,
                               Catch::Matchers::Predicate<msnet::Error>([](const msnet::Error& e) {
                                   return e.kind() == msnet::ErrorKind::MissingFile;
                               }));
    }
    SECTION("manifest writer round trip") {
        write_manifest_text(
            "patient_id,path,label,split\n"
            "a,a.fvol,COVID,train\n"
            "b,b.fvol,CAP,val\n");
        const auto m = msnet::load_manifest(manifest_path);
        const auto copy_path = dir.path() / "copy.csv";
        msnet::write_manifest(m, copy_path);
        const auto m2 = msnet::load_manifest(copy_path);
        REQUIRE(m2.entries.size() == m.entries.size());
        for (std::size_t i = 0; i < m.entries.size(); ++i) {
            CHECK(m2.entries[i].patient_id == m.entries[i].patient_id);
            CHECK(m2.entries[i].label == m.entries[i].label);
            CHECK(m2.entries[i].split == m.entries[i].split);
        }
    }
}

TEST_CASE("synthetic generation is deterministic and label-exact") {
    SynthConfig cfg;
    cfg.patients_per_class = {5, 4, 3};
    cfg.min_slices = 10;
    cfg.max_slices = 20;
    cfg.channels = 32;
    cfg.seed = 123;

    const auto a = msnet::generate_synthetic(cfg);
    const auto b = msnet::generate_synthetic(cfg);
    REQUIRE(a.size() == 12);

    std::array<int, 3> counts{};
    for (const auto& lv : a) {
        counts[static_cast<std::size_t>(static_cast<int>(lv.label))] += 1;
    }
    CHECK(counts == std::array<int, 3>{5, 4, 3});

    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].volume.patient_id == b[i].volume.patient_id);
        REQUIRE(a[i].volume.features.data == b[i].volume.features.data);
    }

    const auto c = msnet::generate_synthetic([&] {
        auto alt = cfg;
        alt.seed = 124;
        return alt;
    }());
    CHECK(c[0].volume.features.data != a[0].volume.features.data);
}

TEST_CASE("synthetic classes are separable by the centroid oracle") {
    SynthConfig cfg;
    cfg.patients_per_class = {8, 8, 8};
    cfg.min_slices = 30;
    cfg.max_slices = 60;
    cfg.channels = 256;
    cfg.noise_sigma = 0.1;
    cfg.signal_strength = 2.0;
    cfg.infected_band_fraction = {0.3, 0.15, 0.0};
    cfg.seed = 77;
    const auto data = msnet::generate_synthetic(cfg);
    CHECK(testutil::centroid_accuracy(data) >= 0.9);
}

TEST_CASE("stratified split") {
    auto make_dataset = [](const std::array<int, 3>& per_class) {
        std::vector<LabeledVolume> out;
        for (int cls = 0; cls < 3; ++cls) {
            for (int i = 0; i < per_class[static_cast<std::size_t>(cls)]; ++i) {
                LabeledVolume lv;
                lv.label = static_cast<DiagnosisLabel>(cls);
                lv.volume.features = msnet::SeqTensor32(1, 1);
                out.push_back(std::move(lv));
            }
        }
        return out;
    };

    SECTION("proportions preserved within one patient") {
        const auto data = make_dataset({40, 35, 25});
        const auto split = msnet::split_dataset(data, 0.3, 11);
        CHECK(split.val_indices.size() == 30);
        std::array<int, 3> val_counts{};
        for (std::size_t i : split.val_indices) {
            val_counts[static_cast<std::size_t>(static_cast<int>(data[i].label))] += 1;
        }
        CHECK(std::abs(val_counts[0] - 12) <= 1);
        CHECK(std::abs(val_counts[1] - 10) <= 1);
        CHECK(std::abs(val_counts[2] - 7) <= 1);
    }
    SECTION("same seed gives the same split") {
        const auto data = make_dataset({10, 10, 10});
        const auto s1 = msnet::split_dataset(data, 0.3, 42);
        const auto s2 = msnet::split_dataset(data, 0.3, 42);
        CHECK(s1.train_indices == s2.train_indices);
        CHECK(s1.val_indices == s2.val_indices);
    }
    SECTION("floor-then-distribute on the dataset composition") {
        const auto data = make_dataset({171, 60, 76});
        const auto split = msnet::split_dataset(data, 0.3, 1);
        std::array<int, 3> val_counts{};
        for (std::size_t i : split.val_indices) {
            val_counts[static_cast<std::size_t>(static_cast<int>(data[i].label))] += 1;
        }
        CHECK(val_counts == std::array<int, 3>{51, 18, 23});
    }
    SECTION("train and val partition the dataset") {
        const auto data = make_dataset({13, 9, 7});
        const auto split = msnet::split_dataset(data, 0.25, 3);
        std::vector<std::size_t> all = split.train_indices;
        all.insert(all.end(), split.val_indices.begin(), split.val_indices.end());
        std::sort(all.begin(), all.end());
        std::vector<std::size_t> expected(data.size());
        std::iota(expected.begin(), expected.end(), std::size_t{0});
        CHECK(all == expected);
    }
    SECTION("a single-patient class cannot be stratified") {
        const auto data = make_dataset({5, 1, 5});
        REQUIRE_THROWS_MATCHES(msnet::split_dataset(data, 0.3, 1), msnet::Error,
                               Catch::Matchers::Predicate<msnet::Error>([](const msnet::Error& e) {
                                   return e.kind() == msnet::ErrorKind::CannotStratify;
                               }));
    }
    SECTION("an absent class is skipped") {
        const auto data = make_dataset({6, 0, 6});
        const auto split = msnet::split_dataset(data, 0.5, 1);
        CHECK(split.val_indices.size() == 6);
    }
    SECTION("val_fraction bounds") {
        const auto data = make_dataset({4, 4, 4});
        REQUIRE_THROWS_AS(msnet::split_dataset(data, 0.0, 1), msnet::Error);
        REQUIRE_THROWS_AS(msnet::split_dataset(data, 1.0, 1), msnet::Error);
    }
}
