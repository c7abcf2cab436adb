#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "msnet/checkpoint.hpp"  // for the io byte helpers
#include "msnet/error.hpp"
#include "msnet/loss.hpp"
#include "msnet/rng.hpp"
#include "msnet/tensor.hpp"

namespace msnet {

// One patient's slice features: l rows of d channels, stored as 32-bit float
// (backbone outputs); training upcasts to double per volume.
struct FeatureVolume {
    std::string patient_id;
    SeqTensor32 features;

    long slices() const { return features.rows; }
    long channels() const { return features.cols; }

    SeqTensor as_f64() const {
        SeqTensor t(features.rows, features.cols);
        std::copy(features.data.begin(), features.data.end(), t.data.begin());
        return t;
    }
};

// Volume file layout, little-endian:
//   "FVOL" | version u32 | l u32 | d u32 | l*d f32 row-major.
inline constexpr std::uint32_t kVolumeVersion = 1;

inline std::string encode_volume(const FeatureVolume& volume) {
    if (volume.features.rows < 1 || volume.features.cols < 1) {
        throw Error(ErrorKind::EmptyInput, "volume must have l >= 1 and d >= 1");
    }
    if (!volume.features.all_finite()) {
        throw Error(ErrorKind::NonFinite, "volume contains NaN/Inf");
    }
    std::string buf;
    buf.reserve(16 + volume.features.data.size() * 4);
    buf.append("FVOL", 4);
    io::put_u32(buf, kVolumeVersion);
    io::put_u32(buf, static_cast<std::uint32_t>(volume.features.rows));
    io::put_u32(buf, static_cast<std::uint32_t>(volume.features.cols));
    for (float v : volume.features.data) {
        io::put_f32(buf, v);
    }
    return buf;
}

inline FeatureVolume decode_volume(const std::string& bytes, const std::string& name) {
    io::Reader r(bytes, name);
    r.magic("FVOL");
    const std::uint32_t version = r.u32();
    if (version != kVolumeVersion) {
        throw Error(ErrorKind::BadVersion,
                    name + ": unsupported volume version " + std::to_string(version));
    }
    const std::uint32_t l = r.u32();
    const std::uint32_t d = r.u32();
    if (l < 1 || d < 1) {
        throw Error(ErrorKind::Corrupt, name + ": volume header declares an empty matrix");
    }
    const std::uint64_t payload = static_cast<std::uint64_t>(l) * d * 4;
    if (r.remaining() < payload) {
        throw Error(ErrorKind::Truncated, name + ": payload shorter than l*d floats");
    }
    if (r.remaining() > payload) {
        throw Error(ErrorKind::Corrupt, name + ": file size inconsistent with l*d header");
    }
    FeatureVolume v;
    v.patient_id = name;
    v.features = SeqTensor32(static_cast<long>(l), static_cast<long>(d));
    for (auto& x : v.features.data) {
        x = r.f32();
        if (!std::isfinite(x)) {
            throw Error(ErrorKind::NonFinite, name + ": volume contains NaN/Inf");
        }
    }
    return v;
}

inline void write_volume(const FeatureVolume& volume, const std::filesystem::path& path) {
    io::write_file(path, encode_volume(volume));
}

inline FeatureVolume read_volume(const std::filesystem::path& path) {
    FeatureVolume v = decode_volume(io::read_file(path), path.filename().string());
    v.patient_id = path.stem().string();
    return v;
}

enum class SplitTag { Train, Val, Test };

inline const char* to_string(SplitTag tag) {
    switch (tag) {
        case SplitTag::Train: return "train";
        case SplitTag::Val: return "val";
        case SplitTag::Test: return "test";
    }
    return "?";
}

struct ManifestEntry {
    std::string patient_id;
    std::filesystem::path path;  // resolved against the manifest's directory
    DiagnosisLabel label = DiagnosisLabel::COVID;
    SplitTag split = SplitTag::Train;
};

struct Manifest {
    std::vector<ManifestEntry> entries;
};

namespace detail {

inline std::string to_lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    return s;
}

inline std::string trim(const std::string& s) {
    std::size_t a = 0;
    std::size_t b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) {
        fields.push_back(trim(field));
    }
    return fields;
}

}  // namespace detail

inline DiagnosisLabel parse_label(const std::string& text) {
    const std::string t = detail::to_lower(detail::trim(text));
    if (t == "covid") return DiagnosisLabel::COVID;
    if (t == "cap") return DiagnosisLabel::CAP;
    if (t == "normal") return DiagnosisLabel::NORMAL;
    throw Error(ErrorKind::UnknownLabel, "unknown label \"" + text + "\"");
}

inline SplitTag parse_split_tag(const std::string& text) {
    const std::string t = detail::to_lower(detail::trim(text));
    if (t == "train") return SplitTag::Train;
    if (t == "val") return SplitTag::Val;
    if (t == "test") return SplitTag::Test;
    throw Error(ErrorKind::UnknownLabel, "unknown split tag \"" + text + "\"");
}

// CSV with header `patient_id,path,label,split`. Relative paths resolve
// against the manifest's own directory; every referenced file must exist.
inline Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::Io, "cannot open manifest " + path.string());
    }
    const std::filesystem::path base = path.has_parent_path()
                                           ? path.parent_path()
                                           : std::filesystem::path(".");
    std::string line;
    if (!std::getline(in, line)) {
        throw Error(ErrorKind::Corrupt, path.string() + ": empty manifest");
    }
    {
        const auto header = detail::split_csv_row(line);
        const std::vector<std::string> expected = {"patient_id", "path", "label", "split"};
        if (header.size() != 4) {
            throw Error(ErrorKind::Corrupt, path.string() + ": manifest header must have 4 columns");
        }
        for (std::size_t i = 0; i < 4; ++i) {
            if (detail::to_lower(header[i]) != expected[i]) {
                throw Error(ErrorKind::Corrupt,
                            path.string() + ": manifest header column " + std::to_string(i + 1) +
                                " must be \"" + expected[i] + "\"");
            }
        }
    }

    Manifest manifest;
    std::vector<std::string> seen_ids;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (detail::trim(line).empty()) {
            continue;
        }
        const auto fields = detail::split_csv_row(line);
        const std::string where = path.string() + " row " + std::to_string(row);
        if (fields.size() != 4) {
            throw Error(ErrorKind::Corrupt, where + ": expected 4 fields");
        }
        ManifestEntry e;
        e.patient_id = fields[0];
        if (e.patient_id.empty()) {
            throw Error(ErrorKind::Corrupt, where + ": empty patient_id");
        }
        if (std::find(seen_ids.begin(), seen_ids.end(), e.patient_id) != seen_ids.end()) {
            throw Error(ErrorKind::DuplicateId,
                        where + ": duplicate patient_id \"" + e.patient_id + "\"");
        }
        seen_ids.push_back(e.patient_id);
        std::filesystem::path p(fields[1]);
        e.path = p.is_absolute() ? p : base / p;
        try {
            e.label = parse_label(fields[2]);
            e.split = parse_split_tag(fields[3]);
        } catch (const Error& err) {
            throw Error(err.kind(), where + ": " + err.what());
        }
        if (!std::filesystem::exists(e.path)) {
            throw Error(ErrorKind::MissingFile,
                        where + ": referenced file " + e.path.string() + " does not exist");
        }
        manifest.entries.push_back(std::move(e));
    }
    return manifest;
}

inline void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::Io, "cannot open manifest " + path.string() + " for writing");
    }
    out << "patient_id,path,label,split\n";
    const std::filesystem::path base = path.has_parent_path()
                                           ? path.parent_path()
                                           : std::filesystem::path(".");
    for (const auto& e : manifest.entries) {
        const std::filesystem::path rel = e.path.lexically_relative(base);
        const std::string p = rel.empty() ? e.path.generic_string() : rel.generic_string();
        out << e.patient_id << ',' << p << ',' << to_string(e.label) << ','
            << to_string(e.split) << '\n';
    }
    if (!out) {
        throw Error(ErrorKind::Io, "write failure on " + path.string());
    }
}

struct LabeledVolume {
    FeatureVolume volume;
    DiagnosisLabel label = DiagnosisLabel::COVID;
};

// Synthetic stand-in for the backbone's per-slice features. All volumes are
// Gaussian noise around a shared base vector; classes with a positive band
// fraction additionally carry their class signal direction over a contiguous
// run of slices, the neighborhood structure the dilated convolutions exploit.
struct SynthConfig {
    std::array<int, 3> patients_per_class = {5, 5, 5};
    int min_slices = 100;
    int max_slices = 200;
    double noise_sigma = 0.1;
    double signal_strength = 2.0;
    std::array<double, 3> infected_band_fraction = {0.3, 0.15, 0.0};
    int channels = 2048;
    std::uint64_t seed = 0;

    void validate() const {
        if (min_slices < 1 || max_slices < min_slices) {
            throw Error(ErrorKind::InvalidArgument, "require 1 <= min_slices <= max_slices");
        }
        if (noise_sigma < 0.0) {
            throw Error(ErrorKind::InvalidArgument, "noise_sigma must be >= 0");
        }
        if (channels < 1) {
            throw Error(ErrorKind::InvalidArgument, "channels must be >= 1");
        }
        for (int n : patients_per_class) {
            if (n < 0) {
                throw Error(ErrorKind::InvalidArgument, "patients_per_class must be >= 0");
            }
        }
        for (double f : infected_band_fraction) {
            if (f < 0.0 || f > 1.0) {
                throw Error(ErrorKind::InvalidArgument, "band fractions must lie in [0, 1]");
            }
        }
    }
};

inline std::vector<LabeledVolume> generate_synthetic(const SynthConfig& config) {
    config.validate();
    Rng rng(config.seed);
    const std::size_t d = static_cast<std::size_t>(config.channels);

    std::vector<double> base(d);
    for (double& v : base) {
        v = rng.normal();
    }
    // One unit direction per class, drawn whether or not the class uses it so
    // the stream layout only depends on `channels` and `seed`.
    std::array<std::vector<double>, 3> directions;
    for (auto& dir : directions) {
        dir.resize(d);
        double norm_sq = 0.0;
        for (double& v : dir) {
            v = rng.normal();
            norm_sq += v * v;
        }
        const double inv_norm = 1.0 / std::sqrt(norm_sq);
        for (double& v : dir) {
            v *= inv_norm;
        }
    }

    std::vector<LabeledVolume> out;
    for (int cls = 0; cls < 3; ++cls) {
        const auto label = static_cast<DiagnosisLabel>(cls);
        for (int i = 0; i < config.patients_per_class[static_cast<std::size_t>(cls)]; ++i) {
            const long l = rng.uniform_int(config.min_slices, config.max_slices);
            LabeledVolume lv;
            lv.label = label;
            char id[64];
            std::snprintf(id, sizeof(id), "%s_%03d", detail::to_lower(to_string(label)).c_str(), i);
            lv.volume.patient_id = id;
            lv.volume.features = SeqTensor32(l, config.channels);

            long band_start = 0;
            long band_len = 0;
            const double frac = config.infected_band_fraction[static_cast<std::size_t>(cls)];
            if (frac > 0.0) {
                band_len = static_cast<long>(std::ceil(frac * static_cast<double>(l)));
                band_len = std::min(band_len, l);
                band_start = rng.uniform_int(0, l - band_len);
            }

            for (long t = 0; t < l; ++t) {
                float* row = lv.volume.features.row(t);
                const bool in_band = t >= band_start && t < band_start + band_len;
                for (std::size_t c = 0; c < d; ++c) {
                    double v = base[c] + config.noise_sigma * rng.normal();
                    if (in_band) {
                        v += config.signal_strength * directions[static_cast<std::size_t>(cls)][c];
                    }
                    row[c] = static_cast<float>(v);
                }
            }
            out.push_back(std::move(lv));
        }
    }
    return out;
}

// Patient-level stratified split. Per class: floor(val_fraction * n_c) val
// seats, then the seats still missing from floor(val_fraction * N) go to the
// classes with the largest fractional remainders (ties to the lower class
// index). Classes with a single patient cannot be stratified.
struct SplitResult {
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> val_indices;
};

template <typename GetLabel>
SplitResult split_dataset_by(std::size_t count, GetLabel&& label_of, double val_fraction,
                             std::uint64_t seed) {
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
        throw Error(ErrorKind::InvalidArgument, "val_fraction must lie in (0, 1)");
    }
    std::array<std::vector<std::size_t>, 3> by_class;
    for (std::size_t i = 0; i < count; ++i) {
        by_class[static_cast<std::size_t>(static_cast<int>(label_of(i)))].push_back(i);
    }
    for (std::size_t c = 0; c < 3; ++c) {
        if (by_class[c].size() == 1) {
            throw Error(ErrorKind::CannotStratify,
                        std::string("class ") + to_string(static_cast<DiagnosisLabel>(c)) +
                            " has a single patient and cannot be stratified");
        }
    }

    const std::size_t total_val =
        static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(count)));
    std::array<std::size_t, 3> val_seats{};
    std::array<double, 3> remainders{};
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < 3; ++c) {
        const double exact = val_fraction * static_cast<double>(by_class[c].size());
        val_seats[c] = static_cast<std::size_t>(std::floor(exact));
        remainders[c] = exact - static_cast<double>(val_seats[c]);
        assigned += val_seats[c];
    }
    while (assigned < total_val) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < 3; ++c) {
            if (remainders[c] > remainders[best]) {
                best = c;
            }
        }
        if (remainders[best] <= 0.0) {
            break;
        }
        val_seats[best] += 1;
        remainders[best] = 0.0;
        assigned += 1;
    }

    Rng rng(seed);
    SplitResult r;
    for (std::size_t c = 0; c < 3; ++c) {
        auto pool = by_class[c];
        rng.shuffle(pool);
        for (std::size_t i = 0; i < pool.size(); ++i) {
            (i < val_seats[c] ? r.val_indices : r.train_indices).push_back(pool[i]);
        }
    }
    std::sort(r.train_indices.begin(), r.train_indices.end());
    std::sort(r.val_indices.begin(), r.val_indices.end());
    return r;
}

inline SplitResult split_dataset(const std::vector<LabeledVolume>& entries, double val_fraction,
                                 std::uint64_t seed) {
    return split_dataset_by(
        entries.size(), [&](std::size_t i) { return entries[i].label; }, val_fraction, seed);
}

}  // namespace msnet
