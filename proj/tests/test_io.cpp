#include "ambiloc/error.hpp"
#include "ambiloc/io.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>

using namespace ambiloc;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        std::random_device rd;
        path = fs::temp_directory_path() / ("ambiloc_io_" + std::to_string(rd()) + std::to_string(rd()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

void put16(std::string& s, std::uint16_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>(v >> 8));
}
void put32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

// Minimal canonical 16-bit PCM file, with an extra chunk before "data".
std::string pcm16_file(const std::vector<std::vector<std::int16_t>>& frames, std::uint32_t rate) {
    const auto ch = static_cast<std::uint16_t>(frames.front().size());
    std::string body;
    body += "fmt ";
    put32(body, 16);
    put16(body, 1);
    put16(body, ch);
    put32(body, rate);
    put32(body, rate * ch * 2);
    put16(body, ch * 2);
    put16(body, 16);
    body += "LIST";
    put32(body, 3);
    body += "abc";
    body.push_back('\0');  // odd chunk padding
    body += "data";
    put32(body, static_cast<std::uint32_t>(frames.size() * ch * 2));
    for (const auto& f : frames)
        for (std::int16_t v : f) put16(body, static_cast<std::uint16_t>(v));
    std::string out = "RIFF";
    put32(out, static_cast<std::uint32_t>(4 + body.size()));
    out += "WAVE";
    return out + body;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream(p, std::ios::binary) << text;
}

}  // namespace

TEST_CASE("float WAV round trip") {
    TempDir dir;
    MultichannelSignal x = MultichannelSignal::Random(9, 777) * 0.9;
    write_wav(dir.path / "a.wav", x, 16000.0);
    const WavData w = read_wav(dir.path / "a.wav");
    CHECK(w.sample_rate == 16000.0);
    REQUIRE(w.samples.rows() == 9);
    REQUIRE(w.samples.cols() == 777);
    // Stored as 32-bit float.
    CHECK((w.samples - x).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("hand-made PCM16 file") {
    TempDir dir;
    write_text(dir.path / "p.wav", pcm16_file({{0, 16384}, {-32768, 32767}, {100, -100}}, 8000));
    const WavData w = read_wav(dir.path / "p.wav");
    CHECK(w.sample_rate == 8000.0);
    REQUIRE(w.samples.rows() == 2);
    REQUIRE(w.samples.cols() == 3);
    CHECK(w.samples(1, 0) == 0.5);
    CHECK(w.samples(0, 1) == -1.0);
    CHECK(w.samples(1, 1) == doctest::Approx(32767.0 / 32768.0));
    CHECK(w.samples(1, 2) == doctest::Approx(-100.0 / 32768.0));
}

TEST_CASE("malformed WAV files are input errors") {
    TempDir dir;
    std::string good = pcm16_file({{1, 2}, {3, 4}}, 8000);
    write_text(dir.path / "trunc.wav", good.substr(0, good.size() - 3));
    CHECK_THROWS_AS(read_wav(dir.path / "trunc.wav"), InputError);
    write_text(dir.path / "junk.wav", "not a wave file at all");
    CHECK_THROWS_AS(read_wav(dir.path / "junk.wav"), InputError);
    CHECK_THROWS_AS(read_wav(dir.path / "missing.wav"), InputError);
    CHECK_THROWS_AS(load_recording(dir.path / "missing.wav"), InputError);
}

TEST_CASE("sidecar round trip with truth") {
    TempDir dir;
    const fs::path wav = dir.path / "rec.wav";
    write_wav(wav, MultichannelSignal::Random(16, 100), 16000.0);
    SidecarHeader h;
    h.order = 3;
    h.mic = {1, 2, 3};
    const TruthTrack truth({{0.0, {1, 0, 0}}, {1.0, {1, 2, 0}}});
    write_sidecar(sidecar_path(wav), h, &truth);
    CHECK(sidecar_path(wav) == dir.path / "rec.jsonl");

    const Recording rec = load_recording(wav);
    CHECK(rec.order == 3);
    CHECK(rec.sample_rate == 16000.0);
    REQUIRE(rec.truth);
    CHECK((*rec.truth->at(0.5) - Eigen::Vector3d(1, 1, 0)).norm() < 1e-12);

    // Order disagreeing with the channel count.
    h.order = 2;
    write_sidecar(sidecar_path(wav), h, nullptr);
    CHECK_THROWS_AS(load_recording(wav), InputError);

    // No sidecar: order from the channel count, or an error.
    fs::remove(sidecar_path(wav));
    CHECK(load_recording(wav).order == 3);
    write_wav(dir.path / "odd.wav", MultichannelSignal::Random(5, 10), 16000.0);
    CHECK_THROWS_AS(load_recording(dir.path / "odd.wav"), InputError);
}

TEST_CASE("SN3D input is rescaled to N3D") {
    MultichannelSignal x = MultichannelSignal::Ones(9, 4);
    sn3d_to_n3d(x, 2);
    CHECK(x(0, 0) == 1.0);
    for (int ch = 1; ch < 4; ++ch) CHECK(x(ch, 2) == doctest::Approx(std::sqrt(3.0)));
    for (int ch = 4; ch < 9; ++ch) CHECK(x(ch, 1) == doctest::Approx(std::sqrt(5.0)));

    TempDir dir;
    const fs::path wav = dir.path / "s.wav";
    write_wav(wav, MultichannelSignal::Constant(4, 8, 0.25), 8000.0);
    SidecarHeader h;
    h.sample_rate = 8000.0;
    h.order = 1;
    h.normalization = Normalization::sn3d;
    write_sidecar(sidecar_path(wav), h, nullptr);
    const Recording rec = load_recording(wav);
    CHECK(rec.signal(0, 0) == doctest::Approx(0.25));
    CHECK(rec.signal(2, 0) == doctest::Approx(0.25 * std::sqrt(3.0)));
}

TEST_CASE("truth interpolation across sampling rates") {
    // The same straight path sampled at 120 Hz and 31.25 Hz agrees at
    // arbitrary query times.
    auto path = [](double t) { return Eigen::Vector3d(1.0 + t, 2.0 - 0.5 * t, 0.3 * t); };
    std::vector<TruthTrack::Sample> a, b;
    for (int i = 0; i <= 240; ++i) a.push_back({i / 120.0, path(i / 120.0)});
    for (int i = 0; i <= 62; ++i) b.push_back({i / 31.25, path(i / 31.25)});
    const TruthTrack ta(a), tb(b);
    std::mt19937_64 rng(61);
    for (int t = 0; t < 100; ++t) {
        const double q = oracle::uniform(rng, 0.0, 1.98);
        CHECK((*ta.at(q) - *tb.at(q)).norm() < 1e-12);
        CHECK((*ta.at(q) - path(q)).norm() < 1e-12);
    }
    CHECK_FALSE(ta.at(-0.1).has_value());
    CHECK_FALSE(ta.at(2.5).has_value());
    CHECK_THROWS_AS(TruthTrack({{1.0, {}}, {0.5, {}}}), InputError);
}

TEST_CASE("LOCATA-style task directory") {
    TempDir dir;
    write_wav(dir.path / "audio_array_hoa.wav", MultichannelSignal::Random(25, 200), 16000.0);
    write_wav(dir.path / "audio_source_raw.wav", MultichannelSignal::Random(1, 200), 16000.0);

    // Array rotated 90 degrees about z: local x is room y.
    const Eigen::Matrix3d R = (Eigen::Matrix3d() << 0, -1, 0, 1, 0, 0, 0, 0, 1).finished();
    const Eigen::Vector3d pa(2.0, 1.0, 1.5);
    std::ostringstream src, arr;
    src << "year month day hour minute second x y z ref_vec_x ref_vec_y ref_vec_z\n";
    arr << "year month day hour minute second x y z ref_vec_x ref_vec_y ref_vec_z rotation_11 rotation_12 "
           "rotation_13 rotation_21 rotation_22 rotation_23 rotation_31 rotation_32 rotation_33\n";
    for (int i = 0; i < 4; ++i) {
        const double sec = 10.0 + 0.1 * i;
        const Eigen::Vector3d ps = pa + Eigen::Vector3d(0.0, 1.0 + 0.1 * i, 0.2);
        src << "2017 5 1 12 30 " << sec << ' ' << ps.x() << ' ' << ps.y() << ' ' << ps.z() << " 0 0 0\n";
        arr << "2017 5 1 12 30 " << sec << ' ' << pa.x() << ' ' << pa.y() << ' ' << pa.z() << " 0 0 0";
        for (int r = 0; r < 9; ++r) arr << ' ' << R(r / 3, r % 3);
        arr << '\n';
    }
    write_text(dir.path / "position_source_talker1.txt", src.str());
    write_text(dir.path / "position_array_eigenmike.txt", arr.str());

    const Recording rec = load_recording(dir.path);
    CHECK(rec.order == 4);
    REQUIRE(rec.truth);
    REQUIRE(rec.truth->samples().size() == 4);
    CHECK(rec.truth->samples()[0].t == 0.0);
    CHECK(rec.truth->samples()[2].t == doctest::Approx(0.2));
    // Room offset (0, 1, 0.2) seen from the rotated array: R^T (ps - pa).
    CHECK((rec.truth->samples()[0].position - Eigen::Vector3d(1.0, 0.0, 0.2)).norm() < 1e-9);

    TempDir empty;
    CHECK_THROWS_AS(load_recording(empty.path), InputError);
}
