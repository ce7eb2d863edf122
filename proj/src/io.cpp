#include "ambiloc/io.hpp"

#include "ambiloc/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace ambiloc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

// KSDATAFORMAT_SUBTYPE_* GUID tail shared by PCM and IEEE float.
constexpr std::array<unsigned char, 14> kGuidTail{0x00, 0x00, 0x00, 0x00, 0x10, 0x00, 0x80,
                                                  0x00, 0x00, 0xAA, 0x00, 0x38, 0x9B, 0x71};

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const unsigned char* p) {
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

std::uint16_t get_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | p[1] << 8); }

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int order_for_channels(int channels, const std::string& what) {
    const int l = static_cast<int>(std::lround(std::sqrt(static_cast<double>(channels)))) - 1;
    if (l < 0 || sh_channels(l) != channels)
        throw InputError(what + ": channel count " + std::to_string(channels) + " is not (L+1)^2");
    return l;
}

std::vector<std::string> split_ws(const std::string& line) {
    std::istringstream ss(line);
    std::vector<std::string> out;
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

// Whitespace table with a header row; returns column -> values.
std::map<std::string, std::vector<double>> read_table(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw InputError(path.string() + ": empty table");
    const std::vector<std::string> names = split_ws(line);
    std::map<std::string, std::vector<double>> cols;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        const auto toks = split_ws(line);
        if (toks.empty()) continue;
        if (toks.size() != names.size())
            throw InputError(path.string() + ": row " + std::to_string(row) + " has the wrong column count");
        for (std::size_t i = 0; i < toks.size(); ++i) {
            try {
                cols[names[i]].push_back(std::stod(toks[i]));
            } catch (const std::exception&) {
                throw InputError(path.string() + ": bad number '" + toks[i] + "' in row " + std::to_string(row));
            }
        }
    }
    return cols;
}

const std::vector<double>& column(const std::map<std::string, std::vector<double>>& t, const std::string& name,
                                  const fs::path& path) {
    auto it = t.find(name);
    if (it == t.end()) throw InputError(path.string() + ": missing column '" + name + "'");
    return it->second;
}

}  // namespace

void write_wav(const fs::path& path, const MultichannelSignal& samples, double sample_rate) {
    const auto channels = static_cast<std::uint32_t>(samples.rows());
    const auto frames = static_cast<std::uint64_t>(samples.cols());
    if (channels == 0 || channels > 0xFFFF) throw InputError("write_wav: unsupported channel count");
    const std::uint64_t data_bytes = frames * channels * 4;
    if (data_bytes + 68 > 0xFFFFFFFFull) throw InputError("write_wav: file too large for RIFF");

    std::string out;
    out.reserve(68 + data_bytes);
    out += "RIFF";
    put_u32(out, static_cast<std::uint32_t>(60 + data_bytes));
    out += "WAVEfmt ";
    put_u32(out, 40);
    put_u16(out, kFormatExtensible);
    put_u16(out, static_cast<std::uint16_t>(channels));
    const auto rate = static_cast<std::uint32_t>(std::lround(sample_rate));
    put_u32(out, rate);
    put_u32(out, rate * channels * 4);
    put_u16(out, static_cast<std::uint16_t>(channels * 4));
    put_u16(out, 32);
    put_u16(out, 22);
    put_u16(out, 32);
    put_u32(out, 0);  // no speaker positions
    put_u16(out, kFormatFloat);
    out.append(reinterpret_cast<const char*>(kGuidTail.data()), kGuidTail.size());
    out += "data";
    put_u32(out, static_cast<std::uint32_t>(data_bytes));
    for (std::uint64_t t = 0; t < frames; ++t)
        for (std::uint32_t c = 0; c < channels; ++c) {
            const float v = static_cast<float>(samples(c, static_cast<Eigen::Index>(t)));
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            put_u32(out, bits);
        }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw InputError("cannot write " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw InputError("write failed: " + path.string());
}

WavData read_wav(const fs::path& path) {
    const std::string bytes = read_file(path);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::size_t n = bytes.size();
    if (n < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
        throw InputError(path.string() + ": not a RIFF/WAVE file");

    std::uint16_t format = 0, channels = 0, bits = 0, block = 0;
    std::uint32_t rate = 0;
    bool have_fmt = false;
    const unsigned char* data = nullptr;
    std::size_t data_len = 0;
    std::size_t pos = 12;
    while (pos + 8 <= n) {
        const unsigned char* chunk = p + pos;
        const std::uint32_t len = get_u32(chunk + 4);
        const std::size_t body = pos + 8;
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (len < 16 || body + len > n) throw InputError(path.string() + ": truncated fmt chunk");
            format = get_u16(p + body);
            channels = get_u16(p + body + 2);
            rate = get_u32(p + body + 4);
            block = get_u16(p + body + 12);
            bits = get_u16(p + body + 14);
            if (format == kFormatExtensible) {
                if (len < 40) throw InputError(path.string() + ": short extensible fmt chunk");
                format = get_u16(p + body + 24);
            }
            have_fmt = true;
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            if (body + len > n) throw InputError(path.string() + ": truncated data chunk");
            data = p + body;
            data_len = len;
            break;
        }
        pos = body + len + (len & 1);
    }
    if (!have_fmt) throw InputError(path.string() + ": missing fmt chunk");
    if (!data) throw InputError(path.string() + ": missing data chunk");
    if (channels == 0 || rate == 0) throw InputError(path.string() + ": invalid format header");
    const int bytes_per = bits / 8;
    const bool pcm_ok = format == kFormatPcm && (bits == 16 || bits == 24 || bits == 32);
    const bool float_ok = format == kFormatFloat && (bits == 32 || bits == 64);
    if (!pcm_ok && !float_ok) throw InputError(path.string() + ": unsupported sample format");
    if (block != channels * bytes_per) throw InputError(path.string() + ": inconsistent block alignment");
    if (data_len % block != 0) throw InputError(path.string() + ": data chunk is not a whole number of frames");

    const std::size_t frames = data_len / block;
    WavData out;
    out.sample_rate = rate;
    out.samples.resize(channels, static_cast<Eigen::Index>(frames));
    for (std::size_t t = 0; t < frames; ++t)
        for (int c = 0; c < channels; ++c) {
            const unsigned char* s = data + t * block + c * bytes_per;
            double v = 0.0;
            if (format == kFormatFloat && bits == 32) {
                float f;
                std::memcpy(&f, s, 4);
                v = f;
            } else if (format == kFormatFloat) {
                std::memcpy(&v, s, 8);
            } else if (bits == 16) {
                v = static_cast<std::int16_t>(get_u16(s)) / 32768.0;
            } else if (bits == 24) {
                std::int32_t x = s[0] | s[1] << 8 | s[2] << 16;
                if (x & 0x800000) x -= 1 << 24;
                v = x / 8388608.0;
            } else {
                v = static_cast<std::int32_t>(get_u32(s)) / 2147483648.0;
            }
            out.samples(c, static_cast<Eigen::Index>(t)) = v;
        }
    return out;
}

TruthTrack::TruthTrack(std::vector<Sample> samples) : samples_(std::move(samples)) {
    for (std::size_t i = 1; i < samples_.size(); ++i)
        if (!(samples_[i].t > samples_[i - 1].t)) throw InputError("truth: timestamps must increase");
}

std::optional<Eigen::Vector3d> TruthTrack::at(double t) const {
    if (samples_.empty()) return std::nullopt;
    constexpr double slack = 1e-9;
    if (t < samples_.front().t - slack || t > samples_.back().t + slack) return std::nullopt;
    if (samples_.size() == 1) return samples_.front().position;
    auto it = std::upper_bound(samples_.begin(), samples_.end(), t,
                               [](double v, const Sample& s) { return v < s.t; });
    if (it == samples_.begin()) return samples_.front().position;
    if (it == samples_.end()) return samples_.back().position;
    const Sample& b = *it;
    const Sample& a = *(it - 1);
    const double u = (t - a.t) / (b.t - a.t);
    return a.position + u * (b.position - a.position);
}

void sn3d_to_n3d(MultichannelSignal& signal, int order) {
    if (signal.rows() != sh_channels(order)) throw InputError("sn3d_to_n3d: channel count mismatch");
    for (int l = 0; l <= order; ++l) {
        const double s = std::sqrt(2.0 * l + 1.0);
        for (int m = -l; m <= l; ++m) signal.row(acn(l, m)) *= s;
    }
}

fs::path sidecar_path(const fs::path& wav) {
    fs::path p = wav;
    p.replace_extension(".jsonl");
    return p;
}

void write_sidecar(const fs::path& path, const SidecarHeader& header, const TruthTrack* truth) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw InputError("cannot write " + path.string());
    json h;
    h["type"] = "header";
    h["sample_rate"] = header.sample_rate;
    h["order"] = header.order;
    h["channel_order"] = "ACN";
    h["normalization"] = header.normalization == Normalization::n3d ? "N3D" : "SN3D";
    h["mic"] = {header.mic.x(), header.mic.y(), header.mic.z()};
    out << h.dump() << '\n';
    if (truth) {
        for (const TruthTrack::Sample& s : truth->samples()) {
            json line;
            line["type"] = "truth";
            line["t"] = s.t;
            line["source"] = {s.position.x(), s.position.y(), s.position.z()};
            out << line.dump() << '\n';
        }
    }
    if (!out) throw InputError("write failed: " + path.string());
}

namespace {

struct Sidecar {
    SidecarHeader header;
    std::optional<TruthTrack> truth;
};

Sidecar read_sidecar(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    Sidecar out;
    std::vector<TruthTrack::Sample> truth;
    bool have_header = false;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
            const std::string type = j.at("type").get<std::string>();
            if (type == "header") {
                out.header.sample_rate = j.at("sample_rate").get<double>();
                out.header.order = j.at("order").get<int>();
                const std::string norm = j.value("normalization", std::string("N3D"));
                if (norm == "N3D") out.header.normalization = Normalization::n3d;
                else if (norm == "SN3D") out.header.normalization = Normalization::sn3d;
                else throw InputError("unknown normalization '" + norm + "'");
                if (j.value("channel_order", std::string("ACN")) != "ACN")
                    throw InputError("only ACN channel order is supported");
                if (j.contains("mic")) {
                    const auto m = j.at("mic").get<std::vector<double>>();
                    if (m.size() == 3) out.header.mic = {m[0], m[1], m[2]};
                }
                have_header = true;
            } else if (type == "truth") {
                const auto s = j.at("source").get<std::vector<double>>();
                if (s.size() != 3) throw InputError("truth source must have 3 components");
                truth.push_back({j.at("t").get<double>(), {s[0], s[1], s[2]}});
            }
        } catch (const json::exception& e) {
            throw InputError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const InputError& e) {
            throw InputError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (!have_header) throw InputError(path.string() + ": missing header line");
    if (!truth.empty()) out.truth = TruthTrack(std::move(truth));
    return out;
}

}  // namespace

Recording load_wave_recording(const fs::path& wav) {
    WavData w = read_wav(wav);
    Recording rec;
    rec.sample_rate = w.sample_rate;
    const fs::path side = sidecar_path(wav);
    if (fs::exists(side)) {
        Sidecar sc = read_sidecar(side);
        if (sh_channels(sc.header.order) != w.samples.rows())
            throw InputError(wav.string() + ": sidecar declares order " + std::to_string(sc.header.order) + " but file has " +
                             std::to_string(w.samples.rows()) + " channels");
        if (std::abs(sc.header.sample_rate - w.sample_rate) > 1e-6)
            throw InputError(wav.string() + ": sidecar sample rate differs from the WAV header");
        rec.order = sc.header.order;
        if (sc.header.normalization == Normalization::sn3d) sn3d_to_n3d(w.samples, rec.order);
        rec.truth = std::move(sc.truth);
    } else {
        rec.order = order_for_channels(static_cast<int>(w.samples.rows()), wav.string());
    }
    rec.signal = std::move(w.samples);
    return rec;
}

Recording load_locata_task(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw InputError(dir.string() + ": not a directory");
    std::vector<fs::path> wavs, sources, arrays;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (e.path().extension() == ".wav") wavs.push_back(e.path());
        else if (name.rfind("position_source_", 0) == 0 && e.path().extension() == ".txt") sources.push_back(e.path());
        else if (name.rfind("position_array_", 0) == 0 && e.path().extension() == ".txt") arrays.push_back(e.path());
    }
    std::sort(wavs.begin(), wavs.end());
    std::sort(sources.begin(), sources.end());
    // Prefer an explicitly HOA-encoded file over raw capsule recordings.
    auto hoa = std::find_if(wavs.begin(), wavs.end(),
                            [](const fs::path& p) { return p.filename().string().find("hoa") != std::string::npos; });
    if (hoa == wavs.end()) throw InputError(dir.string() + ": no HOA-encoded *hoa*.wav file");
    Recording rec = load_wave_recording(*hoa);
    if (sources.size() != 1 || arrays.size() != 1) {
        rec.truth.reset();
        return rec;
    }

    const auto src = read_table(sources.front());
    const auto arr = read_table(arrays.front());
    auto seconds = [&](const std::map<std::string, std::vector<double>>& t, const fs::path& p) {
        const auto& h = column(t, "hour", p);
        const auto& m = column(t, "minute", p);
        const auto& s = column(t, "second", p);
        std::vector<double> out(h.size());
        for (std::size_t i = 0; i < h.size(); ++i) out[i] = 3600.0 * h[i] + 60.0 * m[i] + s[i];
        return out;
    };
    const std::vector<double> ts = seconds(src, sources.front());
    const std::vector<double> ta = seconds(arr, arrays.front());
    if (ts.empty() || ts.size() != ta.size()) throw InputError(dir.string() + ": source/array tables differ in length");

    const char* rot_names[9] = {"rotation_11", "rotation_12", "rotation_13", "rotation_21", "rotation_22",
                                "rotation_23", "rotation_31", "rotation_32", "rotation_33"};
    std::vector<TruthTrack::Sample> truth;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const Eigen::Vector3d ps(column(src, "x", sources.front())[i], column(src, "y", sources.front())[i],
                                 column(src, "z", sources.front())[i]);
        const Eigen::Vector3d pa(column(arr, "x", arrays.front())[i], column(arr, "y", arrays.front())[i],
                                 column(arr, "z", arrays.front())[i]);
        Eigen::Matrix3d R;
        for (int r = 0; r < 9; ++r) R(r / 3, r % 3) = column(arr, rot_names[r], arrays.front())[i];
        // Array orientation maps local to room coordinates.
        truth.push_back({ts[i] - ts.front(), R.transpose() * (ps - pa)});
    }
    rec.truth = TruthTrack(std::move(truth));
    return rec;
}

Recording load_recording(const fs::path& path, RecordingFormat format) {
    if (!fs::exists(path)) throw InputError(path.string() + ": no such file or directory");
    if (format == RecordingFormat::automatic)
        format = fs::is_directory(path) ? RecordingFormat::locata : RecordingFormat::wave;
    if (format == RecordingFormat::locata) return load_locata_task(path);
    return load_wave_recording(path);
}

}  // namespace ambiloc
