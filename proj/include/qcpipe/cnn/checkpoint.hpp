#pragma once

// Model container: 8-byte magic "QCMODEL1", uint32 format version, uint64 header length, a JSON
// header (spec, segments, training config, loss trace), then float32 little-endian values:
// parameters first, buffers after.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "qcpipe/cnn/train.hpp"
#include "qcpipe/nifti.hpp"

namespace qc::cnn {

inline constexpr char checkpoint_magic[8] = {'Q', 'C', 'M', 'O', 'D', 'E', 'L', '1'};
inline constexpr std::uint32_t checkpoint_version = 1;

namespace detail {

template <class U>
void put_le(Bytes& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
template <class U>
U get_le(const Bytes& in, std::size_t at) {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(in[at + i]) << (8 * i);
    return v;
}

inline nlohmann::json segments_json(const std::vector<Segment>& segs, const char* kind) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& s : segs)
        out.push_back({{"name", s.name}, {"kind", kind}, {"shape", s.shape}, {"offset", s.offset}, {"size", s.size}});
    return out;
}

}  // namespace detail

inline Bytes encode_checkpoint(const TrainedModel& m) {
    const ParamLayout layout(m.spec);
    if (m.parameters.size() != layout.n_params || m.buffers.size() != layout.n_buffers)
        fail(errc::shape_mismatch, "model values do not match its spec");
    nlohmann::json h;
    h["format_version"] = checkpoint_version;
    h["spec"] = m.spec;
    h["parameters"] = detail::segments_json(layout.params, "parameter");
    h["buffers"] = detail::segments_json(layout.buffers, "buffer");
    h["n_parameters"] = layout.n_params;
    h["n_buffers"] = layout.n_buffers;
    h["config"] = m.config;
    h["class_weights"] = m.class_weights;
    h["best_validation_loss"] = std::isfinite(m.best_validation_loss) ? nlohmann::json(m.best_validation_loss) : nlohmann::json(nullptr);
    h["best_epoch"] = m.best_epoch;
    h["epochs_run"] = m.epochs_run;
    h["fold_index"] = m.fold_index;
    h["trace"] = m.trace;
    h["log"] = m.log;
    const std::string header = h.dump();

    Bytes out(checkpoint_magic, checkpoint_magic + 8);
    detail::put_le<std::uint32_t>(out, checkpoint_version);
    detail::put_le<std::uint64_t>(out, header.size());
    out.insert(out.end(), header.begin(), header.end());
    out.reserve(out.size() + 4 * (m.parameters.size() + m.buffers.size()));
    for (const auto* vec : {&m.parameters, &m.buffers})
        for (float f : *vec) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
    return out;
}

inline TrainedModel decode_checkpoint(const Bytes& in) {
    if (in.size() < 20 || std::memcmp(in.data(), checkpoint_magic, 8) != 0)
        fail(errc::bad_checkpoint, "not a model checkpoint");
    const auto version = detail::get_le<std::uint32_t>(in, 8);
    if (version != checkpoint_version) fail(errc::bad_checkpoint, "unsupported checkpoint version " + std::to_string(version));
    const auto hlen = detail::get_le<std::uint64_t>(in, 12);
    if (hlen > in.size() - 20) fail(errc::bad_checkpoint, "truncated checkpoint header");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(in.begin() + 20, in.begin() + 20 + static_cast<long>(hlen));
    } catch (const nlohmann::json::exception& e) {
        fail(errc::bad_checkpoint, std::string("corrupt checkpoint header: ") + e.what());
    }
    TrainedModel m;
    try {
        m.spec = h.at("spec").get<NetworkSpec>();
        m.config = h.at("config").get<TrainConfig>();
        m.class_weights = h.at("class_weights").get<std::array<double, 2>>();
        m.best_validation_loss = h.at("best_validation_loss").is_null() ? std::numeric_limits<double>::infinity()
                                                                        : h.at("best_validation_loss").get<double>();
        m.best_epoch = h.at("best_epoch").get<int>();
        m.epochs_run = h.at("epochs_run").get<int>();
        m.fold_index = h.at("fold_index").get<int>();
        m.trace = h.at("trace").get<std::vector<EpochRecord>>();
        m.log = h.value("log", std::vector<std::string>{});
    } catch (const nlohmann::json::exception& e) {
        fail(errc::bad_checkpoint, std::string("incomplete checkpoint header: ") + e.what());
    }
    const ParamLayout layout(m.spec);
    if (h.at("n_parameters").get<std::size_t>() != layout.n_params || h.at("n_buffers").get<std::size_t>() != layout.n_buffers)
        fail(errc::bad_checkpoint, "segment sizes disagree with the stored spec");
    const std::size_t payload = 20 + hlen;
    const std::size_t need = 4 * (layout.n_params + layout.n_buffers);
    if (in.size() - payload != need)
        fail(errc::bad_checkpoint, "payload holds " + std::to_string(in.size() - payload) + " bytes, expected " +
                                       std::to_string(need));
    auto read = [&](std::size_t count, std::size_t at) {
        std::vector<float> v(count);
        for (std::size_t i = 0; i < count; ++i) v[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(in, at + 4 * i));
        return v;
    };
    m.parameters = read(layout.n_params, payload);
    m.buffers = read(layout.n_buffers, payload + 4 * layout.n_params);
    return m;
}

inline void save_checkpoint(const std::filesystem::path& p, const TrainedModel& m) { write_file_bytes(p, encode_checkpoint(m)); }
inline TrainedModel load_checkpoint(const std::filesystem::path& p) { return decode_checkpoint(read_file_bytes(p)); }

}  // namespace qc::cnn
