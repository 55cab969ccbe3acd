#include "weaver/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "weaver/error.hpp"
#include "weaver/fs_util.hpp"
#include "weaver/json_io.hpp"

namespace weaver {

using nlohmann::json;

namespace {

constexpr std::array<char, 8> kMagic = {'W', 'V', 'R', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint64_t kMaxHeaderBytes = 64ULL << 20;

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) {
        v = (v << 8) | p[i];
    }
    return v;
}

void read_exact(std::istream& in, char* dst, std::size_t n, const char* what) {
    in.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
        throw FormatError(fmt::format("checkpoint truncated while reading {}", what));
    }
}

template <class T>
T field(const json& j, const char* key) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw FormatError(fmt::format("checkpoint header field '{}': {}", key, e.what()));
    }
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, std::ostream& out) {
    checkpoint.validate();
    json header;
    header["format_version"] = kCheckpointFormatVersion;
    header["model_config"] = to_json(checkpoint.model_config);
    header["cumulative_examples"] = checkpoint.cumulative_examples;
    json history = json::array();
    for (const auto& h : checkpoint.history) {
        history.push_back(json{{"corpus", h.corpus}, {"size", h.size}});
    }
    header["history"] = std::move(history);

    json directory = json::array();
    std::uint64_t offset = 0;
    for (const auto& e : checkpoint.params) {
        const std::uint64_t nbytes = e.tensor.size() * sizeof(double);
        directory.push_back(json{{"name", e.name},
                                 {"layer", e.layer},
                                 {"shape", e.tensor.shape},
                                 {"dtype", "f64"},
                                 {"offset", offset},
                                 {"nbytes", nbytes}});
        offset += nbytes;
    }
    header["tensors"] = std::move(directory);
    header["payload_bytes"] = offset;

    const std::string header_text = header.dump();
    std::string blob(kMagic.begin(), kMagic.end());
    put_u64(blob, header_text.size());
    blob += header_text;
    blob.reserve(blob.size() + offset);
    for (const auto& e : checkpoint.params) {
        for (double v : e.tensor.data) {
            put_u64(blob, std::bit_cast<std::uint64_t>(v));
        }
    }
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) {
        throw Error("checkpoint write failed");
    }
}

Checkpoint load_checkpoint(std::istream& in) {
    std::array<char, 8> magic{};
    read_exact(in, magic.data(), magic.size(), "magic");
    if (magic != kMagic) {
        throw FormatError("not a weaver checkpoint (bad magic)");
    }
    std::array<unsigned char, 8> len_bytes{};
    read_exact(in, reinterpret_cast<char*>(len_bytes.data()), 8, "header length");
    const std::uint64_t header_len = get_u64(len_bytes.data());
    if (header_len == 0 || header_len > kMaxHeaderBytes) {
        throw FormatError(fmt::format("implausible header length {}", header_len));
    }
    std::string header_text(header_len, '\0');
    read_exact(in, header_text.data(), header_len, "header");

    json header;
    try {
        header = json::parse(header_text);
    } catch (const json::exception& e) {
        throw FormatError(fmt::format("checkpoint header is not valid JSON: {}", e.what()));
    }
    if (!header.is_object()) {
        throw FormatError("checkpoint header is not a JSON object");
    }
    const auto version = field<std::uint64_t>(header, "format_version");
    if (version != kCheckpointFormatVersion) {
        throw UnsupportedVersionError(fmt::format("unsupported checkpoint format_version {}", version));
    }

    Checkpoint ckpt;
    try {
        ckpt.model_config = model_config_from_json(header.at("model_config"));
        ckpt.model_config.validate();
    } catch (const ConfigError& e) {
        throw FormatError(fmt::format("checkpoint model_config: {}", e.what()));
    } catch (const json::exception& e) {
        throw FormatError(fmt::format("checkpoint model_config: {}", e.what()));
    }
    ckpt.cumulative_examples = field<std::size_t>(header, "cumulative_examples");
    for (const auto& h : field<json>(header, "history")) {
        ckpt.history.push_back(HistoryEntry{field<std::string>(h, "corpus"), field<std::size_t>(h, "size")});
    }

    const auto payload_bytes = field<std::uint64_t>(header, "payload_bytes");
    const json directory = field<json>(header, "tensors");
    if (!directory.is_array()) {
        throw FormatError("checkpoint tensor directory is not an array");
    }

    // Reference layout for this model configuration.
    const ParameterSet layout = init_params(ckpt.model_config);
    if (directory.size() != layout.tensor_count()) {
        throw FormatError(fmt::format("checkpoint lists {} tensors, model expects {}", directory.size(),
                                      layout.tensor_count()));
    }
    if (payload_bytes > layout.parameter_count() * sizeof(double)) {
        throw FormatError(fmt::format("payload_bytes {} too large for the model", payload_bytes));
    }
    std::uint64_t expected_offset = 0;
    std::string payload(payload_bytes, '\0');
    read_exact(in, payload.data(), payload_bytes, "tensor payload");
    if (in.peek() != std::char_traits<char>::eof()) {
        throw FormatError("trailing bytes after checkpoint payload");
    }

    ParameterSet params = layout;
    for (std::size_t i = 0; i < directory.size(); ++i) {
        const json& d = directory[i];
        const auto name = field<std::string>(d, "name");
        const auto layer = field<int>(d, "layer");
        const auto shape = field<std::vector<std::size_t>>(d, "shape");
        const auto dtype = field<std::string>(d, "dtype");
        const auto offset = field<std::uint64_t>(d, "offset");
        const auto nbytes = field<std::uint64_t>(d, "nbytes");
        auto& entry = params.entry(i);
        if (name != entry.name || layer != entry.layer || shape != entry.tensor.shape) {
            throw FormatError(fmt::format("checkpoint tensor {} ('{}') does not match the model layout", i, name));
        }
        const std::size_t width = dtype == "f64" ? 8 : (dtype == "f32" ? 4 : 0);
        if (width == 0) {
            throw FormatError(fmt::format("tensor '{}': unknown dtype '{}'", name, dtype));
        }
        if (offset != expected_offset || nbytes != entry.tensor.size() * width || offset + nbytes > payload_bytes) {
            throw FormatError(fmt::format("tensor '{}': inconsistent offset/size", name));
        }
        const auto* p = reinterpret_cast<const unsigned char*>(payload.data() + offset);
        for (std::size_t k = 0; k < entry.tensor.size(); ++k) {
            if (width == 8) {
                entry.tensor.data[k] = std::bit_cast<double>(get_u64(p + 8 * k));
            } else {
                std::uint32_t bits = 0;
                for (int b = 3; b >= 0; --b) {
                    bits = (bits << 8) | p[4 * k + static_cast<std::size_t>(b)];
                }
                entry.tensor.data[k] = static_cast<double>(std::bit_cast<float>(bits));
            }
        }
        expected_offset += nbytes;
    }
    if (expected_offset != payload_bytes) {
        throw FormatError("payload_bytes disagrees with the tensor directory");
    }
    ckpt.params = std::move(params);
    ckpt.format_version = static_cast<std::uint32_t>(version);
    ckpt.validate();
    return ckpt;
}

void save_checkpoint_file(const Checkpoint& checkpoint, const std::string& path) {
    std::ostringstream out;
    save_checkpoint(checkpoint, out);
    write_file_atomic(path, out.str());
}

Checkpoint load_checkpoint_file(const std::string& path) {
    std::istringstream in(read_file(path));
    return load_checkpoint(in);
}

}  // namespace weaver
