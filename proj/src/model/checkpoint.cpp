#include "msbwe/checkpoint.hpp"

#include <cstring>
#include <set>

#include "msbwe/error.hpp"
#include "msbwe/io.hpp"

namespace msbwe {

namespace {

constexpr const char* kMagic = "MSBWECKPT";

std::string next_line(const std::string& bytes, std::size_t& pos, const std::string& origin, const char* what) {
    const std::size_t nl = bytes.find('\n', pos);
    if (nl == std::string::npos || nl - pos > 64)
        throw CorruptCheckpoint(origin + ": missing " + what + " line at offset " + std::to_string(pos));
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
}

std::uint64_t parse_count(const std::string& s, const std::string& origin, const char* what) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos || s.size() > 18)
        throw CorruptCheckpoint(origin + ": malformed " + what + " '" + s + "'");
    return std::stoull(s);
}

}  // namespace

const TensorRecord* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return &t;
    return nullptr;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    nlohmann::json manifest = nlohmann::json::array();
    std::set<std::string> names;
    std::size_t offset = 0;
    for (const auto& t : ckpt.tensors) {
        if (!names.insert(t.name).second) throw InvalidArgument("duplicate tensor name '" + t.name + "'");
        if (ad::shape_size(t.shape) != t.data.size())
            throw InvalidArgument("tensor '" + t.name + "' has " + std::to_string(t.data.size()) +
                                  " values for shape " + ad::shape_string(t.shape));
        manifest.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"count", t.data.size()}});
        offset += t.data.size();
    }
    const nlohmann::json header = {
        {"config", ckpt.config}, {"step", ckpt.step}, {"state", ckpt.state}, {"tensors", manifest}};
    const std::string text = header.dump();

    std::string out = std::string(kMagic) + "\n" + std::to_string(kCheckpointVersion) + "\n" +
                      std::to_string(text.size()) + "\n" + text + "\n";
    const std::size_t base = out.size();
    out.resize(base + offset * sizeof(float));
    std::size_t at = base;
    for (const auto& t : ckpt.tensors) {
        std::memcpy(out.data() + at, t.data.data(), t.data.size() * sizeof(float));
        at += t.data.size() * sizeof(float);
    }
    return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin) {
    std::size_t pos = 0;
    if (next_line(bytes, pos, origin, "magic") != kMagic) throw CorruptCheckpoint(origin + ": not a checkpoint file");
    const auto version = parse_count(next_line(bytes, pos, origin, "version"), origin, "version");
    if (version != static_cast<std::uint64_t>(kCheckpointVersion))
        throw CorruptCheckpoint(origin + ": unsupported checkpoint version " + std::to_string(version));
    const auto header_len = parse_count(next_line(bytes, pos, origin, "header size"), origin, "header size");
    if (pos + header_len + 1 > bytes.size())
        throw CorruptCheckpoint(origin + ": truncated header at offset " + std::to_string(pos));
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(pos, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw CorruptCheckpoint(origin + ": header is not valid JSON: " + e.what());
    }
    pos += header_len;
    if (bytes[pos] != '\n') throw CorruptCheckpoint(origin + ": header terminator missing at offset " + std::to_string(pos));
    ++pos;

    Checkpoint ckpt;
    std::size_t expected_floats = 0;
    try {
        ckpt.config = header.at("config");
        ckpt.step = header.at("step").get<std::uint64_t>();
        ckpt.state = header.at("state");
        std::set<std::string> names;
        for (const auto& entry : header.at("tensors")) {
            TensorRecord t;
            t.name = entry.at("name").get<std::string>();
            t.shape = entry.at("shape").get<ad::Shape>();
            const auto offset = entry.at("offset").get<std::size_t>();
            const auto count = entry.at("count").get<std::size_t>();
            if (!names.insert(t.name).second) throw CorruptCheckpoint(origin + ": duplicate tensor '" + t.name + "'");
            if (count != ad::shape_size(t.shape) || offset != expected_floats)
                throw CorruptCheckpoint(origin + ": inconsistent manifest entry for '" + t.name + "'");
            expected_floats += count;
            ckpt.tensors.push_back(std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw CorruptCheckpoint(origin + ": malformed header: " + e.what());
    }
    const std::size_t payload = bytes.size() - pos;
    if (payload != expected_floats * sizeof(float))
        throw CorruptCheckpoint(origin + ": payload is " + std::to_string(payload) + " bytes, manifest needs " +
                                std::to_string(expected_floats * sizeof(float)));
    for (auto& t : ckpt.tensors) {
        t.data.resize(ad::shape_size(t.shape));
        std::memcpy(t.data.data(), bytes.data() + pos, t.data.size() * sizeof(float));
        pos += t.data.size() * sizeof(float);
    }
    return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    const std::string bytes = serialize_checkpoint(ckpt);
    io::atomic_write(path, [&](std::ostream& os) { os.write(bytes.data(), static_cast<std::streamsize>(bytes.size())); });
}

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(io::read_file(path), path); }

template <typename T>
void export_params(const model::ParamList<T>& params, Checkpoint& ckpt) {
    for (const auto& p : params) {
        TensorRecord t{p.name, p.tensor.shape(), {}};
        t.data.assign(p.tensor.data().begin(), p.tensor.data().end());
        ckpt.tensors.push_back(std::move(t));
    }
}

template <typename T>
void import_params(const Checkpoint& ckpt, const model::ParamList<T>& params) {
    for (const auto& p : params) {
        const TensorRecord* t = ckpt.find(p.name);
        if (!t) throw ConfigMismatch("checkpoint has no tensor '" + p.name + "'");
        if (t->shape != p.tensor.shape())
            throw ConfigMismatch("tensor '" + p.name + "' has shape " + ad::shape_string(t->shape) +
                                 " in the checkpoint, expected " + ad::shape_string(p.tensor.shape()));
        auto dst = ad::Tensor<T>(p.tensor).mutable_data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(t->data[i]);
    }
}

void require_model_config(const Checkpoint& ckpt, const model::CascadeConfig& cfg) {
    if (!ckpt.config.contains("model")) throw ConfigMismatch("checkpoint has no model configuration");
    const auto expected = model::to_json(cfg);
    if (ckpt.config.at("model") != expected)
        throw ConfigMismatch("checkpoint model configuration " + ckpt.config.at("model").dump() +
                             " does not match the requested " + expected.dump());
}

Checkpoint model_checkpoint(const model::MsBwe<float>& m, std::uint64_t step) {
    Checkpoint ckpt;
    ckpt.config["model"] = model::to_json(m.config());
    ckpt.step = step;
    export_params(m.parameters(), ckpt);
    return ckpt;
}

std::unique_ptr<model::MsBwe<float>> model_from_checkpoint(const Checkpoint& ckpt) {
    if (!ckpt.config.contains("model")) throw ConfigMismatch("checkpoint has no model configuration");
    model::CascadeConfig cfg;
    try {
        cfg = model::cascade_from_json(ckpt.config.at("model"));
    } catch (const InvalidArgument& e) {
        throw CorruptCheckpoint(std::string("checkpoint model configuration is invalid: ") + e.what());
    }
    auto m = std::make_unique<model::MsBwe<float>>(cfg);
    import_params(ckpt, m->parameters());
    return m;
}

template void export_params(const model::ParamList<float>&, Checkpoint&);
template void export_params(const model::ParamList<double>&, Checkpoint&);
template void import_params(const Checkpoint&, const model::ParamList<float>&);
template void import_params(const Checkpoint&, const model::ParamList<double>&);

}  // namespace msbwe
