#include "aa/checkpoint.hpp"

#include "aa/digest.hpp"
#include "aa/errors.hpp"
#include "aa/file_util.hpp"

namespace aa::nn {

using nlohmann::json;

namespace {

std::string encode_blob(const Params& params) {
    ByteWriter w;
    for (float v : params.flat()) w.f32(v);
    return w.take();
}

std::filesystem::path blob_path(const std::filesystem::path& header) {
    auto p = header;
    p.replace_extension(".bin");
    return p;
}

}  // namespace

std::string params_digest(const Params& params) { return sha256_hex(encode_blob(params)); }

std::string save_checkpoint(const std::filesystem::path& path, const Params& params, const CheckpointMeta& meta) {
    const std::string blob = encode_blob(params);
    const std::string digest = sha256_hex(blob);
    const auto bin = blob_path(path);
    write_file(bin, blob);
    json header = {
        {"format", "aa-checkpoint"},
        {"version", 1},
        {"architecture", params.architecture()},
        {"param_count", params.size()},
        {"seed", meta.seed},
        {"epoch", meta.epoch},
        {"phase", meta.phase},
        {"optimizer", {{"name", meta.optimizer}, {"steps", meta.optimizer_steps}}},
        {"blob", bin.filename().string()},
        {"blob_encoding", "f32le"},
        {"blob_sha256", digest},
        {"extra", meta.extra},
    };
    write_file(path, header.dump(2) + "\n");
    return digest;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    json header;
    try {
        header = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw DataError("checkpoint " + path.string() + ": " + e.what());
    }
    Checkpoint ck;
    try {
        if (header.at("format") != "aa-checkpoint") throw DataError("checkpoint " + path.string() + ": bad format tag");
        const auto arch = header.at("architecture").get<Architecture>();
        ck.params = Params(arch);
        ck.meta.seed = header.at("seed").get<std::uint64_t>();
        ck.meta.epoch = header.at("epoch").get<int>();
        ck.meta.phase = header.value("phase", "");
        ck.meta.optimizer = header.at("optimizer").value("name", "");
        ck.meta.optimizer_steps = header.at("optimizer").value("steps", std::uint64_t{0});
        ck.meta.extra = header.value("extra", json::object());
        ck.blob_sha256 = header.at("blob_sha256").get<std::string>();
    } catch (const json::exception& e) {
        throw DataError("checkpoint " + path.string() + ": " + e.what());
    }
    const std::string blob = read_file(path.parent_path() / header.at("blob").get<std::string>());
    if (sha256_hex(blob) != ck.blob_sha256)
        throw DataError("checkpoint " + path.string() + ": blob digest mismatch");
    if (blob.size() != 4 * ck.params.size())
        throw DataError("checkpoint " + path.string() + ": blob size does not match architecture");
    ByteReader r(blob);
    for (float& v : ck.params.flat()) v = r.f32();
    return ck;
}

void to_json(json& j, const ConvSpec& s) {
    j = json{{"out_channels", s.out_channels}, {"kernel_size", s.kernel_size}, {"stride", s.stride}, {"pool", s.pool}};
}

void from_json(const json& j, ConvSpec& s) {
    j.at("out_channels").get_to(s.out_channels);
    j.at("kernel_size").get_to(s.kernel_size);
    s.stride = j.value("stride", 1);
    s.pool = j.value("pool", 2);
}

void to_json(json& j, const Architecture& a) {
    j = json{{"input_height", a.input_height},
             {"input_width", a.input_width},
             {"conv_layers", a.conv_layers},
             {"dense_layers", a.dense_layers},
             {"num_classes", a.num_classes}};
}

void from_json(const json& j, Architecture& a) {
    a.input_height = j.value("input_height", 32);
    a.input_width = j.value("input_width", 32);
    a.conv_layers = j.value("conv_layers", std::vector<ConvSpec>{});
    j.at("dense_layers").get_to(a.dense_layers);
    j.at("num_classes").get_to(a.num_classes);
}

}  // namespace aa::nn
