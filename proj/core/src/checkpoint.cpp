#include "spanlab/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace spanlab {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts are unsupported");

constexpr std::uint32_t kMagic = 0x53504C42;  // "SPLB"
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kSectionBackbone = 0x424B424E;  // "BKBN"
constexpr std::uint32_t kSectionAdapters = 0x41445054;  // "ADPT"

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::istream& in, const std::string& path) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw IoError("truncated checkpoint: " + path);
    return v;
}

std::uint64_t read_u64(std::istream& in, const std::string& path) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw IoError("truncated checkpoint: " + path);
    return v;
}

void write_blob(std::ostream& out, const std::vector<double>& data) {
    write_u64(out, data.size());
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
}

void read_blob_into(std::istream& in, std::vector<double>& dst, const std::string& path) {
    const std::uint64_t n = read_u64(in, path);
    if (n != dst.size())
        throw IoError("checkpoint blob of " + std::to_string(n) + " values where " +
                      std::to_string(dst.size()) + " expected: " + path);
    in.read(reinterpret_cast<char*>(dst.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw IoError("truncated checkpoint: " + path);
}

void write_config(std::ostream& out, const ModelConfig& cfg) {
    write_u32(out, static_cast<std::uint32_t>(cfg.vocab_size));
    write_u32(out, static_cast<std::uint32_t>(cfg.d_model));
    write_u32(out, static_cast<std::uint32_t>(cfg.n_heads));
    write_u32(out, static_cast<std::uint32_t>(cfg.d_head));
    write_u32(out, static_cast<std::uint32_t>(cfg.n_layers));
    write_u32(out, static_cast<std::uint32_t>(cfg.max_seq_len));
    write_u32(out, static_cast<std::uint32_t>(cfg.ff_width));
    write_u32(out, static_cast<std::uint32_t>(cfg.positional));
    write_u64(out, std::bit_cast<std::uint64_t>(cfg.ln_eps));
}

ModelConfig read_config(std::istream& in, const std::string& path) {
    ModelConfig cfg;
    cfg.vocab_size = static_cast<int>(read_u32(in, path));
    cfg.d_model = static_cast<int>(read_u32(in, path));
    cfg.n_heads = static_cast<int>(read_u32(in, path));
    cfg.d_head = static_cast<int>(read_u32(in, path));
    cfg.n_layers = static_cast<int>(read_u32(in, path));
    cfg.max_seq_len = static_cast<int>(read_u32(in, path));
    cfg.ff_width = static_cast<int>(read_u32(in, path));
    cfg.positional = static_cast<PositionalScheme>(read_u32(in, path));
    cfg.ln_eps = std::bit_cast<double>(read_u64(in, path));
    cfg.validate();
    return cfg;
}

}  // namespace

void save_checkpoint(const std::string& path, const BackboneWeights& backbone,
                     const QuadaParams* adapters) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    write_u32(out, kMagic);
    write_u32(out, kVersion);
    write_config(out, backbone.config);
    write_u32(out, kSectionBackbone);
    for (const auto& p : backbone.all_params()) write_blob(out, p.data());
    if (adapters != nullptr && !adapters->empty()) {
        write_u32(out, kSectionAdapters);
        write_u32(out, static_cast<std::uint32_t>(adapters->bottleneck_width));
        write_u32(out, static_cast<std::uint32_t>(
                           adapters->query[0][0].act == BottleneckMlp::Activation::Linear ? 0
                                                                                          : 1));
        for (const auto& p : adapters->all_params()) write_blob(out, p.data());
    }
    out.flush();
    if (!out) throw IoError("write failure on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    if (read_u32(in, path) != kMagic) throw IoError("bad checkpoint magic: " + path);
    const std::uint32_t version = read_u32(in, path);
    if (version != kVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
    const ModelConfig cfg = read_config(in, path);

    if (read_u32(in, path) != kSectionBackbone)
        throw IoError("checkpoint missing backbone section: " + path);
    Checkpoint ck{BackboneWeights::init(cfg, 0), std::nullopt};
    for (auto& p : ck.backbone.all_params())
        read_blob_into(in, const_cast<Tensor&>(p).raw(), path);

    std::uint32_t tag = 0;
    in.read(reinterpret_cast<char*>(&tag), sizeof tag);
    if (in && tag == kSectionAdapters) {
        const int r = static_cast<int>(read_u32(in, path));
        const std::uint32_t act_tag = read_u32(in, path);
        QuadaParams qp = QuadaParams::zeros(cfg, r);
        if (act_tag == 1)
            for (auto* side : {&qp.query, &qp.value})
                for (auto& layer : *side)
                    for (auto& m : layer) m.act = BottleneckMlp::Activation::Gelu;
        for (auto& p : qp.all_params()) read_blob_into(in, const_cast<Tensor&>(p).raw(), path);
        ck.adapters = std::move(qp);
    }
    return ck;
}

}  // namespace spanlab
