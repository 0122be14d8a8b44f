#include <cstring>
#include <fstream>
#include <sstream>

#include "otlm/model.hpp"

namespace otlm {

namespace {

constexpr char kMagic[4] = {'O', 'T', 'L', 'M'};

void write_u32(std::ostream& out, std::uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
}

void write_f32(std::ostream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(out, bits);
}

void write_string(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) fail(std::string("checkpoint truncated while reading ") + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

float read_f32(std::istream& in, const char* what) {
    const std::uint32_t bits = read_u32(in, what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

std::string read_string(std::istream& in, const char* what) {
    const std::uint32_t len = read_u32(in, what);
    std::string s(len, '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    if (!in) fail(std::string("checkpoint truncated while reading ") + what);
    return s;
}

ModelWeights skeleton(const ModelConfig& cfg) {
    Rng rng(0);
    return ModelWeights::init(cfg, rng, 0.0); // zero stddev: shapes only
}

} // namespace

void save_checkpoint(ModelWeights& weights, const std::string& path,
                     const std::vector<std::string>* vocab_tokens, bool vocab_lowercase) {
    weights.config.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail("cannot write checkpoint: " + path);

    out.write(kMagic, 4);
    write_u32(out, kCheckpointVersion);

    KvMap kv = weights.config.to_kv();
    if (vocab_tokens) {
        std::string joined;
        for (const auto& tok : *vocab_tokens) {
            if (tok.find_first_of(" \t\n\r") != std::string::npos)
                fail("vocab token contains whitespace: \"" + tok + "\"");
            if (!joined.empty()) joined += ' ';
            joined += tok;
        }
        kv["vocab_tokens"] = joined;
        kv["vocab_lowercase"] = vocab_lowercase ? "true" : "false";
    }
    write_string(out, serialize_kv(kv));

    std::uint32_t count = 0;
    weights.for_each_param([&](const std::string&, Tensor&) { ++count; });
    write_u32(out, count);

    weights.for_each_param([&](const std::string& name, Tensor& t) {
        write_string(out, name);
        write_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) write_u32(out, static_cast<std::uint32_t>(d));
        for (double v : t.values()) write_f32(out, static_cast<float>(v));
    });

    if (!out) fail("write failure while saving checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot read checkpoint: " + path);

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        fail("not a checkpoint file (bad magic): " + path);
    const std::uint32_t version = read_u32(in, "version");
    if (version != kCheckpointVersion)
        fail("unsupported checkpoint version " + std::to_string(version) + " (expected " +
             std::to_string(kCheckpointVersion) + ")");

    const std::string config_text = read_string(in, "config");
    KvMap kv = parse_kv_text(config_text);
    std::vector<std::string> allowed = ModelConfig::keys();
    allowed.push_back("vocab_tokens");
    allowed.push_back("vocab_lowercase");
    reject_unknown_keys(kv, allowed);

    Checkpoint ckpt;
    ModelConfig cfg = ModelConfig::from_kv(kv);
    cfg.validate();
    if (auto it = kv.find("vocab_tokens"); it != kv.end() && !it->second.empty()) {
        std::istringstream toks(it->second);
        std::string tok;
        while (toks >> tok) ckpt.vocab_tokens.push_back(tok);
    }
    ckpt.vocab_lowercase = kv_bool(kv, "vocab_lowercase", false);

    ckpt.weights = skeleton(cfg);
    const std::uint32_t count = read_u32(in, "tensor count");
    std::uint32_t expected = 0;
    ckpt.weights.for_each_param([&](const std::string&, Tensor&) { ++expected; });
    if (count != expected)
        fail("checkpoint has " + std::to_string(count) + " tensors, config implies " +
             std::to_string(expected));

    ckpt.weights.for_each_param([&](const std::string& name, Tensor& t) {
        const std::string got_name = read_string(in, "tensor name");
        if (got_name != name)
            fail("checkpoint tensor \"" + got_name + "\" where \"" + name + "\" was expected");
        const std::uint32_t rank = read_u32(in, "tensor rank");
        if (rank != t.rank())
            fail("tensor \"" + name + "\": rank " + std::to_string(rank) + " does not match config rank " +
                 std::to_string(t.rank()));
        for (std::size_t d = 0; d < rank; ++d) {
            const std::uint32_t dim = read_u32(in, "tensor dim");
            if (dim != t.dim(d))
                fail("tensor \"" + name + "\": dim " + std::to_string(d) + " is " + std::to_string(dim) +
                     ", config requires " + std::to_string(t.dim(d)));
        }
        for (double& v : t.values()) v = static_cast<double>(read_f32(in, "tensor values"));
    });

    return ckpt;
}

} // namespace otlm
