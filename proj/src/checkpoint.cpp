#include "mdtrack/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "mdtrack/config.hpp"

namespace mdtrack {

std::uint32_t crc32(const std::uint8_t* data, std::size_t n) {
    static std::uint32_t table[256];
    static bool init = false;
    if (!init) {
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            table[i] = c;
        }
        init = true;
    }
    std::uint32_t c = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_entry_bytes(std::vector<std::uint8_t>& out, const std::string& name,
                     const std::uint8_t* data, std::size_t n) {
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(2);  // dtype: raw bytes
    out.push_back(1);  // rank
    put_u32(out, static_cast<std::uint32_t>(n));
    out.insert(out.end(), data, data + n);
}

void put_entry_tensor(std::vector<std::uint8_t>& out, const std::string& name, const Tensor& t) {
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(static_cast<std::uint8_t>(t.dtype()));
    out.push_back(static_cast<std::uint8_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u32(out, static_cast<std::uint32_t>(t.dim(i)));
    const auto* raw = static_cast<const std::uint8_t*>(t.raw());
    out.insert(out.end(), raw, raw + t.byte_size());
}

struct Entry {
    std::string name;
    std::uint8_t dtype = 2;
    std::vector<int> dims;
    std::vector<std::uint8_t> bytes;  // payload

    Tensor as_tensor() const {
        if (dtype > 1) throw FormatError("entry '" + name + "' is not a tensor");
        Tensor t = Tensor::zeros(dims, static_cast<Dtype>(dtype));
        if (t.byte_size() != bytes.size())
            throw FormatError("entry '" + name + "' payload size mismatch");
        std::memcpy(t.raw(), bytes.data(), bytes.size());
        return t;
    }
};

std::vector<Entry> read_container(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open checkpoint " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
    if (buf.size() < 14) throw FormatError("checkpoint too short", 0);
    if (std::memcmp(buf.data(), "MDCK", 4) != 0)
        throw FormatError("bad checkpoint magic (expected MDCK)", 0);

    const std::uint32_t stored_crc = static_cast<std::uint32_t>(buf[buf.size() - 4]) |
                                     (static_cast<std::uint32_t>(buf[buf.size() - 3]) << 8) |
                                     (static_cast<std::uint32_t>(buf[buf.size() - 2]) << 16) |
                                     (static_cast<std::uint32_t>(buf[buf.size() - 1]) << 24);
    const std::uint32_t actual = crc32(buf.data(), buf.size() - 4);
    if (stored_crc != actual)
        throw FormatError("checksum mismatch", static_cast<long long>(buf.size() - 4));

    std::size_t pos = 4;
    auto need = [&](std::size_t n) {
        if (pos + n > buf.size() - 4)
            throw FormatError("truncated checkpoint entry", static_cast<long long>(pos));
    };
    auto get_u16 = [&]() {
        need(2);
        const std::uint16_t v =
            static_cast<std::uint16_t>(buf[pos] | (static_cast<std::uint16_t>(buf[pos + 1]) << 8));
        pos += 2;
        return v;
    };
    auto get_u32 = [&]() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    };

    const std::uint16_t version = get_u16();
    if (version != 1)
        throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
    const std::uint32_t count = get_u32();

    std::vector<Entry> entries;
    for (std::uint32_t i = 0; i < count; ++i) {
        Entry e;
        const std::uint16_t name_len = get_u16();
        need(name_len);
        e.name.assign(reinterpret_cast<const char*>(buf.data() + pos), name_len);
        pos += name_len;
        need(2);
        e.dtype = buf[pos++];
        const std::uint8_t rank = buf[pos++];
        if (e.dtype > 2) throw FormatError("unknown entry dtype", static_cast<long long>(pos - 2));
        std::size_t payload = e.dtype == 2 ? 1 : dtype_size(static_cast<Dtype>(e.dtype));
        for (int r = 0; r < rank; ++r) {
            const std::uint32_t d = get_u32();
            e.dims.push_back(static_cast<int>(d));
            payload *= d;
        }
        need(payload);
        e.bytes.assign(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                       buf.begin() + static_cast<std::ptrdiff_t>(pos + payload));
        pos += payload;
        entries.push_back(std::move(e));
    }
    if (pos != buf.size() - 4)
        throw FormatError("trailing bytes after the last entry", static_cast<long long>(pos));
    return entries;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const AdamW* opt,
                     std::int64_t step) {
    std::vector<std::uint8_t> body;
    std::uint32_t count = 0;

    const std::string cfg_text = model_config_to_text(model.cfg());
    put_entry_bytes(body, "__config__", reinterpret_cast<const std::uint8_t*>(cfg_text.data()),
                    cfg_text.size());
    ++count;

    std::uint8_t step_bytes[8];
    for (int i = 0; i < 8; ++i)
        step_bytes[i] = static_cast<std::uint8_t>((static_cast<std::uint64_t>(step) >> (8 * i)) & 0xFF);
    put_entry_bytes(body, "__step__", step_bytes, 8);
    ++count;

    for (const Param* p : model.params().all()) {
        put_entry_tensor(body, p->name, p->value);
        ++count;
    }
    if (opt) {
        for (const auto& slot : const_cast<AdamW*>(opt)->slots()) {
            put_entry_tensor(body, "__opt_m__." + slot.param->name, slot.m);
            ++count;
            put_entry_tensor(body, "__opt_v__." + slot.param->name, slot.v);
            ++count;
        }
    }

    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'M', 'D', 'C', 'K'});
    put_u16(out, 1);
    put_u32(out, count);
    out.insert(out.end(), body.begin(), body.end());
    put_u32(out, crc32(out.data(), out.size()));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot write checkpoint " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw FormatError("short write to " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::vector<Entry> entries = read_container(path);

    const Entry* cfg_entry = nullptr;
    for (const Entry& e : entries)
        if (e.name == "__config__") cfg_entry = &e;
    if (!cfg_entry) throw FormatError(path + ": missing __config__ entry");
    const std::string cfg_text(reinterpret_cast<const char*>(cfg_entry->bytes.data()),
                               cfg_entry->bytes.size());

    LoadedCheckpoint out;
    out.model = std::make_unique<Model>(model_config_from_text(cfg_text), /*seed=*/0);

    std::size_t used = 1;
    for (const Entry& e : entries) {
        if (e.name == "__config__") continue;
        if (e.name == "__step__") {
            if (e.bytes.size() != 8) throw FormatError("__step__ entry must hold 8 bytes");
            std::uint64_t v = 0;
            for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(e.bytes[static_cast<std::size_t>(i)]) << (8 * i);
            out.step = static_cast<std::int64_t>(v);
            ++used;
            continue;
        }
        if (e.name.rfind("__opt_m__.", 0) == 0 || e.name.rfind("__opt_v__.", 0) == 0) {
            const bool is_m = e.name[6] == 'm';
            const std::string pname = e.name.substr(10);
            auto it = std::find_if(out.moments.begin(), out.moments.end(),
                                   [&](const auto& kv) { return kv.first == pname; });
            if (it == out.moments.end()) {
                out.moments.push_back({pname, {Tensor(), Tensor()}});
                it = out.moments.end() - 1;
            }
            (is_m ? it->second.first : it->second.second) = e.as_tensor();
            out.has_optimizer = true;
            ++used;
            continue;
        }
        Param* p = out.model->params().find(e.name);
        if (!p) throw FormatError(path + ": unknown tensor '" + e.name + "'");
        Tensor t = e.as_tensor();
        if (t.shape() != p->value.shape() || t.dtype() != p->value.dtype())
            throw FormatError(path + ": tensor '" + e.name + "' shape/dtype mismatch");
        p->value = std::move(t);
        ++used;
    }
    if (used != entries.size()) throw FormatError(path + ": duplicate entries");

    for (const Param* p : out.model->params().all()) {
        bool found = false;
        for (const Entry& e : entries)
            if (e.name == p->name) found = true;
        if (!found) throw FormatError(path + ": missing tensor '" + p->name + "'");
    }
    return out;
}

void restore_optimizer(AdamW& opt, const LoadedCheckpoint& ck) {
    opt.set_step_count(ck.step);
    for (auto& slot : opt.slots()) {
        auto it = std::find_if(ck.moments.begin(), ck.moments.end(),
                               [&](const auto& kv) { return kv.first == slot.param->name; });
        if (it == ck.moments.end() || !it->second.first.defined() || !it->second.second.defined())
            throw FormatError("checkpoint lacks optimizer moments for " + slot.param->name);
        slot.m = it->second.first.clone();
        slot.v = it->second.second.clone();
    }
}

}  // namespace mdtrack
