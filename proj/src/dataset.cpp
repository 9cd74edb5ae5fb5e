#include "olts/dataset.hpp"

#include <json.hpp>

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little, "dataset files are written in host order");

namespace olts::dataset {

namespace {

template <typename T>
void put(std::vector<char>& out, T v) {
    const auto at = out.size();
    out.resize(at + sizeof v);
    std::memcpy(out.data() + at, &v, sizeof v);
}

void put_doubles(std::vector<char>& out, const std::vector<double>& v) {
    const auto at = out.size();
    out.resize(at + v.size() * sizeof(double));
    if (!v.empty()) std::memcpy(out.data() + at, v.data(), v.size() * sizeof(double));
}

class Cursor {
public:
    Cursor(const char* p, std::size_t n) : p_(p), end_(p + n) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, p_, sizeof v);
        p_ += sizeof v;
        return v;
    }

    std::vector<double> doubles(std::uint64_t n) {
        if (n > static_cast<std::uint64_t>(end_ - p_) / sizeof(double)) throw DatasetError("record truncated");
        std::vector<double> v(n);
        if (n > 0) std::memcpy(v.data(), p_, n * sizeof(double));
        p_ += n * sizeof(double);
        return v;
    }

    bool done() const { return p_ == end_; }

private:
    void need(std::size_t n) const {
        if (static_cast<std::size_t>(end_ - p_) < n) throw DatasetError("record truncated");
    }
    const char* p_;
    const char* end_;
};

nlohmann::json to_json(const Manifest& m) {
    return {{"format", "MTRJ"},
            {"version", kVersion},
            {"file", kDataFile},
            {"experiment", m.experiment},
            {"kind", m.kind},
            {"param_names", m.param_names},
            {"param_space", m.param_space},
            {"strategy", m.strategy},
            {"count", m.count},
            {"field_shape", m.field_shape},
            {"seed", m.seed},
            {"stride", m.stride}};
}

}  // namespace

Writer::Writer(const std::filesystem::path& dir, Manifest manifest) : dir_(dir), manifest_(std::move(manifest)) {
    std::filesystem::create_directories(dir_);
    const auto path = dir_ / kDataFile;
    file_ = std::fopen(path.c_str(), "wb");
    if (file_ == nullptr) throw DatasetError("cannot write " + path.string());
    std::vector<char> head;
    head.insert(head.end(), {'M', 'T', 'R', 'J'});
    put<std::uint32_t>(head, kVersion);
    put<std::uint32_t>(head, 0);
    std::fwrite(head.data(), 1, head.size(), file_);
}

Writer::~Writer() {
    if (file_ != nullptr) std::fclose(file_);
}

void Writer::append(const Record& rec) {
    if (file_ == nullptr) throw DatasetError("dataset already closed");
    if (rec.fields.size() != std::uint64_t{rec.t_count} * rec.field_dim)
        throw DatasetError("record field count does not match t_count * field_dim");
    std::vector<char> body;
    put<std::uint64_t>(body, rec.sim_id);
    put<std::uint32_t>(body, static_cast<std::uint32_t>(rec.params.size()));
    put_doubles(body, rec.params);
    put<std::uint32_t>(body, rec.t_count);
    put<std::uint32_t>(body, rec.field_dim);
    put_doubles(body, rec.fields);
    if (body.size() > 0xFFFFFFFFull) throw DatasetError("record too large");
    std::vector<char> len;
    put<std::uint32_t>(len, static_cast<std::uint32_t>(body.size()));
    if (std::fwrite(len.data(), 1, len.size(), file_) != len.size() ||
        std::fwrite(body.data(), 1, body.size(), file_) != body.size())
        throw DatasetError("write failed");
    ++written_;
}

void Writer::close() {
    if (file_ == nullptr) return;
    std::vector<char> count;
    put<std::uint32_t>(count, static_cast<std::uint32_t>(written_));
    std::fseek(file_, 8, SEEK_SET);
    std::fwrite(count.data(), 1, count.size(), file_);
    const bool ok = std::fflush(file_) == 0;
    std::fclose(file_);
    file_ = nullptr;
    if (!ok) throw DatasetError("write failed");
    manifest_.count = written_;
    std::ofstream m(dir_ / kManifestFile, std::ios::trunc);
    m << to_json(manifest_).dump(2) << '\n';
    if (!m) throw DatasetError("cannot write manifest");
}

Manifest read_manifest(const std::filesystem::path& dir) {
    std::ifstream f(dir / kManifestFile);
    if (!f) throw DatasetError("no manifest in " + dir.string());
    try {
        const auto j = nlohmann::json::parse(f);
        if (j.at("format") != "MTRJ" || j.at("version") != kVersion) throw DatasetError("unsupported dataset format");
        Manifest m;
        m.experiment = j.at("experiment");
        m.kind = j.at("kind");
        m.param_names = j.at("param_names").get<std::vector<std::string>>();
        m.param_space = j.at("param_space").get<std::vector<std::string>>();
        m.strategy = j.at("strategy");
        m.count = j.at("count");
        m.field_shape = j.at("field_shape").get<std::vector<std::uint32_t>>();
        m.seed = j.at("seed");
        m.stride = j.at("stride");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DatasetError(std::string("bad manifest: ") + e.what());
    }
}

Dataset read(const std::filesystem::path& dir) {
    Dataset ds;
    ds.manifest = read_manifest(dir);
    const auto path = dir / kDataFile;
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DatasetError("cannot read " + path.string());
    const std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Cursor c(bytes.data(), bytes.size());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "MTRJ", 4) != 0) throw DatasetError("bad dataset magic");
    c.get<std::uint32_t>();
    if (c.get<std::uint32_t>() != kVersion) throw DatasetError("unsupported dataset version");
    const auto count = c.get<std::uint32_t>();
    if (count != ds.manifest.count) throw DatasetError("manifest count disagrees with the data file");
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = c.get<std::uint32_t>();
        Record r;
        r.sim_id = c.get<std::uint64_t>();
        r.params = c.doubles(c.get<std::uint32_t>());
        r.t_count = c.get<std::uint32_t>();
        r.field_dim = c.get<std::uint32_t>();
        r.fields = c.doubles(std::uint64_t{r.t_count} * r.field_dim);
        const std::uint64_t expect = 8 + 4 + 8 * r.params.size() + 4 + 4 + 8 * r.fields.size();
        if (expect != len) throw DatasetError("record length prefix disagrees with its contents");
        ds.records.push_back(std::move(r));
    }
    if (!c.done()) throw DatasetError("trailing bytes after the last record");
    return ds;
}

Record subsample(const Record& rec, std::uint32_t every_k, std::uint32_t stride) {
    if (every_k == 0) throw std::invalid_argument("every_k must be at least 1");
    Record out = rec;
    out.fields.clear();
    out.t_count = 0;
    for (std::uint32_t r = 0; r < rec.t_count; ++r) {
        if ((std::uint64_t{r} * stride) % every_k != 0) continue;
        out.fields.insert(out.fields.end(), rec.fields.begin() + std::uint64_t{r} * rec.field_dim,
                          rec.fields.begin() + std::uint64_t{r + 1} * rec.field_dim);
        ++out.t_count;
    }
    return out;
}

}  // namespace olts::dataset
