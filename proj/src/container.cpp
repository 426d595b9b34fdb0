#include "mcs/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mcs {

namespace {

template <class T>
void put_le(std::string& out, T value) {
    static_assert(std::is_unsigned_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <class T>
    T get() {
        need(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i)
            v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += sizeof(T);
        return v;
    }

    std::string_view take(std::size_t n) {
        need(n);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw FormatError("truncated MCS1 container");
    }
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

void Container::put(std::string name, Matrix value) {
    for (auto& s : sections_)
        if (s.name == name) {
            s.payload = std::move(value);
            return;
        }
    sections_.push_back({std::move(name), std::move(value)});
}

void Container::put_text(std::string name, std::string value) {
    for (auto& s : sections_)
        if (s.name == name) {
            s.payload = std::move(value);
            return;
        }
    sections_.push_back({std::move(name), std::move(value)});
}

bool Container::has(std::string_view name) const {
    for (const auto& s : sections_)
        if (s.name == name) return true;
    return false;
}

const Container::Section& Container::find(std::string_view name) const {
    for (const auto& s : sections_)
        if (s.name == name) return s;
    throw FormatError("container has no section '" + std::string(name) + "'");
}

const Matrix& Container::matrix(std::string_view name) const {
    const auto& s = find(name);
    if (auto* m = std::get_if<Matrix>(&s.payload)) return *m;
    throw FormatError("section '" + std::string(name) + "' is not a matrix");
}

const std::string& Container::text(std::string_view name) const {
    const auto& s = find(name);
    if (auto* t = std::get_if<std::string>(&s.payload)) return *t;
    throw FormatError("section '" + std::string(name) + "' is not text");
}

std::vector<std::string> Container::names() const {
    std::vector<std::string> out;
    for (const auto& s : sections_) out.push_back(s.name);
    return out;
}

std::string Container::serialize() const {
    std::string out(kMagic);
    put_le<std::uint32_t>(out, kVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(sections_.size()));
    for (const auto& s : sections_) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.name.size()));
        out += s.name;
        if (const auto* m = std::get_if<Matrix>(&s.payload)) {
            out.push_back(0);
            put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m->rows()));
            put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m->cols()));
            for (Eigen::Index i = 0; i < m->size(); ++i) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(m->data()[i]));
        } else {
            const auto& t = std::get<std::string>(s.payload);
            out.push_back(1);
            put_le<std::uint64_t>(out, t.size());
            out += t;
        }
    }
    put_le<std::uint64_t>(out, fnv1a64(out));
    return out;
}

Container Container::parse(std::string_view bytes) {
    if (bytes.size() < kMagic.size() + 8 || bytes.substr(0, kMagic.size()) != kMagic)
        throw FormatError("not an MCS1 container (bad magic)");
    if (bytes.size() < kMagic.size() + 16) throw FormatError("truncated MCS1 container");
    const auto body = bytes.substr(0, bytes.size() - 8);
    Reader tail(bytes.substr(bytes.size() - 8));
    if (tail.get<std::uint64_t>() != fnv1a64(body)) throw FormatError("MCS1 checksum mismatch (corrupt or truncated file)");

    Reader r(body);
    r.take(kMagic.size());
    const auto version = r.get<std::uint32_t>();
    if (version != kVersion) throw FormatError("unsupported MCS1 version " + std::to_string(version));
    const auto count = r.get<std::uint32_t>();
    Container c;
    for (std::uint32_t k = 0; k < count; ++k) {
        const auto len = r.get<std::uint32_t>();
        std::string name(r.take(len));
        const auto kind = static_cast<unsigned char>(r.take(1)[0]);
        if (kind == 0) {
            const auto rows = r.get<std::uint64_t>();
            const auto cols = r.get<std::uint64_t>();
            Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std::bit_cast<double>(r.get<std::uint64_t>());
            c.sections_.push_back({std::move(name), std::move(m)});
        } else if (kind == 1) {
            const auto n = r.get<std::uint64_t>();
            c.sections_.push_back({std::move(name), std::string(r.take(n))});
        } else {
            throw FormatError("unknown MCS1 section kind " + std::to_string(kind));
        }
    }
    if (r.pos() != body.size()) throw FormatError("trailing bytes in MCS1 container");
    return c;
}

void Container::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

Container Container::load(const std::filesystem::path& path) { return parse(read_file(path)); }

void put_parameters(Container& out, const ad::ParameterStore& store, std::string_view prefix) {
    for (int i = 0; i < store.size(); ++i) {
        ad::ParamId id{i};
        out.put(std::string(prefix) + "/" + store.name(id), store.value(id));
    }
}

void get_parameters(const Container& in, ad::ParameterStore& store, std::string_view prefix) {
    for (int i = 0; i < store.size(); ++i) {
        ad::ParamId id{i};
        const auto& m = in.matrix(std::string(prefix) + "/" + store.name(id));
        auto& v = store.value(id);
        if (m.rows() != v.rows() || m.cols() != v.cols())
            throw FormatError("parameter '" + store.name(id) + "' has stored shape " + std::to_string(m.rows()) + "x" +
                              std::to_string(m.cols()) + ", expected " + std::to_string(v.rows()) + "x" + std::to_string(v.cols()));
        v = m;
    }
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UserError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw UserError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace mcs
