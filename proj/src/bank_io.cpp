#include "blendscore/bank_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace blendscore {

namespace {

constexpr char kMagic[8] = {'B', 'S', 'C', 'O', 'L', 'S', '0', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kFlagScores = 1u << 0;
constexpr std::uint32_t kFlagLogLik = 1u << 1;
constexpr std::uint32_t kFlagProxy = 1u << 2;

static_assert(std::endian::native == std::endian::little,
              "bank files are little-endian; big-endian hosts need byte swaps");

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("bank file truncated");
    return v;
}

void write_doubles(std::ostream& out, const double* data, std::size_t count) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 8));
}

void read_doubles(std::istream& in, double* data, std::size_t count) {
    in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * 8));
    if (!in) throw std::runtime_error("bank file truncated");
}

void write_matrix(std::ostream& out, const Matrix& m) {
    write_doubles(out, m.data(), m.rows() * m.cols());
}

Matrix read_matrix(std::istream& in, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    read_doubles(in, m.data(), rows * cols);
    return m;
}

}  // namespace

void save_bank(const std::string& path, const ReferenceBank& bank,
               const BankProvenance& provenance, const ProxyModel* proxy) {
    bank.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_bank: cannot open " + path);

    std::uint32_t flags = 0;
    if (bank.scores) flags |= kFlagScores;
    if (bank.log_likelihoods) flags |= kFlagLogLik;
    if (proxy) flags |= kFlagProxy;

    out.write(kMagic, sizeof(kMagic));
    write_pod(out, kVersion);
    write_pod(out, flags);
    write_pod(out, static_cast<std::uint64_t>(bank.size()));
    write_pod(out, static_cast<std::uint64_t>(bank.dim()));
    write_matrix(out, bank.points);
    if (bank.scores) write_matrix(out, *bank.scores);
    if (bank.log_likelihoods)
        write_doubles(out, bank.log_likelihoods->data(), bank.log_likelihoods->size());

    if (proxy) {
        write_pod(out, static_cast<std::uint32_t>(proxy->kind()));
        write_pod(out, std::uint32_t{0});
        write_pod(out, static_cast<std::uint64_t>(proxy->neighbor_count()));
        write_pod(out, static_cast<std::uint64_t>(proxy->rank()));
        write_matrix(out, proxy->anchors());
        write_matrix(out, proxy->local_means());
        if (proxy->kind() == ProxyKind::Diag) {
            write_matrix(out, proxy->diag_variances());
        } else {
            write_matrix(out, proxy->lr_factors());
            write_matrix(out, proxy->lr_eigenvalues());
            write_matrix(out, proxy->lr_tail());
        }
    }
    if (!out) throw std::runtime_error("save_bank: write failed for " + path);

    nlohmann::json sidecar;
    sidecar["seed"] = provenance.seed;
    sidecar["target_preset"] = provenance.target_preset;
    sidecar["note"] = provenance.note;
    sidecar["n_ref"] = bank.size();
    sidecar["dim"] = bank.dim();
    std::ofstream side(path + ".json", std::ios::trunc);
    side << sidecar.dump(2) << "\n";
}

LoadedBank load_bank(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_bank: cannot open " + path);

    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("load_bank: bad magic in " + path);
    const auto version = read_pod<std::uint32_t>(in);
    if (version != kVersion) throw std::runtime_error("load_bank: unsupported version");
    const auto flags = read_pod<std::uint32_t>(in);
    const auto n = static_cast<std::size_t>(read_pod<std::uint64_t>(in));
    const auto d = static_cast<std::size_t>(read_pod<std::uint64_t>(in));

    LoadedBank out;
    out.bank.points = read_matrix(in, n, d);
    if (flags & kFlagScores) out.bank.scores = read_matrix(in, n, d);
    if (flags & kFlagLogLik) {
        Vec ll(n);
        read_doubles(in, ll.data(), n);
        out.bank.log_likelihoods = std::move(ll);
    }
    if (flags & kFlagProxy) {
        const auto kind = static_cast<ProxyKind>(read_pod<std::uint32_t>(in));
        read_pod<std::uint32_t>(in);  // reserved
        const auto k = static_cast<std::size_t>(read_pod<std::uint64_t>(in));
        const auto rank = static_cast<std::size_t>(read_pod<std::uint64_t>(in));
        Matrix anchors = read_matrix(in, n, d);
        Matrix mu = read_matrix(in, n, d);
        if (kind == ProxyKind::Diag) {
            Matrix diag = read_matrix(in, n, d);
            out.proxy = proxy_from_parts(kind, k, std::move(anchors), std::move(mu),
                                         std::move(diag), Matrix{}, Matrix{}, Matrix{});
        } else {
            Matrix factors = read_matrix(in, n, d * rank);
            Matrix lambda = read_matrix(in, n, rank);
            Matrix tail = read_matrix(in, n, d);
            out.proxy = proxy_from_parts(kind, k, std::move(anchors), std::move(mu), Matrix{},
                                         std::move(factors), std::move(lambda), std::move(tail));
        }
    }

    std::ifstream side(path + ".json");
    if (side) {
        nlohmann::json sidecar;
        side >> sidecar;
        out.provenance.seed = sidecar.value("seed", std::uint64_t{0});
        out.provenance.target_preset = sidecar.value("target_preset", std::string{});
        out.provenance.note = sidecar.value("note", std::string{});
    }
    return out;
}

void save_samples(const std::string& path, const Matrix& samples,
                  const BankProvenance& provenance) {
    ReferenceBank bank;
    bank.points = samples;
    save_bank(path, bank, provenance);
}

}  // namespace blendscore
