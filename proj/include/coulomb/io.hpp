#pragma once

// Text formats. Every file starts with a schema string in row 1. Doubles are
// written in shortest round-trip form so that parsing reproduces them
// bit-for-bit.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "rng.hpp"
#include "sampler.hpp"
#include "system.hpp"

namespace coulomb {

inline constexpr std::string_view snapshot_schema = "coulomb-snapshot v1";
inline constexpr std::string_view checkpoint_schema = "coulomb-checkpoint v1";
inline constexpr std::string_view trace_schema = "coulomb-trace v1";

inline std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, p);
}

inline double parse_double(std::string_view s) {
    double v = 0.0;
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) throw IoError("malformed number: '" + std::string(s) + "'");
    return v;
}

inline std::uint64_t parse_u64(std::string_view s) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) throw IoError("malformed integer: '" + std::string(s) + "'");
    return v;
}

inline std::vector<std::string> split_csv(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto comma = line.find(',', start);
        out.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
    return out;
}

class LineReader {
public:
    LineReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}
    std::string next() {
        std::string line;
        if (!std::getline(in_, line)) throw IoError(source_ + ": unexpected end of file after line " + std::to_string(line_));
        ++line_;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
    }
    bool next(std::string& line) {
        if (!std::getline(in_, line)) return false;
        ++line_;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return true;
    }
    void expect(std::string_view text) {
        std::string line = next();
        if (line != text) throw IoError(source_ + ":" + std::to_string(line_) + ": expected '" + std::string(text) + "'");
    }
    IoError error(const std::string& what) const { return IoError(source_ + ":" + std::to_string(line_) + ": " + what); }

private:
    std::istream& in_;
    std::string source_;
    std::size_t line_ = 0;
};

struct SnapshotMeta {
    int dimension = 3;
    Domain domain = Domain::torus;
    std::uint64_t seed = 0;
    std::uint64_t sweep = 0;
};

struct Snapshot {
    SnapshotMeta meta;
    std::vector<Vec3> positions;
};

inline void write_snapshot(std::ostream& out, std::span<const Vec3> xs, const SnapshotMeta& meta) {
    out << snapshot_schema << '\n' << "d,N,domain,seed,sweep\n";
    out << meta.dimension << ',' << xs.size() << ',' << to_string(meta.domain) << ',' << meta.seed << ',' << meta.sweep << '\n';
    out << "x,y,z\n";
    for (const auto& x : xs) out << format_double(x[0]) << ',' << format_double(x[1]) << ',' << format_double(x[2]) << '\n';
}

inline Snapshot read_snapshot(LineReader& r) {
    r.expect(snapshot_schema);
    r.expect("d,N,domain,seed,sweep");
    auto f = split_csv(r.next());
    if (f.size() != 5) throw r.error("snapshot header needs 5 fields");
    Snapshot s;
    s.meta.dimension = static_cast<int>(parse_u64(f[0]));
    if (s.meta.dimension != 3) throw UnsupportedDimensionError(s.meta.dimension);
    std::uint64_t n = parse_u64(f[1]);
    if (f[2] == "torus") {
        s.meta.domain = Domain::torus;
    } else if (f[2] == "euclidean") {
        s.meta.domain = Domain::euclidean;
    } else {
        throw r.error("unknown domain '" + f[2] + "'");
    }
    s.meta.seed = parse_u64(f[3]);
    s.meta.sweep = parse_u64(f[4]);
    r.expect("x,y,z");
    s.positions.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        auto row = split_csv(r.next());
        if (row.size() != 3) throw r.error("particle rows need 3 coordinates");
        s.positions.push_back({parse_double(row[0]), parse_double(row[1]), parse_double(row[2])});
    }
    return s;
}

inline void save_snapshot(const std::string& path, std::span<const Vec3> xs, const SnapshotMeta& meta) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write snapshot: " + path);
    write_snapshot(out, xs, meta);
    if (!out) throw IoError("failed writing snapshot: " + path);
}

inline Snapshot load_snapshot(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open snapshot: " + path);
    LineReader r(in, path);
    return read_snapshot(r);
}

/// Chain checkpoint: sampler scalars, RNG position, then a snapshot. Loading
/// recomputes the energy caches, so resuming is bit-exact when the chain was
/// saved on a multiple of its RunOptions::refresh_every.
template <typename Model>
void save_checkpoint(const std::string& path, const ChainState<Model>& chain, std::uint64_t chain_id) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    const auto& st = chain.rng.state();
    out << checkpoint_schema << '\n';
    out << "chain_id,beta,sigma,proposed,accepted,sweep,rng_seed,rng_stream,rng_block,rng_lane\n";
    out << chain_id << ',' << format_double(chain.beta) << ',' << format_double(chain.sigma) << ',' << chain.proposed << ','
        << chain.accepted << ',' << chain.sweep << ',' << st.seed << ',' << st.stream << ',' << st.block << ',' << st.lane << '\n';
    write_snapshot(out, chain.config.positions(), SnapshotMeta{3, Model::domain, st.seed, chain.sweep});
    if (!out) throw IoError("failed writing checkpoint: " + path);
}

template <typename Model>
ChainState<Model> load_checkpoint(const std::string& path, const Model& model) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    LineReader r(in, path);
    r.expect(checkpoint_schema);
    r.expect("chain_id,beta,sigma,proposed,accepted,sweep,rng_seed,rng_stream,rng_block,rng_lane");
    auto f = split_csv(r.next());
    if (f.size() != 10) throw r.error("checkpoint header needs 10 fields");
    Snapshot snap = read_snapshot(r);
    if (snap.meta.domain != Model::domain) throw r.error("checkpoint domain does not match model");
    Rng::State st;
    st.seed = parse_u64(f[6]);
    st.stream = parse_u64(f[7]);
    st.block = parse_u64(f[8]);
    st.lane = static_cast<std::uint32_t>(parse_u64(f[9]));
    ChainState<Model> chain{Configuration<Model>(model, std::move(snap.positions)), parse_double(f[1]), Rng(st),
                            parse_double(f[2]), parse_u64(f[3]), parse_u64(f[4]), parse_u64(f[5])};
    return chain;
}

/// Test-function names contain commas; columns and file names use this form.
inline std::string column_label(std::string_view name) {
    std::string s(name);
    for (char& c : s)
        if (c == ',') c = '_';
    return s;
}

/// Like column_label, and also safe as a path component.
inline std::string file_label(std::string_view name) {
    std::string s = column_label(name);
    for (char& c : s)
        if (c == ':' || c == '/' || c == '\\') c = '-';
    return s;
}

inline void write_trace(std::ostream& out, const std::vector<TraceRow>& rows, const std::vector<std::string>& names) {
    out << trace_schema << '\n' << "chain_id,sweep,H";
    for (const auto& n : names) out << ',' << column_label(n);
    out << ",acceptance\n";
    for (const auto& r : rows) {
        out << r.chain_id << ',' << r.sweep << ',' << format_double(r.energy);
        for (double v : r.values) out << ',' << format_double(v);
        out << ',' << format_double(r.acceptance) << '\n';
    }
}

}  // namespace coulomb
