// cache.hpp - atomic file writes and the binary flow cache

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pfflow/config.hpp"
#include "pfflow/error.hpp"
#include "pfflow/hash.hpp"
#include "pfflow/massshell.hpp"

namespace pfflow {

/// Writes `path.partial`, then renames it over `path`.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::path tmp = path;
    tmp += ".partial";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) throw IoError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

/// Everything that determines one flow.
inline std::string flow_cache_key(const FlowOptions& o, const Vec3& P, double e) {
    using detail::fmt_double;
    std::string k = "flow/v1\n";
    k += "kappa=" + fmt_double(o.geometry.kappa) + "\nj_max=" + std::to_string(o.geometry.j_max);
    k += "\nn_radial=" + std::to_string(o.resolution.n_radial) + "\nn_angular=" + std::to_string(o.resolution.n_angular);
    k += "\nmode=" + std::to_string(static_cast<int>(o.resolution.mode)) + "\nseed=" + std::to_string(o.resolution.seed);
    k += "\nn_max_total=" + std::to_string(o.n_max_total) + "\nn_max_per_mode=" + std::to_string(o.n_max_per_mode);
    k += "\nspinor_dim=" + std::to_string(o.spinor_dim) + "\ncluster_tol=" + fmt_double(o.cluster_rel_tol);
    k += "\nP=" + fmt_double(P.x()) + "," + fmt_double(P.y()) + "," + fmt_double(P.z()) + "\ne=" + fmt_double(e) + "\n";
    return k;
}

struct FlowCacheEntry {
    std::uint64_t key = 0;
    bool complete = false;
    std::string failure;
    std::vector<ScaleSummary> scales;  // with block_vectors
};

namespace detail {

inline constexpr char kCacheMagic[8] = {'P', 'F', 'F', 'C', 'A', 'C', 'H', 'E'};
inline constexpr std::uint32_t kCacheVersion = 1;

class ByteWriter {
public:
    template <class T>
    void put(const T& v) {
        buf_.append(reinterpret_cast<const char*>(&v), sizeof v);
    }
    void put_doubles(const double* p, std::size_t n) { buf_.append(reinterpret_cast<const char*>(p), n * sizeof(double)); }
    std::string& str() { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    ByteReader(const std::string& s, std::size_t end) : s_(s), end_(end) {}
    template <class T>
    T get() {
        T v;
        take(&v, sizeof v);
        return v;
    }
    void get_doubles(double* p, std::size_t n) { take(p, n * sizeof(double)); }
    bool done() const { return pos_ == end_; }

private:
    void take(void* dst, std::size_t n) {
        if (end_ - pos_ < n) throw CacheIntegrityError("cache: truncated entry");
        std::memcpy(dst, s_.data() + pos_, n);
        pos_ += n;
    }
    const std::string& s_;
    std::size_t end_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_cache_entry(const FlowCacheEntry& entry) {
    detail::ByteWriter w;
    w.str().append(detail::kCacheMagic, 8);
    w.put(detail::kCacheVersion);
    w.put(entry.key);
    w.put(static_cast<std::uint8_t>(entry.complete));
    w.put(static_cast<std::uint32_t>(entry.failure.size()));
    w.str().append(entry.failure);
    w.put(static_cast<std::uint32_t>(entry.scales.size()));
    for (const auto& s : entry.scales) {
        w.put(static_cast<std::int32_t>(s.j));
        w.put(s.rho);
        w.put(static_cast<std::int64_t>(s.fock_dim));
        w.put(s.E);
        w.put_doubles(s.grad.data(), 3);
        w.put_doubles(s.hess.data(), 9);
        w.put_doubles(s.hess_eigenvalues.data(), 3);
        w.put(s.gap);
        w.put(static_cast<std::int32_t>(s.multiplicity));
        for (double v : {s.k1, s.k05, s.proj_increment, s.N_expect, s.ir_max_ratio}) w.put(v);
        w.put(static_cast<std::int64_t>(s.block_vectors.rows()));
        w.put(static_cast<std::int64_t>(s.block_vectors.cols()));
        w.put_doubles(reinterpret_cast<const double*>(s.block_vectors.data()), 2 * static_cast<std::size_t>(s.block_vectors.size()));
    }
    const std::uint64_t sum = fnv1a(w.str());
    w.put(sum);
    return std::move(w.str());
}

/// Throws CacheIntegrityError on any mismatch (magic, version, checksum, key, layout).
inline FlowCacheEntry deserialize_cache_entry(const std::string& bytes, std::uint64_t expected_key) {
    constexpr std::size_t tail = sizeof(std::uint64_t);
    if (bytes.size() < 8 + tail || std::memcmp(bytes.data(), detail::kCacheMagic, 8) != 0)
        throw CacheIntegrityError("cache: bad magic");
    std::uint64_t stored = 0;
    std::memcpy(&stored, bytes.data() + bytes.size() - tail, tail);
    if (fnv1a(std::string_view(bytes.data(), bytes.size() - tail)) != stored) throw CacheIntegrityError("cache: checksum mismatch");
    detail::ByteReader r(bytes, bytes.size() - tail);
    char magic[8];
    for (char& c : magic) c = r.get<char>();
    if (r.get<std::uint32_t>() != detail::kCacheVersion) throw CacheIntegrityError("cache: unsupported version");
    FlowCacheEntry e;
    e.key = r.get<std::uint64_t>();
    if (e.key != expected_key) throw CacheIntegrityError("cache: key mismatch");
    e.complete = r.get<std::uint8_t>() != 0;
    e.failure.resize(r.get<std::uint32_t>());
    for (char& c : e.failure) c = r.get<char>();
    const auto n = r.get<std::uint32_t>();
    if (n > 4096) throw CacheIntegrityError("cache: implausible scale count");
    for (std::uint32_t i = 0; i < n; ++i) {
        ScaleSummary s;
        s.j = r.get<std::int32_t>();
        s.rho = r.get<double>();
        s.fock_dim = r.get<std::int64_t>();
        s.E = r.get<double>();
        r.get_doubles(s.grad.data(), 3);
        r.get_doubles(s.hess.data(), 9);
        r.get_doubles(s.hess_eigenvalues.data(), 3);
        s.gap = r.get<double>();
        s.multiplicity = r.get<std::int32_t>();
        s.k1 = r.get<double>();
        s.k05 = r.get<double>();
        s.proj_increment = r.get<double>();
        s.N_expect = r.get<double>();
        s.ir_max_ratio = r.get<double>();
        const auto rows = r.get<std::int64_t>(), cols = r.get<std::int64_t>();
        if (rows < 0 || cols < 0 || rows > (1 << 26) || cols > 4096) throw CacheIntegrityError("cache: implausible dimensions");
        s.block_vectors.resize(rows, cols);
        r.get_doubles(reinterpret_cast<double*>(s.block_vectors.data()), 2 * static_cast<std::size_t>(rows * cols));
        e.scales.push_back(std::move(s));
    }
    if (!r.done()) throw CacheIntegrityError("cache: trailing bytes");
    return e;
}

class FlowCache {
public:
    explicit FlowCache(std::filesystem::path dir) : dir_(std::move(dir)) {
        if (!dir_.empty()) std::filesystem::create_directories(dir_);
    }

    bool enabled() const { return !dir_.empty(); }

    std::filesystem::path path_for(std::uint64_t key) const { return dir_ / ("flow_" + hex64(key) + ".bin"); }

    /// Cached entry, or nothing on a miss; corrupt files throw CacheIntegrityError.
    std::optional<FlowCacheEntry> load(std::uint64_t key) const {
        if (!enabled()) return std::nullopt;
        const auto p = path_for(key);
        if (!std::filesystem::exists(p)) return std::nullopt;
        return deserialize_cache_entry(read_file(p), key);
    }

    void store(const FlowCacheEntry& e) const {
        if (enabled()) atomic_write(path_for(e.key), serialize_cache_entry(e));
    }

    /// Checks every entry's framing and checksum; returns the number of entries.
    int verify_all() const {
        if (!enabled() || !std::filesystem::exists(dir_)) return 0;
        int n = 0;
        for (const auto& f : std::filesystem::directory_iterator(dir_)) {
            if (f.path().extension() != ".bin") continue;
            const std::string bytes = read_file(f.path());
            std::uint64_t key = 0;
            if (bytes.size() >= 20) std::memcpy(&key, bytes.data() + 12, sizeof key);
            if (f.path().filename() != path_for(key).filename())
                throw CacheIntegrityError("cache: " + f.path().filename().string() + " does not match its key");
            (void)deserialize_cache_entry(bytes, key);
            ++n;
        }
        return n;
    }

    static std::string read_file(const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw IoError("cannot read " + p.string());
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

private:
    std::filesystem::path dir_;
};

/// run_flow through the cache: a hit returns the stored summaries without recomputation.
inline FlowCacheEntry cached_flow(const FlowCache& cache, const FlowOptions& opt, const Vec3& P, double e, bool* hit = nullptr) {
    const std::uint64_t key = fnv1a(flow_cache_key(opt, P, e));
    if (auto got = cache.load(key)) {
        if (hit) *hit = true;
        return *got;
    }
    if (hit) *hit = false;
    const ScaleFlow flow = run_flow(P, e, opt.geometry.j_max, opt);
    FlowCacheEntry entry;
    entry.key = key;
    entry.complete = flow.complete;
    entry.failure = flow.failure;
    entry.scales = summarize(flow, true);
    cache.store(entry);
    return entry;
}

}  // namespace pfflow
