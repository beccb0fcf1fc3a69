#pragma once

#include "lifted/core.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

namespace lifted {

struct BadMagicError : std::runtime_error {
    explicit BadMagicError(const std::string& what) : std::runtime_error(what) {}
};
struct TruncatedFileError : std::runtime_error {
    explicit TruncatedFileError(const std::string& what) : std::runtime_error(what) {}
};
struct DimMismatchError : std::runtime_error {
    explicit DimMismatchError(const std::string& what) : std::runtime_error(what) {}
};
struct InsufficientPoolError : std::runtime_error {
    explicit InsufficientPoolError(const std::string& what) : std::runtime_error(what) {}
};
struct OutOfRangeError : std::runtime_error {
    explicit OutOfRangeError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    const auto size = in.tellg();
    in.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<size_t>(size));
    in.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!in) throw TruncatedFileError("short read on " + path);
    return bytes;
}

inline std::vector<std::uint8_t> gunzip(const std::vector<std::uint8_t>& compressed,
                                        const std::string& path) {
    z_stream zs{};
    if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK)
        throw std::runtime_error("zlib init failed for " + path);
    std::vector<std::uint8_t> out;
    out.resize(std::max<size_t>(compressed.size() * 4, 1 << 16));
    zs.next_in = const_cast<Bytef*>(compressed.data());
    zs.avail_in = static_cast<uInt>(compressed.size());
    size_t written = 0;
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        if (written == out.size()) out.resize(out.size() * 2);
        zs.next_out = out.data() + written;
        zs.avail_out = static_cast<uInt>(out.size() - written);
        rc = inflate(&zs, Z_NO_FLUSH);
        written = out.size() - zs.avail_out;
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            throw TruncatedFileError("gzip decompression failed for " + path);
        }
    }
    inflateEnd(&zs);
    out.resize(written);
    return out;
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& b, size_t off,
                               const std::string& path) {
    if (off + 4 > b.size()) throw TruncatedFileError("truncated IDX header in " + path);
    return (static_cast<std::uint32_t>(b[off]) << 24) | (static_cast<std::uint32_t>(b[off + 1]) << 16) |
           (static_cast<std::uint32_t>(b[off + 2]) << 8) | static_cast<std::uint32_t>(b[off + 3]);
}

}  // namespace detail

// Parsed IDX tensor of unsigned bytes (the only element type the standard
// dataset files use).
struct IdxData {
    std::vector<int> shape;
    std::vector<std::uint8_t> data;

    long count() const { return shape.empty() ? 0 : shape.front(); }
    long item_size() const {
        long s = 1;
        for (size_t i = 1; i < shape.size(); ++i) s *= shape[i];
        return s;
    }
};

/// Loads an IDX file (transparently gunzipping *.gz / gzip-magic payloads).
/// Accepts unsigned-byte tensors of any rank; validates magic and length.
inline IdxData load_idx(const std::string& path) {
    std::vector<std::uint8_t> bytes = detail::read_file_bytes(path);
    if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b)
        bytes = detail::gunzip(bytes, path);
    const std::uint32_t magic = detail::read_be32(bytes, 0, path);
    if ((magic >> 8) != 0x08)  // 0x0000 pad, 0x08 = unsigned byte, rank byte
        throw BadMagicError("bad IDX magic in " + path);
    const int rank = static_cast<int>(magic & 0xff);
    if (rank < 1 || rank > 4) throw BadMagicError("unsupported IDX rank in " + path);
    IdxData idx;
    size_t off = 4;
    long total = 1;
    for (int i = 0; i < rank; ++i) {
        const std::uint32_t d = detail::read_be32(bytes, off, path);
        off += 4;
        idx.shape.push_back(static_cast<int>(d));
        total *= d;
    }
    if (bytes.size() - off != static_cast<size_t>(total))
        throw DimMismatchError("IDX payload size disagrees with header dims in " + path);
    idx.data.assign(bytes.begin() + static_cast<long>(off), bytes.end());
    return idx;
}

/// SHA-256 of a file's raw bytes as a lowercase hex string.
inline std::string sha256_file(const std::string& path) {
    std::vector<std::uint8_t> bytes = detail::read_file_bytes(path);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed for " + path);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

/// One-hot targets scaled by `scale` (scale interacts with the beta
/// stability margin, hence exposed).
inline Matrix encode_targets(const std::vector<int>& labels, int num_classes, double scale = 1.0) {
    Matrix y = Matrix::Zero(static_cast<long>(labels.size()), num_classes);
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes)
            throw OutOfRangeError("label " + std::to_string(labels[i]) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
        y(static_cast<long>(i), labels[i]) = scale;
    }
    return y;
}

struct DatasetSplit {
    Matrix train_x, val_x, test_x;              // rows in [0,1]
    std::vector<int> train_y, val_y, test_y;    // integer labels
    Matrix train_targets;                        // encoded Euclidean targets
    std::vector<int> train_indices, val_indices; // positions in the source pool
    std::uint64_t seed = 0;
    std::vector<std::string> provenance;         // "path sha256" lines

    int num_classes() const { return static_cast<int>(train_targets.cols()); }
};

namespace detail {

inline Matrix images_to_rows(const IdxData& idx) {
    const long n = idx.count(), d = idx.item_size();
    Matrix x(n, d);
    for (long i = 0; i < n; ++i)
        for (long j = 0; j < d; ++j)
            x(i, j) = static_cast<double>(idx.data[static_cast<size_t>(i * d + j)]) / 255.0;
    return x;
}

inline std::vector<int> labels_to_ints(const IdxData& idx) {
    std::vector<int> y(idx.data.size());
    for (size_t i = 0; i < idx.data.size(); ++i) y[i] = static_cast<int>(idx.data[i]);
    return y;
}

}  // namespace detail

/// Draws disjoint train/validation subsets from a pool by a seeded shuffle of
/// the pool indices: the first n_train shuffled indices train, the next n_val
/// validate. Deterministic given the seed.
inline DatasetSplit make_split(const Matrix& pool_x, const std::vector<int>& pool_y,
                               const Matrix& test_x, const std::vector<int>& test_y, int n_train,
                               int n_val, std::uint64_t seed, int num_classes = 10,
                               double target_scale = 1.0) {
    const long pool = pool_x.rows();
    if (pool_y.size() != static_cast<size_t>(pool) || test_y.size() != static_cast<size_t>(test_x.rows()))
        throw DimMismatchError("make_split: images/labels count mismatch");
    if (static_cast<long>(n_train) + n_val > pool)
        throw InsufficientPoolError("make_split: pool of " + std::to_string(pool) +
                                    " cannot supply " + std::to_string(n_train + n_val) + " samples");
    std::vector<int> order(static_cast<size_t>(pool));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    for (long i = pool - 1; i > 0; --i) {
        long j = static_cast<long>(rng.integer(static_cast<std::uint64_t>(i + 1)));
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }

    DatasetSplit split;
    split.seed = seed;
    split.train_indices.assign(order.begin(), order.begin() + n_train);
    split.val_indices.assign(order.begin() + n_train, order.begin() + n_train + n_val);
    split.train_x.resize(n_train, pool_x.cols());
    split.val_x.resize(n_val, pool_x.cols());
    for (int i = 0; i < n_train; ++i) {
        split.train_x.row(i) = pool_x.row(split.train_indices[static_cast<size_t>(i)]);
        split.train_y.push_back(pool_y[static_cast<size_t>(split.train_indices[static_cast<size_t>(i)])]);
    }
    for (int i = 0; i < n_val; ++i) {
        split.val_x.row(i) = pool_x.row(split.val_indices[static_cast<size_t>(i)]);
        split.val_y.push_back(pool_y[static_cast<size_t>(split.val_indices[static_cast<size_t>(i)])]);
    }
    split.test_x = test_x;
    split.test_y = test_y;
    split.train_targets = encode_targets(split.train_y, num_classes, target_scale);
    return split;
}

/// Loads the standard four-file IDX layout from `dir` (plain or .gz) and
/// produces a split; file checksums are recorded in the provenance field.
inline DatasetSplit load_mnist_split(const std::string& dir, int n_train, int n_val,
                                     std::uint64_t seed, double target_scale = 1.0) {
    auto find = [&](const std::string& base) {
        for (const char* suffix : {"", ".gz"}) {
            std::string p = dir + "/" + base + suffix;
            if (std::ifstream(p).good()) return p;
        }
        throw std::runtime_error("dataset file not found: " + dir + "/" + base + "[.gz]");
    };
    const std::string f_trx = find("train-images-idx3-ubyte");
    const std::string f_try = find("train-labels-idx1-ubyte");
    const std::string f_tex = find("t10k-images-idx3-ubyte");
    const std::string f_tey = find("t10k-labels-idx1-ubyte");

    IdxData trx = load_idx(f_trx), try_ = load_idx(f_try);
    IdxData tex = load_idx(f_tex), tey = load_idx(f_tey);
    if (trx.count() != static_cast<long>(try_.data.size()) ||
        tex.count() != static_cast<long>(tey.data.size()))
        throw DimMismatchError("image/label counts disagree in " + dir);

    DatasetSplit split =
        make_split(detail::images_to_rows(trx), detail::labels_to_ints(try_),
                   detail::images_to_rows(tex), detail::labels_to_ints(tey), n_train, n_val, seed,
                   10, target_scale);
    for (const std::string& p : {f_trx, f_try, f_tex, f_tey})
        split.provenance.push_back(p + " " + sha256_file(p));
    return split;
}

}  // namespace lifted
