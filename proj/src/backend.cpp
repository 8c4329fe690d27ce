#include "heman/backend.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <random>

#include "heman/util.hpp"

namespace heman {

namespace {

constexpr std::uint32_t kFileFormatVersion = 1;
const char kMagicSecret[] = "HMSK";
const char kMagicEval[] = "HMEK";
const char kMagicCipher[] = "HMCT";

void check_key(const std::string& ct_key_id, const std::string& op_key_id) {
    if (ct_key_id != op_key_id)
        throw KeyError("ciphertext key id " + ct_key_id.substr(0, 12) +
                       "... does not match key " + op_key_id.substr(0, 12) + "...");
}

double grid_round(double v, int scale_bits) {
    return std::ldexp(std::nearbyint(std::ldexp(v, scale_bits)), -scale_bits);
}

void check_same_shape(const Shape& a, const Shape& b) {
    if (a != b)
        throw ShapeError("elementwise operands have different shapes " + shape_to_string(a) +
                         " vs " + shape_to_string(b));
}

}  // namespace

Seed Seed::from_u64(std::uint64_t v) {
    Seed s;
    for (int i = 0; i < 8; ++i) s.bytes[i] = static_cast<std::uint8_t>((v >> (8 * i)) & 0xff);
    return s;
}

Seed Seed::from_os_entropy() {
    std::random_device rd;
    Seed s;
    for (std::size_t i = 0; i < s.bytes.size(); i += 4) {
        std::uint32_t v = rd();
        std::memcpy(s.bytes.data() + i, &v, 4);
    }
    return s;
}

Seed Seed::from_hex(const std::string& hex) {
    if (hex.size() != 64) throw ParseError("seed hex must be 64 characters");
    Seed s;
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        throw ParseError("seed hex contains a non-hex character");
    };
    for (std::size_t i = 0; i < 32; ++i)
        s.bytes[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) * 16 + nibble(hex[2 * i + 1]));
    return s;
}

std::string Seed::hex() const {
    static const char* h = "0123456789abcdef";
    std::string out;
    for (auto b : bytes) {
        out.push_back(h[b >> 4]);
        out.push_back(h[b & 0xf]);
    }
    return out;
}

std::pair<SecretKey, EvalKey> keygen(const KeyParams& params, const Seed& seed) {
    std::string key_id = sha256_hex(params.canonical_string() + ":" + seed.hex());
    SecretKey sk{params, seed, key_id};
    EvalKey ek{params, key_id};
    return {std::move(sk), std::move(ek)};
}

double UnivariateFn::eval(double x) const {
    switch (tag) {
        case Tag::Relu:
            return std::max(0.0, x);
        case Tag::Affine:
            return affine_a * x + affine_b;
        case Tag::Poly: {
            double acc = 0.0;
            for (std::size_t i = poly_coeffs.size(); i-- > 0;) acc = acc * x + poly_coeffs[i];
            return acc;
        }
        case Tag::Table: {
            if (table_samples.empty()) return 0.0;
            auto n = static_cast<std::int64_t>(table_samples.size());
            double t = (x - table_domain.lo) / std::max(table_domain.width(), 1e-300);
            auto idx = static_cast<std::int64_t>(std::nearbyint(t * (n - 1)));
            idx = std::clamp<std::int64_t>(idx, 0, n - 1);
            return table_samples[static_cast<std::size_t>(idx)];
        }
    }
    return 0.0;
}

UnivariateFn UnivariateFn::affine(double a, double b) {
    UnivariateFn f;
    f.tag = Tag::Affine;
    f.affine_a = a;
    f.affine_b = b;
    return f;
}

UnivariateFn UnivariateFn::poly(std::vector<double> coeffs) {
    UnivariateFn f;
    f.tag = Tag::Poly;
    f.poly_coeffs = std::move(coeffs);
    return f;
}

UnivariateFn UnivariateFn::table(Interval domain, std::vector<double> samples) {
    UnivariateFn f;
    f.tag = Tag::Table;
    f.table_domain = domain;
    f.table_samples = std::move(samples);
    return f;
}

// ---------------------------------------------------------------------------

namespace ckks {

CtCkks encrypt(const SecretKey& sk, const Tensor& x) {
    if (sk.params.backend != BackendKind::Ckks)
        throw KeyError("secret key is not a ckks key");
    const CkksParams& p = sk.params.ckks;
    if (x.element_count() > p.slots())
        throw CapacityError("tensor with " + std::to_string(x.element_count()) +
                            " elements exceeds " + std::to_string(p.slots()) + " slots");
    CtCkks ct;
    ct.scale_bits = p.scale_bits;
    ct.level = p.level_budget();
    ct.logical_shape = x.shape;
    ct.key_id = sk.key_id;
    ct.slots.assign(static_cast<std::size_t>(p.slots()), 0.0);
    for (std::int64_t i = 0; i < x.element_count(); ++i)
        ct.slots[static_cast<std::size_t>(i)] = grid_round(x.data[i], ct.scale_bits);
    return ct;
}

Tensor decrypt(const SecretKey& sk, const CtCkks& ct) {
    check_key(ct.key_id, sk.key_id);
    std::vector<double> data(ct.slots.begin(), ct.slots.begin() + ct.element_count());
    return Tensor(ct.logical_shape, std::move(data));
}

CtCkks add_ct(const EvalKey& ek, const CtCkks& a, const CtCkks& b) {
    check_key(a.key_id, ek.key_id);
    check_key(b.key_id, ek.key_id);
    check_same_shape(a.logical_shape, b.logical_shape);
    CtCkks out = a;
    out.level = std::min(a.level, b.level);
    for (std::size_t i = 0; i < out.slots.size(); ++i) out.slots[i] += b.slots[i];
    return out;
}

CtCkks add_plain(const EvalKey& ek, const CtCkks& a, const std::vector<double>& p) {
    check_key(a.key_id, ek.key_id);
    if (static_cast<std::int64_t>(p.size()) != a.element_count() && p.size() != 1)
        throw ShapeError("plaintext operand size mismatch");
    CtCkks out = a;
    for (std::int64_t i = 0; i < a.element_count(); ++i)
        out.slots[static_cast<std::size_t>(i)] +=
            grid_round(p.size() == 1 ? p[0] : p[static_cast<std::size_t>(i)], a.scale_bits);
    return out;
}

CtCkks mul_plain(const EvalKey& ek, const CtCkks& a, const std::vector<double>& p,
                 OpCounters*) {
    check_key(a.key_id, ek.key_id);
    if (a.level < 1)
        throw DepthError("ckks level budget exhausted (mul_plain at level 0)");
    if (static_cast<std::int64_t>(p.size()) != a.element_count() && p.size() != 1)
        throw ShapeError("plaintext operand size mismatch");
    CtCkks out = a;
    out.level = a.level - 1;
    for (std::int64_t i = 0; i < a.element_count(); ++i) {
        std::size_t k = static_cast<std::size_t>(i);
        out.slots[k] = grid_round(a.slots[k] * (p.size() == 1 ? p[0] : p[k]), a.scale_bits);
    }
    for (std::int64_t i = a.element_count(); i < static_cast<std::int64_t>(out.slots.size()); ++i)
        out.slots[static_cast<std::size_t>(i)] = 0.0;
    return out;
}

CtCkks mul_ct(const EvalKey& ek, const CtCkks& a, const CtCkks& b, OpCounters*) {
    check_key(a.key_id, ek.key_id);
    check_key(b.key_id, ek.key_id);
    check_same_shape(a.logical_shape, b.logical_shape);
    if (a.level < 1 || b.level < 1)
        throw DepthError("ckks level budget exhausted (mul_ct with an operand at level 0)");
    CtCkks out = a;
    out.level = std::min(a.level, b.level) - 1;
    for (std::size_t i = 0; i < out.slots.size(); ++i)
        out.slots[i] = grid_round(a.slots[i] * b.slots[i], a.scale_bits);
    return out;
}

CtCkks linear_map(const EvalKey& ek, const CtCkks& x, const Eigen::MatrixXd& w,
                  const Eigen::VectorXd& b, const Shape& out_shape, OpCounters*) {
    check_key(x.key_id, ek.key_id);
    if (w.cols() != x.element_count())
        throw ShapeError("linear_map matrix has " + std::to_string(w.cols()) +
                         " columns, ciphertext has " + std::to_string(x.element_count()) +
                         " elements");
    if (w.rows() != shape_elements(out_shape))
        throw ShapeError("linear_map matrix rows do not match output shape");
    if (x.level < 1) throw DepthError("ckks level budget exhausted (linear_map at level 0)");
    if (w.rows() > static_cast<std::int64_t>(x.slots.size()))
        throw CapacityError("linear_map output exceeds slot capacity");

    Eigen::Map<const Eigen::VectorXd> xv(x.slots.data(), x.element_count());
    Eigen::VectorXd y = w * xv + b;

    CtCkks out;
    out.scale_bits = x.scale_bits;
    out.level = x.level - 1;
    out.logical_shape = out_shape;
    out.key_id = x.key_id;
    out.slots.assign(x.slots.size(), 0.0);
    for (Eigen::Index i = 0; i < y.size(); ++i)
        out.slots[static_cast<std::size_t>(i)] = grid_round(y[i], out.scale_bits);
    return out;
}

}  // namespace ckks

// ---------------------------------------------------------------------------

namespace tfhe {

std::uint32_t quantize(double v, const Interval& iv, int msg_bits) {
    double steps = static_cast<double>((std::uint32_t{1} << msg_bits) - 1);
    double t = (v - iv.lo) / std::max(iv.width(), 1e-300);
    auto q = static_cast<std::int64_t>(std::nearbyint(t * steps));
    return static_cast<std::uint32_t>(std::clamp<std::int64_t>(q, 0, static_cast<std::int64_t>(steps)));
}

double dequantize(std::uint32_t q, const Interval& iv, int msg_bits) {
    double steps = static_cast<double>((std::uint32_t{1} << msg_bits) - 1);
    return iv.lo + static_cast<double>(q) / steps * iv.width();
}

namespace {

Interval widen_if_degenerate(Interval iv) {
    if (iv.lo >= iv.hi) {
        double c = iv.lo;
        double eps = (1.0 / (1 << 20)) * std::max(1.0, std::abs(c));
        iv = {c - eps, c + eps};
    }
    return iv;
}

struct IntervalLess {
    bool operator()(const Interval& a, const Interval& b) const {
        return a.lo != b.lo ? a.lo < b.lo : a.hi < b.hi;
    }
};

}  // namespace

CtTfhe encrypt(const SecretKey& sk, const Tensor& x, OpCounters* counters) {
    if (sk.params.backend != BackendKind::Tfhe)
        throw KeyError("secret key is not a tfhe key");
    const TfheParams& p = sk.params.tfhe;
    Interval iv = widen_if_degenerate(p.input_interval);
    CtTfhe ct;
    ct.msg_bits = p.msg_bits;
    ct.logical_shape = x.shape;
    ct.key_id = sk.key_id;
    ct.cells.reserve(x.data.size());
    for (double v : x.data) {
        double clamped = std::clamp(v, iv.lo, iv.hi);
        if (clamped != v && counters) ++counters->input_clamps;
        ct.cells.push_back({quantize(clamped, iv, p.msg_bits), iv});
    }
    return ct;
}

CtTfhe lut(const EvalKey& ek, CtTfhe ct, UnivariateFn f) {
    check_key(ct.key_id, ek.key_id);
    ct.pending.push_back(std::move(f));
    return ct;
}

CtTfhe flush(const EvalKey& ek, CtTfhe ct, OpCounters* counters,
             const std::optional<Interval>& calibrated_out) {
    check_key(ct.key_id, ek.key_id);
    if (ct.pending.empty()) return ct;

    std::size_t table_size = std::size_t{1} << ct.msg_bits;
    // Cells typically share one interval; cache composed tables per interval.
    std::map<Interval, std::pair<std::vector<double>, Interval>, IntervalLess> cache;

    for (auto& cell : ct.cells) {
        auto it = cache.find(cell.interval);
        if (it == cache.end()) {
            std::vector<double> table(table_size);
            for (std::size_t q = 0; q < table_size; ++q) {
                double v = dequantize(static_cast<std::uint32_t>(q), cell.interval, ct.msg_bits);
                for (const auto& fn : ct.pending) v = fn.eval(v);
                table[q] = v;
            }
            Interval range{*std::min_element(table.begin(), table.end()),
                           *std::max_element(table.begin(), table.end())};
            if (calibrated_out) {
                Interval cut{std::max(range.lo, calibrated_out->lo),
                             std::min(range.hi, calibrated_out->hi)};
                if (cut.lo <= cut.hi) range = cut;
            }
            range = widen_if_degenerate(range);
            it = cache.emplace(cell.interval, std::make_pair(std::move(table), range)).first;
        }
        const auto& [table, range] = it->second;
        double v = std::clamp(table[cell.qval], range.lo, range.hi);
        cell.qval = quantize(v, range, ct.msg_bits);
        cell.interval = range;
    }
    ct.pending.clear();
    if (counters) {
        ++counters->flushes;
        ++counters->quantizations;  // one requantization regardless of stack length
    }
    return ct;
}

CtTfhe add_ct(const EvalKey& ek, CtTfhe a, CtTfhe b, OpCounters* counters) {
    check_key(a.key_id, ek.key_id);
    check_key(b.key_id, ek.key_id);
    check_same_shape(a.logical_shape, b.logical_shape);
    a = flush(ek, std::move(a), counters);
    b = flush(ek, std::move(b), counters);
    for (std::size_t i = 0; i < a.cells.size(); ++i) {
        double va = dequantize(a.cells[i].qval, a.cells[i].interval, a.msg_bits);
        double vb = dequantize(b.cells[i].qval, b.cells[i].interval, b.msg_bits);
        Interval iv = widen_if_degenerate({a.cells[i].interval.lo + b.cells[i].interval.lo,
                                           a.cells[i].interval.hi + b.cells[i].interval.hi});
        a.cells[i] = {quantize(va + vb, iv, a.msg_bits), iv};
    }
    return a;
}

CtTfhe add_plain(const EvalKey& ek, CtTfhe a, const std::vector<double>& p,
                 OpCounters* counters) {
    check_key(a.key_id, ek.key_id);
    if (static_cast<std::int64_t>(p.size()) != a.element_count() && p.size() != 1)
        throw ShapeError("plaintext operand size mismatch");
    a = flush(ek, std::move(a), counters);
    for (std::size_t i = 0; i < a.cells.size(); ++i) {
        double pi = p.size() == 1 ? p[0] : p[i];
        double v = dequantize(a.cells[i].qval, a.cells[i].interval, a.msg_bits) + pi;
        Interval iv = {a.cells[i].interval.lo + pi, a.cells[i].interval.hi + pi};
        a.cells[i] = {quantize(v, iv, a.msg_bits), iv};
    }
    return a;
}

CtTfhe mul_plain(const EvalKey& ek, CtTfhe a, const std::vector<double>& p,
                 OpCounters* counters) {
    check_key(a.key_id, ek.key_id);
    if (static_cast<std::int64_t>(p.size()) != a.element_count() && p.size() != 1)
        throw ShapeError("plaintext operand size mismatch");
    a = flush(ek, std::move(a), counters);
    for (std::size_t i = 0; i < a.cells.size(); ++i) {
        double pi = p.size() == 1 ? p[0] : p[i];
        double v = dequantize(a.cells[i].qval, a.cells[i].interval, a.msg_bits) * pi;
        Interval iv{a.cells[i].interval.lo * pi, a.cells[i].interval.hi * pi};
        if (iv.lo > iv.hi) std::swap(iv.lo, iv.hi);
        iv = widen_if_degenerate(iv);
        a.cells[i] = {quantize(v, iv, a.msg_bits), iv};
    }
    return a;
}

CtTfhe linear_map(const EvalKey& ek, CtTfhe x, const Eigen::MatrixXd& w,
                  const Eigen::VectorXd& b, const Shape& out_shape,
                  const Interval& out_interval, OpCounters* counters) {
    check_key(x.key_id, ek.key_id);
    if (w.cols() != x.element_count())
        throw ShapeError("linear_map matrix has " + std::to_string(w.cols()) +
                         " columns, ciphertext has " + std::to_string(x.element_count()) +
                         " elements");
    if (w.rows() != shape_elements(out_shape))
        throw ShapeError("linear_map matrix rows do not match output shape");
    x = flush(ek, std::move(x), counters);

    Eigen::VectorXd xv(x.element_count());
    for (std::size_t i = 0; i < x.cells.size(); ++i)
        xv[static_cast<Eigen::Index>(i)] =
            dequantize(x.cells[i].qval, x.cells[i].interval, x.msg_bits);
    Eigen::VectorXd y = w * xv + b;

    Interval iv = widen_if_degenerate(out_interval);
    CtTfhe out;
    out.msg_bits = x.msg_bits;
    out.logical_shape = out_shape;
    out.key_id = x.key_id;
    out.cells.reserve(static_cast<std::size_t>(y.size()));
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        double v = std::clamp(y[i], iv.lo, iv.hi);
        out.cells.push_back({quantize(v, iv, out.msg_bits), iv});
    }
    return out;
}

Tensor decrypt(const SecretKey& sk, CtTfhe ct, OpCounters* counters) {
    check_key(ct.key_id, sk.key_id);
    EvalKey ek{sk.params, sk.key_id};
    ct = flush(ek, std::move(ct), counters);
    std::vector<double> data;
    data.reserve(ct.cells.size());
    for (const auto& cell : ct.cells)
        data.push_back(dequantize(cell.qval, cell.interval, ct.msg_bits));
    return Tensor(ct.logical_shape, std::move(data));
}

}  // namespace tfhe

// ---------------------------------------------------------------------------

std::string serialize_secret_key(const SecretKey& sk) {
    BinWriter w;
    w.bytes(kMagicSecret, 4);
    w.u32(kFileFormatVersion);
    w.str(sk.params.canonical_string());
    w.bytes(sk.seed.bytes.data(), sk.seed.bytes.size());
    return w.data();
}

namespace {

void expect_magic(BinReader& r, const char* want, const char* what) {
    std::string magic = r.raw(4);
    if (magic == kMagicSecret && std::string(want) != kMagicSecret)
        throw KeyError(std::string(what) + ": file is a SECRET key, refusing to use it here");
    if (magic != want)
        throw ParseError(std::string(what) + ": bad magic (not a " + what + " file)");
    std::uint32_t version = r.u32();
    if (version != kFileFormatVersion)
        throw ParseError(std::string(what) + ": unsupported format version " +
                         std::to_string(version));
}

}  // namespace

SecretKey deserialize_secret_key(const std::string& bytes) {
    BinReader r(bytes);
    std::string magic = r.raw(4);
    if (magic == kMagicEval)
        throw KeyError("secret key expected, but this is an evaluation key file");
    if (magic != kMagicSecret) throw ParseError("not a secret key file");
    std::uint32_t version = r.u32();
    if (version != kFileFormatVersion)
        throw ParseError("secret key: unsupported format version " + std::to_string(version));
    KeyParams params = KeyParams::from_json(nlohmann::json::parse(r.str()));
    Seed seed;
    std::string raw = r.raw(seed.bytes.size());
    std::memcpy(seed.bytes.data(), raw.data(), seed.bytes.size());
    return keygen(params, seed).first;
}

std::string serialize_eval_key(const EvalKey& ek) {
    BinWriter w;
    w.bytes(kMagicEval, 4);
    w.u32(kFileFormatVersion);
    w.str(ek.params.canonical_string());
    w.str(ek.key_id);
    return w.data();
}

EvalKey deserialize_eval_key(const std::string& bytes) {
    BinReader r(bytes);
    expect_magic(r, kMagicEval, "evaluation key");
    KeyParams params = KeyParams::from_json(nlohmann::json::parse(r.str()));
    EvalKey ek;
    ek.params = std::move(params);
    ek.key_id = r.str();
    return ek;
}

std::string serialize_ciphertext(const CtTensor& ct) {
    BinWriter w;
    w.bytes(kMagicCipher, 4);
    w.u32(kFileFormatVersion);
    if (std::holds_alternative<CtCkks>(ct)) {
        const auto& c = std::get<CtCkks>(ct);
        w.u8(0);  // backend tag: ckks
        w.str(c.key_id);
        w.u64(c.logical_shape.size());
        for (auto d : c.logical_shape) w.i64(d);
        w.u32(static_cast<std::uint32_t>(c.scale_bits));
        w.u32(static_cast<std::uint32_t>(c.level));
        w.u64(c.slots.size());
        for (double v : c.slots)
            w.i64(static_cast<std::int64_t>(std::nearbyint(std::ldexp(v, c.scale_bits))));
    } else {
        const auto& c = std::get<CtTfhe>(ct);
        if (!c.pending.empty())
            throw IoError("tfhe ciphertext has pending operations; flush before serializing");
        w.u8(1);  // backend tag: tfhe
        w.str(c.key_id);
        w.u64(c.logical_shape.size());
        for (auto d : c.logical_shape) w.i64(d);
        w.u32(static_cast<std::uint32_t>(c.msg_bits));
        w.u64(c.cells.size());
        for (const auto& cell : c.cells) {
            w.u32(cell.qval);
            w.f64(cell.interval.lo);
            w.f64(cell.interval.hi);
        }
    }
    return w.data();
}

CtTensor deserialize_ciphertext(const std::string& bytes) {
    BinReader r(bytes);
    expect_magic(r, kMagicCipher, "ciphertext");
    std::uint8_t tag = r.u8();
    std::string key_id = r.str();
    Shape shape(r.u64());
    for (auto& d : shape) d = r.i64();
    if (tag == 0) {
        CtCkks c;
        c.key_id = std::move(key_id);
        c.logical_shape = std::move(shape);
        c.scale_bits = static_cast<int>(r.u32());
        c.level = static_cast<int>(r.u32());
        c.slots.resize(r.u64());
        for (auto& v : c.slots) v = std::ldexp(static_cast<double>(r.i64()), -c.scale_bits);
        return c;
    }
    if (tag == 1) {
        CtTfhe c;
        c.key_id = std::move(key_id);
        c.logical_shape = std::move(shape);
        c.msg_bits = static_cast<int>(r.u32());
        c.cells.resize(r.u64());
        for (auto& cell : c.cells) {
            cell.qval = r.u32();
            cell.interval.lo = r.f64();
            cell.interval.hi = r.f64();
        }
        return c;
    }
    throw ParseError("ciphertext: unknown backend tag " + std::to_string(tag));
}

}  // namespace heman
