#include "gbpmap/wire.hpp"

#include <bit>
#include <cstring>

namespace gbpmap {

namespace {

enum : std::uint8_t {
    kTagConnect = 1,
    kTagMessage = 2,
    kTagDecouple = 3,
    kTagPosterior = 4,
};

void put_u32(std::uint32_t v, std::vector<std::uint8_t>& out) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 24));
}

void put_f64(double v, std::vector<std::uint8_t>& out) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

void put_matrix(const Eigen::MatrixXd& m, std::vector<std::uint8_t>& out) {
    put_u32(static_cast<std::uint32_t>(m.rows()), out);
    put_u32(static_cast<std::uint32_t>(m.cols()), out);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) put_f64(m(r, c), out);
}

void put_vector(const Eigen::VectorXd& v, std::vector<std::uint8_t>& out) {
    put_u32(static_cast<std::uint32_t>(v.size()), out);
    for (Eigen::Index i = 0; i < v.size(); ++i) put_f64(v(i), out);
}

struct Reader {
    const std::vector<std::uint8_t>& buf;
    std::size_t pos;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) {
            throw ParseError("wire record truncated: need " + std::to_string(n) +
                                 " bytes, have " + std::to_string(buf.size() - pos),
                             pos);
        }
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + static_cast<std::size_t>(i)]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint8_t u8() {
        need(1);
        return buf[pos++];
    }
    double f64() {
        need(8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[pos + static_cast<std::size_t>(i)]) << (8 * i);
        pos += 8;
        return std::bit_cast<double>(bits);
    }
    Eigen::MatrixXd matrix() {
        const std::uint32_t rows = u32();
        const std::uint32_t cols = u32();
        need(static_cast<std::size_t>(rows) * cols * 8);
        Eigen::MatrixXd m(rows, cols);
        for (std::uint32_t r = 0; r < rows; ++r)
            for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = f64();
        return m;
    }
    Eigen::VectorXd vector() {
        const std::uint32_t n = u32();
        need(static_cast<std::size_t>(n) * 8);
        Eigen::VectorXd v(n);
        for (std::uint32_t i = 0; i < n; ++i) v(i) = f64();
        return v;
    }
};

void encode_payload(const WireRecord& record, std::vector<std::uint8_t>& out) {
    if (const auto* c = std::get_if<WireConnect>(&record)) {
        out.push_back(kTagConnect);
        put_u32(static_cast<std::uint32_t>(c->parent_id), out);
        put_u32(static_cast<std::uint32_t>(c->child_id), out);
        put_matrix(c->parent_z, out);
        put_matrix(c->child_z, out);
    } else if (const auto* m = std::get_if<WireMessage>(&record)) {
        out.push_back(kTagMessage);
        put_u32(static_cast<std::uint32_t>(m->parent_id), out);
        put_u32(static_cast<std::uint32_t>(m->child_id), out);
        out.push_back(m->to_parent ? 1 : 0);
        put_vector(m->value.eta, out);
        put_matrix(m->value.lambda, out);
    } else if (const auto* d = std::get_if<WireDecouple>(&record)) {
        out.push_back(kTagDecouple);
        put_u32(static_cast<std::uint32_t>(d->parent_id), out);
        put_u32(static_cast<std::uint32_t>(d->child_id), out);
    } else {
        const auto& p = std::get<WirePosterior>(record);
        out.push_back(kTagPosterior);
        put_u32(static_cast<std::uint32_t>(p.robot_id), out);
        put_u32(static_cast<std::uint32_t>(p.version), out);
        put_matrix(p.z, out);
        put_vector(p.mu, out);
        put_matrix(p.sigma, out);
        put_vector(p.theta, out);
    }
}

}  // namespace

void encode_append(const WireRecord& record, std::vector<std::uint8_t>& out) {
    std::vector<std::uint8_t> payload;
    encode_payload(record, payload);
    put_u32(static_cast<std::uint32_t>(payload.size()), out);
    out.insert(out.end(), payload.begin(), payload.end());
}

std::vector<std::uint8_t> encode(const WireRecord& record) {
    std::vector<std::uint8_t> out;
    encode_append(record, out);
    return out;
}

WireRecord decode(const std::vector<std::uint8_t>& buffer, std::size_t& offset) {
    Reader r{buffer, offset};
    const std::uint32_t len = r.u32();
    const std::size_t end = r.pos + len;
    if (end > buffer.size()) {
        throw ParseError("wire record truncated: declared length " + std::to_string(len) +
                             ", available " + std::to_string(buffer.size() - r.pos),
                         r.pos);
    }
    const std::uint8_t tag = r.u8();
    WireRecord record;
    switch (tag) {
        case kTagConnect: {
            WireConnect c;
            c.parent_id = static_cast<std::int32_t>(r.u32());
            c.child_id = static_cast<std::int32_t>(r.u32());
            c.parent_z = r.matrix();
            c.child_z = r.matrix();
            record = std::move(c);
            break;
        }
        case kTagMessage: {
            WireMessage m;
            m.parent_id = static_cast<std::int32_t>(r.u32());
            m.child_id = static_cast<std::int32_t>(r.u32());
            m.to_parent = r.u8() != 0;
            m.value.eta = r.vector();
            m.value.lambda = r.matrix();
            if (m.value.lambda.rows() != m.value.eta.size()) {
                throw ParseError("wire message eta/lambda dims disagree", r.pos);
            }
            record = std::move(m);
            break;
        }
        case kTagDecouple: {
            WireDecouple d;
            d.parent_id = static_cast<std::int32_t>(r.u32());
            d.child_id = static_cast<std::int32_t>(r.u32());
            record = d;
            break;
        }
        case kTagPosterior: {
            WirePosterior p;
            p.robot_id = static_cast<std::int32_t>(r.u32());
            p.version = static_cast<std::int32_t>(r.u32());
            p.z = r.matrix();
            p.mu = r.vector();
            p.sigma = r.matrix();
            p.theta = r.vector();
            record = std::move(p);
            break;
        }
        default:
            throw ParseError("unknown wire record tag " + std::to_string(tag), offset + 4);
    }
    if (r.pos != end) {
        throw ParseError("wire record length mismatch: expected end " + std::to_string(end) +
                             ", reader at " + std::to_string(r.pos),
                         r.pos);
    }
    offset = r.pos;
    return record;
}

std::vector<WireRecord> decode_all(const std::vector<std::uint8_t>& buffer) {
    std::vector<WireRecord> records;
    std::size_t offset = 0;
    while (offset < buffer.size()) records.push_back(decode(buffer, offset));
    return records;
}

}  // namespace gbpmap
