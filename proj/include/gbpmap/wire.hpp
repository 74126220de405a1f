#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "gbpmap/gaussian.hpp"

namespace gbpmap {

// Inter-robot wire records. The simulator delivers them in memory; encode /
// decode provide the length-prefixed little-endian binary layout documented
// in docs/wire_format.md.

struct WireConnect {
    std::int32_t parent_id = 0;
    std::int32_t child_id = 0;
    Eigen::MatrixXd parent_z;
    Eigen::MatrixXd child_z;
};

struct WireMessage {
    std::int32_t parent_id = 0;
    std::int32_t child_id = 0;
    bool to_parent = false;  // direction across the shared conditional
    InfoGaussian value;
};

struct WireDecouple {
    std::int32_t parent_id = 0;
    std::int32_t child_id = 0;
};

struct WirePosterior {
    std::int32_t robot_id = 0;
    std::int32_t version = 0;
    Eigen::MatrixXd z;
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;
    Eigen::VectorXd theta;  // kernel log-params, then log sigma
};

using WireRecord = std::variant<WireConnect, WireMessage, WireDecouple, WirePosterior>;

std::vector<std::uint8_t> encode(const WireRecord& record);
void encode_append(const WireRecord& record, std::vector<std::uint8_t>& out);

/// Decodes one record starting at `offset`, advancing it past the record.
/// Throws ParseError (with byte offset) on malformed input.
WireRecord decode(const std::vector<std::uint8_t>& buffer, std::size_t& offset);
std::vector<WireRecord> decode_all(const std::vector<std::uint8_t>& buffer);

}  // namespace gbpmap
