#pragma once

// Client for a model served over a line-delimited JSON protocol, either by a
// subprocess on stdio or by a TCP server.
//
//   request:  {"prefix":[ints],"temperature":float}
//   response: {"probs":[floats of length vocab_size],"eok":float}
//
// One request per line, one response per line, in order. A client owns a
// single connection and keeps one request in flight.

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>

#include "cdk/model.hpp"

namespace cdk {

struct Endpoint {
  enum class Kind { Stdio, Tcp };
  Kind kind = Kind::Stdio;
  std::string command;  // Stdio: shell command line
  std::string host;     // Tcp
  std::uint16_t port = 0;

  // "stdio:<command>" or "tcp:<host>:<port>". Throws DomainError.
  static Endpoint parse(std::string_view text);
};

// Parses and validates one response line. Mass within 1e-4 of 1 is
// renormalized; anything else throws InvalidDistributionError. Malformed
// JSON throws ProtocolError.
TokenDistribution decode_response(std::string_view line, std::uint32_t vocab_size);
std::string encode_request(std::span<const TokenId> prefix, double temperature);

class ExternalModelClient : public ModelInterface {
 public:
  static constexpr double kMassTolerance = 1e-4;

  ExternalModelClient(Endpoint endpoint, std::uint32_t vocab_size, std::size_t max_len,
                      std::chrono::milliseconds timeout = std::chrono::seconds(30));
  ~ExternalModelClient() override;
  ExternalModelClient(const ExternalModelClient&) = delete;
  ExternalModelClient& operator=(const ExternalModelClient&) = delete;

  std::uint32_t vocab_size() const override { return vocab_size_; }
  std::size_t max_len() const override { return max_len_; }

  // Sends the temperature to the server, which applies it. Throws
  // TransportError, ProtocolError or InvalidDistributionError.
  TokenDistribution next_distribution(std::span<const TokenId> prefix,
                                      double temperature) const override;

 protected:
  TokenDistribution base_distribution(std::span<const TokenId> prefix) const override;

 private:
  class Channel;

  std::uint32_t vocab_size_;
  std::size_t max_len_;
  std::chrono::milliseconds timeout_;
  std::unique_ptr<Channel> channel_;
  mutable std::mutex mu_;
};

}  // namespace cdk
