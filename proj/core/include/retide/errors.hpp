#pragma once

#include <stdexcept>
#include <string>

namespace retide {

// Wire/framing faults. Argument violations use std::invalid_argument.
class ProtocolViolation : public std::runtime_error {
public:
  explicit ProtocolViolation(const std::string& what) : std::runtime_error(what) {}
};

class PayloadTooLarge : public ProtocolViolation {
public:
  explicit PayloadTooLarge(const std::string& what) : ProtocolViolation(what) {}
};

class IncompleteMessage : public ProtocolViolation {
public:
  explicit IncompleteMessage(const std::string& what) : ProtocolViolation(what) {}
};

// Socket-level failures (connect refused, timeout, peer closed).
class ConnectionError : public std::runtime_error {
public:
  explicit ConnectionError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace retide
