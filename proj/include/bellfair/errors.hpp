#pragma once

#include <stdexcept>
#include <string>

namespace bellfair
{
//! Invalid configuration value; key() names the offending entry.
class ConfigError : public std::invalid_argument
{
  public:
    ConfigError(std::string key, std::string const& what)
        : std::invalid_argument(key + ": " + what), key_(std::move(key))
    {
    }

    std::string const& key() const noexcept { return key_; }

  private:
    std::string key_;
};

//! An estimator was asked for a value with nothing to estimate from.
class NoDataError : public std::domain_error
{
  public:
    using std::domain_error::domain_error;
};

//! Sweep or control input does not satisfy the measurement protocol.
class ProtocolError : public std::invalid_argument
{
  public:
    using std::invalid_argument::invalid_argument;
};

//! A 64-bit counter would wrap.
class OverflowError : public std::overflow_error
{
  public:
    using std::overflow_error::overflow_error;
};

}  // namespace bellfair
