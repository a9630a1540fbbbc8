#ifndef AMIL_ERRORS_HPP_
#define AMIL_ERRORS_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace amil {

// Base of every error raised by the library. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::size_t coordinate)
      : Error(what), coordinate_(coordinate) {}
  std::size_t coordinate() const { return coordinate_; }

 private:
  std::size_t coordinate_;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

// Raised by the training loop when a loss leaves the finite range.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t iteration, double l_real, double l_fake,
                  double gen_loss);
  std::size_t iteration() const { return iteration_; }
  double l_real() const { return l_real_; }
  double l_fake() const { return l_fake_; }
  double gen_loss() const { return gen_loss_; }

 private:
  std::size_t iteration_;
  double l_real_;
  double l_fake_;
  double gen_loss_;
};

}  // namespace amil

#endif  // AMIL_ERRORS_HPP_
