#pragma once

#include <stdexcept>
#include <string>

namespace transfir {

// Base of every error raised by the library. Subclasses map onto CLI exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class ContractError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class IndexError : public Error { using Error::Error; };

class ParseError : public Error { using Error::Error; };
class VocabError : public Error { using Error::Error; };
class IntegrityError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };

// Checkpoint written by an incompatible format version.
class IncompatibleError : public Error { using Error::Error; };

}  // namespace transfir
