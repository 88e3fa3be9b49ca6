#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace bbnet {

// Every error carries a short machine-readable kind; the CLI prints
// "error: <kind>: <message>" on a single line.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

class DimsError : public Error {
public:
    DimsError(int divisor, const std::string& message)
        : Error("DimsError", message), divisor_(divisor) {}
    int divisor() const noexcept { return divisor_; }

private:
    int divisor_;
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& m) : Error("ShapeError", m) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& m) : Error("ConfigError", m) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& m) : Error("IOError", m) {}
};

class PairingError : public Error {
public:
    explicit PairingError(const std::string& m) : Error("PairingError", m) {}
};

class DegenerateMaskError : public Error {
public:
    explicit DegenerateMaskError(const std::string& m) : Error("DegenerateMaskError", m) {}
};

class DegenerateGTError : public Error {
public:
    explicit DegenerateGTError(const std::string& m) : Error("DegenerateGTError", m) {}
};

class MissingPredictionError : public Error {
public:
    explicit MissingPredictionError(std::vector<std::string> stems)
        : Error("MissingPredictionError", describe(stems)), stems_(std::move(stems)) {}
    const std::vector<std::string>& stems() const noexcept { return stems_; }

private:
    static std::string describe(const std::vector<std::string>& stems) {
        std::string m = "no prediction for:";
        for (const auto& s : stems) m += " " + s;
        return m;
    }
    std::vector<std::string> stems_;
};

class WeightLoadError : public Error {
public:
    explicit WeightLoadError(const std::string& m) : Error("WeightLoadError", m) {}
};

class CheckpointMismatchError : public Error {
public:
    explicit CheckpointMismatchError(const std::string& m) : Error("CheckpointMismatchError", m) {}
};

class UnknownSwitchError : public Error {
public:
    explicit UnknownSwitchError(const std::string& m) : Error("UnknownSwitchError", m) {}
};

class NonFiniteError : public Error {
public:
    explicit NonFiniteError(const std::string& m) : Error("NonFiniteError", m) {}
};

}  // namespace bbnet
