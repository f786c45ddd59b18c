#ifndef CITYSCOPE_ERRORS_HPP
#define CITYSCOPE_ERRORS_HPP

#include <stdexcept>
#include <string>
#include <utility>

namespace cityscope {

// Domain error with a stable machine-readable code. The CLI maps any
// Error to exit code 1 and prints "<code>: <message>".
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(code + ": " + message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

[[noreturn]] inline void fail(const std::string& code, const std::string& message) {
    throw Error(code, message);
}

} // namespace cityscope

#endif
