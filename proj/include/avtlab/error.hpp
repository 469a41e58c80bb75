#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace avtlab {

/// Error categories shared by every module. The CLI prints them as
/// `ERR:<code>:<detail>`.
enum class Errc {
    MalformedJson,
    UnknownType,
    MissingField,
    InvalidField,
    InvalidPayload,
    CorruptBlob,
    InvalidOrigin,
    DuplicatePage,
    UnknownPage,
    UnknownSocket,
    DuplicateRegistration,
    SendWithoutSocket,
    ConfigInvalid,
    NoClients,
    Incomplete,
    MalformedStream,
    EmptyCorpus,
    Io,
};

std::string_view to_string(Errc code) noexcept;

class Error : public std::runtime_error {
public:
    Error(Errc code, std::string detail);

    Errc code() const noexcept { return code_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    Errc code_;
    std::string detail_;
};

}  // namespace avtlab
