#include "avtlab/error.hpp"

namespace avtlab {

std::string_view to_string(Errc code) noexcept {
    switch (code) {
        case Errc::MalformedJson: return "MalformedJson";
        case Errc::UnknownType: return "UnknownType";
        case Errc::MissingField: return "MissingField";
        case Errc::InvalidField: return "InvalidField";
        case Errc::InvalidPayload: return "InvalidPayload";
        case Errc::CorruptBlob: return "CorruptBlob";
        case Errc::InvalidOrigin: return "InvalidOrigin";
        case Errc::DuplicatePage: return "DuplicatePage";
        case Errc::UnknownPage: return "UnknownPage";
        case Errc::UnknownSocket: return "UnknownSocket";
        case Errc::DuplicateRegistration: return "DuplicateRegistration";
        case Errc::SendWithoutSocket: return "SendWithoutSocket";
        case Errc::ConfigInvalid: return "ConfigInvalid";
        case Errc::NoClients: return "NoClients";
        case Errc::Incomplete: return "Incomplete";
        case Errc::MalformedStream: return "MalformedStream";
        case Errc::EmptyCorpus: return "EmptyCorpus";
        case Errc::Io: return "Io";
    }
    return "Unknown";
}

Error::Error(Errc code, std::string detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail),
      code_(code),
      detail_(std::move(detail)) {}

}  // namespace avtlab
