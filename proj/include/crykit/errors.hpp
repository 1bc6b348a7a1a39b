#pragma once

#include <stdexcept>
#include <string>

namespace crykit {

// Base for all toolkit errors. The CLI maps any CrykitError to a nonzero
// exit and a single machine-parseable line on stderr.
class CrykitError : public std::runtime_error {
public:
    CrykitError(std::string kind, const std::string& msg)
        : std::runtime_error(kind + ": " + msg), kind_(std::move(kind)) {}
    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

#define CRYKIT_ERROR(Name)                                          \
    class Name : public CrykitError {                               \
    public:                                                         \
        explicit Name(const std::string& msg)                       \
            : CrykitError(#Name, msg) {}                            \
    }

// audio-io
CRYKIT_ERROR(MalformedWav);
CRYKIT_ERROR(UnsupportedEncoding);

// dsp-features
CRYKIT_ERROR(ClipTooShort);
CRYKIT_ERROR(DegenerateFrame);
CRYKIT_ERROR(EmptyGroup);

// cry-synth
CRYKIT_ERROR(MonthOutOfRange);
CRYKIT_ERROR(UnstableFilter);

// cnn
CRYKIT_ERROR(ShapeMismatch);
CRYKIT_ERROR(EmptyClass);

// experiments
CRYKIT_ERROR(MissingFile);
CRYKIT_ERROR(MalformedManifest);
CRYKIT_ERROR(ClassTooSmall);
CRYKIT_ERROR(MissingGender);
CRYKIT_ERROR(MissingMonth);
CRYKIT_ERROR(SubjectLeakage);

// generic
CRYKIT_ERROR(IoError);
CRYKIT_ERROR(InvalidArgument);

#undef CRYKIT_ERROR

}  // namespace crykit
