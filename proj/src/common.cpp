#include "isrf/common.hpp"

#include <cstdio>

namespace isrf {

std::string space_name(Space s) {
    switch (s) {
        case Space::Raw: return "raw";
        case Space::Reduced: return "reduced";
        case Space::Rec: return "rec";
    }
    throw Error("space_name: invalid space");
}

Space space_from_name(const std::string& name) {
    if (name == "raw") return Space::Raw;
    if (name == "reduced") return Space::Reduced;
    if (name == "rec") return Space::Rec;
    throw Error("unknown embedding space: " + name);
}

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace isrf
