#include "nacd/tensor.hpp"

namespace nacd {

std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    out += ")";
    return out;
}

bool same_shape(const Shape& a, const Shape& b) {
    return a == b;
}

}  // namespace nacd
