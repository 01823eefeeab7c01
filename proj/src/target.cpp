#include "buzz/target.hpp"

#include <algorithm>

namespace buzz {

std::vector<int> predict_all(const TargetModel& model, const Tensor& images, std::size_t chunk) {
    if (chunk == 0) throw std::invalid_argument("predict_all: chunk must be positive");
    std::vector<int> out;
    out.reserve(images.dim(0));
    for (std::size_t b = 0; b < images.dim(0); b += chunk) {
        const auto part = model.predict(images.rows(b, std::min(images.dim(0), b + chunk)));
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

} // namespace buzz
