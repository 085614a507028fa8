#include "bnet/network.hpp"

#include <stdexcept>

namespace bnet {

void Network::check_shapes() const {
    Shape3 s = input;
    if (s.flat() <= 0) throw std::logic_error("network: empty input shape");
    for (const auto& c : convs) s = output_shape(c.spec, s);  // throws on mismatch
    int width = s.flat();
    for (const auto& d : dense) {
        if (d.d_in != width) throw std::logic_error("network: dense layer width mismatch");
        width = d.d_out;
    }
    if (head.num_classes <= 0 || head.group_size <= 0 || head.tau <= 0.0)
        throw std::logic_error("network: bad GroupSum head");
    if (width != head.num_classes * head.group_size)
        throw std::logic_error("network: output width does not match GroupSum head");
}

Network Network::discretized_snapshot() const {
    Network copy = *this;
    for (auto& c : copy.convs)
        if (!c.frozen) c.freeze();
    for (auto& d : copy.dense)
        if (!d.frozen) d.freeze();
    return copy;
}

}  // namespace bnet
