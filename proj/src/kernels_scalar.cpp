#include "spikefed/kernels.hpp"
#include "spikefed/kernels_ref.hpp"

namespace spikefed::kernels {

const Table& scalar_table() {
    static const Table t = {
        &ref::add<float>,    &ref::sub<float>,       &ref::mul<float>,
        &ref::div<float>,    &ref::affine<float>,    &ref::axpy<float>,
        &ref::matmul<float>, &ref::bntt_apply<float>, &ref::lif_step<float>,
        &ref::sgd_step<float>, &ref::relu<float>,    &ref::relu_grad<float>,
    };
    return t;
}

}  // namespace spikefed::kernels
