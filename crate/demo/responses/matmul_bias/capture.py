import triton
import triton.language as tl
from torch._inductor.runtime import triton_helpers
from torch._inductor.runtime.triton_heuristics import template


@template(num_stages=2, num_warps=4, triton_meta={'signature': {'arg_A': '*fp32', 'arg_B': '*fp32', 'in_ptr2': '*fp32', 'out_ptr1': '*fp32'}, 'device': 0, 'constants': {}})
@triton.jit
def triton_tem_fused_addmm_relu_0(arg_A, arg_B, in_ptr2, out_ptr1, M, N, K):
    BLOCK_M : tl.constexpr = 16
    BLOCK_N : tl.constexpr = 16
    BLOCK_K : tl.constexpr = 16
    A = arg_A
    B = arg_B
    pid = tl.program_id(0)
    grid_n = (N + BLOCK_N - 1) // BLOCK_N
    pid_m = pid // grid_n
    pid_n = pid % grid_n
    rm = pid_m * BLOCK_M + tl.arange(0, BLOCK_M)
    rn = pid_n * BLOCK_N + tl.arange(0, BLOCK_N)
    idx_m = rm[:, None]
    idx_n = rn[None, :]
    acc = tl.zeros((BLOCK_M, BLOCK_N), dtype=tl.float32)
    for k in range(0, K, BLOCK_K):
        rk = k + tl.arange(0, BLOCK_K)
        a = tl.load(A + idx_m * K + rk[None, :], mask=(idx_m < M) & (rk[None, :] < K), other=0.)
        b = tl.load(B + rk[:, None] * N + idx_n, mask=(rk[:, None] < K) & (idx_n < N), other=0.)
        acc += tl.dot(a, b, allow_tf32=False)
    mask = (idx_m < M) & (idx_n < N)
    tmp0 = tl.load(in_ptr2 + idx_n, mask, eviction_policy='evict_last')
    tmp1 = acc + tmp0
    tmp2 = triton_helpers.maximum(0, tmp1)
    tl.store(out_ptr1 + (idx_n + N * idx_m), tmp2, mask)
