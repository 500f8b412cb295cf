import torch


# TODO: move this to a @triton.jit kernel
def linear(x, w):
    return torch.matmul(x, w.t())
