import torch


def broken(x):
    # only works for square inputs
    return torch.tanh(x @ x)
