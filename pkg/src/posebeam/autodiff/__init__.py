# Tensor operations, parameter store and optimizer on top of torch.autograd.
