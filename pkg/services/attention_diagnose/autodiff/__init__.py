from .graph import Batch, Graph, HessianOperator, ParamSpec, Traced, forward, gradient, hvp, loss_and_gradient
from .tensor import Tape, Tensor, grad, no_grad
