"""Minimal parameter-container base class."""

from .tensor import Parameter


class Module:
    """Holds Parameters and sub-Modules; supports recursive traversal.

    Attribute insertion order fixes the traversal order. Lists and tuples
    of modules or parameters are traversed element-wise.
    """

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            yield from _walk(path, value)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _walk(path, value):
    if isinstance(value, Parameter):
        yield path, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=path + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(f"{path}.{i}", item)
