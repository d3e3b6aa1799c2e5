"""Exception types raised across the package."""

from __future__ import annotations


class ReqnnError(Exception):
    """Base class for every error raised by this package."""


class ShapeMismatchError(ReqnnError, ValueError):
    def __init__(self, left, right, what: str = "shapes"):
        self.left = tuple(left)
        self.right = tuple(right)
        super().__init__(f"{what} do not match: {self.left} vs {self.right}")


class InvalidArgumentError(ReqnnError, ValueError):
    def __init__(self, name: str, value, reason: str):
        self.name = name
        self.value = value
        self.reason = reason
        super().__init__(f"invalid {name}={value!r}: {reason}")


class DegenerateFrameError(ReqnnError, ArithmeticError):
    """PCA frame is not unique (repeated eigenvalues)."""

    def __init__(self, eigenvalues, gap: float):
        self.eigenvalues = tuple(float(v) for v in eigenvalues)
        self.gap = gap
        super().__init__(
            f"degenerate local frame: eigenvalues {self.eigenvalues}, smallest gap {gap:.3g}"
        )


class SpecError(ReqnnError, ValueError):
    def __init__(self, layer_index: int | None, message: str):
        self.layer_index = layer_index
        where = "network" if layer_index is None else f"layer {layer_index}"
        super().__init__(f"{where}: {message}")


class TapeError(ReqnnError, RuntimeError):
    """Backward pass requested without a matching recorded forward pass."""


class CloudParseError(ReqnnError, ValueError):
    def __init__(self, path, line: int | None, message: str):
        self.path = str(path)
        self.line = line
        loc = self.path if line is None else f"{self.path}:{line}"
        super().__init__(f"{loc}: {message}")
