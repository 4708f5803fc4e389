"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are invalid for an operation."""

    def __init__(self, op, *shapes, detail=""):
        msg = f"{op}: incompatible shapes {', '.join(str(tuple(s)) for s in shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.op = op
        self.shapes = shapes


class DataError(ValueError):
    """Bad or inconsistent input data (files, manifests, labels)."""


class NumericalError(RuntimeError):
    """A computation produced NaN/inf where it must not."""
