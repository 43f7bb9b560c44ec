"""Exception types shared across the package."""


class NumericalFailure(RuntimeError):
    """A numerical routine did not reach its tolerance (quadrature, simplex cap, NaN loss)."""


class InfeasibleRuleError(ValueError):
    """A pricing rule has lower > upper at some grid prefix."""

    def __init__(self, triple, prefix, lower, upper):
        self.triple = tuple(triple)
        self.prefix = tuple(float(x) for x in prefix)
        self.lower = float(lower)
        self.upper = float(upper)
        super().__init__(
            f"pricing rule infeasible for triple {self.triple} at prefix {self.prefix}: "
            f"lower={self.lower:.10g} > upper={self.upper:.10g}"
        )


class ConfigError(ValueError):
    """Configuration failed validation; ``errors`` lists (field path, message) pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        lines = [f"{path}: {msg}" for path, msg in self.errors]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))
