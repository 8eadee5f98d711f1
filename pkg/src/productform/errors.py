"""Exception hierarchy.

Every solver failure derives from :class:`ProductFormError`. The three
intermediate classes map onto the command-line exit codes: assumption
breaches (2), degenerate bases (3) and numerical failures (4).
"""


class ProductFormError(Exception):
    """Base class for all solver errors."""


class AssumptionError(ProductFormError):
    """The model does not belong to the supported class."""


class DegeneracyError(ProductFormError):
    """The product-form basis collapses (coinciding roots or forms)."""


class NumericalError(ProductFormError):
    """A numerical step failed a residual, conditioning or count check."""


class AssumptionViolation(AssumptionError):
    def __init__(self, details):
        if isinstance(details, str):
            details = [details]
        self.details = list(details)
        super().__init__("; ".join(self.details))


class InconsistentK(AssumptionError):
    pass


class BadParams(AssumptionError):
    pass


class NotSymmetric(AssumptionError):
    pass


class AssumptionFourViolated(AssumptionError):
    pass


class StateOutOfDomain(ProductFormError, ValueError):
    pass


class NoBracket(NumericalError):
    pass


class MultipleRoots(NumericalError):
    pass


class RootCountMismatch(NumericalError):
    def __init__(self, expected, got, detail=""):
        self.expected = expected
        self.got = got
        msg = f"expected {expected} roots in the unit disc, got {got}"
        super().__init__(f"{msg} ({detail})" if detail else msg)


class UniqueCountMismatch(NumericalError):
    def __init__(self, expected, got):
        self.expected = expected
        self.got = got
        super().__init__(f"expected {expected} unique roots, got {got}")


class ResidualTooLarge(NumericalError):
    def __init__(self, message, form=None):
        self.form = form
        super().__init__(message)


class BestEffortIncomplete(NumericalError):
    def __init__(self, found, expected, basis=None):
        self.found = found
        self.expected = expected
        self.basis = basis
        super().__init__(f"best-effort search found {found} of {expected} product forms")


class SingularSystem(NumericalError):
    def __init__(self, cond):
        self.cond = cond
        super().__init__(f"boundary system is singular (condition estimate {cond:.3e})")


class ResidualCheckFailed(NumericalError):
    def __init__(self, residual):
        self.residual = residual
        super().__init__(f"omitted balance equation residual {residual:.3e} exceeds tolerance")


class PositiveExponent(NumericalError):
    pass


class NotConverged(NumericalError):
    pass


class ReducibleChain(NumericalError):
    pass


class DegenerateDiscriminant(DegeneracyError):
    def __init__(self, beta0):
        self.beta0 = beta0
        super().__init__(f"discriminant vanishes at root {beta0:.12g}")


class DVanishes(DegeneracyError):
    def __init__(self, beta0, plane=None):
        self.beta0 = beta0
        self.plane = plane
        super().__init__(f"D(beta0) vanishes at beta0 = {beta0:.12g}")


class DegenerateBasis(DegeneracyError):
    """Fewer distinct product forms than the 2^c K the representation needs.

    ``basis`` carries the deficient basis so callers can still report it;
    ``offending_roots`` lists the roots where the discriminant vanishes.
    """

    def __init__(self, basis, n_distinct, expected, offending_roots):
        self.basis = basis
        self.n_distinct = n_distinct
        self.expected = expected
        self.offending_roots = list(offending_roots)
        roots = ", ".join(f"{complex(r):.6g}" for r in self.offending_roots)
        super().__init__(
            f"only {n_distinct} distinct product forms, {expected} required"
            + (f"; degenerate roots: {roots}" if roots else "")
        )


class DegenerateBasisInput(DegeneracyError):
    pass
