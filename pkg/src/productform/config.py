from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    """Numerical thresholds shared by the solver stages.

    Residual tolerances are relative to the largest total plane rate, so
    rescaling time leaves every accept/reject decision unchanged.
    """

    root_tol: float = 1e-12
    form_tol: float = 1e-9
    dedup_tol: float = 1e-8
    degen_tol: float = 1e-8
    unit_margin: float = 1e-10
    imag_tol: float = 1e-9
    cond_max: float = 1e12


DEFAULT_TOL = Tolerances()
