"""Information criteria and sweeps over the number of clusters."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from .em import FitConfig, FitReport, fit, n_free_parameters

__all__ = ["information_criteria", "SelectionEntry", "SelectionReport", "sweep_k"]

logger = logging.getLogger(__name__)

CRITERIA = ("aic", "bic", "icl")


def information_criteria(report: FitReport, N: int):
    """``(aic, bic, icl)`` of a fitted model on ``N`` observations.

    ICL adds twice the Shannon entropy of the responsibilities to BIC. The
    likelihood is the unpenalized one even if an onset prior was used.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    ll = report.loglik
    if not np.isfinite(ll):
        raise ValueError(f"non-finite log-likelihood {ll}")
    resp = np.asarray(report.responsibilities, dtype=float)
    if resp.shape[0] != N:
        raise ValueError(f"responsibilities cover {resp.shape[0]} observations, expected {N}")
    model = report.model
    p = n_free_parameters(model.n_components, model.n_features, report.shared_gamma)
    aic = -2.0 * ll + 2.0 * p
    bic = -2.0 * ll + p * np.log(N)
    icl = bic - 2.0 * float(xlogy(resp, resp).sum())
    return float(aic), float(bic), float(icl)


@dataclass
class SelectionEntry:
    K: int
    loglik: float = float("nan")
    p: int = 0
    aic: float = float("nan")
    bic: float = float("nan")
    icl: float = float("nan")
    report: FitReport | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self, include_report: bool = False) -> dict:
        out = {"K": self.K, "loglik": self.loglik, "p": self.p, "aic": self.aic,
               "bic": self.bic, "icl": self.icl, "error": self.error}
        if include_report and self.report is not None:
            out["report"] = self.report.to_dict(include_responsibilities=False)
        return out


@dataclass
class SelectionReport:
    entries: list = field(default_factory=list)

    @property
    def ks(self) -> list:
        return [e.K for e in self.entries]

    def chosen(self, criterion: str) -> int | None:
        """Argmin of ``criterion`` over the successful entries (smallest K on ties)."""
        if criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {criterion!r}")
        ok = [e for e in self.entries if e.ok and np.isfinite(getattr(e, criterion))]
        if not ok:
            return None
        return min(ok, key=lambda e: (getattr(e, criterion), e.K)).K

    @property
    def chosen_k(self) -> dict:
        return {c: self.chosen(c) for c in CRITERIA}

    def to_dict(self, include_reports: bool = False) -> dict:
        return {
            "entries": [e.to_dict(include_reports) for e in self.entries],
            "chosen_k": self.chosen_k,
        }

    def write_json(self, path, include_reports: bool = True):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(include_reports), fh, indent=1)
            fh.write("\n")

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["K", "loglik", "p", "aic", "bic", "icl"])
            for e in self.entries:
                w.writerow([e.K, repr(e.loglik), e.p, repr(e.aic), repr(e.bic), repr(e.icl)])


def sweep_k(X, t, k_min: int, k_max: int, config: FitConfig | None = None) -> SelectionReport:
    """Fit every K in ``k_min..k_max`` and score each best run.

    A K whose fit raises is recorded with its error message and the sweep
    moves on.
    """
    config = config or FitConfig()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N = X.shape[0]
    if not 1 <= k_min <= k_max <= N:
        raise ValueError(f"need 1 <= k_min <= k_max <= N, got {k_min}..{k_max} with N={N}")
    out = SelectionReport()
    for K in range(k_min, k_max + 1):
        try:
            rep = fit(X, t, K, config)
            aic, bic, icl = information_criteria(rep, N)
        except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            logger.warning("K=%d failed: %s", K, exc)
            out.entries.append(SelectionEntry(K, error=f"{type(exc).__name__}: {exc}"))
            continue
        p = n_free_parameters(K, X.shape[1], config.shared_gamma)
        out.entries.append(SelectionEntry(K, rep.loglik, p, aic, bic, icl, rep))
    return out
