"""Empirical convexity-region measurement for tiny models: central
finite-difference Hessians over the flat parameter vector, a classical
Jacobi eigensolver, and lam-sweep scans of the positive-semidefinite
fraction over sampled points in weight space.

Scans are restricted to smooth activations (tanh, sigmoid): relu kinks sit
on measure-zero sets that finite differences straddle.  Every (point, lam)
Hessian evaluation is independent of the others; the scan assembles results
single-threaded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .criteria import EXP_CAP, NumericDomainError, OverflowRiskError
from .network import MlpModel, batch_losses, forward, unflatten
from .seeds import rng_for

MAX_HESSIAN_DIM = 200
MAX_SCAN_PARAMS = 60
DEFAULT_FD_STEP = 1e-4
SMOOTH_ACTIVATIONS = ("tanh", "sigmoid")


def psd_tolerance(hessian) -> float:
    """Eigenvalue slack scaled by the Hessian's diagonal magnitude (raw
    eigenvalues grow with lam**p, so a fixed tolerance would be meaningless)."""
    h = np.asarray(hessian)
    return 1e-6 * (1.0 + float(np.abs(np.diag(h)).max()))


@dataclass
class HessianReport:
    lam: float
    point: np.ndarray
    min_eigenvalue: float
    psd: bool


@dataclass
class RegionScan:
    """Results of one lam-sweep over a fixed point set.  min_eigs and psd
    are (num_lambdas, num_points); the base-criterion (plain mean loss)
    results for the same points sit in ce_min_eigs / ce_psd."""

    lambdas: tuple
    points: np.ndarray
    min_eigs: np.ndarray
    psd: np.ndarray
    psd_fraction: np.ndarray
    ce_min_eigs: np.ndarray
    ce_psd: np.ndarray
    used_nrae: np.ndarray

    def comparison_violations(self) -> np.ndarray:
        """Per-lam count of points that are PSD under the base criterion but
        not under the convexified one.  Reported, never silently dropped."""
        return np.array([int(np.sum(self.ce_psd & ~self.psd[i])) for i in range(len(self.lambdas))])


def _probe(objective, x):
    val = float(objective(x))
    if not np.isfinite(val):
        raise NumericDomainError(f"objective returned {val} at probe point {x!r}")
    return val


def fd_hessian(objective, point, h: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Central second differences of a scalar objective, symmetrized.

    Per-coordinate steps h_i = h * (1 + |x_i|) balance curvature against
    round-off.  Any non-finite objective value aborts with the probe point.
    """
    x = np.asarray(point, dtype=float)
    n = x.size
    if n > MAX_HESSIAN_DIM:
        raise ValueError(f"{n} parameters exceeds the desk-scale guard of {MAX_HESSIAN_DIM}")
    if h <= 0:
        raise ValueError("h must be positive")
    steps = h * (1.0 + np.abs(x))
    hess = np.empty((n, n))
    f0 = _probe(objective, x)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = steps[i]
        fpp = _probe(objective, x + 2.0 * ei)
        fmm = _probe(objective, x - 2.0 * ei)
        hess[i, i] = (fpp - 2.0 * f0 + fmm) / (4.0 * steps[i] ** 2)
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = steps[j]
            fpq = _probe(objective, x + ei + ej)
            fpm = _probe(objective, x + ei - ej)
            fmp = _probe(objective, x - ei + ej)
            fmq = _probe(objective, x - ei - ej)
            hess[i, j] = hess[j, i] = (fpq - fpm - fmp + fmq) / (4.0 * steps[i] * steps[j])
    return 0.5 * (hess + hess.T)


def jacobi_eigh(matrix, tol: float = 1e-12, max_sweeps: int = 100) -> tuple:
    """Classical cyclic Jacobi diagonalization of a symmetric matrix.

    Returns (eigenvalues ascending, eigenvector columns in the same order).
    Sweeps run until the off-diagonal Frobenius norm drops below
    tol * ||H||_F.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got shape {a.shape}")
    n = a.shape[0]
    amax = float(np.abs(a).max()) if a.size else 0.0
    defect = float(np.abs(a - a.T).max())
    if defect > 1e-8 * max(amax, 1e-300):
        raise ValueError(f"matrix is not symmetric (defect {defect:.3g} vs scale {amax:.3g})")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    norm = float(np.linalg.norm(a))
    if norm == 0.0 or n == 1:
        order = np.argsort(np.diag(a))
        return np.diag(a)[order].copy(), v[:, order]

    for _ in range(max_sweeps):
        off = float(np.linalg.norm(a - np.diag(np.diag(a))))
        if off <= tol * norm:
            order = np.argsort(np.diag(a))
            return np.diag(a)[order].copy(), v[:, order]
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0.0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J, J the (p,q) plane rotation
                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p, row_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    raise ArithmeticError(f"Jacobi sweep did not converge within {max_sweeps} sweeps")


def jacobi_eigenvalues(matrix, tol: float = 1e-12, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of a symmetric matrix, ascending."""
    vals, _ = jacobi_eigh(matrix, tol=tol, max_sweeps=max_sweeps)
    return vals


def hessian_report(objective, point, lam: float, h: float = DEFAULT_FD_STEP) -> HessianReport:
    """FD Hessian at one point, reduced to its minimum eigenvalue and a PSD
    flag under the diagonal-scaled tolerance."""
    hess = fd_hessian(objective, point, h)
    min_eig = float(jacobi_eigenvalues(hess)[0])
    return HessianReport(lam, np.asarray(point, dtype=float), min_eig, min_eig >= -psd_tolerance(hess))


def _losses_at(template: MlpModel, dataset, vec) -> np.ndarray:
    model = unflatten(template, vec)
    cache = forward(model, dataset.inputs)
    return batch_losses(cache.outputs, dataset.targets, template.output_mode)


def scan_convexity(model_template: MlpModel, dataset, lambdas, num_points: int,
                   box_radius: float, seed: int, p: int = 1,
                   h: float = DEFAULT_FD_STEP, nrae_fallback: bool = True) -> RegionScan:
    """Sample parameter vectors uniformly from [-box_radius, box_radius]^n
    and record, for every lam, the minimum Hessian eigenvalue of the raw
    exponential criterion (its log-domain form when the raw one would
    overflow) plus the plain mean-loss Hessian for the same points.
    """
    n = model_template.param_count
    if n > MAX_SCAN_PARAMS:
        raise ValueError(f"{n} parameters exceeds the scan guard of {MAX_SCAN_PARAMS}")
    if model_template.activation not in SMOOTH_ACTIVATIONS:
        raise ValueError(f"scan requires a smooth activation, got {model_template.activation!r}")
    lam_list = [float(v) for v in lambdas]
    if not lam_list:
        raise ValueError("lambdas must be non-empty")
    if any(b <= a for a, b in zip(lam_list, lam_list[1:])):
        raise ValueError(f"lambdas must be strictly ascending, got {lam_list}")
    if lam_list[0] < 1.0:
        raise ValueError(f"lambdas must all be >= 1, got {lam_list}")
    if num_points < 1:
        raise ValueError("num_points must be >= 1")

    points = rng_for(seed, "scan").uniform(-box_radius, box_radius, size=(num_points, n))
    L = len(lam_list)
    min_eigs = np.empty((L, num_points))
    psd = np.zeros((L, num_points), dtype=bool)
    used_nrae = np.zeros((L, num_points), dtype=bool)
    ce_min_eigs = np.empty(num_points)
    ce_psd = np.zeros(num_points, dtype=bool)

    def ce_objective(vec):
        return float(np.mean(_losses_at(model_template, dataset, vec)))

    for j in range(num_points):
        x = points[j]
        rep = hessian_report(ce_objective, x, lam=0.0, h=h)
        ce_min_eigs[j] = rep.min_eigenvalue
        ce_psd[j] = rep.psd
        c_center = _losses_at(model_template, dataset, x)
        for i, lam in enumerate(lam_list):
            s = lam ** p
            feasible = s * float(c_center.max()) <= EXP_CAP
            if not feasible and not nrae_fallback:
                raise OverflowRiskError(
                    f"lam={lam}, point {j}: raw criterion infeasible and fallback disabled"
                )
            if feasible:
                def objective(vec, _s=s):
                    return float(np.mean(np.exp(_s * _losses_at(model_template, dataset, vec))))
            else:
                used_nrae[i, j] = True

                def objective(vec, _s=s):
                    c = _losses_at(model_template, dataset, vec)
                    z = _s * c
                    zmax = z.max()
                    return float((zmax + np.log(np.mean(np.exp(z - zmax)))) / _s)

            rep = hessian_report(objective, x, lam=lam, h=h)
            min_eigs[i, j] = rep.min_eigenvalue
            psd[i, j] = rep.psd

    return RegionScan(
        lambdas=tuple(lam_list),
        points=points,
        min_eigs=min_eigs,
        psd=psd,
        psd_fraction=psd.mean(axis=1),
        ce_min_eigs=ce_min_eigs,
        ce_psd=ce_psd,
        used_nrae=used_nrae,
    )


def write_scan_csvs(scan: RegionScan, detail_path, summary_path) -> None:
    """Detail CSV `lambda,point_index,min_eig,psd` and summary CSV
    `lambda,psd_fraction`, LF line endings."""
    with open(detail_path, "w", newline="\n") as fh:
        fh.write("lambda,point_index,min_eig,psd\n")
        for i, lam in enumerate(scan.lambdas):
            for j in range(scan.points.shape[0]):
                flag = "true" if scan.psd[i, j] else "false"
                fh.write(f"{float(lam)!r},{j},{float(scan.min_eigs[i, j])!r},{flag}\n")
    with open(summary_path, "w", newline="\n") as fh:
        fh.write("lambda,psd_fraction\n")
        for i, lam in enumerate(scan.lambdas):
            fh.write(f"{float(lam)!r},{float(scan.psd_fraction[i])!r}\n")
