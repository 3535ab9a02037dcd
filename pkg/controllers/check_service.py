"""
Check Service for RicciLab.
Reads one metric file and reports its curvature margins, boundary
classification and parabolicity constant.
"""

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from flows.doubling import SYMMETRY_TOLERANCE, boundary_forms_of, mirror_boundary_forms, symmetry_residual
from flows.parabolic import certify_parabolicity
from flows.rotsym import (
    WarpedMetric,
    cone_check_rotsym,
    equator_boundary,
    warped_curvature,
    warped_parabolicity,
)
from geometry.curvature import margins_summary, riemann
from geometry.grid import Grid
from geometry.metric_io import document_to_metric, read_document
from models.data_models import ConeMargins, ConeVariant
from utils.exceptions import MetricFileError
from utils.logger import get_logger


@dataclass
class CheckReport:
    """Everything ``check`` prints about one file."""
    path: str
    kind: str
    n: int
    shape: tuple
    time: Optional[float]
    margins: ConeMargins
    lam: float
    boundary: List[Dict[str, Any]] = field(default_factory=list)
    symmetry_residual: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["margins"] = self.margins.to_dict()
        data["shape"] = list(self.shape)
        return data

    def lines(self) -> List[str]:
        """Human-readable report, one fact per line."""
        out = [f"file: {self.path}", f"kind: {self.kind}  n={self.n}  grid={'x'.join(map(str, self.shape))}"]
        if self.time is not None:
            out.append(f"time: {self.time:.6g}")
        for name, value in self.margins.to_dict().items():
            if not np.isnan(value):
                out.append(f"{name}: {value:.6e}")
        out.append(f"lambda_parabolicity: {self.lam:.6g}")
        if self.symmetry_residual is not None:
            out.append(f"symmetry_residual: {self.symmetry_residual:.3e}")
        for form in self.boundary:
            flags = ", ".join(name for name in ("convex", "two_convex", "mean_convex") if form[name])
            out.append(f"boundary {form['where']}: |A|={form['A_norm']:.3e} H_min={form['H_min']:.3e} "
                       f"[{flags or 'none'}]")
        return out


def _form_entry(form, where: str) -> Dict[str, Any]:
    entry = {"where": where, "A_norm": form.norm, "H_min": float(np.min(form.H))}
    entry.update(form.classification())
    return entry


def _check_metric(path: str, document, pic_sample: int, seed: int) -> CheckReport:
    g = document_to_metric(document)
    g.cholesky()
    bundle = riemann(g)
    margins = margins_summary(bundle, cones=g.n >= 4, sample=pic_sample, seed=seed)
    report = CheckReport(path=path, kind="metric", n=g.n, shape=g.grid.shape, time=g.time, margins=margins,
                         lam=certify_parabolicity(g).lam)
    if document.flags.get("half"):
        forms = mirror_boundary_forms(g)
        report.boundary = [_form_entry(forms[0], "x0=0"), _form_entry(forms[1], "x0=L")]
    elif document.flags.get("doubled"):
        report.symmetry_residual = symmetry_residual(g)
        if report.symmetry_residual <= SYMMETRY_TOLERANCE:
            forms = boundary_forms_of(g)
            report.boundary = [_form_entry(forms[0], "mirror 0"), _form_entry(forms[1], "mirror L")]
        else:
            get_logger().warning(f"{path}: not reflection invariant, boundary forms skipped")
    return report


def _check_warped(path: str, document, pic_sample: int, seed: int) -> CheckReport:
    n = int(document.extra.get("n", 0))
    if "psi" not in document.fields or "phi" not in document.fields or n < 2:
        raise MetricFileError(f"{path}: warped file needs psi, phi and n")
    try:
        wm = WarpedMetric(Grid(document.grid_spec), document.fields["psi"], document.fields["phi"],
                          n, document.time)
    except ValueError as e:
        raise MetricFileError(f"{path}: {e}")
    wm.check_positive()
    curvature = warped_curvature(wm)
    margins = ConeMargins(min_scalar=float(np.min(curvature.scalar)),
                          min_curvature_operator=cone_check_rotsym(curvature.K0, curvature.K1, n))
    if n >= 4:
        margins.pic, margins.pic1, margins.pic2 = (
            cone_check_rotsym(curvature.K0, curvature.K1, n, variant, pic_sample, seed)
            for variant in (ConeVariant.PIC, ConeVariant.PIC1, ConeVariant.PIC2))
    report = CheckReport(path=path, kind="warped", n=n, shape=wm.grid.shape, time=wm.time, margins=margins,
                         lam=warped_parabolicity(wm))
    if wm.hemisphere:
        A, H = equator_boundary(wm)
        # umbilic: every principal curvature equals A
        convex = bool(A >= -1e-8)
        report.boundary = [{"where": "equator", "A_norm": abs(A), "H_min": H, "convex": convex,
                            "two_convex": convex, "mean_convex": bool(H >= -1e-8)}]
    return report


def check_file(path: str, pic_sample: int = 64, seed: int = 0) -> CheckReport:
    """
    Margins, parabolicity and boundary classification of a metric or warped file.

    Raises MetricFileError for malformed or vector files and PositivityError
    naming the first node where the metric is not positive definite.
    """
    document = read_document(path)
    if document.kind == "metric":
        report = _check_metric(path, document, pic_sample, seed)
    elif document.kind == "warped":
        report = _check_warped(path, document, pic_sample, seed)
    else:
        raise MetricFileError(f"{path}: check needs a metric or warped file, found {document.kind!r}")
    get_logger().info(f"checked {path}: min curvature operator eigenvalue "
                      f"{report.margins.min_curvature_operator:.4e}, lambda {report.lam:.4g}")
    return report
