import numpy as np
import pytest

from kohnlab.algebra import extract_det_coefficients
from kohnlab.kohn_complex import equivalence_check
from kohnlab.model import BasisSet, RadialProblem, assemble_elements

K_GRID = tuple(float(k) for k in np.linspace(0.1, 1.0, 10))


@pytest.fixture(scope="session")
def basis():
    return BasisSet.default()


@pytest.fixture(scope="session")
def tables(basis):
    return {k: assemble_elements(RadialProblem(k=k), basis) for k in K_GRID}


@pytest.fixture(scope="session")
def coeffs(tables):
    return {k: extract_det_coefficients(t) for k, t in tables.items()}


@pytest.fixture(scope="session")
def equivalence(tables, coeffs):
    return {k: equivalence_check(t, coeffs=coeffs[k]) for k, t in tables.items()}


# one summary line per acceptance criterion -----------------------------------

_CRITERIA: dict = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    n = props["criterion"]
    entry = _CRITERIA.setdefault(n, {"title": props.get("title", ""), "ok": True, "notes": []})
    entry["ok"] = entry["ok"] and report.passed
    if "worst" in props:
        entry["notes"].append(f"{props.get('what', 'worst')} {props['worst']:.3e}")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        status = "PASS" if e["ok"] else "FAIL"
        notes = "; ".join(e["notes"])
        terminalreporter.write_line(f"criterion {n:2d} {status}  {e['title']}  [{notes}]")
