import numpy as np
import pytest

from voxelfit.voxel import VoxelTable


@pytest.fixture
def small_table():
    """Five cells, two strata, non-unit volumes, an intercept column."""
    return VoxelTable(
        cell_ids=["a", "b", "c", "d", "e"],
        strata=["S", "S", "S", "W", "W"],
        volumes=[1.0, 2.0, 0.5, 1.0, 3.0],
        covariates=[[1.0, 0.2], [1.0, -1.0], [1.0, 0.7], [1.0, 1.5], [1.0, 0.0]],
        counts=[0, 3, 1, 0, 2],
        covariate_names=("intercept", "cape"),
    )


@pytest.fixture
def poisson_table():
    """A few thousand cells of Poisson data with beta = (-1, 1, 1)."""
    from voxelfit.simulate import simulate_table

    return simulate_table(4000, np.array([-1.0, 1.0, 1.0]), seed=11)


def pytest_terminal_summary(terminalreporter):
    reports = []
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            if getattr(rep, "when", "call") != "call" and key != "error":
                continue
            if "test_acceptance.py" not in rep.nodeid:
                continue
            reports.append(rep)
    if not reports:
        return
    terminalreporter.section("acceptance criteria")
    for rep in sorted(reports, key=lambda r: r.nodeid):
        props = dict(rep.user_properties)
        status = "PASS" if rep.passed else "FAIL"
        label = props.get("criterion", rep.nodeid.split("::")[-1])
        detail = props.get("detail", "")
        terminalreporter.write_line(f"[{status}] {label}" + (f" :: {detail}" if detail else ""))


@pytest.fixture(scope="session")
def consistency_sweep():
    """Regime (a): B = 200 independent simulations per J = 2^9..2^16, half the cells empty."""
    from voxelfit.estimators import Method
    from voxelfit.simulate import SimConfig, run_sweep

    cfg = SimConfig(
        J_values=tuple(2**k for k in range(9, 17)),
        target_empty_values=(0.5,),
        B=200,
        seed=2024,
        methods=(Method.PL, Method.BRL_LOGIT, Method.BRL_CLOGLOG, Method.WCLRL),
    )
    return run_sweep(cfg)
