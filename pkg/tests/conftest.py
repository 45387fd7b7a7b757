import pytest

from greenlab import groups
from greenlab.green import ball_domain, killed_green_solve
from greenlab.measures import uniform_on_generators

Z3 = groups.integer_lattice(3)
E3 = (0, 0, 0)
E1 = (1, 0, 0)


@pytest.fixture(scope="session")
def z3_srw():
    return uniform_on_generators(groups.standard_generators(Z3))


@pytest.fixture(scope="session")
def z3_enclosing_tables(z3_srw):
    """Killed tables on B(0, 2R+2) with sources (0, e1) for the scan scales."""
    out = {}
    for r in (4, 6, 8, 10, 12, 14, 16):
        omega = ball_domain(Z3, z3_srw, 2 * r + 2, with_boundary=False)
        out[r] = killed_green_solve(omega, [E3, E1], z3_srw, tol=1e-12)
    return out
