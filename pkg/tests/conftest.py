import numpy as np
import pytest

from asegsim.dataio import SynthSpec, gen_synthetic_quadratic
from asegsim.driver import ReferenceInfo
from asegsim.objectives import solve_reference
from asegsim.similarity import delta_quadratic_exact, sigma_sim_sq

DATA_DIR = __file__.rsplit("/", 1)[0] + "/data"


class StandardProblem:
    """The shared quadratic fixture: d=30, M=20 nodes, lam > 0, mu < delta."""

    def __init__(self):
        self.spec = SynthSpec(d=30, M=20, points_per_node=40, hetero=0.5,
                              seed=7, lam=0.05)
        prob = gen_synthetic_quadratic(self.spec)
        self.server = prob.server
        self.clients = prob.clients
        self.global_obj = prob.global_obj
        self.constants = prob.constants
        self.grams = prob.grams
        sol = solve_reference(self.global_obj, tol=1e-12)
        self.reference = ReferenceInfo(sol.x, sol.value)
        self.x_star = sol.x
        self.r_star = sol.value
        # exact (unsafe) delta from the operator path, cross-checked in tests
        self.delta = delta_quadratic_exact(self.server, self.clients,
                                           safety=False).value
        self.sigma_sim_sq = sigma_sim_sq(self.clients, self.x_star)
        self.x0 = np.random.default_rng(3).standard_normal(30) * 5.0


@pytest.fixture(scope="session")
def std() -> StandardProblem:
    return StandardProblem()


@pytest.fixture(scope="session")
def sample_libsvm_path() -> str:
    return DATA_DIR + "/sample_binary.libsvm"
