import numpy as np
import pytest

from hypctrl import systems


@pytest.fixture(scope="session")
def henon():
    return systems.henon_planar(eps=0.08)


@pytest.fixture(scope="session")
def henon_scalar_sys():
    return systems.henon_scalar(eps=1.0)


@pytest.fixture(scope="session")
def toy():
    return systems.linear_toy()


@pytest.fixture(scope="session")
def henon_fp():
    """Positive fixed point of the uncontrolled Henon map plus its eigen data."""
    fp, _ = systems.henon_fixed_points()
    J = np.array([[-2.0 * fp[0], -0.3], [1.0, 0.0]])
    ev, V = np.linalg.eig(J)
    iu = int(np.argmax(np.abs(ev)))
    return {
        "point": fp,
        "jac": J,
        "lam_u": float(ev[iu].real),
        "lam_s": float(ev[1 - iu].real),
        "evec_u": V[:, iu].real / np.linalg.norm(V[:, iu].real),
        "evec_s": V[:, 1 - iu].real / np.linalg.norm(V[:, 1 - iu].real),
    }
