import pytest

from sitrec.data import SyntheticSpec, generate_synthetic


@pytest.fixture(scope="session")
def tiny_bundle():
    """Small deterministic bundle with grids, shared by fast tests."""
    spec = SyntheticSpec(
        n_verbs=3, max_roles=3, n_nouns=9, pool_size=3,
        dg=6, dr=4, dc=3, grid=2, sigma=0.1,
        n_train=12, n_dev=4, n_test=4, seed=5, perturb_prob=0.2,
    )
    return generate_synthetic(spec)
