import pytest

from resdimlab.hierarchy import Schedule, build_hierarchy
from resdimlab.measure import hier_measure
from resdimlab.mixedcarpet import ScaleCache


@pytest.fixture(scope="session")
def sc_h6():
    return build_hierarchy(Schedule.pure_sc(), 6)


@pytest.fixture(scope="session")
def vs_h6():
    return build_hierarchy(Schedule.pure_vicsek(), 6)


@pytest.fixture(scope="session")
def mx_h5():
    return build_hierarchy(Schedule.mixed(), 5)


@pytest.fixture(scope="session")
def sc_cache():
    return ScaleCache(Schedule.pure_sc())


@pytest.fixture(scope="session")
def vs_cache():
    return ScaleCache(Schedule.pure_vicsek())


@pytest.fixture(scope="session")
def mx_cache():
    return ScaleCache(Schedule.mixed())


@pytest.fixture(scope="session")
def sc_form4(sc_h6, sc_cache):
    """Renormalized level-4 carpet form with its eigendecomposition (heavy)."""
    from resdimlab.heat import build_form
    form = build_form(sc_h6, 4, hier_measure(sc_h6), sc_cache.pt(4))
    form.eig()
    return form


@pytest.fixture(scope="session")
def vs_form4(vs_h6, vs_cache):
    from resdimlab.heat import build_form
    form = build_form(vs_h6, 4, hier_measure(vs_h6), vs_cache.pt(4))
    form.eig()
    return form


@pytest.fixture(scope="session")
def sc_sup2(sc_h6):
    """SC p=2 sup-energy table, k = 1..5."""
    from resdimlab.penergy import sup_energy_table
    return sup_energy_table(sc_h6, 2.0, range(1, 6))


@pytest.fixture(scope="session")
def vs_sup2(vs_h6):
    from resdimlab.penergy import sup_energy_table
    return sup_energy_table(vs_h6, 2.0, range(1, 6))


def random_connected_graph(rng, n_max=50):
    """Random weighted connected graph on 3..n_max vertices."""
    from resdimlab.resnet import LevelGraph
    n = int(rng.integers(3, n_max + 1))
    edges = []
    perm = rng.permutation(n)
    for a, b in zip(perm, perm[1:]):
        edges.append((int(a), int(b), float(rng.uniform(0.2, 5.0))))
    extra = int(rng.integers(0, 2 * n))
    for _ in range(extra):
        u, v = rng.integers(0, n, size=2)
        if u != v:
            edges.append((int(u), int(v), float(rng.uniform(0.2, 5.0))))
    return LevelGraph(n, edges)
