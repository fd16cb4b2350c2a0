import sys
from pathlib import Path

import pytest
from hypothesis import settings

from nonhyp.cone import certify
from nonhyp.conjugacy import build_chart, build_product_chart, induced_factor_maps
from nonhyp.manifold import stable_graph, unstable_graph
from nonhyp.planar_map import canonical_spec
from nonhyp.tensor import HomogeneousPolynomial

settings.register_profile("numeric", deadline=None, max_examples=50)
settings.load_profile("numeric")

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


def quartic_x(c=0.1):
    """The form c x^4."""
    return HomogeneousPolynomial(4, (c, 0.0, 0.0, 0.0, 0.0))


@pytest.fixture(scope="session")
def canonical():
    return canonical_spec()


@pytest.fixture(scope="session")
def perturbed():
    return canonical_spec(Y=[quartic_x()])


@pytest.fixture(scope="session")
def cert(canonical):
    return certify(canonical)


@pytest.fixture(scope="session")
def cert_perturbed(perturbed):
    return certify(perturbed)


@pytest.fixture(scope="session")
def graphs(canonical, cert):
    return stable_graph(canonical, cert), unstable_graph(canonical, cert)


@pytest.fixture(scope="session")
def graphs_perturbed(perturbed, cert_perturbed):
    return stable_graph(perturbed, cert_perturbed), unstable_graph(perturbed, cert_perturbed)


@pytest.fixture(scope="session")
def chart(canonical, cert, graphs):
    return build_chart(canonical, cert, *graphs)


@pytest.fixture(scope="session")
def chart_perturbed(perturbed, cert_perturbed, graphs_perturbed):
    return build_chart(perturbed, cert_perturbed, *graphs_perturbed)


@pytest.fixture(scope="session")
def product_perturbed(perturbed, chart_perturbed, graphs_perturbed):
    F1, F2 = induced_factor_maps(perturbed, *graphs_perturbed)
    return build_product_chart(chart_perturbed, F1, F2)


@pytest.fixture
def report_line(capsys):
    """Print straight to the terminal, bypassing capture."""

    def emit(text):
        with capsys.disabled():
            sys.stdout.write("\n" + text + "\n")

    return emit
