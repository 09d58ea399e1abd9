import pytest

from dualrec.hetgraph import Schema, load_relations
from dualrec.synthetic import write_toy


@pytest.fixture
def toy_graph(tmp_path):
    schema = write_toy(tmp_path / "toy")
    return load_relations(tmp_path / "toy", Schema.from_file(schema))
