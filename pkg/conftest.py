# The datalad pytest plugin's pytest_ignore_collect returns False for every
# directory, which overrides --ignore; keep the reference examples out of
# collection.
from pathlib import Path

_EXAMPLES = Path(__file__).parent / 'examples'


def pytest_ignore_collect(collection_path):
    if collection_path == _EXAMPLES or _EXAMPLES in collection_path.parents:
        return True
    return None
