import pytest

from subgoal_transfer.dataset import build_dataset
from subgoal_transfer.env import Square

DATASET_SEED = 7


@pytest.fixture(scope="session")
def dataset():
    return build_dataset(Square.from_name("d4"), DATASET_SEED)
