import pytest
import torch

from charalign.toydata import make_toy_lexicon


@pytest.fixture(scope="session")
def toy_lexicon():
    return make_toy_lexicon(num_chars=40, num_radicals=12, seed=7)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)
