import os

import pytest

# Root of an extracted MINDsmall download, holding train/ and dev/
MIND_ENV = "NEWSFUSE_MIND_DIR"


@pytest.fixture(scope="session")
def mind_small():
    root = os.environ.get(MIND_ENV)
    if not root or not os.path.isdir(os.path.join(root, "train")):
        pytest.skip("set {} to a MINDsmall directory".format(MIND_ENV))
    return root


@pytest.fixture(scope="session")
def train_dir(mind_small):
    return os.path.join(mind_small, "train")


@pytest.fixture(scope="session")
def dev_dir(mind_small):
    path = os.path.join(mind_small, "dev")
    if not os.path.isdir(path):
        pytest.skip("no dev/ under {}".format(mind_small))
    return path
