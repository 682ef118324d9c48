import numpy as np
import pytest

from facefront import synthdata, training

# one small domain shared by the slower fixtures; individual tests build
# their own graphs and arrays so nothing here leaks mutable state
TINY_SPEC = synthdata.DatasetSpec(
    seed=3,
    n_identities=6,
    images_per_identity=6,
    image_size=16,
    n_vertices=64,
    n_landmarks=6,
)

TINY_CONFIG = training.TrainConfig(
    seed=3,
    batch_size=8,
    epochs_pretrain_r=2,
    epochs_pretrain_c=2,
    stage_epochs=(1, 1, 1),
)


@pytest.fixture(scope="session")
def tiny_dataset():
    return synthdata.build_dataset(TINY_SPEC)


@pytest.fixture(scope="session")
def tiny_model(tiny_dataset):
    return tiny_dataset.model


@pytest.fixture(scope="session")
def tiny_pretrained(tiny_dataset):
    res_r = training.pretrain_r(TINY_CONFIG, tiny_dataset)
    res_c = training.pretrain_c(TINY_CONFIG, tiny_dataset)
    return res_r, res_c


@pytest.fixture(scope="session")
def tiny_state(tiny_dataset, tiny_pretrained):
    res_r, res_c = tiny_pretrained
    return training.train_joint(
        TINY_CONFIG, tiny_dataset, res_r.params.copy(), res_c.params.copy()
    )


def rand(shape, seed, scale=1.0, offset=0.0):
    rng = np.random.default_rng((int(seed), 4242))
    return scale * rng.standard_normal(shape) + offset
