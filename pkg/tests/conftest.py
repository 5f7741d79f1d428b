import numpy as np
import pytest

from venomguard.data_model import (
    ClassEntry,
    ClassTable,
    DatasetBundle,
    FeatureMatrix,
    LocationTable,
    ObservationRow,
    ObservationTable,
)
from venomguard.linalg_pca import fit_pca
from venomguard.prior_model import PriorArtifact, PriorMlp, PrototypeMatrix
from venomguard.synthetic import SynthConfig, generate


@pytest.fixture(scope="session")
def synth7():
    """Default synthetic dataset at the repo's fixed seed."""
    return generate(SynthConfig(seed=7))


@pytest.fixture
def five_classes():
    return ClassTable(
        [
            ClassEntry(0, "species_a", False),
            ClassEntry(1, "species_b", True),
            ClassEntry(2, "species_c", False),
            ClassEntry(3, "species_d", True),
            ClassEntry(4, "species_e", False),
        ]
    )


@pytest.fixture
def tiny_bundle(five_classes):
    """Three observations (one with two images) over five classes."""
    rows = [
        ObservationRow("obs_a", 0, 0, "loc_0"),
        ObservationRow("obs_a", 1, 0, "loc_0"),
        ObservationRow("obs_b", 2, 1, "loc_1"),
        ObservationRow("obs_c", 3, 3, "loc_2"),
    ]
    scores = np.array(
        [
            [4.0, 0.0, 1.0, 0.0, 0.0],
            [3.0, 1.0, 0.0, 0.0, 0.0],
            [0.0, 2.0, 1.0, 0.0, 0.0],
            [0.0, 0.5, 0.0, 2.5, 0.0],
        ]
    )
    metadata = np.array(
        [
            [0.1, 0.2, 0.3],
            [0.4, 0.5, 0.6],
            [0.7, 0.8, 0.9],
        ]
    )
    return DatasetBundle(
        classes=five_classes,
        observations=ObservationTable(rows),
        image_scores=FeatureMatrix(scores),
        metadata_features=FeatureMatrix(metadata),
        locations=LocationTable({"loc_0": 0, "loc_1": 1, "loc_2": 2}),
    )


def constant_prior_artifact(bundle: DatasetBundle, d_out: int = 6) -> PriorArtifact:
    """An artifact whose prior logits are the same for every location."""
    n_classes = bundle.classes.n_classes
    k = min(2, bundle.metadata_features.dims)
    pca = fit_pca(bundle.metadata_features, k)
    mlp = PriorMlp.create(k, 4, d_out, dropout_rate=0.0, seed=0)
    for name in ("w1", "b1", "w2", "b2", "w3", "b3"):
        setattr(mlp, name, np.zeros_like(getattr(mlp, name)))
    proto = np.ones((d_out, n_classes))
    return PriorArtifact(
        mlp=mlp, prototypes=PrototypeMatrix(proto, normalized=False), pca=pca
    )
