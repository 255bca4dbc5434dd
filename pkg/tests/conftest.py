import numpy as np
import pytest

from memstage.data import PatientSequence


def toy_sequence(rng, n_visits=4, n_features=5, n_labels=3, labelled=True, pid="p0"):
    features = rng.normal(size=(n_visits, n_features))
    mask = rng.random((n_visits, n_features)) > 0.3
    mask[0] = True  # keep at least one fully observed row
    labels = rng.integers(0, n_labels, size=n_visits) if labelled else None
    return PatientSequence(patient_id=pid, features=features, mask=mask, labels=labels)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
