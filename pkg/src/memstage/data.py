"""Cohort handling: synthetic generation with known latent stages, long-format
CSV loading, mean/last-occurrence imputation, z-score normalization, and the
patient-level 3/1/1 split.

The long format is ``patient_id,visit_index[,label],f_<name>,...`` with empty
cells for missing values and visit_index strictly increasing per patient.
"""

import csv
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import ArgumentError, ConfigError, DataError


@dataclass
class PatientSequence:
    """One patient's visit-ordered feature rows plus the observation mask.

    ``labels`` (per-visit stage ids) are optional; ``true_stages`` carries
    the generating stage for synthetic cohorts and mirrors ``labels`` there.
    """

    patient_id: str
    features: np.ndarray          # (T, F) float64
    mask: np.ndarray              # (T, F) bool, True = observed
    labels: np.ndarray = None     # (T,) int, optional
    true_stages: np.ndarray = None
    visit_index: np.ndarray = None

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.mask = np.ascontiguousarray(self.mask, dtype=bool)
        if len(self.features) < 1:
            raise DataError(f"patient {self.patient_id}: needs at least one visit")
        if self.mask.shape != self.features.shape:
            raise DataError(f"patient {self.patient_id}: mask shape mismatch")
        if self.visit_index is None:
            self.visit_index = np.arange(len(self.features))

    @property
    def n_visits(self):
        return len(self.features)


@dataclass
class Cohort:
    sequences: list
    feature_names: list
    n_labels: int = 0
    norm_mean: np.ndarray = None   # set from the training split
    norm_std: np.ndarray = None

    @property
    def n_features(self):
        return len(self.feature_names)

    def __len__(self):
        return len(self.sequences)


@dataclass
class SyntheticConfig:
    """Markov-chain stage progression with Gaussian emissions.

    The transition matrix is row-stochastic; the default builder is
    left-to-right (stay or advance one stage, last stage absorbing), which
    makes stage paths monotone.
    """

    n_patients: int = 200
    visits_min: int = 10
    visits_max: int = 10
    n_features: int = 10
    n_stages: int = 3
    transition: np.ndarray = None
    stage_means: np.ndarray = None
    noise_scale: float = 1.0
    missing_rate: float = 0.1
    stage_separation: float = 4.0
    advance_prob: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.transition is None:
            self.transition = left_to_right_transitions(self.n_stages, self.advance_prob)
        self.transition = np.asarray(self.transition, dtype=np.float64)
        if self.stage_means is None:
            self.stage_means = default_stage_means(
                self.n_stages, self.n_features, self.stage_separation
            )
        self.stage_means = np.asarray(self.stage_means, dtype=np.float64)
        self.validate()

    def validate(self):
        if self.transition.shape != (self.n_stages, self.n_stages):
            raise ConfigError(f"transition matrix must be {self.n_stages}x{self.n_stages}")
        rows = self.transition.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > 1e-12) or np.any(self.transition < 0):
            raise ConfigError("transition rows must be non-negative and sum to 1")
        if self.stage_means.shape != (self.n_stages, self.n_features):
            raise ConfigError(f"stage means must be {self.n_stages}x{self.n_features}")
        if self.noise_scale <= 0:
            raise ConfigError("noise_scale must be positive")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ConfigError("missing_rate must lie in [0, 1)")
        if self.visits_min < 1 or self.visits_max < self.visits_min:
            raise ConfigError("bad visit range")


def left_to_right_transitions(n_stages, advance_prob):
    """Stay/advance chain: upper bidiagonal, last stage absorbing."""
    t = np.zeros((n_stages, n_stages))
    for s in range(n_stages - 1):
        t[s, s] = 1.0 - advance_prob
        t[s, s + 1] = advance_prob
    t[n_stages - 1, n_stages - 1] = 1.0
    return t


def default_stage_means(n_stages, n_features, separation):
    """Stage s peaks on feature s (needs F >= S); pairwise distance is
    separation * sqrt(2)."""
    if n_features < n_stages:
        raise ConfigError("need at least as many features as stages for default means")
    means = np.zeros((n_stages, n_features))
    for s in range(n_stages):
        means[s, s] = separation
    return means


def generate_synthetic(config):
    """Sample a cohort: per patient a stage path from the chain (starting at
    stage 0), features = stage mean + Gaussian noise, entries dropped
    independently at the missing rate.  The stage is recorded as both the
    label and the ground truth."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    sequences = []
    n_stages = config.n_stages
    for p in range(config.n_patients):
        T = int(rng.integers(config.visits_min, config.visits_max + 1))
        stages = np.zeros(T, dtype=int)
        s = 0
        for t in range(T):
            if t > 0:
                s = int(rng.choice(n_stages, p=config.transition[s]))
            stages[t] = s
        noise = rng.normal(scale=config.noise_scale, size=(T, config.n_features))
        features = config.stage_means[stages] + noise
        mask = rng.random((T, config.n_features)) >= config.missing_rate
        sequences.append(PatientSequence(
            patient_id=f"p{p:05d}",
            features=features,
            mask=mask,
            labels=stages.copy(),
            true_stages=stages,
        ))
    names = [f"x{j}" for j in range(config.n_features)]
    return Cohort(sequences=sequences, feature_names=names, n_labels=n_stages)


def split(cohort, ratios=(3, 1, 1), seed=0):
    """Patient-level disjoint partition into (train, val, test) cohorts.

    Sizes follow the ratios within +-1 via largest remainders; the shuffle
    is deterministic per seed."""
    n = len(cohort.sequences)
    if n < 5:
        raise ArgumentError(f"need at least 5 patients to split, got {n}")
    ratios = np.asarray(ratios, dtype=np.float64)
    order = np.random.default_rng(seed).permutation(n)
    exact = ratios / ratios.sum() * n
    sizes = np.floor(exact).astype(int)
    remainder = exact - sizes
    for _ in range(n - sizes.sum()):
        k = int(np.argmax(remainder))
        sizes[k] += 1
        remainder[k] = -1.0
    parts = []
    at = 0
    for size in sizes:
        idx = sorted(order[at:at + size])
        parts.append(Cohort(
            sequences=[cohort.sequences[i] for i in idx],
            feature_names=cohort.feature_names,
            n_labels=cohort.n_labels,
        ))
        at += size
    return tuple(parts)


def normalization_stats(cohort):
    """Per-feature mean/std over observed entries of the given (training) cohort."""
    F = cohort.n_features
    total = np.zeros(F)
    count = np.zeros(F)
    for seq in cohort.sequences:
        total += np.where(seq.mask, seq.features, 0.0).sum(axis=0)
        count += seq.mask.sum(axis=0)
    mean = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    ssq = np.zeros(F)
    for seq in cohort.sequences:
        centered = np.where(seq.mask, seq.features - mean, 0.0)
        ssq += (centered * centered).sum(axis=0)
    std = np.where(count > 1, np.sqrt(ssq / np.maximum(count - 1, 1)), 1.0)
    std = np.where(std > 1e-12, std, 1.0)
    return mean, std, count


def impute(cohort, column_means, observed_counts=None):
    """Fill missing entries: last observed value carried forward, and the
    training-column mean for gaps before the first observation.  Observed
    entries are never touched; the original mask is kept for loss masking.
    """
    column_means = np.asarray(column_means, dtype=np.float64)
    if observed_counts is not None:
        never = np.flatnonzero(np.asarray(observed_counts) == 0)
    else:
        never = np.flatnonzero(~np.isfinite(column_means))
    if never.size:
        name = cohort.feature_names[int(never[0])]
        raise DataError(f"feature {name!r} never observed in the training split")
    out = []
    for seq in cohort.sequences:
        feats = seq.features.copy()
        T, F = feats.shape
        for j in range(F):
            last = None
            for t in range(T):
                if seq.mask[t, j]:
                    last = feats[t, j]
                elif last is not None:
                    feats[t, j] = last
                else:
                    feats[t, j] = column_means[j]
        out.append(replace(seq, features=feats))
    return Cohort(sequences=out, feature_names=cohort.feature_names,
                  n_labels=cohort.n_labels, norm_mean=cohort.norm_mean,
                  norm_std=cohort.norm_std)


def normalize(cohort, mean, std):
    """Z-score every feature column with the given (training) statistics."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    out = [replace(s, features=(s.features - mean) / std) for s in cohort.sequences]
    return Cohort(sequences=out, feature_names=cohort.feature_names,
                  n_labels=cohort.n_labels, norm_mean=mean, norm_std=std)


def denormalize(features, mean, std):
    return np.asarray(features) * np.asarray(std) + np.asarray(mean)


def prepare_splits(cohort, seed=0, ratios=(3, 1, 1)):
    """split -> stats on train -> impute -> normalize, returning three
    modeling-ready cohorts that share the training statistics."""
    train, val, test = split(cohort, ratios=ratios, seed=seed)
    mean, std, count = normalization_stats(train)
    out = []
    for part in (train, val, test):
        part = impute(part, mean, observed_counts=count)
        out.append(normalize(part, mean, std))
    return tuple(out)


def write_long_csv(path, cohort, include_label=None):
    """Write the long format; floats use repr so a round-trip is bit-exact."""
    if include_label is None:
        include_label = any(s.labels is not None for s in cohort.sequences)
    header = ["patient_id", "visit_index"]
    if include_label:
        header.append("label")
    header += [f"f_{name}" for name in cohort.feature_names]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for seq in cohort.sequences:
            for t in range(seq.n_visits):
                row = [seq.patient_id, int(seq.visit_index[t])]
                if include_label:
                    row.append("" if seq.labels is None else int(seq.labels[t]))
                for j in range(cohort.n_features):
                    row.append(repr(float(seq.features[t, j])) if seq.mask[t, j] else "")
                writer.writerow(row)


def load_long_csv(path):
    """Read the long format back into a Cohort.

    Rows may arrive in any order; they are grouped by patient and ordered by
    visit index.  Duplicate (patient, visit) pairs and non-numeric feature
    cells are rejected with their row number."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if header[:2] != ["patient_id", "visit_index"]:
            raise DataError(f"{path}: header must start with patient_id,visit_index")
        has_label = len(header) > 2 and header[2] == "label"
        feat_start = 3 if has_label else 2
        feature_names = []
        for col in header[feat_start:]:
            if not col.startswith("f_"):
                raise DataError(f"{path}: feature column {col!r} must be prefixed f_")
            feature_names.append(col[2:])
        if not feature_names:
            raise DataError(f"{path}: no feature columns")
        rows = {}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {line_no} has {len(row)} cells, expected {len(header)}")
            pid = row[0]
            try:
                visit = int(row[1])
            except ValueError:
                raise DataError(f"{path}: row {line_no}: bad visit_index {row[1]!r}") from None
            if visit < 0:
                raise DataError(f"{path}: row {line_no}: negative visit_index")
            label = None
            if has_label and row[2] != "":
                try:
                    label = int(row[2])
                except ValueError:
                    raise DataError(f"{path}: row {line_no}: bad label {row[2]!r}") from None
            values = np.zeros(len(feature_names))
            mask = np.zeros(len(feature_names), dtype=bool)
            for j, cell in enumerate(row[feat_start:]):
                if cell == "":
                    continue
                try:
                    values[j] = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: row {line_no}, column {header[feat_start + j]}: "
                        f"non-numeric value {cell!r}"
                    ) from None
                mask[j] = True
            per_patient = rows.setdefault(pid, {})
            if visit in per_patient:
                raise DataError(f"{path}: row {line_no}: duplicate visit {visit} for patient {pid}")
            per_patient[visit] = (values, mask, label)
        if not rows:
            raise DataError(f"{path}: no data rows")
        sequences = []
        labels_seen = set()
        for pid in sorted(rows):
            visits = sorted(rows[pid])
            feats = np.stack([rows[pid][v][0] for v in visits])
            mask = np.stack([rows[pid][v][1] for v in visits])
            labels = [rows[pid][v][2] for v in visits]
            if all(l is None for l in labels):
                label_arr = None
            elif any(l is None for l in labels):
                missing_at = visits[labels.index(None)]
                raise DataError(
                    f"{path}: patient {pid}, visit {missing_at}: label present for some "
                    f"visits but missing here"
                )
            else:
                label_arr = np.asarray(labels, dtype=int)
                labels_seen.update(label_arr.tolist())
            sequences.append(PatientSequence(
                patient_id=pid, features=feats, mask=mask, labels=label_arr,
                visit_index=np.asarray(visits, dtype=int),
            ))
        n_labels = (max(labels_seen) + 1) if labels_seen else 0
        return Cohort(sequences=sequences, feature_names=feature_names, n_labels=n_labels)
