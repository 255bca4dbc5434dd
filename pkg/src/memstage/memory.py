"""External memory bank: gated slot writing, similarity-weighted reading,
and the calibration gate that merges the two banks in supervised mode.

A bank holds a fixed number of slots written in visit order through a
cyclic cursor.  Reading attends over the occupied slots with softmax
weights built from a learned per-slot strength plus the cosine similarity
between a projected query and each slot ("add" scoring); the multiplicative
variant exp(strength) * cosine normalised by its sum is available as
``score_mode="mul"``.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .exceptions import DimensionError
from .nn import ParamTensor, sigmoid, uniform_init


@dataclass
class GateParams:
    """Learnable pieces of one bank: query/write projections and write gates.

    ``key`` maps a query (width ``n_query``) into memory space; ``proj``
    maps the written vector (width ``n_in``) into memory space; the gate map
    produces the keep/write pair (r, v) from [written vector, slot content]
    through a logistic, so both gates lie in (0, 1).
    """

    key: ParamTensor       # (width, n_query)
    proj: ParamTensor      # (width, n_in)
    gate_w: ParamTensor    # (2*width, n_in + width)
    gate_b: ParamTensor    # (2*width,)
    strengths: ParamTensor  # (n_slots,)
    n_query: int
    n_in: int
    width: int
    n_slots: int

    @classmethod
    def create(cls, rng, n_query, n_in, width, n_slots, prefix):
        return cls(
            key=ParamTensor(prefix + ".key", uniform_init(rng, width, n_query)),
            proj=ParamTensor(prefix + ".proj", uniform_init(rng, width, n_in)),
            gate_w=ParamTensor(prefix + ".gate_w", uniform_init(rng, 2 * width, n_in + width)),
            gate_b=ParamTensor(prefix + ".gate_b", np.zeros(2 * width)),
            strengths=ParamTensor(prefix + ".strengths", np.zeros(n_slots)),
            n_query=n_query,
            n_in=n_in,
            width=width,
            n_slots=n_slots,
        )

    def tensors(self):
        return [self.key, self.proj, self.gate_w, self.gate_b, self.strengths]


@dataclass
class MemoryBank:
    """Mutable per-sequence state: the slot matrix plus cursor bookkeeping.

    Unoccupied slot rows stay exactly zero; ``occupied`` counts filled slots
    and ``cursor`` is the next slot to be written (cyclic).
    """

    slots: np.ndarray
    occupied: int = 0
    cursor: int = 0

    @classmethod
    def empty(cls, n_slots, width):
        return cls(slots=np.zeros((n_slots, width)), occupied=0, cursor=0)

    @property
    def n_slots(self):
        return self.slots.shape[0]

    def copy(self):
        return MemoryBank(slots=self.slots.copy(), occupied=self.occupied, cursor=self.cursor)


@dataclass
class ReadResult:
    e: np.ndarray
    weights: np.ndarray


def memory_read(bank, query, gates, score_mode="add"):
    """Attend over the occupied slots with the projected query.

    Empty banks read as zeros (a defined case, not an error).  Weights over
    occupied slots sum to one and are zero elsewhere.
    """
    query = np.ascontiguousarray(query, dtype=np.float64)
    if query.shape != (gates.n_query,):
        raise DimensionError(f"query width {query.shape} != expected ({gates.n_query},)")
    key = np.dot(gates.key.value, query)
    e, w = _kernels.memory_read_forward(
        bank.slots, bank.occupied, gates.strengths.value, key, score_mode == "mul"
    )
    return ReadResult(e=e, weights=w)


def memory_write(bank, vec, gates):
    """Write ``vec`` (gated, projected) into the cursor slot; returns a new bank.

    The target slot becomes r * old + v * (proj @ vec); no other slot
    changes.  The cursor advances cyclically and ``occupied`` saturates at
    the slot count.
    """
    vec = np.ascontiguousarray(vec, dtype=np.float64)
    if vec.shape != (gates.n_in,):
        raise DimensionError(f"write vector width {vec.shape} != expected ({gates.n_in},)")
    p = bank.cursor
    m_new, _, _, _ = _kernels.memory_write_forward(
        bank.slots[p], vec, gates.proj.value, gates.gate_w.value, gates.gate_b.value
    )
    slots = bank.slots.copy()
    slots[p] = m_new
    return MemoryBank(
        slots=slots,
        occupied=min(bank.occupied + 1, bank.n_slots),
        cursor=(p + 1) % bank.n_slots,
    )


def calibrate(e_global, e_patient, embed_w, embed_b):
    """Elementwise gating of the global read by a sigmoid embedding of the
    patient-level read: e_global * sigmoid(embed(e_patient))."""
    e_global = np.asarray(e_global, dtype=np.float64)
    e_patient = np.asarray(e_patient, dtype=np.float64)
    if embed_w.shape[1] != e_patient.shape[0]:
        raise DimensionError(
            f"embed map {embed_w.shape} cannot consume patient read {e_patient.shape}"
        )
    if embed_w.shape[0] != e_global.shape[0] or embed_b.shape != (e_global.shape[0],):
        raise DimensionError(
            f"embed output {embed_w.shape[0]} does not match global read {e_global.shape}"
        )
    return e_global * sigmoid(np.dot(embed_w, e_patient) + embed_b)
