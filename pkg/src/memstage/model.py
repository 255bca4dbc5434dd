"""Per-sequence model: LSTM encoder, global and patient-level memory banks,
diagonal-Gaussian posterior/prior heads, reparameterized sampling, and the
prediction or reconstruction head.

The forward pass records a full per-timestep trace; ``backward_sequence``
walks it in reverse, accumulating analytic gradients for every parameter,
including the paths through the memory bank across timesteps.  Gradients
are verified against central finite differences (see ``nn.gradcheck`` and
the test suite).

Step order within one visit: encode, read the global bank, (supervised:
read the patient bank over embedded past labels and calibrate), form the
posterior and prior, sample the latent, apply the head, and only then write
into the banks, so a visit never attends to itself.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels
from .exceptions import (
    ArgumentError,
    CompatibilityError,
    DataError,
    DimensionError,
    StateError,
)
from .memory import GateParams, MemoryBank
from .nn import LstmCellParams, ParamTensor, sigmoid, softmax, uniform_init

LOGSIG_CLAMP = 8.0

CHECKPOINT_MAGIC = "memstage-checkpoint v1"


@dataclass
class ModelConfig:
    n_features: int
    n_hidden: int = 128
    latent_size: int = 128
    memory_slots: int = 16
    memory_width: int = 128
    mode: str = "unsupervised"
    n_labels: int = 0
    label_dim: int = 0
    score_mode: str = "add"
    prior_mode: str = "learned"

    def __post_init__(self):
        if self.mode not in ("supervised", "unsupervised"):
            raise ArgumentError(f"unknown mode {self.mode!r}")
        if self.score_mode not in ("add", "mul"):
            raise ArgumentError(f"unknown score_mode {self.score_mode!r}")
        if self.prior_mode not in ("learned", "standard"):
            raise ArgumentError(f"unknown prior_mode {self.prior_mode!r}")
        if min(self.n_features, self.n_hidden, self.latent_size,
               self.memory_slots, self.memory_width) <= 0:
            raise ArgumentError("all model sizes must be positive")
        if self.mode == "supervised":
            if self.n_labels < 2:
                raise ArgumentError("supervised mode needs at least 2 labels")
            if self.label_dim <= 0:
                self.label_dim = self.memory_width


class ModelParams:
    """Every learnable tensor, grouped by role.  Iteration order is fixed."""

    def __init__(self, config, seed=0):
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 15485863]))
        cfg = config
        nh, nf, nz = cfg.n_hidden, cfg.n_features, cfg.latent_size
        d, L = cfg.memory_width, cfg.memory_slots

        self.encoder = LstmCellParams.create(rng, nf, nh, prefix="enc")
        self.global_mem = GateParams.create(rng, nh, nh, d, L, prefix="gmem")
        if cfg.mode == "supervised":
            ne = cfg.label_dim
            self.patient_mem = GateParams.create(rng, nh, ne, d, L, prefix="pmem")
            self.label_emb = ParamTensor("label_emb", uniform_init(rng, cfg.n_labels, ne))
            self.calib_w = ParamTensor("calib.w", uniform_init(rng, d, d))
            self.calib_b = ParamTensor("calib.b", np.zeros(d))
        else:
            self.patient_mem = None
            self.label_emb = None
            self.calib_w = None
            self.calib_b = None
        nu = nh + nf
        self.post_mu_w = ParamTensor("post_mu.w", uniform_init(rng, nz, nu))
        self.post_mu_b = ParamTensor("post_mu.b", np.zeros(nz))
        self.post_ls_w = ParamTensor("post_logsig.w", uniform_init(rng, nz, nu))
        self.post_ls_b = ParamTensor("post_logsig.b", np.zeros(nz))
        if cfg.prior_mode == "learned":
            self.prior_mu_w = ParamTensor("prior_mu.w", uniform_init(rng, nz, nh))
            self.prior_mu_b = ParamTensor("prior_mu.b", np.zeros(nz))
            self.prior_ls_w = ParamTensor("prior_logsig.w", uniform_init(rng, nz, nh))
            self.prior_ls_b = ParamTensor("prior_logsig.b", np.zeros(nz))
        else:
            self.prior_mu_w = self.prior_mu_b = None
            self.prior_ls_w = self.prior_ls_b = None
        nhead = nz + d
        if cfg.mode == "supervised":
            self.head_w = ParamTensor("pred.w", uniform_init(rng, cfg.n_labels, nhead))
            self.head_b = ParamTensor("pred.b", np.zeros(cfg.n_labels))
        else:
            self.head_w = ParamTensor("recon.w", uniform_init(rng, nf, nhead))
            self.head_b = ParamTensor("recon.b", np.zeros(nf))

    def tensors(self):
        out = list(self.encoder.tensors()) + list(self.global_mem.tensors())
        if self.patient_mem is not None:
            out += self.patient_mem.tensors()
            out += [self.label_emb, self.calib_w, self.calib_b]
        out += [self.post_mu_w, self.post_mu_b, self.post_ls_w, self.post_ls_b]
        if self.prior_mu_w is not None:
            out += [self.prior_mu_w, self.prior_mu_b, self.prior_ls_w, self.prior_ls_b]
        out += [self.head_w, self.head_b]
        return out

    def zero_grad(self):
        for t in self.tensors():
            t.zero_grad()

    def n_parameters(self):
        return sum(t.size for t in self.tensors())

    def copy_values(self):
        return {t.name: t.value.copy() for t in self.tensors()}

    def set_values(self, values):
        for t in self.tensors():
            t.value[...] = values[t.name]


@dataclass
class StepTrace:
    """One visit's intermediates; everything backward needs, nothing more."""

    h: np.ndarray
    c: np.ndarray
    gates: tuple  # (i, f, o, g)
    g_before: MemoryBank
    g_weights: np.ndarray
    e_global: np.ndarray
    e: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    logsig_raw: np.ndarray
    eps: np.ndarray
    z: np.ndarray
    mu_p: np.ndarray
    sigma_p: np.ndarray
    logsig_p_raw: np.ndarray
    output: np.ndarray
    g_slot: int
    g_write: tuple  # (m_old, r, v, a)
    label: int = -1
    p_before: MemoryBank = None
    p_weights: np.ndarray = None
    e_patient: np.ndarray = None
    calib_sig: np.ndarray = None
    p_slot: int = -1
    p_write: tuple = None
    p_emb: np.ndarray = None


@dataclass
class ForwardTrace:
    steps: list
    mode: str
    patient_id: str
    g_bank_out: MemoryBank
    consumed: bool = False

    def __len__(self):
        return len(self.steps)


def posterior_params(h, x, params):
    """Diagonal-Gaussian posterior over the latent from [h, x]."""
    cfg = params.config
    h = np.asarray(h, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if h.shape != (cfg.n_hidden,) or x.shape != (cfg.n_features,):
        raise DimensionError(
            f"posterior inputs {h.shape}/{x.shape} != expected "
            f"({cfg.n_hidden},)/({cfg.n_features},)"
        )
    u = np.concatenate((h, x))
    mu = np.dot(params.post_mu_w.value, u) + params.post_mu_b.value
    raw = np.dot(params.post_ls_w.value, u) + params.post_ls_b.value
    sigma = np.exp(np.clip(raw, -LOGSIG_CLAMP, LOGSIG_CLAMP))
    return mu, sigma


def prior_params(h, params):
    """Diagonal-Gaussian prior conditioned on the hidden state (or N(0, I))."""
    cfg = params.config
    if cfg.prior_mode == "standard":
        return np.zeros(cfg.latent_size), np.ones(cfg.latent_size)
    h = np.asarray(h, dtype=np.float64)
    mu = np.dot(params.prior_mu_w.value, h) + params.prior_mu_b.value
    raw = np.dot(params.prior_ls_w.value, h) + params.prior_ls_b.value
    sigma = np.exp(np.clip(raw, -LOGSIG_CLAMP, LOGSIG_CLAMP))
    return mu, sigma


def reparameterize(mu, sigma, eps):
    """z = mu + sigma * eps; differentiable sampling."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if mu.shape != sigma.shape or mu.shape != eps.shape:
        raise DimensionError(
            f"reparameterize widths differ: {mu.shape}, {sigma.shape}, {eps.shape}"
        )
    return mu + sigma * eps


def gaussian_kl(mu_q, sigma_q, mu_p, sigma_p):
    """KL(q || p) between diagonal Gaussians, summed over dimensions."""
    mu_q, sigma_q = np.asarray(mu_q, float), np.asarray(sigma_q, float)
    mu_p, sigma_p = np.asarray(mu_p, float), np.asarray(sigma_p, float)
    if np.any(sigma_q <= 0) or np.any(sigma_p <= 0):
        raise ArgumentError("gaussian_kl needs strictly positive sigmas")
    diff = mu_q - mu_p
    return float(np.sum(
        np.log(sigma_p / sigma_q)
        + (sigma_q ** 2 + diff ** 2) / (2.0 * sigma_p ** 2)
        - 0.5
    ))


def _validate_labels(seq, n_labels):
    if seq.labels is None:
        raise DataError(f"patient {seq.patient_id}: supervised mode requires labels")
    for t, y in enumerate(seq.labels):
        if y is None or int(y) < 0 or int(y) >= n_labels:
            raise DataError(
                f"patient {seq.patient_id}, visit {t}: label {y!r} outside [0, {n_labels})"
            )


def forward_sequence(params, seq, mode=None, seed=None, eps=None, bank_in=None):
    """Run one patient through the model, recording the full trace.

    Noise: ``eps`` (T x latent) wins if given; otherwise drawn from a
    generator seeded with ``seed``; otherwise zero (deterministic
    inference, z = mu).  ``bank_in`` optionally carries a global bank in
    (shared-memory configuration); gradients are truncated at sequence
    boundaries in that case.
    """
    cfg = params.config
    if mode is None:
        mode = cfg.mode
    if mode != cfg.mode:
        raise ArgumentError(f"parameters were built for {cfg.mode!r}, not {mode!r}")
    sup = mode == "supervised"
    T = len(seq.features)
    if T == 0:
        raise DataError(f"patient {seq.patient_id}: empty sequence")
    if sup:
        _validate_labels(seq, cfg.n_labels)
    nz = cfg.latent_size
    if eps is None:
        if seed is None:
            eps = np.zeros((T, nz))
        else:
            eps = np.random.default_rng(seed).standard_normal((T, nz))
    else:
        eps = np.asarray(eps, dtype=np.float64)
        if eps.shape != (T, nz):
            raise DimensionError(f"eps shape {eps.shape} != ({T}, {nz})")

    mul = cfg.score_mode == "mul"
    gmem = params.global_mem
    g_bank = bank_in.copy() if bank_in is not None else MemoryBank.empty(cfg.memory_slots, cfg.memory_width)
    p_bank = MemoryBank.empty(cfg.memory_slots, cfg.memory_width) if sup else None

    h = np.zeros(cfg.n_hidden)
    c = np.zeros(cfg.n_hidden)
    steps = []
    features = np.ascontiguousarray(seq.features, dtype=np.float64)
    for t in range(T):
        x = features[t]
        h, c, gi, gf, go, gg = _kernels.lstm_forward(
            x, h, c, params.encoder.wx.value, params.encoder.wh.value, params.encoder.b.value
        )
        g_before = g_bank.copy()
        key_g = np.dot(gmem.key.value, h)
        e_g, w_g = _kernels.memory_read_forward(
            g_bank.slots, g_bank.occupied, gmem.strengths.value, key_g, mul
        )
        if sup:
            pmem = params.patient_mem
            p_before = p_bank.copy()
            key_p = np.dot(pmem.key.value, h)
            e_p, w_p = _kernels.memory_read_forward(
                p_bank.slots, p_bank.occupied, pmem.strengths.value, key_p, mul
            )
            s = sigmoid(np.dot(params.calib_w.value, e_p) + params.calib_b.value)
            e = e_g * s
        else:
            e = e_g
        u = np.concatenate((h, x))
        mu = np.dot(params.post_mu_w.value, u) + params.post_mu_b.value
        raw = np.dot(params.post_ls_w.value, u) + params.post_ls_b.value
        sig = np.exp(np.clip(raw, -LOGSIG_CLAMP, LOGSIG_CLAMP))
        if cfg.prior_mode == "learned":
            mu_p = np.dot(params.prior_mu_w.value, h) + params.prior_mu_b.value
            raw_p = np.dot(params.prior_ls_w.value, h) + params.prior_ls_b.value
            sig_p = np.exp(np.clip(raw_p, -LOGSIG_CLAMP, LOGSIG_CLAMP))
        else:
            mu_p = np.zeros(nz)
            sig_p = np.ones(nz)
            raw_p = np.zeros(nz)
        z = mu + sig * eps[t]
        u2 = np.concatenate((z, e))
        if sup:
            out = softmax(np.dot(params.head_w.value, u2) + params.head_b.value)
        else:
            out = np.dot(params.head_w.value, u2) + params.head_b.value

        # writes happen after the step's outputs so a visit never sees itself
        g_slot = g_bank.cursor
        m_old_g = g_bank.slots[g_slot].copy()
        m_new, r_g, v_g, a_g = _kernels.memory_write_forward(
            m_old_g, h, gmem.proj.value, gmem.gate_w.value, gmem.gate_b.value
        )
        new_slots = g_bank.slots.copy()
        new_slots[g_slot] = m_new
        g_bank = MemoryBank(
            slots=new_slots,
            occupied=min(g_bank.occupied + 1, g_bank.n_slots),
            cursor=(g_slot + 1) % g_bank.n_slots,
        )
        step = StepTrace(
            h=h, c=c, gates=(gi, gf, go, gg),
            g_before=g_before, g_weights=w_g, e_global=e_g, e=e,
            mu=mu, sigma=sig, logsig_raw=raw, eps=eps[t], z=z,
            mu_p=mu_p, sigma_p=sig_p, logsig_p_raw=raw_p,
            output=out, g_slot=g_slot, g_write=(m_old_g, r_g, v_g, a_g),
        )
        if sup:
            y = int(seq.labels[t])
            emb = params.label_emb.value[y].copy()
            p_slot = p_bank.cursor
            m_old_p = p_bank.slots[p_slot].copy()
            m_new_p, r_p, v_p, a_p = _kernels.memory_write_forward(
                m_old_p, emb, pmem.proj.value, pmem.gate_w.value, pmem.gate_b.value
            )
            new_slots = p_bank.slots.copy()
            new_slots[p_slot] = m_new_p
            p_bank = MemoryBank(
                slots=new_slots,
                occupied=min(p_bank.occupied + 1, p_bank.n_slots),
                cursor=(p_slot + 1) % p_bank.n_slots,
            )
            step.label = y
            step.p_before = p_before
            step.p_weights = w_p
            step.e_patient = e_p
            step.calib_sig = s
            step.p_slot = p_slot
            step.p_write = (m_old_p, r_p, v_p, a_p)
            step.p_emb = emb
        steps.append(step)
    return ForwardTrace(steps=steps, mode=mode, patient_id=seq.patient_id, g_bank_out=g_bank)


def sequence_kl_mean(trace):
    """Per-visit mean of KL(posterior || prior) along the trace."""
    total = 0.0
    for st in trace.steps:
        total += gaussian_kl(st.mu, st.sigma, st.mu_p, st.sigma_p)
    return total / len(trace.steps)


def backward_sequence(params, trace, seq, kl_weight, upstream=1.0):
    """Accumulate d(upstream * (kl_weight * mean KL + task term)) / d(params).

    The task term is the per-visit mean cross-entropy (supervised) or the
    masked mean squared reconstruction error (unsupervised), matching the
    value functions in ``training``.  A trace can be consumed only once.
    """
    if trace.consumed:
        raise StateError("backward called twice on one trace; re-run forward first")
    trace.consumed = True
    cfg = params.config
    sup = trace.mode == "supervised"
    T = len(trace.steps)
    nh, nz = cfg.n_hidden, cfg.latent_size
    mul = cfg.score_mode == "mul"
    gmem = params.global_mem
    pmem = params.patient_mem
    features = np.ascontiguousarray(seq.features, dtype=np.float64)

    klw = upstream * kl_weight / T
    if sup:
        tw = upstream / T
    else:
        mask = np.asarray(seq.mask, dtype=np.float64)
        n_obs = float(mask.sum())
        if n_obs == 0:
            raise DataError(f"patient {seq.patient_id}: no observed entries to reconstruct")
        tw = upstream / n_obs

    dh_next = np.zeros(nh)
    dc_next = np.zeros(nh)
    dMg = np.zeros_like(trace.steps[0].g_before.slots)
    dMp = np.zeros_like(dMg) if sup else None

    for t in range(T - 1, -1, -1):
        st = trace.steps[t]
        x = features[t]
        h = st.h
        dh = dh_next.copy()
        dc = dc_next

        # -- write backward (banks after this step feed step t+1)
        if sup:
            m_old_p, r_p, v_p, a_p = st.p_write
            dm_old, demb, dproj, dgw, dgb = _kernels.memory_write_backward(
                np.ascontiguousarray(dMp[st.p_slot]), m_old_p, st.p_emb,
                r_p, v_p, a_p, pmem.proj.value, pmem.gate_w.value,
            )
            pmem.proj.grad += dproj
            pmem.gate_w.grad += dgw
            pmem.gate_b.grad += dgb
            params.label_emb.grad[st.label] += demb
            dMp_before = dMp.copy()
            dMp_before[st.p_slot] = dm_old
        m_old_g, r_g, v_g, a_g = st.g_write
        dm_old, dh_in, dproj, dgw, dgb = _kernels.memory_write_backward(
            np.ascontiguousarray(dMg[st.g_slot]), m_old_g, h,
            r_g, v_g, a_g, gmem.proj.value, gmem.gate_w.value,
        )
        gmem.proj.grad += dproj
        gmem.gate_w.grad += dgw
        gmem.gate_b.grad += dgb
        dh += dh_in
        dMg_before = dMg.copy()
        dMg_before[st.g_slot] = dm_old

        # -- head backward
        u2 = np.concatenate((st.z, st.e))
        if sup:
            dout = tw * st.output.copy()
            dout[st.label] -= tw
        else:
            dout = tw * 2.0 * mask[t] * (st.output - x)
        params.head_w.grad += np.outer(dout, u2)
        params.head_b.grad += dout
        du2 = np.dot(dout, params.head_w.value)
        dz = du2[:nz]
        de = du2[nz:]

        # -- KL backward
        diff = st.mu - st.mu_p
        sp2 = st.sigma_p ** 2
        dmu_q = klw * diff / sp2
        dmu_p = -dmu_q
        dsig_q = klw * (-1.0 / st.sigma + st.sigma / sp2)
        dsig_p = klw * (1.0 / st.sigma_p - (st.sigma ** 2 + diff ** 2) / (sp2 * st.sigma_p))

        # -- reparameterization
        dmu_q = dmu_q + dz
        dsig_q = dsig_q + dz * st.eps

        # -- posterior heads
        u = np.concatenate((h, x))
        open_q = (st.logsig_raw > -LOGSIG_CLAMP) & (st.logsig_raw < LOGSIG_CLAMP)
        dls_q = dsig_q * st.sigma * open_q
        params.post_ls_w.grad += np.outer(dls_q, u)
        params.post_ls_b.grad += dls_q
        params.post_mu_w.grad += np.outer(dmu_q, u)
        params.post_mu_b.grad += dmu_q
        du = np.dot(dmu_q, params.post_mu_w.value) + np.dot(dls_q, params.post_ls_w.value)
        dh += du[:nh]

        # -- prior heads
        if cfg.prior_mode == "learned":
            open_p = (st.logsig_p_raw > -LOGSIG_CLAMP) & (st.logsig_p_raw < LOGSIG_CLAMP)
            dls_p = dsig_p * st.sigma_p * open_p
            params.prior_ls_w.grad += np.outer(dls_p, h)
            params.prior_ls_b.grad += dls_p
            params.prior_mu_w.grad += np.outer(dmu_p, h)
            params.prior_mu_b.grad += dmu_p
            dh += np.dot(dmu_p, params.prior_mu_w.value) + np.dot(dls_p, params.prior_ls_w.value)

        # -- calibration backward
        if sup:
            s = st.calib_sig
            de_g = de * s
            dpre = de * st.e_global * s * (1.0 - s)
            params.calib_w.grad += np.outer(dpre, st.e_patient)
            params.calib_b.grad += dpre
            de_p = np.dot(dpre, params.calib_w.value)
        else:
            de_g = de

        # -- global read backward (bank state before this step's write)
        key_g = np.dot(gmem.key.value, h)
        dslots, dkey, dstr = _kernels.memory_read_backward(
            st.g_before.slots, st.g_before.occupied, gmem.strengths.value,
            key_g, st.g_weights, np.ascontiguousarray(de_g), mul,
        )
        dMg_before += dslots
        gmem.strengths.grad += dstr
        gmem.key.grad += np.outer(dkey, h)
        dh += np.dot(dkey, gmem.key.value)

        # -- patient read backward
        if sup:
            key_p = np.dot(pmem.key.value, h)
            dslots, dkey, dstr = _kernels.memory_read_backward(
                st.p_before.slots, st.p_before.occupied, pmem.strengths.value,
                key_p, st.p_weights, np.ascontiguousarray(de_p), mul,
            )
            dMp_before += dslots
            pmem.strengths.grad += dstr
            pmem.key.grad += np.outer(dkey, h)
            dh += np.dot(dkey, pmem.key.value)

        # -- encoder backward
        if t > 0:
            h_prev = trace.steps[t - 1].h
            c_prev = trace.steps[t - 1].c
        else:
            h_prev = np.zeros(nh)
            c_prev = np.zeros(nh)
        gi, gf, go, gg = st.gates
        _, dh_prev, dc_prev, dwx, dwh, db = _kernels.lstm_backward(
            np.ascontiguousarray(dh), dc, x, h_prev, c_prev,
            gi, gf, go, gg, st.c, params.encoder.wx.value, params.encoder.wh.value,
        )
        params.encoder.wx.grad += dwx
        params.encoder.wh.grad += dwh
        params.encoder.b.grad += db
        dh_next = dh_prev
        dc_next = dc_prev
        dMg = dMg_before
        if sup:
            dMp = dMp_before


def representation_for_clustering(trace, mode_flag="mu_e"):
    """Deterministic per-visit vectors for staging: posterior mean
    concatenated with the memory read ("mu_e", default) or the mean alone ("z")."""
    if mode_flag == "z":
        return np.stack([st.mu for st in trace.steps])
    if mode_flag == "mu_e":
        return np.stack([np.concatenate((st.mu, st.e)) for st in trace.steps])
    raise ArgumentError(f"unknown representation flag {mode_flag!r}")


def save_checkpoint(path, params, meta=None):
    """Write a flat, versioned container: magic line, JSON header naming
    tensors/shapes plus config and metadata, then raw float64 payloads.
    Byte-identical across save -> load -> save."""
    tensors = params.tensors()
    header = {
        "tensors": [{"name": t.name, "shape": list(t.value.shape)} for t in tensors],
        "config": asdict(params.config),
        "meta": meta or {},
    }
    blob = bytearray()
    blob += (CHECKPOINT_MAGIC + "\n").encode()
    blob += (json.dumps(header, sort_keys=True) + "\n").encode()
    for t in tensors:
        blob += np.ascontiguousarray(t.value, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_checkpoint(path):
    """Read a checkpoint written by :func:`save_checkpoint`.

    Returns (params, meta)."""
    with open(path, "rb") as fh:
        magic = fh.readline().decode().rstrip("\n")
        if magic != CHECKPOINT_MAGIC:
            raise CompatibilityError(f"{path}: not a checkpoint (magic {magic!r})")
        header = json.loads(fh.readline().decode())
        payload = fh.read()
    config = ModelConfig(**header["config"])
    params = ModelParams(config, seed=0)
    by_name = {t.name: t for t in params.tensors()}
    names_in_file = [entry["name"] for entry in header["tensors"]]
    if sorted(names_in_file) != sorted(by_name):
        raise CompatibilityError(
            f"{path}: tensor set does not match config (file has {len(names_in_file)}, "
            f"model needs {len(by_name)})"
        )
    offset = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        tensor = by_name[entry["name"]]
        if tensor.value.shape != shape:
            raise CompatibilityError(
                f"{path}: tensor {entry['name']} has shape {shape}, expected {tensor.value.shape}"
            )
        tensor.value[...] = data.reshape(shape)
    if offset != len(payload):
        raise CompatibilityError(f"{path}: payload size mismatch")
    return params, header["meta"]
