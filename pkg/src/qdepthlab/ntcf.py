"""Single-prover depth certification from claw-free functions.

A toy trapdoor claw-free family stands in for the lattice-based one:
f_{k,b}(x) = Pi_k(x ^ (b * s_k)) over a keyed small-domain permutation Pi_k,
so the claws are exactly the pairs (x, x ^ s_k) and the trapdoor is s_k plus
the permutation key.  The family is noise-free and NOT cryptographically
claw-free; the protocol and extractor mechanics are what is exercised here,
not computational hardness.

The verifier hands out d+1 keys, collects the image values, then reveals the
challenge bits strictly one at a time: each answer requires a basis choice
that depends on the previous exchange, which is what forces an honest prover
to keep quantum coherence for d extra layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ProtocolOrderError, QDepthError
from .hybrid import DQC, HybridSession, audited_depth
from .oracles import KeyedPermutation, dot_bits, random_keyed_permutation
from .qsim import Gate, SparseState
from .qsim import measure as qsim_measure

D0_DEFAULT = 14


@dataclass(frozen=True)
class ToyNTCFKey:
    """Public key of one toy claw-free function; doubles as the trapdoor."""

    n: int
    perm: KeyedPermutation
    shift: int

    def __post_init__(self):
        if self.shift == 0 or not (0 < self.shift < (1 << self.n)):
            raise QDepthError("claw shift must be a nonzero n-bit string")

    @property
    def equation_width(self) -> int:
        return self.n  # J is the identity injection

    def eval(self, b, x) -> int:
        return self.perm.eval(x ^ (b * self.shift))

    def preimages(self, y):
        x0 = self.perm.invert(y)
        return x0, x0 ^ self.shift


def gen(n, rng):
    """Sample (key, trapdoor); the toy trapdoor equals the key."""
    if n < 2:
        raise QDepthError("need n >= 2")
    key = ToyNTCFKey(
        n=n,
        perm=random_keyed_permutation(n, rng),
        shift=int(rng.integers(1, 1 << n)),
    )
    return key, key


def chk(k: ToyNTCFKey, b, x, y) -> int:
    """Public preimage check: 1 iff f_{k,b}(x) = y (no trapdoor needed)."""
    if not (0 <= x < (1 << k.n)) or not (0 <= y < (1 << k.n)):
        raise QDepthError("widths do not match the key")
    return int(k.eval(b, x) == y)


def samp_state(k: ToyNTCFKey) -> SparseState:
    """Uniform claw superposition sum_{b,x} |b>|x>|f_k(b,x)> on 1+2n qubits."""
    n = k.n
    amp = 1.0 / np.sqrt(2 << n)
    support = {}
    for b in (0, 1):
        for x in range(1 << n):
            idx = (((b << n) | x) << n) | k.eval(b, x)
            support[idx] = amp
    return SparseState(1 + 2 * n, support)


def verify_v(t: ToyNTCFKey, y, c, w) -> int:
    """The round predicate: preimage check for c=0, equation check for c=1.

    For c=1 the answer is (u, e); every e is admissible in the toy family
    (a documented deviation: e = 0 with u = 0 passes), and the equation reads
    e . (x0 ^ x1) = u, which the trapdoor reduces to e . shift = u.
    """
    if c == 0:
        try:
            b, x = w
        except (TypeError, ValueError):
            raise QDepthError("malformed preimage answer")
        return chk(t, b, x, y)
    if c == 1:
        try:
            u, e = w
        except (TypeError, ValueError):
            raise QDepthError("malformed equation answer")
        x0, x1 = t.preimages(y)
        return int(dot_bits(e, x0 ^ x1) == (u & 1))
    raise QDepthError("challenge bit must be 0 or 1")


@dataclass
class CvqdRun:
    d: int
    d0: int
    keys: list
    images: list = field(default_factory=list)
    challenges: list = field(default_factory=list)
    responses: list = field(default_factory=list)
    verdict: str | None = None
    audited_depth: int | None = None

    def to_json(self):
        return {
            "d": self.d,
            "d0": self.d0,
            "images": self.images,
            "challenges": self.challenges,
            "verdict": self.verdict,
            "audited_depth": self.audited_depth,
        }


# ---------------------------------------------------------------------------
# Provers
# ---------------------------------------------------------------------------


class HonestProver:
    """Keeps all claw registers coherent; one adaptive layer per round.

    Depth accounting: preparing every claw superposition and measuring the
    image registers is charged as the constant block d0 (the first round's
    basis slot is folded into it); every later round charges one layer, so a
    full run audits exactly d0 + d.
    """

    def __init__(self, d0=D0_DEFAULT, failure_rate=0.0):
        self.d0 = d0
        self.failure_rate = failure_rate

    def begin(self, keys, d, rng):
        self.keys = keys
        self.rng = rng
        self.session = HybridSession(DQC, self.d0 + d, rng)
        self.states = [samp_state(k) for k in keys]
        self.session.charge_layers(self.d0, "prepare_claws")
        images = []
        for st, k in zip(self.states, keys):
            n = k.n
            bits, _ = qsim_measure(st, range(1 + n, 1 + 2 * n), "standard", self.rng)
            y = 0
            for b in bits:
                y = (y << 1) | b
            images.append(y)
        self.images = images
        return images

    def answer(self, i, c):
        k = self.keys[i - 1]
        n = k.n
        st = self.states[i - 1]
        if i >= 2:
            self.session.charge_layers(1, f"round_{i}_basis")
        if self.failure_rate and self.rng.random() < self.failure_rate:
            return (1, 0) if c == 1 else (0, 0)
        if c == 0:
            bits, _ = qsim_measure(st, range(0, 1 + n), "standard", self.rng)
        else:
            for qb in range(0, 1 + n):
                st.apply_gate(Gate("H", (qb,)))
            bits, _ = qsim_measure(st, range(0, 1 + n), "standard", self.rng)
        head = bits[0]
        rest = 0
        for b in bits[1:]:
            rest = (rest << 1) | b
        return (head, rest)

    def trace(self):
        return self.session.finish()


class PreimageOnlyProver:
    """Classical prover that prepares preimages and nothing else.

    It answers every c=0 challenge perfectly and every c=1 challenge with a
    deliberately unsatisfiable placeholder, so it is accepted exactly when
    all d+1 challenge bits are zero.
    """

    def __init__(self):
        pass

    def begin(self, keys, d, rng):
        self.keys = keys
        self.rng = rng
        self.session = HybridSession(DQC, 0, rng)
        self.pre = []
        images = []
        for k in keys:
            b = int(rng.integers(2))
            x = int(rng.integers(0, 1 << k.n))
            self.pre.append((b, x))
            images.append(k.eval(b, x))
        return images

    def answer(self, i, c):
        if c == 0:
            return self.pre[i - 1]
        return (1, 0)  # 0 . anything is never 1

    def trace(self):
        return self.session.finish()


class ResetProver:
    """Honest until round j, then collapses to classical information.

    On receiving c_j the prover measures every remaining register in the
    standard basis; sigma_j (its classical residue) holds the preimages, so
    later c=0 rounds still pass while c=1 rounds use ``equation_mode``:
    "guess" answers a random equation, "planted" uses the claw shift (an
    experiment-only power standing in for a prover that breaks the hardcore
    bit).
    """

    def __init__(self, j, d0=D0_DEFAULT, equation_mode="guess"):
        self.j = j
        self.d0 = d0
        self.equation_mode = equation_mode

    def begin(self, keys, d, rng):
        self.keys = keys
        self.rng = rng
        self.d = d
        self.session = HybridSession(DQC, self.d0 + max(0, self.j - 1), rng)
        self.states = [samp_state(k) for k in keys]
        self.session.charge_layers(self.d0, "prepare_claws")
        self.sigma = None
        images = []
        for st, k in zip(self.states, keys):
            n = k.n
            bits, _ = qsim_measure(st, range(1 + n, 1 + 2 * n), "standard", rng)
            y = 0
            for b in bits:
                y = (y << 1) | b
            images.append(y)
        self.images = images
        return images

    def _reset(self):
        """Standard-basis measurement of everything still coherent."""
        sigma = {}
        for i in range(self.j, self.d + 2):
            k = self.keys[i - 1]
            st = self.states[i - 1]
            bits, _ = qsim_measure(st, range(0, 1 + k.n), "standard", self.rng)
            head, rest = bits[0], 0
            for b in bits[1:]:
                rest = (rest << 1) | b
            sigma[i] = (head, rest)
        self.sigma = dict(sigma)
        return sigma

    def answer(self, i, c):
        if i < self.j:
            if i >= 2:
                self.session.charge_layers(1, f"round_{i}_basis")
            k = self.keys[i - 1]
            st = self.states[i - 1]
            if c == 0:
                bits, _ = qsim_measure(st, range(0, 1 + k.n), "standard", self.rng)
            else:
                for qb in range(0, 1 + k.n):
                    st.apply_gate(Gate("H", (qb,)))
                bits, _ = qsim_measure(st, range(0, 1 + k.n), "standard", self.rng)
            head, rest = bits[0], 0
            for b in bits[1:]:
                rest = (rest << 1) | b
            return (head, rest)
        if self.sigma is None:
            self._reset()
        return self.answer_from_sigma(self.sigma, i, c)

    def answer_from_sigma(self, sigma, i, c):
        """Classical post-reset answering; replayable by the extractor."""
        if c == 0:
            return sigma[i]
        k = self.keys[i - 1]
        if self.equation_mode == "planted":
            e = int(self.rng.integers(0, 1 << k.n))
            return (dot_bits(e, k.shift), e)
        e = int(self.rng.integers(0, 1 << k.n))
        u = int(self.rng.integers(2))
        return (u, e)

    def trace(self):
        return self.session.finish()


PROVERS = {
    "honest": lambda d0=D0_DEFAULT: HonestProver(d0=d0),
    "preimage-only": lambda d0=D0_DEFAULT: PreimageOnlyProver(),
    "reset-guess": lambda d0=D0_DEFAULT: ResetProver(j=1, d0=d0, equation_mode="guess"),
    "reset-planted": lambda d0=D0_DEFAULT: ResetProver(j=1, d0=d0,
                                                       equation_mode="planted"),
}


# ---------------------------------------------------------------------------
# Protocol runner and extractor
# ---------------------------------------------------------------------------


def run_cvqd(d, prover, rng, n=4, d0=D0_DEFAULT):
    """One protocol execution: d+1 keys, sequential challenges.

    The verdict is reject as soon as any round's predicate fails; each
    challenge bit is sampled only after the previous answer arrived.
    """
    keys = [gen(n, rng)[0] for _ in range(d + 1)]
    run = CvqdRun(d=d, d0=d0, keys=keys)
    images = prover.begin(keys, d, rng)
    if len(images) != d + 1:
        raise ProtocolOrderError("prover must commit d+1 images first")
    run.images = [int(y) for y in images]
    for i in range(1, d + 2):
        c = int(rng.integers(2))
        run.challenges.append(c)
        w = prover.answer(i, c)
        run.responses.append(tuple(int(v) for v in w))
        if not verify_v(keys[i - 1], run.images[i - 1], c, w):
            run.verdict = "reject"
            break
    else:
        run.verdict = "accept"
    try:
        run.audited_depth = audited_depth(prover.trace())
    except Exception:
        run.audited_depth = None
    return run.verdict, run


def rewind_extract(prover: ResetProver, rng, n=4, d=2, d0=D0_DEFAULT):
    """Replay a reset-style prover's last round under both challenges.

    Drives the protocol up to the final round, forces the classical residue
    sigma_j into existence, then asks for both a preimage and an equation
    for the same image.  Returns (y, w0, w1, both_valid).
    """
    keys = [gen(n, rng)[0] for _ in range(d + 1)]
    images = prover.begin(keys, d, rng)
    target = d + 1
    for i in range(1, target):
        c = int(rng.integers(2))
        prover.answer(i, c)
    if prover.sigma is None:
        if prover.j > target:
            raise ProtocolOrderError(
                "prover never resets; rewinding needs a classical residue"
            )
        prover._reset()
    sigma = dict(prover.sigma)
    w0 = prover.answer_from_sigma(sigma, target, 0)
    w1 = prover.answer_from_sigma(sigma, target, 1)
    y = images[target - 1]
    v0 = verify_v(keys[target - 1], y, 0, w0)
    v1 = verify_v(keys[target - 1], y, 1, w1)
    return y, w0, w1, int(v0 and v1), (v0, v1)


def extractor_experiment(d, trials, rng_seed=0, n=4, mode="guess", j=1):
    """Monte-Carlo check of the rewinding inequality.

    Returns p0_hat, p1_hat, both_rate; the construction guarantees
    both_rate >= p0_hat + p1_hat - 1 up to sampling noise.
    """
    v0s, v1s, boths = 0, 0, 0
    for t in range(trials):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=rng_seed, spawn_key=(t,))
        )
        prover = ResetProver(j=j, equation_mode=mode)
        _, _, _, both, (v0, v1) = rewind_extract(prover, rng, n=n, d=d)
        v0s += v0
        v1s += v1
        boths += both
    return {
        "trials": trials,
        "p0": v0s / trials,
        "p1": v1s / trials,
        "both_valid_rate": boths / trials,
    }
