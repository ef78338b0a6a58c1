"""Delegated computation on one-time-padded data via teleportation gadgets.

A delegated circuit over {CNOT, H, T} runs on data encrypted with a quantum
one-time pad X^a Z^b.  Every T gate is executed as a three-wire gadget that
consumes a fresh EPR pair; every H gate is pre-compiled into the ten-gate
sequence HTTHTTHTTH (equal to H up to the global phase e^{i pi/4}), whose six
T gates run as gadgets too.  Test rounds run the same gadget traffic on
encrypted |0^n> or |+^n> so that the whole computation acts as the identity
up to a key update, exposing bit-flip or phase-flip tampering.

Phase conventions (fixed by requiring the key-update rules to hold exactly,
branch by branch): the computation-round measurement is H P^w T with
P = diag(1, i) and w = (a + c + z) mod 2; the odd-parity measurement and the
correction on the surviving wire use the inverse phase gate diag(1, -i).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import QDepthError
from .qsim import (
    GATE_MATRICES,
    Gate,
    H,
    I2,
    S,
    SDG,
    StateVector,
    T,
    make_epr,
    measure,
)


class RoundType(enum.Enum):
    COMPUTATION = "computation"
    XTEST = "xtest"
    ZTEST = "ztest"


H_COMPILE_SEQUENCE = ("H", "T", "T", "H", "T", "T", "H", "T", "T", "H")


def compile_H():
    """The ten-gate replacement sequence for one Hadamard."""
    return list(H_COMPILE_SEQUENCE)


def h_sequence_matrix() -> np.ndarray:
    m = np.eye(2, dtype=complex)
    for name in H_COMPILE_SEQUENCE:
        m = m @ GATE_MATRICES[name]
    return m


def gadget_parity(round_type: RoundType, h_count) -> str:
    """Parity of a T gadget from the H count inside its enclosing H gadget.

    ``h_count`` is None for a bare T gate.  In an X-test a gadget is even
    when an even number of H gates precede it inside the H gadget (a bare T
    acts on a |0>-type wire and is even); in a Z-test the rule mirrors.
    """
    h = 0 if h_count is None else h_count
    if round_type == RoundType.XTEST:
        return "even" if h % 2 == 0 else "odd"
    if round_type == RoundType.ZTEST:
        return "odd" if h % 2 == 0 else "even"
    return "computation"


def choose_W(round_type: RoundType, parity, a_key, c, z) -> np.ndarray:
    """Measurement unitary for the gadget's verifier wire, as a 2x2 matrix.

    Computation rounds use H P^{a'+c+z} T with the exponent mod 2, where a'
    is the X key of the data wire entering the gadget.
    """
    if round_type == RoundType.COMPUTATION:
        w = (a_key + c + z) % 2
        return H @ np.linalg.matrix_power(S, w) @ T
    if parity == "even":
        return I2.copy()
    if parity == "odd":
        return H @ np.linalg.matrix_power(SDG, z)
    raise QDepthError(f"unknown parity {parity!r}")


def update_keys(gate, ledger, outcomes):
    """Apply one key-update rule in place and return the ledger.

    ``outcomes`` carries the wires plus whichever of c, e, z, parity the rule
    needs.  All arithmetic is mod 2.
    """
    if gate == "H":
        w = outcomes["wire"]
        a, b = ledger.keys[w]
        ledger.keys[w] = [b, a]
    elif gate == "CNOT":
        ctl, tgt = outcomes["control"], outcomes["target"]
        a, b = ledger.keys[ctl]
        a2, b2 = ledger.keys[tgt]
        ledger.keys[ctl] = [a, (b + b2) % 2]
        ledger.keys[tgt] = [(a + a2) % 2, b2]
    elif gate == "T":
        w = outcomes["wire"]
        c, e, z = outcomes["c"], outcomes["e"], outcomes["z"]
        parity = outcomes["parity"]
        a, b = ledger.keys[w]
        if parity == "computation":
            a2 = (a + c) % 2
            ledger.keys[w] = [a2, (b + e + a + c + a2 * z) % 2]
        elif parity == "even":
            ledger.keys[w] = [e, 0]
        elif parity == "odd":
            ledger.keys[w] = [0, (b + e + z) % 2]
        else:
            raise QDepthError(f"unknown parity {parity!r}")
    else:
        raise QDepthError(f"no key-update rule for gate {gate!r}")
    return ledger


@dataclass
class KeyLedger:
    """Per-wire one-time-pad keys plus the per-gadget outcome history."""

    keys: list
    history: list = field(default_factory=list)
    h_depth: list = field(default_factory=list)   # H count per in-flight H gadget

    @classmethod
    def fresh(cls, n, rng):
        return cls(keys=[[int(rng.integers(2)), int(rng.integers(2))] for _ in range(n)])

    @classmethod
    def with_keys(cls, keys):
        return cls(keys=[list(k) for k in keys])

    def record_gadget(self, idx, round_type, parity, z, c, e, wire):
        self.history.append(
            {
                "gadget": idx,
                "round": round_type.value,
                "parity": parity,
                "z": z,
                "c": c,
                "e": e,
                "keys_after": list(self.keys[wire]),
            }
        )


def compile_ops(ops):
    """Expand H gates into H gadgets; annotate T gadgets with their H count.

    ``ops`` is a sequence of ("T", w), ("H", w), ("CNOT", c, t).  Returns
    (compiled op list, T count).  Compiled entries are ("h", w),
    ("cnot", c, t) and ("t", w, h_count_or_None).
    """
    compiled = []
    t_count = 0
    for op in ops:
        kind = op[0].upper()
        if kind == "CNOT":
            compiled.append(("cnot", op[1], op[2]))
        elif kind == "T":
            compiled.append(("t", op[1], None))
            t_count += 1
        elif kind == "H":
            w = op[1]
            h_seen = 0
            for name in H_COMPILE_SEQUENCE:
                if name == "H":
                    compiled.append(("h", w))
                    h_seen += 1
                else:
                    compiled.append(("t", w, h_seen))
                    t_count += 1
        else:
            raise QDepthError(f"cannot compile gate {kind!r}")
    return compiled, t_count


@dataclass
class GadgetSession:
    """One delegated run: a fixed round type, a compiled circuit, a ledger."""

    round_type: RoundType
    n: int
    ops: list
    ledger: KeyLedger
    t_count: int
    gadgets_run: int = 0

    @classmethod
    def build(cls, round_type, n, circuit_ops, rng=None, keys=None):
        compiled, t_count = compile_ops(circuit_ops)
        if keys is not None:
            ledger = KeyLedger.with_keys(keys)
        else:
            ledger = KeyLedger.fresh(n, rng)
        return cls(round_type=round_type, n=n, ops=compiled, ledger=ledger,
                   t_count=t_count)


def _postselect(state: StateVector, qubit, bit):
    """Project a qubit onto |bit>; returns branch probability (state mutated)."""
    mask = state._mask(qubit)
    idx = np.arange(len(state.amplitudes))
    sel = ((idx & mask) != 0) == bool(bit)
    amps = np.where(sel, state.amplitudes, 0.0)
    p = float(np.vdot(amps, amps).real)
    if p > 1e-12:
        state.amplitudes = amps / np.sqrt(p)
    return p


def run_t_gadget(state, data_wire, round_type, parity, z, rng,
                 ledger=None, force=None, gadget_index=0):
    """Run one T gadget on ``data_wire`` using a fresh EPR pair.

    The pair is appended to the register; the verifier wire is measured with
    choose_W after the prover's data-wire measurement produced c; the
    surviving half takes the data wire's place after the inverse-phase-gate
    correction.  Returns (c, e, state, ledger).

    ``force=(c, e)`` postselects both outcomes (used by exhaustive tests); a
    forced branch of probability zero raises.
    """
    n = state.num_qubits
    epr = make_epr(1)
    state = StateVector(n + 2, np.kron(state.amplitudes, epr.amplitudes),
                        state.dense_limit)
    a_wire, v_wire = n, n + 1

    # prover: CNOT from its EPR half onto the data wire, then measure it
    state.apply_gate(Gate("CNOT", (a_wire, data_wire)))
    if force is None:
        (c,), state = measure(state, [data_wire], "standard", rng)
    else:
        c = force[0]
        if _postselect(state, data_wire, c) < 1e-12:
            raise QDepthError("forced c branch has probability 0")

    a_key = ledger.keys[data_wire][0] if ledger is not None else 0
    w_matrix = choose_W(round_type, parity, a_key, c, z)

    # verifier: rotate its half by W and measure
    state.apply_gate(Gate("W", (v_wire,), matrix=w_matrix))
    if force is None:
        (e,), state = measure(state, [v_wire], "standard", rng)
    else:
        e = force[1]
        if _postselect(state, v_wire, e) < 1e-12:
            raise QDepthError("forced e branch has probability 0")

    # prover: inverse phase correction on the surviving wire
    state.apply_gate(Gate("PZC", (a_wire,), matrix=np.linalg.matrix_power(SDG, z)))

    state.remove_qubit(v_wire, e)
    state.remove_qubit(data_wire, c)
    # the surviving EPR half is now the last qubit; put it where the data was
    state.move_qubit(state.num_qubits - 1, data_wire)

    if ledger is not None:
        update_keys("T", ledger, {"wire": data_wire, "c": c, "e": e, "z": z,
                                  "parity": parity})
        ledger.record_gadget(gadget_index, round_type, parity, z, c, e, data_wire)
    return c, e, state, ledger


def _initial_state(session: GadgetSession, rng, input_state=None) -> StateVector:
    n = session.n
    keys = session.ledger.keys
    if session.round_type == RoundType.COMPUTATION:
        if input_state is not None:
            state = input_state.copy()
        else:
            state = StateVector.from_bits([0] * n)
    elif session.round_type == RoundType.XTEST:
        state = StateVector.from_bits([0] * n)
    else:
        state = StateVector.from_bits([0] * n)
        for q in range(n):
            state.apply_gate(Gate("H", (q,)))
    for q in range(n):
        a, b = keys[q]
        if b:
            state.apply_gate(Gate("Z", (q,)))
        if a:
            state.apply_gate(Gate("X", (q,)))
    return state


def run_session(session: GadgetSession, rng, input_state=None):
    """Execute the compiled circuit under the session's round type.

    Returns (state, session); the state is still one-time-padded with the
    ledger's final keys.
    """
    state = _initial_state(session, rng, input_state)
    for op in session.ops:
        if op[0] == "cnot":
            _, ctl, tgt = op
            state.apply_gate(Gate("CNOT", (ctl, tgt)))
            update_keys("CNOT", session.ledger, {"control": ctl, "target": tgt})
        elif op[0] == "h":
            _, w = op
            state.apply_gate(Gate("H", (w,)))
            update_keys("H", session.ledger, {"wire": w})
        elif op[0] == "t":
            _, w, h_count = op
            parity = gadget_parity(session.round_type, h_count)
            z = int(rng.integers(2))
            _, _, state, _ = run_t_gadget(
                state, w, session.round_type, parity, z, rng,
                ledger=session.ledger, gadget_index=session.gadgets_run,
            )
            session.gadgets_run += 1
        else:
            raise QDepthError(f"unknown compiled op {op[0]!r}")
    return state, session


def apply_attack(state: StateVector, attack, rng):
    """Apply the prover's tampering channel to the final data wires.

    ``attack`` is None, a PauliDistribution (one Pauli is sampled), a PauliOp,
    or a Kraus list (one branch is sampled with the Born weights).
    """
    if attack is None:
        return state
    from .qsim import PauliDistribution, PauliOp

    if isinstance(attack, PauliDistribution):
        attack = attack.sample(rng)
    if isinstance(attack, PauliOp):
        if attack.width != state.num_qubits:
            raise QDepthError("attack width does not match the register")
        for q in range(state.num_qubits):
            if (attack.z_bits >> (attack.width - 1 - q)) & 1:
                state.apply_gate(Gate("Z", (q,)))
            if (attack.x_bits >> (attack.width - 1 - q)) & 1:
                state.apply_gate(Gate("X", (q,)))
        return state
    # Kraus list: sample one branch
    dims = attack[0].shape[0]
    if dims != 1 << state.num_qubits:
        raise QDepthError("Kraus operators do not cover the register")
    probs = []
    branches = []
    for k in attack:
        amps = k @ state.amplitudes
        p = float(np.vdot(amps, amps).real)
        probs.append(p)
        branches.append(amps)
    probs = np.array(probs)
    probs = probs / probs.sum()
    pick = rng.choice(len(branches), p=probs)
    amps = branches[pick]
    state.amplitudes = amps / np.linalg.norm(amps)
    return state


def run_delegated_round(session: GadgetSession, prover_channel, rng, input_state=None):
    """Run a full delegated round and produce the verifier's verdict.

    X-test: accept iff the decrypted standard-basis outcome is all zero.
    Z-test: accept iff the decrypted Hadamard-basis outcome is all zero.
    Computation: returns ("state", final encrypted state, ledger).
    """
    state, session = run_session(session, rng, input_state)
    state = apply_attack(state, prover_channel, rng)
    ledger = session.ledger
    n = session.n
    if session.round_type == RoundType.COMPUTATION:
        return "state", state, ledger
    if session.round_type == RoundType.XTEST:
        bits, _ = measure(state, range(n), "standard", rng)
        ok = all((bits[q] ^ ledger.keys[q][0]) == 0 for q in range(n))
    else:
        bits, _ = measure(state, range(n), "hadamard", rng)
        ok = all((bits[q] ^ ledger.keys[q][1]) == 0 for q in range(n))
    return ("accept" if ok else "reject"), None, ledger


def decrypt_state(state: StateVector, ledger: KeyLedger) -> StateVector:
    out = state.copy()
    for q in range(out.num_qubits):
        a, b = ledger.keys[q]
        if a:
            out.apply_gate(Gate("X", (q,)))
        if b:
            out.apply_gate(Gate("Z", (q,)))
    return out


def measure_test_failure_rates(circuit_ops, n, attack, trials, rng):
    """Monte-Carlo failure frequencies (eps_X, eps_Z) under a planted attack."""
    fails = {RoundType.XTEST: 0, RoundType.ZTEST: 0}
    for round_type in fails:
        for _ in range(trials):
            session = GadgetSession.build(round_type, n, circuit_ops, rng)
            verdict, _, _ = run_delegated_round(session, attack, rng)
            if verdict == "reject":
                fails[round_type] += 1
    return fails[RoundType.XTEST] / trials, fails[RoundType.ZTEST] / trials
