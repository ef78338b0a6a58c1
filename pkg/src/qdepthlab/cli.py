"""Command-line harness: experiment runners with reproducible seeds.

Configuration comes from an optional flat key=value file plus CLI flags
(flags win).  All outputs are JSON on stdout; transcripts and manifests go
to --outdir when given.  Exit codes: 0 success, 2 assertion or acceptance
failure, 3 configuration error, 4 capacity error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import itertools
import json
import os
import sys
import time

import numpy as np

from .errors import CapacityError, ConfigError, QDepthError
from . import gadgets, game, ntcf, oracles, qsim
from .gadgets import RoundType
from .hybrid import audited_depth


def load_config_file(path):
    """Flat key=value lines; '#' starts a comment."""
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError([f"bad config line: {line!r}"])
            key, val = (part.strip() for part in line.split("=", 1))
            out[key] = val
    return out


def _coerce(value, like):
    if isinstance(like, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def build_protocol_config(args):
    base = {}
    if getattr(args, "config", None):
        base = load_config_file(args.config)
    cfg = game.ProtocolConfig()
    fields = {f: getattr(cfg, f) for f in (
        "n", "d", "q", "p", "alpha_c", "trials", "seed", "oracle_mode",
        "fidelity", "target", "standin_wires",
    )}
    kw = {}
    for name, default in fields.items():
        if name in base:
            kw[name] = _coerce(base[name], default)
        flag = getattr(args, name, None)
        if flag is not None:
            kw[name] = flag
    if getattr(args, "t_parallel", None) is not None:
        kw["t_parallel"] = args.t_parallel
    return game.ProtocolConfig(**kw)


def emit(result, args=None):
    print(json.dumps(result, indent=2, sort_keys=True))
    outdir = getattr(args, "outdir", None) if args else None
    if outdir:
        os.makedirs(outdir, exist_ok=True)
        with open(os.path.join(outdir, "report.json"), "w") as fh:
            json.dump(result, fh, indent=2, sort_keys=True)


def write_manifest(args, cfg_json, oracle_descriptor=None):
    outdir = getattr(args, "outdir", None)
    if not outdir:
        return
    os.makedirs(outdir, exist_ok=True)
    manifest = {
        "command": args.command,
        "config": cfg_json,
        "seed": cfg_json.get("seed"),
        "oracle_descriptor_hash": (
            hashlib.sha256(oracle_descriptor.encode()).hexdigest()
            if oracle_descriptor else None
        ),
        "output": os.path.join(outdir, "report.json"),
    }
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# gadget-check
# ---------------------------------------------------------------------------


def cmd_gadget_check(args):
    rng = np.random.default_rng(args.seed)
    report = {"checks": []}
    failures = 0

    m = gadgets.h_sequence_matrix()
    ok = np.allclose(m, np.exp(1j * np.pi / 4) * qsim.H, atol=1e-12)
    report["checks"].append({"name": "h_compile_identity", "pass": bool(ok)})
    failures += not ok

    ok = True
    for trial in range(3):
        psi = qsim.random_state(1, rng)
        for a, b, z in itertools.product((0, 1), repeat=3):
            for c, e in itertools.product((0, 1), repeat=2):
                st = qsim.StateVector(1, np.linalg.matrix_power(qsim.X, a)
                                      @ np.linalg.matrix_power(qsim.Z, b) @ psi)
                ledger = gadgets.KeyLedger.with_keys([[a, b]])
                try:
                    _, _, out, ledger = gadgets.run_t_gadget(
                        st, 0, RoundType.COMPUTATION, "computation", z, rng,
                        ledger=ledger, force=(c, e))
                except QDepthError:
                    continue
                a2, b2 = ledger.keys[0]
                want = (np.linalg.matrix_power(qsim.X, a2)
                        @ np.linalg.matrix_power(qsim.Z, b2) @ qsim.T @ psi)
                if not qsim.states_equal_up_to_phase(out.amplitudes, want):
                    ok = False
    report["checks"].append({"name": "t_gadget_exhaustive", "pass": bool(ok)})
    failures += not ok

    if args.planted_attack:
        pauli, wire = args.planted_attack.split(":")
        wire = int(wire)
        n_wires = 2
        op = qsim.PauliOp(
            n_wires,
            (1 << (n_wires - 1 - wire)) if pauli.upper() == "X" else 0,
            (1 << (n_wires - 1 - wire)) if pauli.upper() == "Z" else 0,
        )
        ex, ez = gadgets.measure_test_failure_rates(
            [("T", 0)], n_wires, op, args.trials, rng)
        report["checks"].append({
            "name": f"planted_attack_{pauli}:{wire}",
            "xtest_rejection": ex, "ztest_rejection": ez,
            "pass": True,
        })

    if args.twirl:
        worst = 0.0
        for _ in range(args.trials):
            kraus = qsim.random_cptp(args.twirl, rng)
            r = qsim.twirl(kraus, args.twirl)
            for basis in _twirl_probe_states(args.twirl):
                lhs = qsim.twirled_channel_apply(kraus, args.twirl, basis)
                rhs = qsim.pauli_channel_apply(r, basis)
                worst = max(worst, float(np.max(np.abs(lhs - rhs))))
        ok = worst < 1e-9
        report["checks"].append({
            "name": f"twirl_n{args.twirl}", "max_deviation": worst,
            "pass": bool(ok)})
        failures += not ok

    report["pass"] = failures == 0
    emit(report, args)
    return 0 if failures == 0 else 2


def _twirl_probe_states(n):
    single = [
        np.diag([1.0, 0.0]).astype(complex),
        np.diag([0.0, 1.0]).astype(complex),
        np.full((2, 2), 0.5, dtype=complex),
        np.array([[0.5, -0.5j], [0.5j, 0.5]], dtype=complex),
    ]
    if n == 1:
        return single
    out = []
    for combo in itertools.product(single, repeat=n):
        rho = combo[0]
        for extra in combo[1:]:
            rho = np.kron(rho, extra)
        out.append(rho)
    return out


def cmd_twirl_check(args):
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(args.trials):
        kraus = qsim.random_cptp(args.n, rng)
        r = qsim.twirl(kraus, args.n)
        for basis in _twirl_probe_states(args.n):
            lhs = qsim.twirled_channel_apply(kraus, args.n, basis)
            rhs = qsim.pauli_channel_apply(r, basis)
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    result = {"n": args.n, "trials": args.trials, "max_deviation": worst,
              "pass": worst < 1e-9}
    emit(result, args)
    return 0 if result["pass"] else 2


# ---------------------------------------------------------------------------
# simon / dssp-run
# ---------------------------------------------------------------------------


def cmd_simon(args):
    rng = np.random.default_rng(args.seed)
    shifts = {}
    for _ in range(args.samples):
        f = oracles.sample_simon(args.n, rng)
        if args.verify:
            f.check_two_to_one()
        shifts[f.s] = shifts.get(f.s, 0) + 1
    k = (1 << args.n) - 1
    expected = args.samples / k
    chi2 = sum((shifts.get(s, 0) - expected) ** 2 / expected
               for s in range(1, 1 << args.n))
    result = {"n": args.n, "samples": args.samples, "distinct_shifts": len(shifts),
              "chi2": chi2, "dof": k - 1, "verified": bool(args.verify)}
    emit(result, args)
    return 0


def cmd_dssp_run(args):
    rng = np.random.default_rng(args.seed)
    simon = oracles.sample_simon(args.n, rng)
    shuffling = oracles.sample_shuffling(simon, args.d, rng, mode=args.mode)
    recovered = 0
    depths = set()
    accepted_frac = []
    for run_idx in range(args.runs):
        run_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=args.seed, spawn_key=(run_idx,)))
        if args.access == "inplace":
            ipo = oracles.build_inplace(shuffling, run_rng)
            s_hat, trace, stats = oracles.solve_inplace_dssp(ipo, run_rng)
            accepted_frac.append(stats["accepted"] / max(1, stats["runs"]))
        else:
            s_hat, trace, stats = oracles.solve_standard_dssp(shuffling, run_rng)
        recovered += s_hat == simon.s
        depths.add(audited_depth(trace))
    result = {
        "n": args.n, "d": args.d, "mode": args.mode, "access": args.access,
        "runs": args.runs, "recovery_rate": recovered / args.runs,
        "audited_depth": sorted(depths),
        "expected_depth": args.d + 3 if args.access == "inplace" else 2 * args.d + 3,
    }
    if accepted_frac:
        result["flag_accept_fraction"] = float(np.mean(accepted_frac))
    write_manifest(args, {"seed": args.seed}, shuffling.descriptor())
    emit(result, args)
    ok = result["recovery_rate"] >= args.min_rate
    return 0 if ok else 2


# ---------------------------------------------------------------------------
# game-run / ntcf-run / bench
# ---------------------------------------------------------------------------


def _game_worker(payload):
    cfg_kw, strat_a, strat_o, seed, t0, t1 = payload
    cfg = game.ProtocolConfig(**cfg_kw).resolved()
    accepted = 0
    depths = set()
    transcripts = []
    for t in range(t0, t1):
        rng = game.trial_rng(seed, t)
        orc = None if cfg.fidelity == "gadget" else game.make_oracle(cfg, rng)
        a = game.STRATEGIES_A[strat_a](cfg)
        o = game.STRATEGIES_O[strat_o](cfg)
        verdict, tr = game.run_query_protocol(cfg, a, o, orc, rng)
        accepted += verdict == "accept"
        depths.add(tr.depth_audit.get("audited_depth"))
        if t < 3:
            transcripts.append(tr.to_json())
    return accepted, depths, transcripts


def cmd_game_run(args):
    violations = []
    if args.strategy_a not in game.STRATEGIES_A:
        violations.append(f"unknown strategy-a {args.strategy_a!r}")
    if args.strategy_o not in game.STRATEGIES_O:
        violations.append(f"unknown strategy-o {args.strategy_o!r}")
    if violations:
        raise ConfigError(violations)
    cfg = build_protocol_config(args).resolved()
    cfg.validate()
    trials = args.trials if args.trials is not None else cfg.trials
    seed = args.seed if args.seed is not None else cfg.seed
    cfg_kw = {k: getattr(cfg, k) for k in (
        "n", "d", "q", "p", "alpha", "alpha_c", "t_parallel", "m", "seed",
        "oracle_mode", "fidelity", "target", "standin_wires")}

    if args.repeat > 1:
        result = game.run_cvqd2(
            cfg.n, cfg.d, target=cfg.target, strat_a=args.strategy_a,
            strat_o=args.strategy_o, trials=trials, seed=seed,
            repeat=args.repeat, fidelity=cfg.fidelity,
            oracle_mode=cfg.oracle_mode, t_parallel=cfg.t_parallel)
        write_manifest(args, cfg.to_json())
        emit(result, args)
        return 0

    jobs = max(1, args.jobs)
    bounds = np.linspace(0, trials, jobs + 1, dtype=int)
    payloads = [(cfg_kw, args.strategy_a, args.strategy_o, seed, int(a), int(b))
                for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    accepted, depths, transcripts = 0, set(), []
    if jobs == 1:
        parts = [_game_worker(p) for p in payloads]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_game_worker, payloads))
    for acc, dep, trs in parts:
        accepted += acc
        depths |= dep
        transcripts.extend(trs)
    phat, lo, hi = game.wilson_interval(accepted, trials)
    result = {
        "config": cfg.to_json(),
        "strategy_a": args.strategy_a, "strategy_o": args.strategy_o,
        "trials": trials, "accepted": accepted,
        "acceptance": phat, "ci95": [lo, hi],
        "audited_depths": sorted(d for d in depths if d is not None),
    }
    write_manifest(args, cfg.to_json())
    if args.outdir:
        os.makedirs(args.outdir, exist_ok=True)
        for i, tr in enumerate(transcripts):
            with open(os.path.join(args.outdir, f"transcript_{i}.json"), "w") as fh:
                fh.write(tr)
    emit(result, args)
    return 0


def cmd_ntcf_run(args):
    accepted = 0
    depths = set()
    for t in range(args.trials):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=args.seed, spawn_key=(t,)))
        prover = ntcf.PROVERS[args.prover]()
        verdict, run = ntcf.run_cvqd(args.d, prover, rng, n=args.n)
        accepted += verdict == "accept"
        if run.audited_depth is not None:
            depths.add(run.audited_depth)
    result = {
        "d": args.d, "d0": ntcf.D0_DEFAULT, "n": args.n, "prover": args.prover,
        "trials": args.trials, "accept_rate": accepted / args.trials,
        "audited_depths": sorted(depths),
    }
    if args.extract:
        result["extractor"] = ntcf.extractor_experiment(
            args.d, args.trials, rng_seed=args.seed, n=args.n,
            mode="planted" if args.prover == "reset-planted" else "guess")
    emit(result, args)
    return 0


def cmd_bench(args):
    rng = np.random.default_rng(0)
    timings = {}
    t0 = time.perf_counter()
    st = qsim.StateVector.from_bits([0] * 12)
    for q in range(12):
        st.apply_gate(qsim.Gate("H", (q,)))
    timings["dense_h_wall_12q_ms"] = (time.perf_counter() - t0) * 1e3
    t0 = time.perf_counter()
    f = oracles.sample_simon(4, rng)
    sh = oracles.sample_shuffling(f, 2, rng, mode="exact")
    ipo = oracles.build_inplace(sh, rng)
    timings["oracle_build_n4_d2_ms"] = (time.perf_counter() - t0) * 1e3
    t0 = time.perf_counter()
    oracles.solve_inplace_dssp(ipo, rng)
    timings["inplace_solve_n4_d2_ms"] = (time.perf_counter() - t0) * 1e3
    emit({"timings_ms": timings}, args)
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="qdepthlab",
        description="Desk-scale experiments for verifying quantum circuit depth",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gadget-check", help="exhaustive gadget/key-table checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--planted-attack", default=None, metavar="P:WIRE")
    p.add_argument("--twirl", type=int, default=None, metavar="N")
    p.add_argument("--outdir", default=None)
    p.set_defaults(func=cmd_gadget_check)

    p = sub.add_parser("twirl-check", help="twirled channel vs Pauli channel")
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--trials", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--outdir", default=None)
    p.set_defaults(func=cmd_twirl_check)

    p = sub.add_parser("simon", help="sample and verify hidden-shift functions")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--verify", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--outdir", default=None)
    p.set_defaults(func=cmd_simon)

    p = sub.add_parser("dssp-run", help="run the depth-budgeted solvers")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--mode", choices=("exact", "prp"), default="exact")
    p.add_argument("--access", choices=("inplace", "standard"), default="inplace")
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--min-rate", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--outdir", default=None)
    p.set_defaults(func=cmd_dssp_run)

    p = sub.add_parser("game-run", help="two-prover protocol Monte Carlo")
    p.add_argument("--config", default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--q", type=int, default=None)
    p.add_argument("--target", choices=("inplace", "standard"), default=None)
    p.add_argument("--fidelity", choices=("abstract", "gadget"), default=None)
    p.add_argument("--oracle-mode", dest="oracle_mode",
                   choices=("exact", "prp"), default=None)
    p.add_argument("--strategy-a", default="honest")
    p.add_argument("--strategy-o", default="honest")
    p.add_argument("--t-parallel", dest="t_parallel", type=int, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--repeat", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--outdir", default=None)
    p.set_defaults(func=cmd_game_run)

    p = sub.add_parser("ntcf-run", help="single-prover claw-free protocol")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--prover", default="honest", choices=sorted(ntcf.PROVERS))
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--extract", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--outdir", default=None)
    p.set_defaults(func=cmd_ntcf_run)

    p = sub.add_parser("bench", help="timing of core operations")
    p.add_argument("--outdir", default=None)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(json.dumps({"error": "config", "violations": exc.violations}),
              file=sys.stderr)
        return 3
    except CapacityError as exc:
        print(json.dumps({"error": "capacity", "detail": str(exc)}),
              file=sys.stderr)
        return 4
    except QDepthError as exc:
        print(json.dumps({"error": "failure", "detail": str(exc)}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
