"""Command-line entry point.

Every command writes its outputs plus a ``manifest.json`` into ``--out-dir``.
The manifest holds the fully resolved configuration and the sha256 of every
output, so ``ssg-popi replay manifest.json --out-dir other/`` can re-run the
command and check the bytes match.

Exit codes: 0 success, 2 bad input, 3 internal invariant breach.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .fpe import FPE_TIE_RULES, iterate_to_fixed_point
from .fpe import DEFAULT_TIE_BREAK as FPE_DEFAULT_TIE
from .game import (
    ETA,
    Game,
    GameError,
    check_leader_policy,
    compare,
    load_game,
    make_example_game,
    random_game,
    validate_game,
)
from .improve import Scalarization, default_scalarization
from .kernels import BACKEND, TIE_RULES
from .mdp import DEFAULT_TIE_BREAK, follower_best_response
from .oracle import DEFAULT_CAP, build_archive, check_singleton_pareto
from .popi import MODES, SCANS, MonotonicityError, PopiConfig, ProbeSet, SearchConfig, run_popi

log = logging.getLogger("ssg_popi")

EXIT_OK, EXIT_INPUT, EXIT_INVARIANT = 0, 2, 3
MANIFEST = "manifest.json"
RANDOM_GAMMA = 0.9


class ReplayMismatch(RuntimeError):
    pass


# --------------------------------------------------------------------------- helpers


def _fmt(x: float) -> str:
    return "%.17g" % x


def _dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=True) + "\n"


def _sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _sha256_file(path: Path) -> str:
    return _sha256_bytes(path.read_bytes())


def _parse_weights(text: str | None):
    if text is None:
        return None
    try:
        return tuple(float(t) for t in text.split(","))
    except ValueError:
        raise GameError(f"--weights must be a comma-separated list of numbers, got {text!r}") from None


def _load(config: dict) -> Game:
    game = load_game(config["game"])
    if config.get("gamma_a") is not None:
        game = game.replace(gamma_leader=float(config["gamma_a"]))
        problems = validate_game(game)
        if problems:
            raise GameError("; ".join(problems))
    return game


def _load_policy(game: Game, path) -> np.ndarray:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise GameError(f"cannot read policy file {path}: {exc}") from None
    if isinstance(data, dict):
        data = data.get("leader_policy", data.get("policy"))
    try:
        return check_leader_policy(game, np.asarray(data, dtype=np.float64))
    except (TypeError, ValueError) as exc:
        raise GameError(f"invalid leader policy in {path}: {exc}") from None


class Outputs:
    """Collects named text outputs, writes them, and records their hashes."""

    def __init__(self, out_dir: Path):
        self.dir = out_dir
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str) -> None:
        self.files[name] = text

    def write(self, command: str, config: dict) -> dict:
        self.dir.mkdir(parents=True, exist_ok=True)
        hashes = {}
        for name, text in sorted(self.files.items()):
            data = text.encode()
            (self.dir / name).write_bytes(data)
            hashes[name] = _sha256_bytes(data)
        manifest = {
            "command": command,
            "config": config,
            "inputs": _input_hashes(config),
            "seed": config.get("seed"),
            "version": __version__,
            "backend": BACKEND,
            "outputs": hashes,
        }
        (self.dir / MANIFEST).write_text(_dumps(manifest))
        return manifest


def _input_hashes(config: dict) -> dict:
    out = {}
    for key in ("game", "policy"):
        if config.get(key):
            p = Path(config[key])
            if p.exists():
                out[key] = _sha256_file(p)
    return out


# --------------------------------------------------------------------------- commands


def cmd_gen(config: dict, out: Outputs) -> None:
    if config["kind"] == "example":
        for k in ("x", "y", "gamma_a", "gamma_b"):
            if config.get(k) is None:
                raise GameError(f"gen example requires --{k.replace('_', '-')}")
        rho = _parse_weights(config.get("rho")) or (0.5, 0.5)
        game = make_example_game(config["x"], config["y"], config["gamma_a"], config["gamma_b"], rho)
    else:
        sizes = (config["states"], config["leader_actions"], config["follower_actions"])
        if min(sizes) < 1:
            raise GameError("sizes must be >= 1")
        for k in ("gamma_a", "gamma_b"):
            if config.get(k) is None:
                config[k] = RANDOM_GAMMA
        lo, hi = config["reward_min"], config["reward_max"]
        if not lo <= hi:
            raise GameError("--reward-min must not exceed --reward-max")
        for g in (config["gamma_a"], config["gamma_b"]):
            if not 0.0 <= g < 1.0:
                raise GameError(f"discount {g} outside [0, 1)")
        rng = np.random.default_rng(config["seed"])
        game = random_game(rng, *sizes, gamma_A=config["gamma_a"], gamma_B=config["gamma_b"],
                           reward_range=(lo, hi), cooperative=config["cooperative"])
    out.add("game.json", json.dumps(game.to_dict(), indent=1) + "\n")


def cmd_best_response(config: dict, out: Outputs) -> None:
    game = _load(config)
    f = _load_policy(game, config["policy"])
    br = follower_best_response(game, f, config["tie_break"])
    report = {
        "follower_policy": br.policy.tolist(),
        "follower_values": br.follower_values.tolist(),
        "tie_margin": [None if not np.isfinite(m) else float(m) for m in br.tie_margin],
    }
    text = _dumps(report)
    out.add("best_response.json", text)
    sys.stdout.write(text)


def _popi_config(config: dict) -> PopiConfig:
    search = SearchConfig(
        resolution=config["resolution"],
        ascent_step=config["ascent_step"],
        shrink=config["shrink"],
        max_ascent_steps=config["max_ascent_steps"],
        max_descent_steps=config["max_descent_steps"],
        pool_size=config["pool_size"],
    )
    weights = None if config["weights"] is None else tuple(config["weights"])
    return PopiConfig(
        weights=weights,
        epsilon=config["epsilon"],
        max_iters=config["max_iters"],
        improvement_tol=config["improvement_tol"],
        search=search,
        mode=config["mode"],
        scan=config["scan"],
        seed=config["seed"],
        tie_break=config["tie_break"],
    )


def _resolve_weights(game: Game, config: dict) -> None:
    if config.get("preset") == "policy-teaching":
        config["weights"] = game.initial_distribution.tolist()
    if config["weights"] is None:
        config["weights"] = default_scalarization(game).weights.tolist()
    else:
        config["weights"] = Scalarization.from_weights(config["weights"]).weights.tolist()
        if len(config["weights"]) != game.num_states:
            raise GameError(f"expected {game.num_states} weights, got {len(config['weights'])}")


def cmd_popi(config: dict, out: Outputs) -> None:
    game = _load(config)
    _resolve_weights(game, config)
    pc = _popi_config(config)
    init = config["init"]
    f0 = _load_policy(game, init) if init not in ("uniform", "random") else init
    trace = run_popi(game, f0, pc)
    out.add("trace.json", _dumps({"config": pc.to_dict(), **trace.to_dict()}))
    out.add("trace.csv", trace.to_csv())


def cmd_fpe(config: dict, out: Outputs) -> None:
    game = _load(config)
    report = iterate_to_fixed_point(game, None, config["tol"], config["max_iters"], config["window"], config["tie_break"])
    out.add("fpe.json", _dumps(report.to_dict()))
    lines = ["iteration,step_norm"] + [f"{k + 1},{_fmt(h)}" for k, h in enumerate(report.history)]
    out.add("fpe.csv", "\n".join(lines) + "\n")


def cmd_pareto_oracle(config: dict, out: Outputs) -> None:
    game = _load(config)
    archive = build_archive(game, config["resolution"], config["tie_break"], cap=config["cap"])
    out.add("archive.csv", archive.to_csv())
    summary = {
        "verdict": check_singleton_pareto(archive).value,
        "num_pareto": len(archive.values),
        "num_enumerated": archive.num_enumerated,
        "se_upper": archive.se_upper.tolist(),
        "pareto_values": archive.values.tolist(),
    }
    out.add("oracle.json", _dumps(summary))


def _cone_violation(values: np.ndarray, v_inf: np.ndarray, gamma: float) -> float:
    d = values - v_inf
    return float(np.max(d.min(axis=1) - gamma * d.max(axis=1))) if len(d) else -np.inf


def cmd_compare(config: dict, out: Outputs) -> None:
    game = _load(config)
    _resolve_weights(game, config)
    archive = build_archive(game, config["resolution"], config["tie_break"], cap=config["cap"])
    base = _popi_config(config)
    L = base.scalarization(game)
    probes = ProbeSet.grid(game, config["resolution"], config["tie_break"], cap=config["cap"])
    methods: dict[str, np.ndarray] = {}
    notes: dict[str, dict] = {}
    for mode in ("practical-split", "ideal-grid"):
        pc = _popi_config({**config, "mode": mode})
        tr = run_popi(game, config["init"] if config["init"] in ("uniform", "random") else
                      _load_policy(game, config["init"]), pc, probes)
        methods[f"popi/{mode}"] = tr.final_values
        notes[f"popi/{mode}"] = {"termination": tr.termination, "iterations": len(tr.iterates) - 1}
    fp = iterate_to_fixed_point(game, None, 1e-8, config["fpe_max_iters"], 64, config["fpe_tie_break"])
    methods["fpe"] = fp.values.v_A
    notes["fpe"] = {"status": fp.status, "iterations": fp.iterations}
    best_idx = int(np.argmax(archive.values @ L.weights))
    methods["oracle/best-L"] = archive.values[best_idx]
    notes["oracle/best-L"] = {"verdict": check_singleton_pareto(archive).value, "num_pareto": len(archive.values)}

    names = list(methods)
    report = {"weights": L.weights.tolist(), "se_upper": archive.se_upper.tolist(), "methods": {}, "relations": {}}
    for name in names:
        v = methods[name]
        entry = {
            "values": v.tolist(),
            "scalarized": L(v),
            "se_upper_gap": (archive.se_upper - v).tolist(),
            "dominated_by_archive": bool(np.any(np.all(archive.values > v + 1e-6, axis=1))),
            **notes[name],
        }
        if name.startswith("popi/"):
            entry["cone_violation"] = _cone_violation(archive.values, v, game.gamma_leader)
        report["methods"][name] = entry
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            report["relations"][f"{a} vs {b}"] = compare(methods[a], methods[b], ETA).value
    out.add("compare.json", _dumps(report))
    S = game.num_states
    lines = ["method,scalarized," + ",".join(f"v_{s}" for s in range(S))]
    for name in names:
        lines.append(f"{name},{_fmt(L(methods[name]))}," + ",".join(_fmt(x) for x in methods[name]))
    out.add("compare.csv", "\n".join(lines) + "\n")


COMMANDS = {
    "gen": cmd_gen,
    "best-response": cmd_best_response,
    "popi": cmd_popi,
    "fpe": cmd_fpe,
    "pareto-oracle": cmd_pareto_oracle,
    "compare": cmd_compare,
}


def cmd_replay(manifest_path, out_dir: Path) -> dict:
    """Re-run a manifest's command into ``out_dir`` and compare output hashes."""
    try:
        manifest = json.loads(Path(manifest_path).read_text())
        command, config = manifest["command"], manifest["config"]
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise GameError(f"cannot read manifest {manifest_path}: {exc}") from None
    if command not in COMMANDS:
        raise GameError(f"manifest names unknown command {command!r}")
    for key, digest in manifest.get("inputs", {}).items():
        if _sha256_file(Path(config[key])) != digest:
            raise GameError(f"input {config[key]} changed since the manifest was written")
    if manifest.get("backend") != BACKEND:
        log.warning("manifest was produced with the %s backend, replaying with %s", manifest.get("backend"), BACKEND)
    out = Outputs(out_dir)
    COMMANDS[command](dict(config), out)
    new = out.write(command, config)
    diff = sorted(k for k in set(manifest["outputs"]) | set(new["outputs"])
                  if manifest["outputs"].get(k) != new["outputs"].get(k))
    if diff:
        raise ReplayMismatch(f"replayed outputs differ: {', '.join(diff)}")
    return new


# --------------------------------------------------------------------------- argparse


def _add_common(p: argparse.ArgumentParser, game: bool = True):
    if game:
        p.add_argument("game", help="game JSON file")
        p.add_argument("--gamma-a", type=float, default=None, help="override the leader discount")
    p.add_argument("--out-dir", required=True, type=Path)


def _add_popi_flags(p: argparse.ArgumentParser):
    p.add_argument("--mode", choices=MODES, default="practical-split")
    p.add_argument("--scan", choices=SCANS, default="all-regions")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--resolution", type=int, default=21)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--improvement-tol", type=float, default=2e-9)
    p.add_argument("--ascent-step", type=float, default=0.1)
    p.add_argument("--shrink", type=float, default=0.5)
    p.add_argument("--max-ascent-steps", type=int, default=50)
    p.add_argument("--max-descent-steps", type=int, default=50)
    p.add_argument("--pool-size", type=int, default=256)
    p.add_argument("--weights", type=_parse_weights, default=None, help="comma list; default is the initial distribution")
    p.add_argument("--preset", choices=("none", "policy-teaching"), default="none")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tie-break", choices=sorted(TIE_RULES), default=DEFAULT_TIE_BREAK)
    p.add_argument("--init", default="uniform", help="uniform, random, or a leader policy JSON file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssg-popi", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="write a game JSON file")
    gen.add_argument("kind", choices=("example", "random"))
    gen.add_argument("--x", type=float)
    gen.add_argument("--y", type=float)
    gen.add_argument("--rho", default=None, help="initial distribution for the example, comma list")
    gen.add_argument("--gamma-a", type=float, default=None, help=f"required for example; random default {RANDOM_GAMMA}")
    gen.add_argument("--gamma-b", type=float, default=None, help=f"required for example; random default {RANDOM_GAMMA}")
    gen.add_argument("--states", type=int, default=3)
    gen.add_argument("--leader-actions", type=int, default=2)
    gen.add_argument("--follower-actions", type=int, default=3)
    gen.add_argument("--reward-min", type=float, default=-1.0)
    gen.add_argument("--reward-max", type=float, default=1.0)
    gen.add_argument("--cooperative", action="store_true")
    gen.add_argument("--seed", type=int, default=0)
    _add_common(gen, game=False)

    br = sub.add_parser("best-response", help="follower best response to a leader policy")
    _add_common(br)
    br.add_argument("policy", help="leader policy JSON file")
    br.add_argument("--tie-break", choices=sorted(TIE_RULES), default=DEFAULT_TIE_BREAK)

    popi = sub.add_parser("popi", help="run Pareto-optimal policy iteration")
    _add_popi_flags(popi)
    _add_common(popi)

    fpe = sub.add_parser("fpe", help="iterate the one-step Stackelberg operator")
    fpe.add_argument("--tol", type=float, default=1e-8)
    fpe.add_argument("--max-iters", type=int, default=10_000)
    fpe.add_argument("--window", type=int, default=64)
    fpe.add_argument("--tie-break", choices=FPE_TIE_RULES, default=FPE_DEFAULT_TIE)
    _add_common(fpe)

    orc = sub.add_parser("pareto-oracle", help="brute-force Pareto archive over a policy lattice")
    orc.add_argument("--resolution", type=int, default=21)
    orc.add_argument("--tie-break", choices=sorted(TIE_RULES), default=DEFAULT_TIE_BREAK)
    orc.add_argument("--cap", type=int, default=DEFAULT_CAP)
    _add_common(orc)

    cmp_ = sub.add_parser("compare", help="oracle, both POPI modes and FPE side by side")
    _add_popi_flags(cmp_)
    cmp_.add_argument("--cap", type=int, default=DEFAULT_CAP)
    cmp_.add_argument("--fpe-max-iters", type=int, default=10_000)
    cmp_.add_argument("--fpe-tie-break", choices=FPE_TIE_RULES, default=FPE_DEFAULT_TIE)
    _add_common(cmp_)

    rep = sub.add_parser("replay", help="re-run a manifest and check outputs are byte-identical")
    rep.add_argument("manifest")
    rep.add_argument("--out-dir", required=True, type=Path)
    return parser


def _config_from_args(args: argparse.Namespace) -> dict:
    config = {k: v for k, v in vars(args).items() if k not in ("command", "out_dir", "verbose")}
    for key in ("game", "policy"):
        if config.get(key):
            config[key] = str(Path(config[key]).resolve())
    if config.get("init") not in (None, "uniform", "random"):
        config["init"] = str(Path(config["init"]).resolve())
    if "weights" in config and config["weights"] is not None:
        config["weights"] = list(config["weights"])
    return config


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        if args.command == "replay":
            cmd_replay(args.manifest, args.out_dir)
            print(f"replay of {args.manifest}: outputs identical")
            return EXIT_OK
        config = _config_from_args(args)
        out = Outputs(args.out_dir)
        COMMANDS[args.command](config, out)
        out.write(args.command, config)
        return EXIT_OK
    except (GameError, ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (MonotonicityError, ReplayMismatch) as exc:
        print(f"invariant breach: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
