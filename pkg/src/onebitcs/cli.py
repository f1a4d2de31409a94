"""Command line entry point.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure
(including a verifier whose check did not pass).
"""
from __future__ import annotations

import argparse
import inspect
import json
import logging
import sys
from typing import List, Optional

import numpy as np

from .errors import ConfigError, DivergedError, DomainViolationError, InfeasibleError, InvalidArgumentError, ResourceLimitError

log = logging.getLogger("onebitcs")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _common(top: bool) -> argparse.ArgumentParser:
    # Global flags are accepted before or after the subcommand; the
    # subcommand copies must not reset values given before it.
    d = (lambda v: v) if top else (lambda v: argparse.SUPPRESS)
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=d(None), help="master seed")
    p.add_argument("--out", default=d(None), help="output path")
    p.add_argument("--json", action="store_true", default=d(False), help="print a JSON report on stdout")
    p.add_argument("--config", default=d(None), help="TOML configuration file")
    p.add_argument("--set", dest="overrides", action="append", default=d([]), metavar="KEY=VALUE", help="override a config entry (repeatable)")
    return p


def build_parser() -> argparse.ArgumentParser:
    from .harness import VERIFIERS

    parser = _Parser(prog="onebitcs", description="1-bit compressive sensing with generative priors", parents=[_common(True)])
    common = _common(False)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    sub.add_parser("sweep", parents=[common], help="run a measurement sweep and write a CSV")

    p = sub.add_parser("verify", parents=[common], help="run a named Monte Carlo verifier")
    p.add_argument("name", choices=sorted(VERIFIERS))
    p.add_argument("--trials", type=int, default=None)

    p = sub.add_parser("project", parents=[common], help="project a vector onto a model range")
    p.add_argument("--model", default=None, help='"group-sparse" or "ffnet:<manifest>"')
    p.add_argument("--input", required=True, help="text file holding the vector to project")

    p = sub.add_parser("measure", parents=[common], help="draw a Gaussian matrix and optionally measure a signal")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--signal", default=None, help="text file holding the signal")
    p.add_argument("--sigma", type=float, default=0.0, help="pre-quantization noise level")
    p.add_argument("--flip", type=float, default=0.0, help="sign-flip probability")
    return parser


def _read_toml(path) -> dict:
    from .harness import tomllib

    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def _emit(args, payload: dict, default_text: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=2))
    elif default_text:
        print(default_text)


def _cmd_sweep(args) -> int:
    from .harness import apply_overrides, config_from_dict, emit_csv, run_sweep

    if args.config is None:
        raise ConfigError("sweep needs --config")
    raw = apply_overrides(_read_toml(args.config), args.overrides)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out"] = args.out
    cfg = config_from_dict(raw)
    if not cfg.out:
        raise ConfigError("no output path: give --out or set 'out' in the config")
    result = run_sweep(cfg)
    emit_csv(result, cfg.out, cfg)
    failed = sum(r.status != "ok" for r in result.rows)
    _emit(args, {"out": cfg.out, **result.to_dict()}, f"wrote {len(result.rows)} rows to {cfg.out} ({failed} failed)")
    return EXIT_OK


def _cmd_verify(args) -> int:
    from .harness import VERIFIERS, apply_overrides

    fn = VERIFIERS[args.name]
    accepted = inspect.signature(fn).parameters
    raw = _read_toml(args.config)
    params = dict(raw.get(args.name, raw))
    params = {k: v for k, v in params.items() if not isinstance(v, dict)}
    apply_overrides(params, args.overrides)
    if args.seed is not None:
        params["seed"] = args.seed
    if args.trials is not None:
        if "trials" not in accepted:
            raise ConfigError(f"verifier {args.name!r} has no 'trials' parameter")
        params["trials"] = args.trials
    unknown = set(params) - set(accepted)
    if unknown:
        raise ConfigError(f"verifier {args.name!r} does not accept {sorted(unknown)}")
    report = fn(**params)
    text = json.dumps(report, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK if report["passed"] else EXIT_RUNTIME


def _read_vector(path) -> np.ndarray:
    try:
        return np.loadtxt(path, dtype=np.float64, ndmin=1).ravel()
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read vector from {path}: {exc}") from exc


def _cmd_project(args) -> int:
    from .genmodel import build_model
    from .harness import apply_overrides
    from .recover import RecoveryConfig, project_range

    raw = apply_overrides(_read_toml(args.config), args.overrides)
    params = dict(raw.get("model", {}))
    name = args.model or params.pop("name", None)
    params.pop("name", None)
    if name is None:
        raise ConfigError("project needs --model or a [model] table")
    try:
        model = build_model(name, **params)
        rc = RecoveryConfig(**raw.get("projection", {}), **({"seed": args.seed} if args.seed is not None else {}))
    except (InvalidArgumentError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    y = _read_vector(args.input)
    if y.shape != (model.n,):
        raise ConfigError(f"input has length {y.size}, model expects {model.n}")
    x, z = project_range(model, y, rc)
    if args.out:
        np.savetxt(args.out, x, fmt="%.17g")
    payload = {"x": x.tolist(), "z": z.tolist(), "distance": float(np.linalg.norm(x - y))}
    _emit(args, payload, "" if args.out else "\n".join(format(v, ".17g") for v in x))
    return EXIT_OK


def _cmd_measure(args) -> int:
    from .measure import NoiseSpec, gaussian_matrix, noisy_sign_measure, save_matrix

    seed = 0 if args.seed is None else args.seed
    if args.sigma and args.flip:
        raise ConfigError("choose at most one of --sigma and --flip")
    try:
        A = gaussian_matrix(args.m, args.n, seed)
        if args.sigma:
            noise = NoiseSpec.gaussian(args.sigma, seed=seed + 1)
        elif args.flip:
            noise = NoiseSpec.sign_flip(args.flip, seed=seed + 1)
        else:
            noise = NoiseSpec.none()
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from exc
    payload = {"m": A.m, "n": A.n, "seed": seed}
    if args.out:
        save_matrix(A, args.out)
        payload["matrix"] = args.out
    if args.signal:
        x = _read_vector(args.signal)
        if x.shape != (args.n,):
            raise ConfigError(f"signal has length {x.size}, expected {args.n}")
        payload["signs"] = noisy_sign_measure(A, x, noise).tolist()
    text = " ".join(str(v) for v in payload.get("signs", [])) or (f"wrote {args.m}x{args.n} matrix to {args.out}" if args.out else "")
    _emit(args, payload, text)
    return EXIT_OK


_COMMANDS = {"sweep": _cmd_sweep, "verify": _cmd_verify, "project": _cmd_project, "measure": _cmd_measure}


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("onebitcs: a subcommand is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"onebitcs {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergedError, InfeasibleError, DomainViolationError, InvalidArgumentError, ResourceLimitError, OSError) as exc:
        print(f"onebitcs {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
