"""Command-line front end.

    varq solve  --domain gamblers_ruin --J 256 --T 10
    varq train  --domain random --J 32 --T 8 --sweeps 20000
    varq eval   --domain cliffwalk --J 256 --episodes 10000
    varq oracle --domain random --param S=3 --T 3
    varq gap    --domain gamblers_ruin --T 10

Settings may also come from a flat ``key = value`` file passed with
``--config``; flags win over the file. Exit codes: 1 for configuration
errors, 2 for data errors, 3 for numerical errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import dp, oracle, policy, qlearn
from .errors import ConfigError, IoError, MissingRequired, TypeMismatch, UnknownKey, VarqError
from .mdp import DomainSpec, Mdp

COMMANDS = ("solve", "train", "eval", "oracle", "gap")
ALPHA_SWEEP = tuple(round(0.05 * k, 2) for k in range(1, 20))
GAP_GRIDS = (16, 256, 4096)


@dataclass
class ExperimentConfig:
    domain: DomainSpec
    alpha0: float = 0.25
    s0: int | None = None
    T: int = 100
    gamma: float | None = None
    J: int = 256
    kappa: float = 1e-4
    seed: int = 0
    episodes: int = 10_000
    sweeps: int = 20_000
    kinds: tuple[str, ...] = ("lower", "upper")
    time_free: bool = False
    out: str = "out"
    alphas: tuple[float, ...] = ALPHA_SWEEP
    extra: dict = field(default_factory=dict)

    @property
    def effective_gamma(self) -> float:
        return 0.9 if self.gamma is None else self.gamma

    def build_mdp(self) -> Mdp:
        return self.domain.build(self.effective_gamma)

    def start_state(self) -> int:
        return self.domain.default_start() if self.s0 is None else self.s0


# key -> (converter, validator or None)
def _in_open_unit(x):
    return 0.0 < x < 1.0


def _positive(x):
    return x >= 1


def _unit_closed(x):
    return 0.0 <= x <= 1.0


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def _kinds(text: str) -> tuple[str, ...]:
    kinds = tuple(k.strip() for k in text.split(",") if k.strip())
    if not kinds or any(k not in ("lower", "upper", "soft") for k in kinds):
        raise ValueError(text)
    return kinds


def _alphas(text: str) -> tuple[float, ...]:
    vals = tuple(float(x) for x in text.split(",") if x.strip())
    if not vals or not all(0.0 < v < 1.0 for v in vals):
        raise ValueError(text)
    return vals


FIELDS = {
    "domain": (str, None),
    "alpha0": (float, _in_open_unit),
    "s0": (int, lambda x: x >= 0),
    "T": (int, _positive),
    "gamma": (float, _unit_closed),
    "J": (int, lambda x: x >= 2),
    "kappa": (float, _unit_closed),
    "seed": (int, lambda x: x >= 0),
    "episodes": (int, _positive),
    "sweeps": (int, _positive),
    "kinds": (_kinds, None),
    "time_free": (_bool, None),
    "out": (str, None),
    "alphas": (_alphas, None),
    "path": (str, None),
}


def _convert(key: str, raw: str):
    if key.startswith("param."):
        return raw.strip()
    if key not in FIELDS:
        raise UnknownKey(f"unknown setting {key!r}")
    conv, ok = FIELDS[key]
    try:
        val = conv(raw.strip())
    except ValueError:
        raise TypeMismatch(f"{key}: cannot read {raw!r}") from None
    if ok is not None and not ok(val):
        raise TypeMismatch(f"{key}: value {raw!r} out of range")
    return val


def _read_config_text(data) -> dict[str, str]:
    if isinstance(data, (bytes, bytearray)):
        text = bytes(data).decode("utf-8-sig")
    elif hasattr(data, "read"):
        raw = data.read()
        text = raw.decode("utf-8-sig") if isinstance(raw, bytes) else raw
    else:
        text = str(data)
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise TypeMismatch(f"config line {n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        if "unrecognized arguments" in message:
            raise UnknownKey(message)
        raise ConfigError(message)


def _flag_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="varq", add_help=False)
    for key in FIELDS:
        if key == "time_free":
            ap.add_argument("--time-free", dest="time_free", action="store_const", const="1")
        else:
            ap.add_argument(f"--{key}", dest=key)
    ap.add_argument("--param", action="append", default=[], metavar="NAME=VALUE")
    ap.add_argument("--config", dest="config_file")
    return ap


def parse_config(args: list[str], file=None) -> ExperimentConfig:
    """Merge settings from ``file`` (flat ``key = value`` text) and ``args`` flags."""
    ns = _flag_parser().parse_args(list(args))
    raw: dict[str, str] = {}
    if ns.config_file and file is None:
        try:
            with open(ns.config_file, "rb") as fh:
                file = fh.read()
        except OSError as exc:
            raise IoError(f"{ns.config_file}: {exc.strerror}") from None
    if file is not None:
        raw.update(_read_config_text(file))
    for key in FIELDS:
        val = getattr(ns, key)
        if val is not None:
            raw[key] = val
    for item in ns.param:
        if "=" not in item:
            raise TypeMismatch(f"--param expects NAME=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        raw[f"param.{k.strip()}"] = v

    values = {k: _convert(k, v) for k, v in raw.items()}
    if "domain" not in values:
        raise MissingRequired("a domain is required (--domain)")
    params = {k[len("param."):]: v for k, v in values.items() if k.startswith("param.")}
    if values["domain"] == "csv":
        if "path" not in values:
            raise MissingRequired("the csv domain needs --path")
        if not os.path.exists(values["path"]):
            raise MissingRequired(f"file not found: {values['path']}")
        params["path"] = values["path"]
    domain = DomainSpec(values["domain"], params, values.get("seed", 0))
    kw = {k: v for k, v in values.items() if k in ExperimentConfig.__dataclass_fields__ and k != "domain"}
    return ExperimentConfig(domain=domain, **kw)


# ------------------------------------------------------------------ output


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_report(rows, path, header=None) -> None:
    """CSV with ``header`` and rows in the given order; floats in shortest round-trip form."""
    rows = list(rows)
    if header is None:
        if not rows or not isinstance(rows[0], dict):
            raise ConfigError("a header is required unless rows are dicts")
        header = list(rows[0].keys())
    lines = [",".join(header)]
    for row in rows:
        cells = [row[h] for h in header] if isinstance(row, dict) else list(row)
        lines.append(",".join(_fmt(c) for c in cells))
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror}") from None


def _out(cfg: ExperimentConfig, name: str) -> str:
    try:
        os.makedirs(cfg.out, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {cfg.out}: {exc.strerror}") from None
    return os.path.join(cfg.out, name)


# ---------------------------------------------------------------- commands


def cmd_solve(cfg: ExperimentConfig) -> list[str]:
    mdp = cfg.build_mdp()
    grid = dp.RiskGrid(cfg.J)
    written = []
    for kind in cfg.kinds:
        q = dp.solve_var_dp(mdp, grid, cfg.T, kind, cfg.kappa if kind == "soft" else None)
        written.extend(dp.write_qtensor(q, _out(cfg, f"q_{kind}")))
    return written


def cmd_train(cfg: ExperimentConfig) -> list[str]:
    mdp = cfg.build_mdp()
    tc = qlearn.TrainConfig(J=cfg.J, T=None if cfg.time_free else cfg.T, kappa=cfg.kappa,
                            sweeps=cfg.sweeps, seed=cfg.seed, s0=cfg.start_state())
    target = qlearn.default_target(mdp, tc)
    res = qlearn.train_output(mdp, tc, target)
    written = list(dp.write_qtensor(res.q, _out(cfg, "q_trained")))
    path = _out(cfg, "train_w1.csv")
    write_report(res.diagnostics, path, ["sweep", "w1"])
    return written + [path]


def baseline_policies(mdp: Mdp, cfg: ExperimentConfig) -> dict[str, np.ndarray]:
    grid = dp.RiskGrid(cfg.J)
    _, neutral = dp.solve_neutral_dp(mdp, cfg.T)
    _, nvar = dp.solve_nvar_dp(mdp, cfg.T, cfg.alpha0)
    _, dvar = dp.solve_dvar_dp(mdp, grid, cfg.T, cfg.alpha0, keep_values=False)
    return {"E": neutral, "nVaR": nvar, "dVaR": dvar}


def cmd_eval(cfg: ExperimentConfig) -> list[str]:
    mdp = cfg.build_mdp()
    s0 = cfg.start_state()
    q = dp.solve_var_dp(mdp, dp.RiskGrid(cfg.J), cfg.T, "lower")
    written = []
    report = policy.evaluate_policy(mdp, "var", q, s0, cfg.T, cfg.alphas, cfg.episodes, cfg.seed)
    written.append(_write_eval(cfg, "VaR", report))
    for name, table in baseline_policies(mdp, cfg).items():
        report = policy.evaluate_policy(mdp, "markov", table, s0, cfg.T, cfg.alphas, cfg.episodes, cfg.seed)
        written.append(_write_eval(cfg, name, report))
    return written


def _write_eval(cfg, name, report) -> str:
    path = _out(cfg, f"eval_{name}.csv")
    rows = [(r.alpha, r.point, r.ci_lo, r.ci_hi, r.n, r.seed) for r in report.rows]
    write_report(rows, path, list(policy.EvalReport.HEADER))
    return path


def cmd_oracle(cfg: ExperimentConfig) -> list[str]:
    mdp = cfg.build_mdp()
    s0 = cfg.start_state()
    grid = dp.RiskGrid(cfg.J)
    lower = dp.solve_var_dp(mdp, grid, cfg.T, "lower").values[cfg.T]
    upper = dp.solve_var_dp(mdp, grid, cfg.T, "upper").values[cfg.T]
    rows = []
    for a0 in range(mdp.n_actions):
        qstar = oracle.brute_force_qstar(mdp, cfg.T, s0, a0, cfg.alphas)
        for alpha, qs in zip(cfg.alphas, qstar):
            j = grid.index(alpha)
            lo, hi = float(lower[s0, j, a0]), float(upper[s0, j, a0])
            ok = lo <= qs + 1e-9 and qs <= hi + 1e-9
            rows.append((a0, alpha, lo, qs, hi, "PASS" if ok else "FAIL"))
    path = _out(cfg, "oracle.csv")
    write_report(rows, path, ["a0", "alpha", "lower", "qstar", "upper", "verdict"])
    return [path]


def gap_rows(mdp: Mdp, T: int, J: int, s0: int):
    grid = dp.RiskGrid(J)
    lower = dp.solve_var_dp(mdp, grid, T, "lower").state_values(T)[s0]
    upper = dp.solve_var_dp(mdp, grid, T, "upper").state_values(T)[s0]
    return [(j / J, float(lower[j]), float(upper[j]), float(upper[j] - lower[j])) for j in range(J)]


def cmd_gap(cfg: ExperimentConfig) -> list[str]:
    mdp = cfg.build_mdp()
    written = []
    for J in GAP_GRIDS:
        path = _out(cfg, f"gap_J{J}.csv")
        write_report(gap_rows(mdp, cfg.T, J, cfg.start_state()), path, ["alpha", "lower", "upper", "gap"])
        written.append(path)
    return written


def run_command(cmd: str, cfg: ExperimentConfig) -> int:
    handlers = {"solve": cmd_solve, "train": cmd_train, "eval": cmd_eval, "oracle": cmd_oracle, "gap": cmd_gap}
    if cmd not in handlers:
        raise UnknownKey(f"unknown command {cmd!r}; expected one of {', '.join(COMMANDS)}")
    for path in handlers[cmd](cfg):
        print(path)
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv or argv[0] in ("-h", "--help"):
        print(__doc__.strip())
        return 0 if argv else 1
    try:
        cfg = parse_config(argv[1:])
        return run_command(argv[0], cfg)
    except VarqError as exc:
        print(f"varq: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
