"""Scenario runner.

Parses a sectioned key-value config (or one of the built-in scenarios),
dispatches to the pulsed or continuous-wave solvers, and writes CSV time
series plus a JSON metadata sidecar from which the run can be reproduced.

Exit codes: 0 success, 1 configuration problem, 2 numerical failure.
"""

import argparse
import configparser
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import cw, model, tcl, volterra
from .errors import ConfigError
from .quad import UniformGrid

__all__ = ["main", "BUILTIN_SCENARIOS", "parse_scenario", "run_scenario", "list_scenarios"]

FLOAT_FORMAT = "%.11e"

PULSED_MODES = ("pulsed_markov", "pulsed_exact", "pulsed_tcl")
MODES = PULSED_MODES + ("cw",)

# Shared trap parameter block used by every built-in: a 2e-26 kg atom in a
# 123 Hz trap releasing into free space with a 1e6 1/m momentum spread.
_TRAP = """\
[trap]
M = 2e-26
omega0 = 772.8317927830892
sigma_k = 1e6
"""

BUILTIN_SCENARIOS = {
    "fig2": _TRAP + """\
Gamma = 5e4

[scenario]
name = fig2
description = pulsed decay, moderate coupling: exact vs Born-Markov vs order-4
mode = pulsed_tcl
tcl_order = 4

[grid]
t_max_gamma = 4.0
n_steps = 4000
""",
    "fig3": _TRAP + """\
Gamma = 1e5

[scenario]
name = fig3
description = pulsed decay, stronger coupling: orders 2/4/6 vs exact
mode = pulsed_tcl
tcl_order = 6

[grid]
t_max_gamma = 3.5
n_steps = 4000
""",
    "fig4": _TRAP + """\
Gamma = 1e6

[scenario]
name = fig4
description = strong coupling: occupation collapse and revival
mode = pulsed_tcl
tcl_order = 6

[grid]
t_max_gamma = 10.0
n_steps = 5400
""",
    "fig5": _TRAP + """\
Gamma = 1e5

[scenario]
name = fig5
description = time-local decay rates, exact vs perturbative orders
mode = pulsed_tcl
tcl_order = 6
rates = true

[grid]
t_max_gamma = 3.5
n_steps = 4000
""",
    "fig7": _TRAP + """\
Gamma = 5e4

[scenario]
name = fig7
description = cw laser occupation: markov vs order-2 vs order-4
mode = cw

[grid]
t_max_gamma = 8.0
n_steps = 800

[cw]
kappa1_gamma = 10.0
Omega_gamma = 15.0
N = 20.3
orders = markov,2,4
""",
}

_BUILTIN_ORDER = ("fig2", "fig3", "fig4", "fig5", "fig7")


@dataclass
class Scenario:
    name: str
    mode: str
    trap: model.TrapParams
    t_max: float
    dt: float
    n_steps: int
    description: str = ""
    tcl_order: int = 6
    rates: bool = False
    cw_kappa1: float = 0.0
    cw_Omega: float = 0.0
    cw_N: float = 0.0
    cw_n0_max: int = 200
    cw_n1_max: int = 60
    cw_orders: tuple = ("markov", 2, 4)
    cw_r_reading: str = "outer"
    output: str = ""
    source: str = ""


def _get(section, key, conv, required=True, default=None):
    if key not in section:
        if required:
            raise ConfigError(f"missing key '{key}' in section [{section.name}]")
        return default
    raw = section[key]
    try:
        return conv(raw)
    except (ValueError, TypeError):
        raise ConfigError(f"key '{key}' in [{section.name}]: cannot parse {raw!r}") from None


def _bool(raw):
    low = raw.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(raw)


def _check_keys(section, allowed):
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' in section [{section.name}]")


def parse_scenario(text, source="<config>"):
    """Parse config text into a fully resolved Scenario."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config is not parseable: {exc}") from None

    for required in ("scenario", "trap", "grid"):
        if required not in cp:
            raise ConfigError(f"missing section [{required}]")

    sc = cp["scenario"]
    _check_keys(sc, {"name", "description", "mode", "tcl_order", "rates", "output"})
    mode = _get(sc, "mode", str)
    if mode not in MODES:
        raise ConfigError(f"key 'mode': must be one of {MODES}, got {mode!r}")
    name = _get(sc, "name", str, required=False, default=os.path.splitext(os.path.basename(source))[0])

    tr = cp["trap"]
    _check_keys(tr, {"M", "omega0", "sigma_k", "Gamma", "hbar"})
    trap_kwargs = dict(
        M=_get(tr, "M", float),
        omega0=_get(tr, "omega0", float),
        sigma_k=_get(tr, "sigma_k", float),
        Gamma=_get(tr, "Gamma", float),
    )
    hbar = _get(tr, "hbar", float, required=False)
    if hbar is not None:
        trap_kwargs["hbar"] = hbar
    trap = model.TrapParams(**trap_kwargs)
    gamma_m = model.gamma_markov_closed_form(trap)

    gr = cp["grid"]
    _check_keys(gr, {"t_max", "t_max_gamma", "dt", "n_steps"})
    t_max = _get(gr, "t_max", float, required=False)
    t_max_gamma = _get(gr, "t_max_gamma", float, required=False)
    if (t_max is None) == (t_max_gamma is None):
        raise ConfigError("section [grid] needs exactly one of 't_max' and 't_max_gamma'")
    if t_max is None:
        if gamma_m <= 0:
            raise ConfigError("key 't_max_gamma' needs Gamma > 0; give 't_max' in seconds")
        t_max = t_max_gamma / gamma_m
    dt = _get(gr, "dt", float, required=False)
    n_steps = _get(gr, "n_steps", int, required=False)
    if (dt is None) == (n_steps is None):
        raise ConfigError("section [grid] needs exactly one of 'dt' and 'n_steps'")
    if dt is None:
        if n_steps < 1:
            raise ConfigError("key 'n_steps' must be at least 1")
        dt = t_max / n_steps
    else:
        if dt <= 0 or t_max <= 0:
            raise ConfigError("grid times must be positive")
        n_steps = int(round(t_max / dt))
        if n_steps < 1:
            raise ConfigError("grid resolves to zero steps; shrink dt or grow t_max")
        t_max = n_steps * dt

    scen = Scenario(
        name=name,
        mode=mode,
        trap=trap,
        t_max=t_max,
        dt=dt,
        n_steps=n_steps,
        description=_get(sc, "description", str, required=False, default=""),
        tcl_order=_get(sc, "tcl_order", int, required=False, default=6),
        rates=_get(sc, "rates", _bool, required=False, default=False),
        output=_get(sc, "output", str, required=False, default=""),
        source=source,
    )
    if scen.tcl_order not in (2, 4, 6):
        raise ConfigError(f"key 'tcl_order': must be 2, 4 or 6, got {scen.tcl_order}")
    if scen.rates and mode == "pulsed_markov":
        raise ConfigError("key 'rates': rate columns need mode pulsed_exact or pulsed_tcl")

    if mode == "cw":
        if "cw" not in cp:
            raise ConfigError("mode cw needs a [cw] section")
        cs = cp["cw"]
        _check_keys(cs, {"kappa1", "kappa1_gamma", "Omega", "Omega_gamma", "N",
                         "n0_max", "n1_max", "orders", "r_reading"})

        def rate_key(base):
            absolute = _get(cs, base, float, required=False)
            relative = _get(cs, base + "_gamma", float, required=False)
            if (absolute is None) == (relative is None):
                raise ConfigError(
                    f"section [cw] needs exactly one of '{base}' and '{base}_gamma'"
                )
            if absolute is not None:
                return absolute
            if gamma_m <= 0:
                raise ConfigError(f"key '{base}_gamma' needs Gamma > 0")
            return relative * gamma_m

        scen.cw_kappa1 = rate_key("kappa1")
        scen.cw_Omega = rate_key("Omega")
        scen.cw_N = _get(cs, "N", float)
        scen.cw_n0_max = _get(cs, "n0_max", int, required=False, default=200)
        scen.cw_n1_max = _get(cs, "n1_max", int, required=False, default=60)
        scen.cw_r_reading = _get(cs, "r_reading", str, required=False, default="outer")
        raw_orders = _get(cs, "orders", str, required=False, default="markov,2,4")
        orders = []
        for tok in raw_orders.split(","):
            tok = tok.strip()
            if tok == "markov":
                orders.append("markov")
            elif tok in ("2", "4"):
                orders.append(int(tok))
            else:
                raise ConfigError(f"key 'orders': entries must be markov, 2 or 4; got {tok!r}")
        if not orders:
            raise ConfigError("key 'orders': at least one entry required")
        scen.cw_orders = tuple(orders)
    elif "cw" in cp:
        raise ConfigError(f"section [cw] is only valid for mode cw, not {mode}")
    return scen


def _fmt(x):
    return FLOAT_FORMAT % x


def _write_csv(path, columns):
    names = [c[0] for c in columns]
    arrays = [np.asarray(c[1], dtype=float) for c in columns]
    n = arrays[0].size
    with open(path, "w", newline="") as fh:
        fh.write(",".join(names) + "\n")
        for i in range(n):
            fh.write(",".join(_fmt(a[i]) for a in arrays) + "\n")


def _max_shared_diff(fine, coarse):
    """Worst |fine - coarse| on shared grid points, ignoring non-finite pairs."""
    n2 = coarse.size - 1
    a = fine[: 2 * n2 + 1 : 2]
    b = coarse[: n2 + 1]
    mask = np.isfinite(a) & np.isfinite(b)
    if not mask.any():
        return None
    return float(np.abs(a[mask] - b[mask]).max())


def _pulsed_columns(scen, n_steps, dt):
    trap = scen.trap
    t_max = n_steps * dt
    grid = UniformGrid(0.0, dt, n_steps + 1)
    t = grid.times()
    gamma_m = model.gamma_markov_closed_form(trap)
    columns = [("t_seconds", t), ("gammaM_t", gamma_m * t)]

    traj = None
    if scen.mode in ("pulsed_exact", "pulsed_tcl"):
        traj = volterra.solve_amplitude(trap, t_max, dt)
        columns.append(("n_exact", volterra.occupation(traj).values))
    columns.append(("n_markov", np.exp(-gamma_m * t)))

    rates = None
    if scen.mode == "pulsed_tcl":
        rates = tcl.tcl_series_rates(trap, grid, order_max=scen.tcl_order)
        for order in rates.orders():
            occ = tcl.occupation_from_rates(rates, order)
            columns.append((f"n_tcl{order}", occ.values))

    if scen.rates:
        exact = volterra.exact_rates(traj)
        gam = np.full(n_steps + 1, np.nan)
        gam[: exact.gamma.values.size] = exact.gamma.values
        columns.append(("gamma_exact", gam))
        if rates is not None:
            columns.append(("gamma2", rates.gamma_by_order[2]))
            if scen.tcl_order >= 4:
                columns.append(("gamma4_cum", rates.total_gamma(4).values))
            if scen.tcl_order >= 6:
                columns.append(("gamma6_cum", rates.total_gamma(6).values))
    return columns


def _cw_columns(scen, order, n_steps, dt):
    params = cw.CwParams(
        trap=scen.trap,
        kappa1=scen.cw_kappa1,
        Omega=scen.cw_Omega,
        N=scen.cw_N,
        n0_max=scen.cw_n0_max,
        n1_max=scen.cw_n1_max,
        order=order,
        r_reading=scen.cw_r_reading,
    )
    p0 = cw.DiagonalState.vacuum(scen.cw_n0_max, scen.cw_n1_max)
    traj = cw.evolve(params, p0, n_steps * dt, dt)
    columns = [
        ("t_seconds", traj.times),
        ("mean_n0", traj.mean_n0),
        ("mean_n1", traj.mean_n1),
        ("prob_sum", traj.prob_sum),
        ("min_p", traj.min_p),
        ("clipped_flux", traj.clipped_flux),
    ]
    return columns, traj


def _base_meta(scen):
    trap = scen.trap
    mc = model.markov_constants(trap)
    gamma_m = mc.gamma_M
    meta = {
        "scenario": {
            "name": scen.name,
            "description": scen.description,
            "mode": scen.mode,
            "source": scen.source,
        },
        "trap": {
            "M": trap.M,
            "omega0": trap.omega0,
            "sigma_k": trap.sigma_k,
            "Gamma": trap.Gamma,
            "hbar": trap.hbar,
            "alpha": trap.alpha,
        },
        "derived": {
            "gamma_M": gamma_m,
            "S_M": mc.S_M,
            "t_res": mc.t_res,
            "timescale_ratio": (model.timescale_ratio(trap) if gamma_m > 0 else None),
        },
        "grid": {"t0": 0.0, "t_max": scen.t_max, "dt": scen.dt, "n_steps": scen.n_steps},
        "format": {"float": FLOAT_FORMAT, "line_ending": "\\n", "separator": ","},
    }
    return meta


def _finish_meta(meta, csv_name, columns, refinement):
    meta["csv"] = csv_name
    meta["columns"] = [c[0] for c in columns]
    meta["refinement"] = {
        "method": "full rerun at dt/2, worst difference on shared grid points",
        "estimates": refinement,
    }
    return meta


def _write_outputs(outdir, csv_name, columns, meta):
    csv_path = os.path.join(outdir, csv_name)
    _write_csv(csv_path, columns)
    meta_path = csv_path + ".meta.json"
    with open(meta_path, "w", newline="") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return [csv_path, meta_path]


def _run_pulsed(scen, outdir):
    columns = _pulsed_columns(scen, scen.n_steps, scen.dt)
    fine = _pulsed_columns(scen, 2 * scen.n_steps, 0.5 * scen.dt)
    refinement = {}
    for (name, vals), (_, vals_f) in zip(columns, fine):
        refinement[name] = _max_shared_diff(np.asarray(vals_f, float), np.asarray(vals, float))
    meta = _base_meta(scen)
    meta["pulsed"] = {"tcl_order": scen.tcl_order, "rate_columns": scen.rates}
    base = scen.output or scen.name
    csv_name = base if base.endswith(".csv") else base + ".csv"
    _finish_meta(meta, csv_name, columns, refinement)
    return _write_outputs(outdir, csv_name, columns, meta)


def _cw_label(order):
    return "markov" if order == "markov" else f"tcl{order}"


def _run_cw_order(scen, order, outdir):
    columns, traj = _cw_columns(scen, order, scen.n_steps, scen.dt)
    fine, _ = _cw_columns(scen, order, 2 * scen.n_steps, 0.5 * scen.dt)
    refinement = {}
    for (name, vals), (_, vals_f) in zip(columns, fine):
        refinement[name] = _max_shared_diff(np.asarray(vals_f, float), np.asarray(vals, float))
    meta = _base_meta(scen)
    meta["cw"] = {
        "kappa1": scen.cw_kappa1,
        "Omega": scen.cw_Omega,
        "N": scen.cw_N,
        "n0_max": scen.cw_n0_max,
        "n1_max": scen.cw_n1_max,
        "order": order,
        "r_reading": scen.cw_r_reading,
        "initial_state": "vacuum",
        "stepper": "cn",
        "negativity_flagged": traj.negativity_flagged,
        "clipped_total": float(traj.clipped_flux[-1]),
    }
    base = scen.output or scen.name
    if base.endswith(".csv"):
        base = base[:-4]
    csv_name = f"{base}_{_cw_label(order)}.csv"
    _finish_meta(meta, csv_name, columns, refinement)
    return _write_outputs(outdir, csv_name, columns, meta)


def run_scenario(scen, outdir=".", jobs=1):
    """Execute a resolved Scenario; returns the list of files written."""
    os.makedirs(outdir, exist_ok=True)
    if scen.mode in PULSED_MODES:
        return _run_pulsed(scen, outdir)
    written = []
    if jobs > 1 and len(scen.cw_orders) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_cw_order, scen, order, outdir)
                       for order in scen.cw_orders]
            for fut in futures:
                written.extend(fut.result())
    else:
        for order in scen.cw_orders:
            written.extend(_run_cw_order(scen, order, outdir))
    return written


def _load_config(target):
    if target in BUILTIN_SCENARIOS:
        return BUILTIN_SCENARIOS[target], target
    if os.path.exists(target):
        with open(target) as fh:
            return fh.read(), target
    raise ConfigError(
        f"'{target}' is neither a built-in scenario ({', '.join(_BUILTIN_ORDER)}) "
        "nor an existing config file"
    )


def list_scenarios(config_dir=None, stream=None):
    """Print built-in scenarios, then any configs found in config_dir."""
    stream = stream or sys.stdout
    for name in _BUILTIN_ORDER:
        scen = parse_scenario(BUILTIN_SCENARIOS[name], name)
        stream.write(f"{name}  {scen.description}\n")
    if config_dir:
        try:
            entries = sorted(os.listdir(config_dir))
        except OSError as exc:
            stream.write(f"(cannot read {config_dir}: {exc})\n")
            return
        for entry in entries:
            path = os.path.join(config_dir, entry)
            if not os.path.isfile(path):
                continue
            stem = os.path.splitext(entry)[0]
            try:
                with open(path) as fh:
                    scen = parse_scenario(fh.read(), path)
                stream.write(f"{scen.name}  {scen.description}  ({path})\n")
            except Exception as exc:
                stream.write(f"{stem}  [parse error: {exc}]  ({path})\n")


class _Parser(argparse.ArgumentParser):
    # config errors exit 1, not argparse's default 2
    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser():
    parser = _Parser(prog="atomlaser", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a built-in scenario or a config file")
    run_p.add_argument("target", help="built-in name (fig2..fig7) or path to a config")
    run_p.add_argument("--out", default=".", help="output directory (default: cwd)")
    run_p.add_argument("--order", type=int, choices=(2, 4, 6),
                       help="override the perturbative order")
    run_p.add_argument("--dt", type=float, help="override the step size in seconds")
    run_p.add_argument("--tmax", type=float, help="override the final time in seconds")
    run_p.add_argument("--r-reading", choices=cw.R_READINGS, dest="r_reading",
                       help="reference-time reading of the cw cross-term weight")
    run_p.add_argument("--jobs", type=int, default=1,
                       help="run independent sub-scenarios concurrently")

    list_p = sub.add_parser("list", help="list available scenarios")
    list_p.add_argument("--configs", default=None, metavar="DIR",
                        help="also list configs from this directory")
    return parser


def _apply_overrides(scen, args):
    if args.tmax is not None or args.dt is not None:
        t_max = args.tmax if args.tmax is not None else scen.t_max
        dt = args.dt if args.dt is not None else scen.dt
        if t_max <= 0 or dt <= 0:
            raise ConfigError("--tmax and --dt must be positive")
        n_steps = int(round(t_max / dt))
        if n_steps < 1:
            raise ConfigError("--tmax/--dt resolve to zero steps")
        scen.t_max, scen.dt, scen.n_steps = n_steps * dt, dt, n_steps
    if args.order is not None:
        if scen.mode == "cw":
            if args.order not in (2, 4):
                raise ConfigError("--order for cw scenarios must be 2 or 4")
            scen.cw_orders = (args.order,)
        else:
            scen.tcl_order = args.order
    if args.r_reading is not None:
        if scen.mode != "cw":
            raise ConfigError("--r-reading only applies to cw scenarios")
        scen.cw_r_reading = args.r_reading
    return scen


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "list":
            list_scenarios(args.configs)
            return 0
        text, source = _load_config(args.target)
        scen = parse_scenario(text, source)
        _apply_overrides(scen, args)
        written = run_scenario(scen, args.out, jobs=max(1, args.jobs))
        for path in written:
            print(path)
        return 0
    except ValueError as exc:
        print(f"atomlaser: config error: {exc}", file=sys.stderr)
        return 1
    except RuntimeError as exc:
        print(f"atomlaser: numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
