"""Monte Carlo experiments: estimator squared error by design size, and the
profiled fit compared with EM under shared starting values.

Random streams: ``SeedSequence(seed).spawn(n_sizes)[s].spawn(reps)[r]`` is
split into a data stream and an init stream for replication ``r`` of size
``s``. Records are ordered by ``(size, replication)`` whatever the execution
order.

Per-block squared-error statistics of a fit:

* ``beta1``, ``beta2``, ``sigma1``, ``sigma2``: mean of ``(est - true)^2`` over
  the block's entries.
* ``gamma_bar``: sum over the 10 distinct entries ``i <= j`` of
  ``((est - true) / true)^2``. This relative form is on the scale of the
  published table; the absolute mean over all 16 entries is kept as
  ``gamma_bar_abs``.
"""

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import em as em_mod
from . import fitter as fit_mod
from .model import assemble_gamma_bar
from .simulator import FIXED_NAMES, default_config, simulate

BLOCKS = ("beta1", "beta2", "sigma1", "sigma2", "gamma_bar", "gamma_bar_abs")
PERCENTILES = (2.5, 97.5)
_IU = np.triu_indices(4)


def parse_sizes(text):
    """``"600x50,3000x100"`` -> ``[(600, 50), (3000, 100)]``."""
    out = []
    for item in text.split(","):
        try:
            N, n = (int(s) for s in item.strip().lower().split("x"))
        except ValueError:
            raise ValueError(f"size {item!r} is not of the form NxM") from None
        if not N >= n >= 1:
            raise ValueError(f"size {item!r} needs N >= M >= 1")
        out.append((N, n))
    return out


def replication_streams(seed, n_sizes, reps):
    """``streams[s][r] = (data_rng, init_rng)``."""
    root = np.random.SeedSequence(seed)
    out = []
    for child in root.spawn(n_sizes):
        row = []
        for rep in child.spawn(reps):
            d, i = rep.spawn(2)
            row.append((np.random.default_rng(d), np.random.default_rng(i)))
        out.append(row)
    return out


def parameter_names():
    names = [f"beta1[{c}]" for c in FIXED_NAMES] + [f"beta2[{c}]" for c in FIXED_NAMES]
    names += ["sigma1", "sigma2"]
    names += [f"gamma_bar[{i}{j}]" for i, j in zip(*_IU)]
    return names


def estimate_vector(beta1, beta2, sigma1, sigma2, gamma_bar):
    return np.concatenate([beta1, beta2, [sigma1, sigma2], np.asarray(gamma_bar)[_IU]])


def block_errors(est, truth):
    """Squared-error statistic per block; see the module docstring."""
    G, G0 = np.asarray(est["gamma_bar"]), np.asarray(truth["gamma_bar"])
    out = {}
    for k in ("beta1", "beta2"):
        out[k] = float(np.mean((np.asarray(est[k]) - np.asarray(truth[k])) ** 2))
    for k in ("sigma1", "sigma2"):
        out[k] = float((est[k] - truth[k]) ** 2)
    out["gamma_bar"] = float(np.sum(((G - G0) / G0)[_IU] ** 2))
    out["gamma_bar_abs"] = float(np.mean((G - G0) ** 2))
    return out


def relative_errors(est, truth):
    e = estimate_vector(est["beta1"], est["beta2"], est["sigma1"], est["sigma2"], est["gamma_bar"])
    t = estimate_vector(truth["beta1"], truth["beta2"], truth["sigma1"], truth["sigma2"],
                        truth["gamma_bar"])
    return dict(zip(parameter_names(), (np.abs(e - t) / np.abs(t)).tolist()))


def _estimates(res):
    return {
        "beta1": res.beta.beta1.tolist(), "beta2": res.beta.beta2.tolist(),
        "sigma1": float(res.sigma1), "sigma2": float(res.sigma2),
        "gamma_bar": np.asarray(res.gamma_bar).tolist(),
    }


def _record(size, rep, seed, method, init_mode, res, truth):
    est = _estimates(res)
    rec = {
        "size": f"{size[0]}x{size[1]}", "N": size[0], "n": size[1], "replication": rep,
        "seed": seed, "method": method, "init": init_mode,
        "errors": block_errors(est, truth), "relative_errors": relative_errors(est, truth),
        "iterations": int(res.iterations), "outer_iterations": int(res.outer_iterations),
        "converged": bool(res.converged), "criterion_value": float(res.criterion_value),
        "estimates": est, "params_available": res.params is not None,
        "init_used": np.asarray(res.init_used, dtype=float).tolist(),
    }
    if method == "em":
        rec["loglik_trace"] = [float(x) for x in res.trace]
    return rec


def _summary_stats(values):
    v = np.asarray(values, dtype=float)
    lo, hi = np.percentile(v, PERCENTILES)
    return {"mean": float(np.mean(v)), "median": float(np.median(v)),
            "p2.5": float(lo), "p97.5": float(hi)}


def summarize(records):
    """Summary rows per ``(size, method, init)``, computed only from ``records``."""
    keys = list(dict.fromkeys((r["size"], r["method"], r["init"]) for r in records))
    rows = []
    for size, method, init_mode in keys:
        sub = [r for r in records if (r["size"], r["method"], r["init"]) == (size, method, init_mode)]
        G = np.array([r["estimates"]["gamma_bar"] for r in sub])
        rows.append({
            "size": size, "method": method, "init": init_mode, "reps": len(sub),
            "errors": {b: _summary_stats([r["errors"][b] for r in sub]) for b in BLOCKS},
            "relative_errors": {p: _summary_stats([r["relative_errors"][p] for r in sub])
                                for p in parameter_names()},
            "iterations": _summary_stats([r["iterations"] for r in sub]),
            "converged": sum(r["converged"] for r in sub),
            "gamma_bar_mean": G.mean(axis=0).tolist(),
            "gamma_bar_sd": (G.std(axis=0, ddof=1) if len(sub) > 1 else np.zeros((4, 4))).tolist(),
        })
    return rows


@dataclass
class ExperimentReport:
    experiment: str
    seed: int
    truth: dict
    records: list = field(default_factory=list)

    @property
    def summary(self):
        return summarize(self.records)

    def to_jsonl(self):
        """One self-describing JSON object per line: header, records, summaries."""
        lines = [json.dumps({"type": "header", "experiment": self.experiment,
                             "seed": self.seed, "truth": self.truth})]
        lines += [json.dumps({"type": "record", **r}) for r in self.records]
        lines += [json.dumps({"type": "summary", **s}) for s in self.summary]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text):
        objs = [json.loads(line) for line in text.splitlines() if line.strip()]
        head = objs[0]
        recs = [{k: v for k, v in o.items() if k != "type"} for o in objs if o["type"] == "record"]
        return cls(head["experiment"], head["seed"], head["truth"], recs)

    def table(self):
        """Aligned text table of the summary rows."""
        if self.experiment == "mse":
            cols = list(BLOCKS)
            head = ["size", "method", "init", "reps"] + cols
            body = [[s["size"], s["method"], s["init"], str(s["reps"])]
                    + [_fmt_ci(s["errors"][b]) for b in cols] for s in self.summary]
        else:
            cols = parameter_names()[:10]
            head = ["size", "method", "init", "iterations", "conv"] + cols
            body = [[s["size"], s["method"], s["init"], _fmt_ci(s["iterations"], 0),
                     f"{s['converged']}/{s['reps']}"]
                    + [_fmt_ci(s["relative_errors"][p]) for p in cols] for s in self.summary]
        widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
        fmt = lambda r: "  ".join(c.rjust(w) for c, w in zip(r, widths))
        return "\n".join([fmt(head), fmt(["-" * w for w in widths])] + [fmt(r) for r in body]) + "\n"


def _fmt_ci(s, digits=2):
    return f"{s['mean']:.{digits}f} ({s['p2.5']:.{digits}f}-{s['p97.5']:.{digits}f})"


def _map(fn, jobs, workers):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _mse_job(job):
    size, rep, seed, data_rng, criterion, opts_kw = job
    cfg = default_config(n_total=size[0], n_groups=size[1])
    data = simulate(cfg, data_rng)
    opts = fit_mod.FitOptions(criterion=criterion, **opts_kw)
    res = fit_mod.fit(data, fit_mod.advised_init(data, opts), opts)
    return _record(size, rep, seed, "cmlme", "advised", res, cfg.truth())


def run_mse(sizes, reps, seed, criterion="ML", workers=1, fit_options=None):
    """Squared error of the profiled fit (advised init) at each design size."""
    streams = replication_streams(seed, len(sizes), reps)
    opts_kw = dict(fit_options or {})
    jobs = [(tuple(size), r, seed, streams[s][r][0], criterion, opts_kw)
            for s, size in enumerate(sizes) for r in range(reps)]
    return ExperimentReport("mse", seed, default_config().truth(), _map(_mse_job, jobs, workers))


def shared_init(data, init_mode, rng):
    """Starting values handed to both methods: ``(VarianceParams, FixedEffects)``."""
    if init_mode == "naive":
        params = fit_mod.naive_init((data.t1, data.t2), rng)
        beta = fit_mod.naive_beta(data.p1, data.p2, rng)
        return params, beta
    if init_mode == "advised":
        return fit_mod.advised_init(data, return_beta=True)
    raise ValueError(f"init mode must be naive or advised, got {init_mode!r}")


def _em_job(job):
    size, rep, seed, data_rng, init_rng, init_mode, opts_kw, em_kw = job
    cfg = default_config(n_total=size[0], n_groups=size[1])
    data = simulate(cfg, data_rng)
    params, beta = shared_init(data, init_mode, init_rng)
    truth = cfg.truth()
    cm = fit_mod.fit(data, params, fit_mod.FitOptions(**opts_kw))
    state = em_mod.EmState(beta, assemble_gamma_bar(params), params.sigma1, params.sigma2)
    em = em_mod.em_fit(data, state, em_mod.EmOptions(**em_kw))
    # both records carry the shared start as (beta, gamma_bar, sigma1, sigma2)
    shared = np.concatenate([beta.vector, state.gamma_bar.ravel(), [state.sigma1, state.sigma2]])
    out = [_record(size, rep, seed, "cmlme", init_mode, cm, truth),
           _record(size, rep, seed, "em", init_mode, em, truth)]
    for rec in out:
        rec["init_used"] = shared.tolist()
    return out


def run_em(reps, init_mode, seed, size=(1000, 100), workers=1, fit_options=None, em_options=None):
    """Profiled fit and EM on the same data sets from identical starting values."""
    streams = replication_streams(seed, 1, reps)[0]
    jobs = [(tuple(size), r, seed, streams[r][0], streams[r][1], init_mode,
             dict(fit_options or {}), dict(em_options or {})) for r in range(reps)]
    records = [rec for pair in _map(_em_job, jobs, workers) for rec in pair]
    return ExperimentReport(f"em-{init_mode}", seed, default_config().truth(), records)


def is_monotone(trace, tol=1e-8):
    """Whether a log-likelihood trace never drops by more than ``tol``."""
    t = np.asarray(trace, dtype=float)
    return bool(t.size < 2 or np.all(np.diff(t) >= -tol))
