"""Command-line front end: config parsing, orchestration, report emission.

Commands:
  certify     run the configured certificate check
  gain        empirical l2-gain ensemble against a claimed gamma^2
  simulate    write trajectory CSVs for the configured ensemble
  example     one-command reproduction of the two built-in benchmarks
  linear-brl  algebraic bounded-real verification / constructive search

Exit codes: 0 certified/consistent, 1 falsified/violated, 2 inconclusive
or error.  All result artifacts are byte-reproducible for a fixed resolved
config and seed; wall-clock timings live only in report.json.  Set
SBRL_LOG=DEBUG|INFO|WARNING for log verbosity.
"""

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, certify, library, synth
from .dynamics import simulate, trajectory_csv_rows
from .errors import ConfigurationError, DivergenceError, ToolkitError
from .noise import ExpectationScheme, derive_seed
from .storage import DomainBox, check_convex
from .svg import line_plot

log = logging.getLogger("sbrl")

EXIT_CERTIFIED = 0
EXIT_FALSIFIED = 1
EXIT_INCONCLUSIVE = 2

_STATUS_EXIT = {
    "certified": EXIT_CERTIFIED,
    "consistent": EXIT_CERTIFIED,
    "falsified": EXIT_FALSIFIED,
    "violated": EXIT_FALSIFIED,
}


def status_exit_code(status):
    return _STATUS_EXIT.get(status, EXIT_INCONCLUSIVE)


def _setup_logging():
    level = os.environ.get("SBRL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


# ---------------------------------------------------------------- config

_TOP_LEVEL_KEYS = {"seed", "system", "noise", "storage", "law", "certificate",
                   "ensemble", "output"}


def _err(errors, path, msg):
    errors.append(f"{path}: {msg}")


def validate_config(cfg):
    """Structural validation mirroring config_schema.json.

    Returns a list of 'field.path: message' strings; empty means valid.
    Semantic validation (dimensions, definiteness, ...) happens in the
    builders.
    """
    errors = []
    if not isinstance(cfg, dict):
        return ["<root>: configuration must be a JSON object"]
    for key in cfg:
        if key not in _TOP_LEVEL_KEYS:
            _err(errors, key, "unknown section")
    if "seed" in cfg and not isinstance(cfg["seed"], int):
        _err(errors, "seed", "must be an integer")
    system = cfg.get("system")
    if system is not None:
        if not isinstance(system, dict):
            _err(errors, "system", "must be an object")
        elif not ({"builtin", "linear"} & set(system)):
            _err(errors, "system", "expected 'builtin' or 'linear'")
        elif "builtin" in system and system["builtin"] not in ("example1", "example2"):
            _err(errors, "system.builtin", f"unknown builtin {system['builtin']!r}")
    storage = cfg.get("storage")
    if storage is not None and isinstance(storage, dict):
        if not ({"quadratic", "separable", "builtin"} & set(storage)):
            _err(errors, "storage", "expected 'quadratic', 'separable' or 'builtin'")
    cert = cfg.get("certificate")
    if cert is not None:
        if not isinstance(cert, dict):
            _err(errors, "certificate", "must be an object")
        else:
            kind = cert.get("kind")
            if kind not in ("internal", "external", "controller", "linear-brl"):
                _err(errors, "certificate.kind",
                     f"expected one of internal/external/controller/linear-brl, got {kind!r}")
            dom = cert.get("domain")
            if dom is not None:
                if not isinstance(dom, dict) or "lo" not in dom or "hi" not in dom:
                    _err(errors, "certificate.domain", "needs 'lo' and 'hi'")
                elif len(dom["lo"]) != len(dom["hi"]):
                    _err(errors, "certificate.domain", "'lo' and 'hi' lengths differ")
            scheme = cert.get("scheme")
            if scheme is not None:
                mode = scheme.get("mode", "monte-carlo")
                if mode not in ("monte-carlo", "closed-form"):
                    _err(errors, "certificate.scheme.mode", f"unknown mode {mode!r}")
                if "samples" in scheme and (not isinstance(scheme["samples"], int)
                                            or scheme["samples"] < 1):
                    _err(errors, "certificate.scheme.samples", "must be an integer >= 1")
    ens = cfg.get("ensemble")
    if ens is not None and isinstance(ens, dict):
        for key in ("horizon", "count"):
            if key in ens and (not isinstance(ens[key], int) or ens[key] < 1):
                _err(errors, f"ensemble.{key}", "must be an integer >= 1")
        dist = ens.get("disturbance")
        if dist is not None and dist.get("kind") not in (
                "decaying-sine", "white", "zero", "recorded", "impulse"):
            _err(errors, "ensemble.disturbance.kind",
                 f"unknown kind {dist.get('kind')!r}")
    out = cfg.get("output")
    if out is not None and isinstance(out, dict):
        for fmt in out.get("formats", []):
            if fmt not in ("csv", "svg"):
                _err(errors, "output.formats", f"unknown format {fmt!r}")
    return errors


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    errors = validate_config(cfg)
    if errors:
        raise ConfigurationError(
            "config schema violations:\n  " + "\n  ".join(errors)
        )
    return cfg


def resolve_config(cfg, seed_override=None, out_override=None):
    """Fill defaults so the emitted config reproduces the run exactly."""
    resolved = json.loads(json.dumps(cfg))  # deep copy, JSON-clean
    resolved.setdefault("seed", 0)
    if seed_override is not None:
        resolved["seed"] = int(seed_override)
    out = resolved.setdefault("output", {})
    out.setdefault("dir", ".")
    if out_override is not None:
        out["dir"] = str(out_override)
    out.setdefault("formats", ["csv", "svg"])
    cert = resolved.get("certificate")
    if cert is not None:
        scheme = cert.setdefault("scheme", {})
        scheme.setdefault("mode", "monte-carlo")
        if scheme["mode"] == "monte-carlo":
            scheme.setdefault("samples", 10_000)
            scheme.setdefault("antithetic", False)
    ens = resolved.get("ensemble")
    if ens is not None:
        ens.setdefault("horizon", 200)
        ens.setdefault("count", 200)
        ens.setdefault("disturbance", {"kind": "decaying-sine"})
    return resolved


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(resolved):
    return hashlib.sha256(canonical_json(resolved).encode()).hexdigest()


def _scheme_from(cert_block, seed):
    block = cert_block.get("scheme", {"mode": "monte-carlo"})
    mode = block.get("mode", "monte-carlo")
    return ExpectationScheme(
        mode=mode,
        samples=int(block.get("samples", 10_000)),
        seed=derive_seed(seed, 0x5C0),
        antithetic=bool(block.get("antithetic", False)),
    )


def _gamma_sq_from(block):
    if "gamma_sq" in block:
        return float(block["gamma_sq"])
    if "gamma" in block:
        return float(block["gamma"]) ** 2
    raise ConfigurationError("certificate: needs 'gamma' or 'gamma_sq'")


# ---------------------------------------------------------------- emission

class RunWriter:
    """Collects result artifacts and writes the run report."""

    def __init__(self, out_dir, resolved):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        # the emitted config describes the experiment, not its placement:
        # output.dir is an invocation detail and would break byte identity
        self.resolved = json.loads(json.dumps(resolved))
        self.resolved.get("output", {}).pop("dir", None)
        self.files = []
        self.certificates = []
        self.gain_reports = []
        self.timings = {}
        self.extra = {}
        self._t0 = time.perf_counter()
        self.write_json("resolved_config.json", self.resolved)

    def path(self, name):
        return self.out / name

    def write_json(self, name, obj):
        data = json.dumps(obj, indent=2, sort_keys=True) + "\n"
        with open(self.out / name, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(data)
        if name not in self.files:
            self.files.append(name)

    def write_csv(self, name, header, rows):
        with open(self.out / name, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
        self.files.append(name)

    def add_certificate(self, cert):
        self.certificates.append(cert.to_dict())

    def add_gain_report(self, report):
        self.gain_reports.append(report.to_dict())

    def finish(self, status):
        self.timings["total_s"] = time.perf_counter() - self._t0
        if self.certificates:
            self.write_json("certificates.json", self.certificates)
        if self.gain_reports:
            self.write_json("gain_reports.json", self.gain_reports)
        report = {
            "toolkit_version": __version__,
            "config_hash": config_hash(self.resolved),
            "status": status,
            "certificates": self.certificates,
            "gain_reports": self.gain_reports,
            "files": sorted(self.files),
            "timings": self.timings,
        }
        report.update(self.extra)
        self.write_json("report.json", report)
        return report


def _domain_from(cert_block, default=None):
    if "domain" in cert_block:
        return DomainBox.from_spec(cert_block["domain"])
    if default is not None:
        return default
    raise ConfigurationError("certificate.domain: required")


def _resolved_system(resolved):
    if "system" not in resolved:
        raise ConfigurationError("system: required")
    noise = None
    if "noise" in resolved:
        noise = library.noise_from_config(resolved["noise"])
    return library.system_from_config(resolved["system"], noise=noise)


def _maybe_close_loop(system, tier, resolved):
    if tier != "controlled":
        return system, None
    if "law" not in resolved:
        raise ConfigurationError("law: required for a controlled system")
    law = library.law_from_config(resolved["law"])
    return synth.closed_loop(system, law), law


# ---------------------------------------------------------------- commands

def cmd_certify(resolved):
    writer = RunWriter(resolved["output"]["dir"], resolved)
    seed = resolved["seed"]
    cert_block = resolved.get("certificate")
    if cert_block is None:
        raise ConfigurationError("certificate: required for 'certify'")
    kind = cert_block["kind"]
    scheme = _scheme_from(cert_block, seed)
    t0 = time.perf_counter()

    if kind == "linear-brl":
        system, tier = _resolved_system(resolved)
        if tier != "linear":
            raise ConfigurationError("certificate.kind linear-brl needs a linear system")
        report, status = _run_linear_brl(system, cert_block, resolved, writer)
        writer.timings["certify_s"] = time.perf_counter() - t0
        writer.finish(status)
        return status_exit_code(status)

    system, tier = _resolved_system(resolved)
    storage = library.storage_from_config(resolved["storage"])
    domain = _domain_from(cert_block)

    if kind == "internal":
        cert = certify.check_internal(
            system, storage, float(cert_block["c2"]), domain, scheme)
    elif kind == "external":
        if not storage.claims_convex:
            conv = check_convex(storage, domain, pairs=256,
                                seed=derive_seed(seed, 0xC0), noise_slack="auto")
            writer.add_certificate(conv)
            if conv.certified:
                storage.claims_convex = True
        gamma = np.sqrt(_gamma_sq_from(cert_block))
        system, _ = _maybe_close_loop(system, tier, resolved)
        cert = certify.check_external(
            system, storage, float(cert_block["beta"]), float(gamma),
            domain, scheme)
    elif kind == "controller":
        if tier != "controlled":
            raise ConfigurationError("certificate.kind controller needs a controlled system")
        law = library.law_from_config(resolved["law"])
        gamma = np.sqrt(_gamma_sq_from(cert_block))
        cert = synth.certify_controller(
            system, law, storage, float(cert_block["beta"]), float(gamma),
            domain, scheme)
    else:
        raise ConfigurationError(f"certificate.kind: unhandled kind {kind!r}")

    writer.add_certificate(cert)
    writer.timings["certify_s"] = time.perf_counter() - t0
    margins = {"worst_margin": cert.worst_margin,
               "g_beta_sup": cert.provenance.get("g_beta_sup"),
               "h1_worst": cert.provenance.get("h1_worst")}
    writer.write_json("margins.json", margins)
    writer.finish(cert.status)
    log.info("certificate %s: %s", kind, cert.status)
    return status_exit_code(cert.status)


def _run_linear_brl(linsys, cert_block, resolved, writer):
    gamma_sq = _gamma_sq_from(cert_block)
    if cert_block.get("search", False) or "beta" not in cert_block:
        rep = certify.linear_brl_search(
            linsys, gamma_sq, beta_grid=cert_block.get("beta_grid"))
    else:
        if "P" in cert_block:
            P = np.asarray(cert_block["P"], dtype=float)
        elif "storage" in resolved and "quadratic" in resolved["storage"]:
            P = np.asarray(resolved["storage"]["quadratic"]["P"], dtype=float)
        else:
            raise ConfigurationError(
                "certificate.P: required for linear-brl verification")
        rep = certify.linear_brl(linsys, P, float(cert_block["beta"]), gamma_sq)
    writer.write_json("linear_brl.json", rep.to_dict())
    return rep, rep.status


def cmd_gain(resolved):
    writer = RunWriter(resolved["output"]["dir"], resolved)
    seed = resolved["seed"]
    ens_block = resolved.get("ensemble")
    if ens_block is None:
        raise ConfigurationError("ensemble: required for 'gain'")
    gamma_sq = _gamma_sq_from(
        ens_block if ("gamma_sq" in ens_block or "gamma" in ens_block)
        else resolved.get("certificate", {}))
    system, tier = _resolved_system(resolved)
    system, _ = _maybe_close_loop(system, tier, resolved)
    ensemble = library.ensemble_from_config(ens_block["disturbance"], system.n_v)
    t0 = time.perf_counter()
    report = certify.empirical_gain(
        system, ensemble, int(ens_block["horizon"]), int(ens_block["count"]),
        gamma_sq, derive_seed(seed, 0x9A1))
    writer.timings["gain_s"] = time.perf_counter() - t0
    writer.add_gain_report(report)
    rows = [[i, "" if r is None else repr(float(r))]
            for i, r in enumerate(report.ratios)]
    writer.write_csv("gain_ratios.csv", ["trajectory", "energy_ratio"], rows)
    writer.finish(report.verdict)
    log.info("empirical gain verdict: %s (mean ratio %.6g)",
             report.verdict, report.mean_energy_ratio)
    return status_exit_code(report.verdict)


def cmd_simulate(resolved):
    writer = RunWriter(resolved["output"]["dir"], resolved)
    seed = resolved["seed"]
    ens_block = resolved.get("ensemble")
    if ens_block is None:
        raise ConfigurationError("ensemble: required for 'simulate'")
    system, tier = _resolved_system(resolved)
    policy_u = None
    if tier == "controlled":
        if "law" in resolved:
            policy_u = library.law_from_config(resolved["law"])
        else:
            policy_u = lambda x, k: np.zeros(system.n_u)  # noqa: E731
    x0 = np.asarray(ens_block.get("x0", [0.0] * system.n), dtype=float)
    dist = ens_block.get("disturbance", {"kind": "zero"})
    horizon = int(ens_block["horizon"])
    count = int(ens_block.get("count", 1))
    status = "consistent"
    t0 = time.perf_counter()
    for i in range(count):
        sub = derive_seed(seed, i)
        policy = library.ensemble_from_config(dist, system.n_v) \
            .make_policy(derive_seed(sub, 2))
        try:
            traj = simulate(system, x0, policy, horizon, derive_seed(sub, 1),
                            policy_u=policy_u)
        except DivergenceError as err:
            traj = err.trajectory
            status = f"divergence at step {err.step}"
            log.warning("trajectory %d diverged at step %d", i, err.step)
        header, rows = trajectory_csv_rows(traj)
        writer.write_csv(f"trajectory_{i:03d}.csv", header, rows)
        if status != "consistent":
            break
    writer.timings["simulate_s"] = time.perf_counter() - t0
    writer.finish(status)
    return EXIT_CERTIFIED if status == "consistent" else EXIT_INCONCLUSIVE


# ------------------------------------------------------------- examples

def _example1_defaults(seed, out_dir):
    return {
        "seed": seed,
        "system": {"builtin": "example1",
                   "params": {"a": 0.99, "b": 0.01, "c": 0.2, "c1": 0.2}},
        "certificate": {
            "kind": "external",
            "beta": 1.0 / 0.99,
            "gamma_sq": None,  # filled from the search
            "domain": {"lo": [-10.0], "hi": [10.0], "grid": 201},
            "scheme": {"mode": "closed-form"},
            "p_grid": [2.0, 3.0, 4.0, 5.0, 6.0, 8.0],
            "beta_grid": [1.002, 1.005, 1.0 / 0.99, 1.02, 1.05, 1.1, 1.5, 2.0],
        },
        "ensemble": {"horizon": 200, "count": 200,
                     "disturbance": {"kind": "decaying-sine", "decay": 0.98,
                                     "freqs": [0.3], "phases": [0.0],
                                     "amp_range": [0.5, 1.5]},
                     "second_disturbance": {"kind": "white", "std": 0.5}},
        "output": {"dir": str(out_dir), "formats": ["csv", "svg"]},
    }


def cmd_example1(out_dir, seed, formats=None):
    resolved = _example1_defaults(seed, out_dir)
    if formats:
        resolved["output"]["formats"] = formats
    system = library.example1_system()
    cert_block = resolved["certificate"]
    domain = DomainBox.from_spec(cert_block["domain"])
    scheme = ExpectationScheme(mode="closed-form")

    t0 = time.perf_counter()
    candidates = [(p, library.example1_storage(p)) for p in cert_block["p_grid"]]
    search = certify.gamma_star_search(
        system, candidates, cert_block["beta_grid"], domain, scheme)
    if search.status != "ok":
        raise ToolkitError(f"gamma-star search failed: {search.notes}")
    gamma_star_sq = search.gamma_star_sq
    resolved["certificate"]["gamma_sq"] = gamma_star_sq
    writer = RunWriter(out_dir, resolved)
    writer.timings["gamma_star_s"] = time.perf_counter() - t0
    writer.extra["gamma_star"] = search.to_dict()

    V = library.example1_storage(search.params)
    cert = certify.check_external(
        system, V, search.beta, float(np.sqrt(gamma_star_sq)), domain, scheme)
    writer.add_certificate(cert)

    ens_block = resolved["ensemble"]
    ensembles = {
        "decaying-sine": library.ensemble_from_config(
            ens_block["disturbance"], 1),
        "white": library.ensemble_from_config(
            ens_block["second_disturbance"], 1),
    }
    verdicts = {}
    t0 = time.perf_counter()
    for name, ens in ensembles.items():
        rep = certify.empirical_gain(
            system, ens, ens_block["horizon"], ens_block["count"],
            gamma_star_sq, derive_seed(seed, 0x9A1))
        writer.add_gain_report(rep)
        verdicts[name] = rep.verdict
    writer.timings["gain_s"] = time.perf_counter() - t0

    # representative trajectory for the |z|^2 / gamma*^2 v^2 / v^2 series
    sub = derive_seed(seed, 0)
    policy = ensembles["decaying-sine"].make_policy(derive_seed(sub, 2))
    traj = simulate(system, np.zeros(1), policy, ens_block["horizon"],
                    derive_seed(sub, 1))
    ks = list(range(traj.horizon))
    z_sq = traj.z_sq.tolist()
    v_sq = traj.v_sq.tolist()
    gv_sq = (gamma_star_sq * traj.v_sq).tolist()
    formats = resolved["output"]["formats"]
    if "csv" in formats:
        writer.write_csv(
            "example1_series.csv",
            ["k", "z_sq", "gamma_star_sq_v_sq", "v_sq"],
            [[k, repr(z_sq[k]), repr(gv_sq[k]), repr(v_sq[k])] for k in ks],
        )
    if "svg" in formats:
        line_plot(writer.path("example1_series.svg"),
                  [("|z|^2", ks, z_sq),
                   ("gamma*^2 v^2", ks, gv_sq),
                   ("v^2", ks, v_sq)],
                  title="scalar benchmark: output vs weighted disturbance energy")
        writer.files.append("example1_series.svg")

    writer.write_json("summary.json", {
        "gamma_star_sq": gamma_star_sq,
        "best_beta": search.beta,
        "best_p": search.params,
        "certificate_status": cert.status,
        "gain_verdicts": verdicts,
    })
    status = cert.status if all(v == "consistent" for v in verdicts.values()) \
        else "violated"
    writer.finish(status)
    return status_exit_code(status)


def _example2_defaults(seed, out_dir):
    return {
        "seed": seed,
        "system": {"builtin": "example2"},
        "storage": {"builtin": "example2"},
        "law": {"builtin": "example2"},
        "certificate": {
            "kind": "controller",
            "beta": library.EXAMPLE2_BETA,
            "gamma": library.EXAMPLE2_GAMMA,
            "domain": {"lo": [-2.0, -2.0, -2.0], "hi": [2.0, 2.0, 2.0], "grid": 7},
            "scheme": {"mode": "monte-carlo", "samples": 100_000,
                       "antithetic": False},
        },
        "ensemble": {"horizon": 300, "count": 200, "x0": [1.0, 1.0, 0.5],
                     "disturbance": {"kind": "decaying-sine", "decay": 0.98,
                                     "freqs": [0.3, 0.37], "phases": [0.0, 0.9],
                                     "amp_range": [0.5, 1.5]}},
        "output": {"dir": str(out_dir), "formats": ["csv", "svg"]},
    }


def cmd_example2(out_dir, seed, formats=None):
    resolved = _example2_defaults(seed, out_dir)
    if formats:
        resolved["output"]["formats"] = formats
    writer = RunWriter(out_dir, resolved)
    plant = library.example2_plant()
    V = library.example2_storage()
    law = library.example2_law()
    cert_block = resolved["certificate"]
    domain = DomainBox.from_spec(cert_block["domain"])
    scheme = _scheme_from(cert_block, seed)

    t0 = time.perf_counter()
    cert = synth.certify_controller(
        plant, law, V, cert_block["beta"], cert_block["gamma"], domain, scheme)
    writer.timings["certify_s"] = time.perf_counter() - t0
    writer.add_certificate(cert)
    g_beta_sup = cert.provenance.get("g_beta_sup")

    loop = synth.closed_loop(plant, law)
    ens_block = resolved["ensemble"]
    ensemble = library.ensemble_from_config(ens_block["disturbance"], 2)
    gamma_sq = cert_block["gamma"] ** 2
    t0 = time.perf_counter()
    gain = certify.empirical_gain(
        loop, ensemble, ens_block["horizon"], ens_block["count"], gamma_sq,
        derive_seed(seed, 0x9A1))
    writer.timings["gain_s"] = time.perf_counter() - t0
    writer.add_gain_report(gain)

    # closed-loop run from the benchmark's initial-condition convention
    x0 = np.asarray(ens_block["x0"], dtype=float)
    sub = derive_seed(seed, 0)
    policy = ensemble.make_policy(derive_seed(sub, 2))
    traj = simulate(loop, x0, policy, ens_block["horizon"], derive_seed(sub, 1))
    us = np.array([law(x) for x in traj.states[:-1]])
    ks = list(range(traj.horizon))
    formats = resolved["output"]["formats"]
    if "csv" in formats:
        writer.write_csv(
            "example2_controls.csv", ["k", "u_1", "u_2"],
            [[k, repr(float(us[k, 0])), repr(float(us[k, 1]))] for k in ks])
        writer.write_csv(
            "example2_states.csv", ["k", "x_1", "x_2", "x_3"],
            [[k] + [repr(float(s)) for s in traj.states[k]] for k in range(traj.horizon + 1)])
        writer.write_csv(
            "example2_energies.csv", ["k", "z_sq", "gamma_sq_v_sq"],
            [[k, repr(float(traj.z_sq[k])), repr(float(gamma_sq * traj.v_sq[k]))]
             for k in ks])
    if "svg" in formats:
        line_plot(writer.path("example2_controls.svg"),
                  [("u1*", ks, us[:, 0].tolist()), ("u2*", ks, us[:, 1].tolist())],
                  title="feedback law along the closed-loop run")
        line_plot(writer.path("example2_states.svg"),
                  [(f"x{i + 1}", list(range(traj.horizon + 1)),
                    traj.states[:, i].tolist()) for i in range(3)],
                  title="closed-loop states")
        line_plot(writer.path("example2_energies.svg"),
                  [("|z|^2", ks, traj.z_sq.tolist()),
                   ("gamma^2 |v|^2", ks, (gamma_sq * traj.v_sq).tolist())],
                  title="output energy vs weighted disturbance energy")
        writer.files.extend(["example2_controls.svg", "example2_states.svg",
                             "example2_energies.svg"])

    writer.write_json("summary.json", {
        "G_beta": g_beta_sup,
        "gamma_sq": gamma_sq,
        "certificate_status": cert.status,
        "gain_verdict": gain.verdict,
        "u1_coefficient": law.spec()["u1_coef"],
    })
    status = cert.status if gain.verdict == "consistent" else "violated"
    writer.finish(status)
    return status_exit_code(status)


def cmd_example(which, out_dir, seed, formats=None):
    if which == "1":
        return cmd_example1(out_dir, seed, formats)
    if which == "2":
        return cmd_example2(out_dir, seed, formats)
    print(f"error: unknown example {which!r} (choose 1 or 2)", file=sys.stderr)
    return EXIT_INCONCLUSIVE


# ---------------------------------------------------------------- main

def build_parser():
    parser = argparse.ArgumentParser(
        prog="sbrl",
        description="Certification and simulation toolkit for discrete-time "
                    "stochastic l2-gain analysis. The JSON config schema is "
                    "shipped as sbrl/config_schema.json.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="path to JSON config")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads (must not change results)")
        p.add_argument("--format", choices=["csv", "svg", "both"],
                       default=None, help="output format override")

    common(sub.add_parser("certify", help="run the configured certificate check"))
    common(sub.add_parser("gain", help="empirical l2-gain ensemble"))
    common(sub.add_parser("simulate", help="write trajectory CSVs"))
    common(sub.add_parser("linear-brl", help="linear bounded-real check"))
    pex = sub.add_parser("example", help="reproduce a built-in benchmark")
    pex.add_argument("which", help="benchmark number: 1 or 2")
    common(pex, needs_config=False)
    return parser


def _apply_overrides(resolved, args):
    if args.format:
        fmts = ["csv", "svg"] if args.format == "both" else [args.format]
        resolved["output"]["formats"] = fmts
    resolved["output"].setdefault("threads", 1)
    if args.threads:
        # recorded for provenance; results are required not to depend on it
        resolved["output"]["threads"] = int(args.threads)
    return resolved


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "example":
            out = args.out or f"example{args.which}_out"
            formats = None
            if args.format:
                formats = ["csv", "svg"] if args.format == "both" else [args.format]
            return cmd_example(args.which, out, args.seed or 0, formats)
        cfg = load_config(args.config)
        resolved = resolve_config(cfg, seed_override=args.seed,
                                  out_override=args.out)
        resolved = _apply_overrides(resolved, args)
        if args.command == "certify":
            return cmd_certify(resolved)
        if args.command == "gain":
            return cmd_gain(resolved)
        if args.command == "simulate":
            return cmd_simulate(resolved)
        if args.command == "linear-brl":
            cert = resolved.get("certificate", {})
            cert["kind"] = "linear-brl"
            resolved["certificate"] = cert
            return cmd_certify(resolved)
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCONCLUSIVE
    return EXIT_INCONCLUSIVE


if __name__ == "__main__":
    sys.exit(main())
