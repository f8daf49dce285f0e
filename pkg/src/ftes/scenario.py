"""Scenario files: line-oriented key = value with [sections].

Full-line comments start with '#'; trailing comments are introduced by
' # ' (space-hash-space) so values themselves never contain '#'.  Sections
[job.NAME] override base keys per job (dotted keys, e.g. model.eta).
Unknown sections or keys are rejected before any computation.
"""

import numpy as np

_MODEL_KEYS = {"delta", "xi", "eta", "zeta", "alpha", "omega_c", "s", "counterterm"}
_SWEEP_KEYS = {"alpha", "eta", "xi", "tc", "alpha_over_xi"}
_METHOD_KEYS = {"methods", "variant"}
_NUMERICS_KEYS = {
    "t_max",
    "nt",
    "t_scale",
    "fit_lo",
    "fit_hi",
    "tcl4_n0",
    "tcl4_dt",
    "tcl4_full",
    "tempo_tau",
    "tempo_kmax",
    "tempo_eps",
    "tempo_chi",
    "purity_target",
    "coarse_alphas",
    "seed_eta",
    "seed_zeta",
}
_OUTPUT_KEYS = {"basename"}
_TOP_KEYS = {"subcommand", "title"}

SECTIONS = {
    "model": _MODEL_KEYS,
    "sweep": _SWEEP_KEYS,
    "method": _METHOD_KEYS,
    "numerics": _NUMERICS_KEYS,
    "output": _OUTPUT_KEYS,
}

SUBCOMMANDS = (
    "levels",
    "decay",
    "asymptotic",
    "ftes-search",
    "ftes-scan",
    "recovery",
    "coarse-grain",
    "tempo",
    "fit",
)


class ScenarioError(ValueError):
    """Configuration could not be parsed or validated (CLI exit code 2)."""


def _strip(line: str) -> str:
    if line.lstrip().startswith("#"):
        return ""
    if " # " in line:
        line = line.split(" # ", 1)[0]
    return line.strip()


def parse_scenario_text(text: str) -> dict:
    """Parse scenario text into {'base': {...}, 'jobs': {name: {...}}}.

    A [section] header puts following keys into the base configuration
    under 'section.key'; a [job.NAME] block holds fully-dotted override
    keys (e.g. 'model.eta = 0.37') for that job.
    """
    base = {}
    jobs = {}
    current_job = None
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip(raw)
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name.startswith("job."):
                jobname = name[4:]
                if not jobname:
                    raise ScenarioError(f"line {lineno}: empty job name")
                jobs.setdefault(jobname, {})
                current_job = jobname
            elif name in SECTIONS:
                section = name
                current_job = None
            else:
                raise ScenarioError(f"line {lineno}: unknown section [{name}]")
            continue
        if "=" not in line:
            raise ScenarioError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if current_job is not None:
            jobs[current_job][key] = value
        else:
            base[key if section is None else f"{section}.{key}"] = value
    return {"base": base, "jobs": jobs}


def _validate_keys(flat: dict):
    for key in flat:
        if "." in key:
            section, sub = key.split(".", 1)
            if section not in SECTIONS or sub not in SECTIONS[section]:
                raise ScenarioError(f"unknown key '{key}'")
        elif key not in _TOP_KEYS:
            raise ScenarioError(f"unknown key '{key}'")
    sub = flat.get("subcommand")
    if sub is not None and sub not in SUBCOMMANDS:
        raise ScenarioError(
            f"unknown subcommand '{sub}' (expected one of {', '.join(SUBCOMMANDS)})"
        )


def load_scenario(path, overrides=()) -> dict:
    """Read, override and validate a scenario file.

    Returns {'base': flat-dict, 'jobs': {name: flat-dict}} where job dicts
    are the base updated with the job's overrides.  CLI --override entries
    ('key=value', optionally 'job.NAME.key=value') are applied before
    validation.
    """
    with open(path, "r", encoding="utf-8") as fh:
        parsed = parse_scenario_text(fh.read())
    base, jobs = parsed["base"], parsed["jobs"]
    for item in overrides:
        if "=" not in item:
            raise ScenarioError(f"override '{item}' is not key=value")
        key, value = (part.strip() for part in item.split("=", 1))
        if key.startswith("job."):
            rest = key[4:]
            if "." not in rest:
                raise ScenarioError(f"override '{item}' lacks a job key")
            jobname, sub = rest.split(".", 1)
            jobs.setdefault(jobname, {})[sub] = value
        else:
            base[key] = value
    _validate_keys(base)
    for name, job in jobs.items():
        _validate_keys({k: v for k, v in job.items()})
    if "subcommand" not in base:
        raise ScenarioError("scenario lacks a 'subcommand' key")
    merged_jobs = {}
    for name, job in sorted(jobs.items()):
        flat = dict(base)
        flat.update(job)
        merged_jobs[name] = flat
    if not merged_jobs:
        merged_jobs = {"main": dict(base)}
    return {"base": base, "jobs": merged_jobs}


# ---------------------------------------------------------------------------
# typed getters


def get_float(flat, key, default=None):
    if key not in flat:
        if default is None:
            raise ScenarioError(f"missing required key '{key}'")
        return default
    try:
        return float(flat[key])
    except ValueError as exc:
        raise ScenarioError(f"key '{key}': {exc}") from None


def get_int(flat, key, default=None):
    if key not in flat:
        if default is None:
            raise ScenarioError(f"missing required key '{key}'")
        return default
    try:
        return int(flat[key])
    except ValueError as exc:
        raise ScenarioError(f"key '{key}': {exc}") from None


def get_bool(flat, key, default=None):
    if key not in flat:
        if default is None:
            raise ScenarioError(f"missing required key '{key}'")
        return default
    val = flat[key].strip().lower()
    if val in ("true", "yes", "1", "on"):
        return True
    if val in ("false", "no", "0", "off"):
        return False
    raise ScenarioError(f"key '{key}': expected a boolean, got '{flat[key]}'")


def get_grid(flat, key, default=None):
    """Comma list or linspace:lo,hi,n / geomspace:lo,hi,n specification."""
    if key not in flat:
        if default is None:
            raise ScenarioError(f"missing required key '{key}'")
        return np.asarray(default, dtype=float)
    spec = flat[key].strip()
    try:
        if spec.startswith("linspace:") or spec.startswith("geomspace:"):
            kind, args = spec.split(":", 1)
            lo, hi, n = (p.strip() for p in args.split(","))
            fn = np.linspace if kind == "linspace" else np.geomspace
            grid = fn(float(lo), float(hi), int(n))
        else:
            grid = np.array([float(p) for p in spec.split(",") if p.strip() != ""])
    except (ValueError, TypeError) as exc:
        raise ScenarioError(f"key '{key}': bad grid '{spec}' ({exc})") from None
    if grid.size == 0:
        raise ScenarioError(f"key '{key}': empty sweep grid")
    return grid


def get_list(flat, key, default=None):
    if key not in flat:
        if default is None:
            raise ScenarioError(f"missing required key '{key}'")
        return list(default)
    items = [p.strip() for p in flat[key].split(",") if p.strip()]
    if not items:
        raise ScenarioError(f"key '{key}': empty list")
    return items
