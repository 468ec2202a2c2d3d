import hashlib
import logging
import time
from contextlib import contextmanager
from datetime import datetime
from typing import Any, Callable, Dict, List, Tuple, Union

import numpy as np
import pandas as pd

from substlab_config import settings

from .core import correlations, gibbs, measures, operator, primitivity, simulate, substitution, twobody
from .errors import ConfigError, SubstLabError, UnsupportedStructureError
from .model_reader import ModelReadResult, model_dict_to_system, model_path_to_system
from .reporting import report_header, write_csv, write_json
from .schema.models import SimulationConfig
from .schema.report_models import RunManifest, RunResult, StageEvent, ValidationIssue

logger = logging.getLogger(__name__)

Tables = Dict[str, pd.DataFrame]


@contextmanager
def settings_override(**values):
    """Per-run overrides of the global settings, restored on exit."""
    previous = {k: getattr(settings, k) for k in values}
    for k, v in values.items():
        setattr(settings, k, v)
    try:
        yield settings
    finally:
        for k, v in previous.items():
            setattr(settings, k, v)


class Orchestrator:
    """
    Runs one CLI subcommand: READ -> VALIDATE -> COMPUTE -> EMIT.
    Every stage leaves a StageEvent; events are logged, reports carry only results.
    """

    def __init__(self):
        self._handlers: Dict[str, Callable[[RunManifest, ModelReadResult], Tuple[Dict[str, Any], Tables]]] = {
            "validate": self._validate,
            "primitivity": self._primitivity,
            "invariant": self._invariant,
            "approx": self._approx,
            "correlations": self._correlations,
            "gibbs": self._gibbs,
            "twobody": self._twobody,
            "simulate": self._simulate,
        }

    def _calculate_hash(self, data: Union[str, bytes]) -> str:
        content = data.encode("utf-8") if isinstance(data, str) else data
        return hashlib.sha256(content).hexdigest()

    def _event(self, result: RunResult, stage: str, status: str, started: float, **details) -> None:
        event = StageEvent(
            stage=stage,
            status=status,
            details={"duration_sec": round(time.time() - started, 4), **details},
            error_policy="CONTINUE" if status == "SUCCESS" else "ABORT",
        )
        result.events.append(event)
        log = logger.info if status == "SUCCESS" else logger.error
        log("stage %s %s %s", stage, status, event.details)

    def _structural_issues(self, read: ModelReadResult) -> List[ValidationIssue]:
        issues = []
        S = read.system.substitutions
        if not S.constant_length:
            issues.append(ValidationIssue(
                code="NON_CONSTANT_LENGTH",
                field="rules",
                message="images have lengths "
                f"{S.min_length}..{S.max_length}; correlations and gibbs need constant length",
                severity="warning",
            ))
        elif S.max_length == 1:
            issues.append(ValidationIssue(
                code="UNIT_LENGTH",
                field="rules",
                message="every image has length 1; the window cannot grow",
                severity="warning",
            ))
        if not read.system.law.is_position_independent():
            issues.append(ValidationIssue(
                code="POSITION_DEPENDENT_LAW",
                field="law",
                message=f"{read.system.law.kind} law with {len(read.system.law.distinct_laws())} distinct position laws",
                severity="warning",
            ))
        return issues

    def run(self, manifest: RunManifest) -> RunResult:
        result = RunResult(command=manifest.command, start_time=datetime.now(), status="error")
        params = manifest.parameters
        with settings_override(
            STATE_BUDGET=params.state_budget,
            MATRIX_BUDGET=params.budget,
            POWER_TOL=params.tol,
        ):
            try:
                # --- READ STAGE ---
                started = time.time()
                try:
                    if manifest.model_path is not None:
                        read = model_path_to_system(manifest.model_path)
                    else:
                        read = model_dict_to_system(manifest.inline_model)
                    result.raw_metadata = {
                        "model_sha256": read.sha256,
                        "model_kind": read.kind,
                        "size_bytes": read.size_bytes,
                    }
                    self._event(result, "READ", "SUCCESS", started, model_kind=read.kind, alphabet_size=read.system.alphabet_size)
                except Exception as e:
                    self._event(result, "READ", "FAILURE", started, error=str(e))
                    raise

                # --- VALIDATE STAGE ---
                started = time.time()
                result.issues = self._structural_issues(read)
                self._event(result, "VALIDATE", "SUCCESS", started, issues_count=len(result.issues))

                # --- COMPUTE STAGE ---
                started = time.time()
                try:
                    payload, tables = self._handlers[manifest.command](manifest, read)
                    self._event(result, "COMPUTE", "SUCCESS", started, tables=sorted(tables))
                except Exception as e:
                    self._event(result, "COMPUTE", "FAILURE", started, error=str(e))
                    raise

                # --- EMIT STAGE ---
                started = time.time()
                header = report_header(manifest.command, read.sha256, params.model_dump(mode="json"))
                report = {**header, "issues": [i.model_dump() for i in result.issues], "result": payload}
                json_path = write_json(manifest.out_dir / f"{manifest.command}.json", report)
                result.artifacts.append(str(json_path))
                for name, frame in sorted(tables.items()):
                    result.artifacts.append(str(write_csv(manifest.out_dir / f"{manifest.command}_{name}.csv", frame)))
                self._event(
                    result, "EMIT", "SUCCESS", started,
                    report_sha256=self._calculate_hash(json_path.read_bytes()),
                    artifacts=len(result.artifacts),
                )
                result.status = "success"
                result.exit_code = 0

            except SubstLabError as e:
                result.status = "error"
                result.exit_code = e.exit_code
                result.error = f"{e.field}: {e}" if e.field and not str(e).startswith(f"{e.field}:") else str(e)
            except Exception as e:
                logger.exception("unexpected failure in %s", manifest.command)
                result.status = "error"
                result.exit_code = 1
                result.error = str(e)
            finally:
                result.end_time = datetime.now()

        logger.info("run %s finished: status=%s exit=%d", manifest.command, result.status, result.exit_code)
        return result

    # ======================================================
    # SUBCOMMANDS
    # ======================================================

    def _validate(self, manifest: RunManifest, read: ModelReadResult):
        system = read.system
        S = system.substitutions
        names = system.alphabet
        ell_s, L_s, constant = substitution.classify_lengths(S)
        bounded = measures.boundedness_report(system)
        rows = [
            {"rule": r, "symbol": names.symbols[a], "image": names.decode(image), "length": len(image)}
            for r, rule in enumerate(system.rules)
            for a, image in enumerate(rule.images)
        ]
        payload = {
            "alphabet": list(names.symbols),
            "rules": [{names.symbols[a]: names.decode(img) for a, img in enumerate(rule.images)} for rule in system.rules],
            "law": system.law.model_dump(),
            "min_length": ell_s,
            "max_length": L_s,
            "constant_length": constant,
            "bundle_structure": bounded.bundle_structure,
            "dispersion": bounded.dispersion,
            "boundedness_bound": bounded.bound,
        }
        if read.twobody is not None:
            payload["twobody"] = read.twobody.model_dump()
        return payload, {"rules": pd.DataFrame(rows)}

    def _primitivity(self, manifest: RunManifest, read: ModelReadResult):
        S = read.system.substitutions
        depth = manifest.parameters.nmax
        report = primitivity.sufficient_check(S, depth=depth)
        verdicts = []
        for N in range(1, min(depth, 3) + 1):
            m = S.alphabet.size ** N
            verdicts.append(primitivity.brute_force_primitive(S, N, (m - 1) ** 2 + 1))
        report = report.model_copy(update={"brute_force": verdicts[-1]})
        ms = pd.DataFrame(report.ms_matrix, columns=list(S.alphabet.symbols))
        ms.insert(0, "source", list(S.alphabet.symbols))
        payload = {**report.model_dump(), "brute_force_by_depth": [v.model_dump() for v in verdicts]}
        return payload, {"ms_matrix": ms}

    def _invariant(self, manifest: RunManifest, read: ModelReadResult):
        system = read.system
        params = manifest.parameters
        family = operator.invariant_family(system, params.nmax, params.tol)
        payload = {
            "depth": family.depth,
            "residual": operator.invariance_residual(system, family),
            "consistency_defect": measures.consistency_defect(family) if family.depth > 1 else 0.0,
            "one_site": family.level(1).tolist(),
        }
        return payload, {"marginals": measures.marginal_family_frame(family, system.alphabet)}

    def _approx(self, manifest: RunManifest, read: ModelReadResult):
        system = read.system
        params = manifest.parameters
        mu0 = measures.uniform_product(system.alphabet_size)
        report = operator.approximation_scheme(system, mu0, params.ellmax, params.nmax)
        payload = {
            "depth": report.depth,
            "rho0": report.rho0,
            "records": [
                {
                    "ell": r.ell,
                    "vague_distance": r.vague_distance,
                    "projective_distance": r.projective_distance,
                    "residual": r.residual,
                    "long_block_excess": r.long_block_excess,
                    "long_block_ok": r.long_block_ok,
                }
                for r in report.records
            ],
        }
        return payload, {"distances": report.frame()}

    def _correlations(self, manifest: RunManifest, read: ModelReadResult):
        params = manifest.parameters
        invariant = operator.invariant_family(read.system, 1, params.tol)
        report = correlations.decay_profile(read.system, params.n_list, invariant)
        frame = pd.DataFrame([e.model_dump() for e in report.entries])
        return report.summary(), {"entries": frame}

    def _gibbs(self, manifest: RunManifest, read: ModelReadResult):
        system = read.system
        params = manifest.parameters
        L = substitution.require_constant_length(system, "gibbs")
        if L < 2:
            raise UnsupportedStructureError("gibbs needs constant length L > 1", field="rules")
        depth = L ** params.ellmax
        invariant = operator.invariant_family(system, depth, params.tol)
        potential = gibbs.build_potential(invariant, L, params.ellmax)
        names = system.alphabet
        boundary = [0] * depth
        site_sets = [s for s in ([1], [1, 2]) if max(s) <= depth]
        truncs = [ell for ell in range(1, params.ellmax + 1)]
        cond = pd.DataFrame(gibbs.conditional_rows(potential, invariant, site_sets, boundary, truncs))
        # blocks wider than four sites stay out of the CSV
        table_rows = [
            {"ell": ell, "q": q, "word": names.decode(substitution.index_word(i, L ** ell, names.size)), "phi": float(v)}
            for (ell, q), table in sorted(potential.tables.items())
            if L ** ell <= 4
            for i, v in enumerate(table)
        ]
        payload = {
            "L": L,
            "ell_max": params.ellmax,
            "K": potential.K,
            "K_phi": potential.K_phi,
            "rho_trunc": potential.rho,
            "norm_bounds": list(potential.norm_bounds),
            "norms_ok": potential.norms_ok(),
            "summability": potential.summability(),
            "telescoping_error": gibbs.max_telescoping_error(potential),
            "simon_diagnostic": gibbs.simon_diagnostic(potential, range(1, depth + 1)),
        }
        return payload, {"potential": pd.DataFrame(table_rows), "conditionals": cond}

    def _twobody(self, manifest: RunManifest, read: ModelReadResult):
        model = read.twobody
        if model is None:
            raise ConfigError("twobody needs a model given through the twobody shortcut", field="twobody")
        params = manifest.parameters
        q = twobody.stationary_vector(model)
        size = model.alphabet.size
        names = model.alphabet.symbols

        closed_vs_power = []
        for ell in range(0, params.ellmax + 1):
            if size ** (2 ** ell) > settings.STATE_BUDGET:
                break
            closed = twobody.closed_form_invariant(model, ell, q)
            power = operator.invariant_family(read.system, 2 ** ell, params.tol).level(2 ** ell)
            closed_vs_power.append({"ell": ell, "max_abs_diff": float(np.max(np.abs(closed.probabilities - power)))})

        rows = []
        for n in params.n_list:
            geometry = twobody.pair_geometry(n)
            for a in range(size):
                for b in range(size):
                    ratio = twobody.exact_pair_ratio(model, a, b, n, q)
                    rows.append({
                        "n": n, "a": names[a], "b": names[b], "ratio": ratio,
                        "abs_deviation": abs(ratio - 1.0),
                        "ell": geometry.ell, "k": geometry.k, "hops": geometry.hops,
                    })
        potential = twobody.pair_potential(model)
        payload = {
            "q_nu": q.tolist(),
            "one_marginal_matrix": twobody.one_marginal_matrix(model).tolist(),
            "C": twobody.decay_constant(model),
            "gamma": twobody.decay_exponent(model),
            "projective_rate_bound": twobody.projective_rate_bound(model, max(params.ellmax, 2)),
            "closed_form_vs_power": closed_vs_power,
            "pair_oscillation": potential.oscillation(),
            "simon_diagnostic": gibbs.simon_diagnostic(potential, range(1, 17), params.ellmax),
        }
        return payload, {"pair_ratios": pd.DataFrame(rows)}

    def _simulate(self, manifest: RunManifest, read: ModelReadResult):
        system = read.system
        params = manifest.parameters
        config = SimulationConfig(seed=params.seed, window=params.window, samples=params.samples)
        samples = simulate.generate_samples(system, config)
        names = system.alphabet
        size = system.alphabet_size

        N = min(params.window, params.nmax)
        family = operator.invariant_family(system, N, params.tol)
        empirical = simulate.empirical_marginals(samples, N, size)
        words = substitution.all_words(size, N)
        marginals = pd.DataFrame({
            "word": [names.decode(w) for w in words],
            "empirical": empirical.probabilities,
            "exact": family.level(N),
        })
        marginals["standard_error"] = np.sqrt(marginals["exact"] * (1 - marginals["exact"]) / config.samples)

        constant = system.substitutions.constant_length and system.substitutions.max_length > 1
        one_site = operator.invariant_family(system, 1, params.tol) if constant else None
        pair_rows = []
        for n in params.n_list:
            if n > params.window:
                continue
            exact_joint = None
            if constant:
                exact_joint = correlations.pair_joint(system, one_site, n)
            elif n <= N:
                exact_joint = correlations.pair_joint_from_family(family, n)
            for a in range(size):
                for b in range(size):
                    est = simulate.empirical_pair_ratio(samples, a, b, n)
                    exact = None
                    if exact_joint is not None:
                        exact = float(exact_joint[a, b] / (exact_joint[a].sum() * exact_joint[:, b].sum()))
                    pair_rows.append({
                        "n": n, "a": names.symbols[a], "b": names.symbols[b],
                        "ratio": est.ratio, "standard_error": est.standard_error,
                        "exact": exact, "diagonal": est.diagonal,
                    })
        pairs = pd.DataFrame(pair_rows, columns=["n", "a", "b", "ratio", "standard_error", "exact", "diagonal"])

        within = [
            abs(r["ratio"] - r["exact"]) <= 4 * r["standard_error"]
            for r in pair_rows
            if r["ratio"] is not None and r["exact"] is not None and r["standard_error"] and not r["diagonal"]
        ]
        payload = {
            "samples": config.samples,
            "window": config.window,
            "iterations": simulate.default_iterations(system, config.window),
            "marginal_depth": N,
            "max_marginal_deviation": float(np.max(np.abs(empirical.probabilities - family.level(N)))),
            "pairs_within_4se": sum(within),
            "pairs_checked": len(within),
        }
        tables = {"marginals": marginals, "pairs": pairs}
        if params.write_samples:
            tables["samples"] = pd.DataFrame({
                "sample": range(config.samples),
                "word": [names.decode(row) for row in samples],
            })
        return payload, tables
