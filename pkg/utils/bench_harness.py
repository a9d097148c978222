"""Benchmark corpus, regression harness and report rendering for the command line."""

import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, TextIO, Tuple

from utils.algebra_helper import IdentifiabilityError
from utils.identifiability_core import (
    ANALYSIS_CONFIG,
    DegenerateModelError,
    IdentifiabilityReport,
    Label,
    ProbabilityArgumentError,
    global_classification,
    validate_probability,
)
from utils.model_parser import ModelParseError, ModelValidationError, load_model
from utils.resource_guard import recommended_jobs

logger = logging.getLogger(__name__)

CORPUS_CONFIG = {
    "model_suffix": ".sian-model",
    "fixture_suffix": ".expected.json",
    "gating_classes": ("fast", "medium"),
    "all_classes": ("fast", "medium", "stretch"),
}

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_INPUT_ERROR = 2
EXIT_UNRESOLVED = 3


class FixtureError(IdentifiabilityError):
    def __init__(self, entry: str, message: str):
        self.entry = entry
        super().__init__(f"{entry}: {message}")


@dataclass(frozen=True)
class CorpusEntry:
    name: str
    model_path: Path
    expected: Dict[str, Label]
    timing_class: str
    provenance: str

    @property
    def gating(self) -> bool:
        return self.timing_class in CORPUS_CONFIG["gating_classes"]


def _read_fixture(name: str, path: Path) -> dict:
    if not path.exists():
        raise FixtureError(name, f"missing fixture {path.name}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FixtureError(name, f"fixture is not valid JSON ({e})")
    if not isinstance(data, dict):
        raise FixtureError(name, "fixture must be a JSON object")
    return data


def load_entry(model_path) -> CorpusEntry:
    """Read one model file together with its expected-label fixture."""
    model_path = Path(model_path)
    name = model_path.name[: -len(CORPUS_CONFIG["model_suffix"])]
    data = _read_fixture(name, model_path.with_name(name + CORPUS_CONFIG["fixture_suffix"]))

    labels = data.get("labels")
    if not isinstance(labels, dict) or not labels:
        raise FixtureError(name, "fixture has no 'labels' mapping")
    expected = {}
    for unknown, value in labels.items():
        try:
            expected[unknown] = Label(value)
        except ValueError:
            raise FixtureError(name, f"unknown label {value!r} for {unknown}")

    timing_class = data.get("timing_class")
    if timing_class not in CORPUS_CONFIG["all_classes"]:
        raise FixtureError(name, f"timing_class must be one of {', '.join(CORPUS_CONFIG['all_classes'])}")
    provenance = data.get("provenance")
    if not isinstance(provenance, str) or not provenance.strip():
        raise FixtureError(name, "fixture has no provenance")

    try:
        model = load_model(model_path)
    except ModelParseError as e:
        raise FixtureError(name, f"model does not parse: {e}")
    unknowns = set(model.unknowns)
    missing = sorted(unknowns - set(expected))
    extra = sorted(set(expected) - unknowns)
    if missing or extra:
        details = []
        if missing:
            details.append(f"missing {', '.join(missing)}")
        if extra:
            details.append(f"not unknowns of the model: {', '.join(extra)}")
        raise FixtureError(name, "labels do not cover the unknowns exactly (" + "; ".join(details) + ")")

    return CorpusEntry(name, model_path, expected, timing_class, provenance)


def load_corpus(directory, classes: Optional[Sequence[str]] = None) -> List[CorpusEntry]:
    """All entries of a corpus directory, sorted by name, restricted to ``classes``."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {directory}")
    classes = tuple(classes) if classes else CORPUS_CONFIG["gating_classes"]
    for c in classes:
        if c not in CORPUS_CONFIG["all_classes"]:
            raise ValueError(f"unknown timing class {c!r}")

    entries = []
    for path in sorted(directory.glob("*" + CORPUS_CONFIG["model_suffix"])):
        entry = load_entry(path)
        if entry.timing_class in classes:
            entries.append(entry)
    logger.info(f"📚 Loaded {len(entries)} corpus entries from {directory} ({', '.join(classes)})")
    return entries


@dataclass
class EntryResult:
    entry: str
    timing_class: str
    seed: object
    expected: Dict[str, str]
    actual: Dict[str, str] = field(default_factory=dict)
    prime: int = 0
    orders: Dict[str, int] = field(default_factory=dict)
    phase_times: Dict[str, float] = field(default_factory=dict)
    wall_time: float = 0.0
    error: Optional[str] = None

    @property
    def checks(self) -> Dict[str, bool]:
        return {name: self.actual.get(name) == label for name, label in self.expected.items()}

    @property
    def mismatches(self) -> Dict[str, Tuple[str, Optional[str]]]:
        return {
            name: (label, self.actual.get(name))
            for name, label in self.expected.items()
            if self.actual.get(name) != label
        }

    @property
    def passed(self) -> bool:
        if self.error is not None:
            return False
        gating = self.timing_class in CORPUS_CONFIG["gating_classes"]
        for expected, actual in self.mismatches.values():
            # Stretch entries may run out of budget without failing the run.
            if not gating and actual == Label.UNRESOLVED.value:
                continue
            return False
        return True

    def to_dict(self, include_timing: bool = True) -> Dict[str, object]:
        result = {
            "entry": self.entry,
            "timing_class": self.timing_class,
            "seed": self.seed,
            "prime": self.prime,
            "orders": dict(self.orders),
            "passed": self.passed,
            "checks": self.checks,
            "labels": dict(self.actual),
            "mismatches": {k: {"expected": e, "actual": a} for k, (e, a) in self.mismatches.items()},
            "error": self.error,
        }
        if include_timing:
            result["phase_times"] = {k: round(v, 3) for k, v in self.phase_times.items()}
            result["wall_time"] = round(self.wall_time, 3)
        return result


@dataclass
class RunReport:
    seed: object
    probability: float
    classes: Tuple[str, ...]
    results: List[EntryResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failures(self) -> List[str]:
        return [r.entry for r in self.results if not r.passed]

    def to_dict(self, include_timing: bool = True) -> Dict[str, object]:
        return {
            "seed": self.seed,
            "probability": self.probability,
            "classes": list(self.classes),
            "passed": self.passed,
            "entries": [r.to_dict(include_timing) for r in self.results],
        }


def run_entry(entry: CorpusEntry, probability=None, seed=0, max_order=None, **options) -> EntryResult:
    """Analyze one corpus entry and compare with its fixture; never raises on analysis failure."""
    result = EntryResult(
        entry=entry.name,
        timing_class=entry.timing_class,
        seed=seed,
        expected={k: v.value for k, v in entry.expected.items()},
    )
    start_time = time.time()
    try:
        model = load_model(entry.model_path)
        report = global_classification(model, probability, seed, max_order=max_order, **options)
    except IdentifiabilityError as e:
        logger.error(f"❌ {entry.name} failed: {e}")
        result.error = str(e)
    else:
        result.actual = report.label_values()
        result.prime = report.prime
        result.orders = dict(report.global_orders or report.local_orders)
        result.phase_times = dict(report.phase_times)
    result.wall_time = time.time() - start_time
    return result


def run_benchmarks(
    corpus,
    classes: Optional[Sequence[str]] = None,
    jobs: int = 1,
    seed=0,
    probability=None,
    max_order: Optional[int] = None,
) -> RunReport:
    """Run every selected corpus entry and check its labels against the fixture."""
    probability = ANALYSIS_CONFIG["default_probability"] if probability is None else probability
    validate_probability(probability)
    entries = load_corpus(corpus, classes)
    classes = tuple(classes) if classes else CORPUS_CONFIG["gating_classes"]
    jobs = recommended_jobs(jobs or 1)
    results: List[Optional[EntryResult]] = [None] * len(entries)

    if jobs <= 1 or len(entries) <= 1:
        for i, entry in enumerate(entries):
            results[i] = run_entry(entry, probability, seed, max_order)
            _log_result(results[i])
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(entries))) as executor:
            future_to_index = {
                executor.submit(run_entry, entry, probability, seed, max_order): i
                for i, entry in enumerate(entries)
            }
            for future in as_completed(future_to_index):
                index = future_to_index[future]
                try:
                    results[index] = future.result()
                except Exception as e:
                    logger.error(f"Worker for {entries[index].name} crashed: {e}")
                    results[index] = EntryResult(
                        entry=entries[index].name,
                        timing_class=entries[index].timing_class,
                        seed=seed,
                        expected={k: v.value for k, v in entries[index].expected.items()},
                        error=f"worker crashed: {e}",
                    )
                _log_result(results[index])

    return RunReport(seed=seed, probability=float(probability), classes=classes, results=results)


def _log_result(result: EntryResult) -> None:
    if result.passed:
        logger.info(f"✅ {result.entry} passed in {result.wall_time:.1f}s")
    else:
        logger.warning(f"⚠️ {result.entry} failed: {result.error or result.mismatches}")


def _format_orders(orders: Dict[str, int]) -> str:
    return ", ".join(f"{y}:{k}" for y, k in orders.items()) or "-"


def report_to_dict(report: IdentifiabilityReport, include_timing: bool = True) -> Dict[str, object]:
    data = {
        "model": report.model,
        "probability": report.probability,
        "seed": report.seed,
        "prime": report.prime,
        "orders": dict(report.global_orders or report.local_orders),
        "labels": report.label_values(),
        "local_orders": dict(report.local_orders),
        "primes": dict(report.primes),
        "budgets": dict(report.budgets),
        "rank": report.rank,
        "pinned": list(report.pinned),
        "notes": list(report.notes),
    }
    if include_timing:
        data["phase_times"] = {k: round(v, 3) for k, v in report.phase_times.items()}
    return data


def report_to_json(report: IdentifiabilityReport, include_timing: bool = True) -> str:
    return json.dumps(report_to_dict(report, include_timing), indent=2)


def run_report_to_json(run: RunReport, include_timing: bool = True) -> str:
    return json.dumps(run.to_dict(include_timing), indent=2)


LABEL_TEXT = {
    Label.GLOBAL: "globally identifiable",
    Label.LOCAL: "locally but not globally identifiable",
    Label.NONE: "not identifiable",
    Label.UNRESOLVED: "unresolved",
}


def render_table(report: IdentifiabilityReport) -> str:
    """Human-readable label table with the run metadata above it."""
    width = max([len("unknown")] + [len(name) for name in report.unknowns])
    lines = [
        f"model:       {report.model}",
        f"probability: {report.probability}",
        f"seed:        {report.seed}",
        f"prime:       {report.prime}",
        f"orders:      {_format_orders(report.global_orders or report.local_orders)}",
        "",
        f"{'unknown'.ljust(width)}  label",
        f"{'-' * width}  {'-' * 37}",
    ]
    for name in report.unknowns:
        lines.append(f"{name.ljust(width)}  {LABEL_TEXT[report.labels[name]]}")
    for note in report.notes:
        lines.append(f"note: {note}")
    return "\n".join(lines)


def render_bench_table(run: RunReport) -> str:
    """Pass/fail and timing per entry; times are informative only."""
    width = max([len("entry")] + [len(r.entry) for r in run.results])
    lines = [
        f"{'entry'.ljust(width)}  {'class':8}  {'status':6}  {'time (s)':>9}  details",
        f"{'-' * width}  {'-' * 8}  {'-' * 6}  {'-' * 9}  {'-' * 7}",
    ]
    for r in run.results:
        status = "pass" if r.passed else "FAIL"
        if r.error:
            details = r.error
        elif r.mismatches:
            details = ", ".join(f"{k}: expected {e}, got {a}" for k, (e, a) in r.mismatches.items())
        else:
            details = f"{len(r.expected)} unknowns"
        lines.append(f"{r.entry.ljust(width)}  {r.timing_class:8}  {status:6}  {r.wall_time:9.1f}  {details}")
    passed = sum(r.passed for r in run.results)
    lines.append("")
    lines.append(f"{passed}/{len(run.results)} entries passed (seed {run.seed}, p = {run.probability})")
    return "\n".join(lines)


def _print_error(message: str, err: TextIO) -> None:
    print(f"error: {message}", file=err)


def run_analyze(
    path,
    probability=None,
    seed=0,
    max_order: Optional[int] = None,
    as_json: bool = False,
    jobs: int = 1,
    out: Optional[TextIO] = None,
    err: Optional[TextIO] = None,
    **options,
) -> int:
    """Analyze one model file and print the report. Returns the process exit code."""
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        model = load_model(path)
        report = global_classification(
            model, probability, seed, max_order=max_order, jobs=recommended_jobs(jobs or 1), **options
        )
    except FileNotFoundError:
        _print_error(f"file not found: {path}", err)
        return EXIT_INPUT_ERROR
    except OSError as e:
        _print_error(f"cannot read {path}: {e}", err)
        return EXIT_INPUT_ERROR
    except ModelValidationError as e:
        for diagnostic in e.diagnostics:
            print(f"{path}: {diagnostic}", file=err)
        return EXIT_INPUT_ERROR
    except ModelParseError as e:
        print(f"{path}: {e}", file=err)
        return EXIT_INPUT_ERROR
    except ProbabilityArgumentError as e:
        _print_error(str(e), err)
        return EXIT_INPUT_ERROR
    except DegenerateModelError as e:
        _print_error(f"degenerate model: {e}", err)
        return EXIT_INPUT_ERROR
    except IdentifiabilityError as e:
        _print_error(f"analysis failed: {e}", err)
        return EXIT_UNRESOLVED

    print(report_to_json(report) if as_json else render_table(report), file=out)
    return EXIT_UNRESOLVED if report.has_unresolved else EXIT_OK


def run_bench(
    corpus,
    classes: Optional[Sequence[str]] = None,
    jobs: int = 1,
    seed=0,
    probability=None,
    max_order: Optional[int] = None,
    as_json: bool = False,
    out: Optional[TextIO] = None,
    err: Optional[TextIO] = None,
) -> int:
    """Run the corpus and print the run report. Returns the process exit code."""
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        run = run_benchmarks(corpus, classes, jobs, seed, probability, max_order)
    except FixtureError as e:
        _print_error(f"fixture error in {e}", err)
        return EXIT_INPUT_ERROR
    except (OSError, ValueError) as e:
        _print_error(str(e), err)
        return EXIT_INPUT_ERROR

    print(run_report_to_json(run) if as_json else render_bench_table(run), file=out)
    return EXIT_OK if run.passed else EXIT_MISMATCH
