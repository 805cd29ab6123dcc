"""End-to-end run orchestration and report emission.

One run walks the whole stack: choose or validate the bandwidth
allocation, push the routing table to the switch agent over the control
plane, arm epoch-aligned tomography captures at each node, pull the binary
timetag records over the (budgeted) conventional data plane, repair epoch
shifts, recover per-capture clock offsets, count coincidences, reconstruct
every link's state, and score it.

All randomness derives from the scenario seed keyed by logical capture
identifiers, never by control-plane timing, so injected network delays
shift timestamp records (which the pipeline must repair) without touching
the photon statistics.  Reports are therefore byte-identical for a fixed
config and seed.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import allocator, controlplane as cp
from .coincidence import (
    CoincidenceResult,
    count_coincidences,
    link_metrics,
)
from .errors import QlanError, ValidationError
from .photonics import detect, project_pairs, simulate_pair_stream
from .qstate import (
    SETTING_LABELS,
    LinkMetrics,
    TomographyCounts,
    TwoQubitState,
    bell_state,
    fidelity,
    reconstruct_state,
)
from .scenario import ScenarioConfig
from .spectrum import Allocation, link_name, parse_link, wss_route
from .timing import (
    BASIS_CODES,
    EventStream,
    NoPeakError,
    align_epochs,
    epoch_shift_bins,
    estimate_offset_full,
    lag_histogram,
    read_timetags,
    write_timetags,
)

TOMOGRAPHY_SETTINGS = tuple(
    (a, b) for a in SETTING_LABELS for b in SETTING_LABELS
)
BASIS_GROUP_COUNT = 9  # complete-basis setting pairs; each sums to the pair rate


class StageError(QlanError):
    """A pipeline stage failed; no partial report is emitted."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


def stable_seed(root: int, *parts) -> int:
    """Deterministic, platform-independent sub-seed from logical ids."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(root)).encode())
    for p in parts:
        h.update(b"\x00" + str(p).encode())
    return int.from_bytes(h.digest(), "little") & 0x7FFFFFFF


@dataclass(frozen=True)
class CaptureDiagnostic:
    capture_id: str
    link: str
    setting_a: str
    setting_b: str
    commanded_epoch: int
    actual_epochs: dict[str, int]
    epoch_shift_bins: int
    offset_bins: int
    offset_significant: bool
    peak_count: int
    coincidences: int
    accidental_estimate: float


@dataclass(frozen=True)
class LinkResult:
    link: str
    channels: tuple[int, ...]
    metrics: LinkMetrics
    state: TwoQubitState
    singles_per_s: dict[str, float]
    total_singles_per_s: dict[str, float]
    accidental_rate_per_s: float
    lag_histogram_sample: dict[int, int]
    fidelity_subtracted: float | None = None


@dataclass(frozen=True)
class BudgetUsage:
    capacity_bps: float
    peak_stream_demand_bps: float
    transfers: int
    admitted_all: bool


@dataclass(frozen=True)
class RunReport:
    scenario: str
    seed: int
    integration_s: float
    window_ns: float
    allocation: dict[str, list[int]]
    links: tuple[LinkResult, ...]
    timing: tuple[CaptureDiagnostic, ...]
    budget: BudgetUsage

    def link(self, name: str) -> LinkResult:
        key = link_name(parse_link(name))
        for row in self.links:
            if row.link == key:
                return row
        raise ValidationError(f"no report row for link {name!r}")

    def coincidence_counts(self) -> dict[str, int]:
        """Per-capture post-correction coincidence counts (the epoch-safety
        observable)."""
        return {d.capture_id: d.coincidences for d in self.timing}


@dataclass(frozen=True)
class _CaptureSpec:
    capture_id: str
    link: tuple[str, str]
    index: int
    settings: dict[str, str]
    channels: tuple[int, ...]


def _build_schedule(alloc: Allocation) -> list[_CaptureSpec]:
    schedule = []
    for link in alloc.links():
        chans = tuple(sorted(alloc.channels[link]))
        if not chans:
            raise ValidationError(f"link {link_name(link)} has no channels to measure")
        x, y = link
        for idx, (sa, sb) in enumerate(TOMOGRAPHY_SETTINGS):
            schedule.append(
                _CaptureSpec(
                    capture_id=f"{link_name(link)}:{idx:02d}",
                    link=link,
                    index=idx,
                    settings={x: sa, y: sb},
                    channels=chans,
                )
            )
    return schedule


class _CaptureSimulator:
    """Generates each node's timetag record for a capture.

    Pair emission and joint analyzer outcomes are shared between the two
    arms of a link and memoized per capture; loss, timing noise, darks,
    and dead time are per-node.  Every random stream is keyed by the
    scenario seed and logical capture ids only.
    """

    def __init__(self, config: ScenarioConfig, specs: dict[str, _CaptureSpec]):
        self.config = config
        self.specs = specs
        self.model = config.score_model()
        self._order = {cid: i for i, cid in enumerate(sorted(specs))}
        self._shared: dict[str, dict[str, np.ndarray]] = {}
        self._consumed: dict[str, int] = {}

    def _shared_arms(self, spec: _CaptureSpec, duration_s: float) -> dict[str, np.ndarray]:
        if spec.capture_id in self._shared:
            return self._shared[spec.capture_id]
        x, y = spec.link
        passed: dict[str, list[np.ndarray]] = {x: [], y: []}
        for n in spec.channels:
            emissions = simulate_pair_stream(
                n,
                self.config.source.flux(n),
                duration_s,
                stable_seed(self.config.seed, "emit", spec.capture_id, n),
            )
            state = self.model.link_state(spec.link, n)
            rng = np.random.default_rng(
                np.random.SeedSequence(
                    [stable_seed(self.config.seed, "project", spec.capture_id, n)]
                )
            )
            mask_x, mask_y = project_pairs(
                state, spec.settings[x], spec.settings[y], emissions.size, rng
            )
            passed[x].append(emissions[mask_x])
            passed[y].append(emissions[mask_y])
        arms = {
            node: np.sort(np.concatenate(chunks)) if chunks else np.empty(0)
            for node, chunks in passed.items()
        }
        self._shared[spec.capture_id] = arms
        self._consumed[spec.capture_id] = 0
        return arms

    def capture(
        self,
        node: str,
        capture_id: str,
        logical_epoch: int,
        actual_epoch: int,
        duration_s: float,
        basis: str,
    ) -> bytes:
        spec = self.specs[capture_id]
        arms = self._shared_arms(spec, duration_s)
        emissions = arms[node]
        self._consumed[capture_id] += 1
        if self._consumed[capture_id] >= 2:
            del self._shared[capture_id]  # both arms generated; free the cache
        setup = self.config.node(node)
        # Clock randomness and drift key on the schedule position, not the
        # commanded PPS second: control-plane delays move the commanded
        # epoch, and the epoch-safety contract requires identical photon
        # records under any injected delay.
        schedule_epoch = self._order[capture_id]
        stream = detect(
            emissions,
            setup.fiber,
            setup.detector,
            setup.clock,
            duration_s,
            stable_seed(self.config.seed, "detect", capture_id, node),
            node_id=self.config.node_index(node),
            basis=BASIS_CODES[basis],
            epoch_s=schedule_epoch,
            record_epoch_s=actual_epoch,
        )
        return write_timetags(stream)


def run_scenario(config: ScenarioConfig, keep_timetags: Path | None = None) -> RunReport:
    """Execute one scenario; deterministic for a fixed config and seed."""

    def stage(name: str):
        class _Stage:
            def __enter__(self):
                return None

            def __exit__(self, exc_type, exc, tb):
                if exc is not None and not isinstance(exc, StageError):
                    raise StageError(name, exc) from exc
                return False

        return _Stage()

    with stage("allocate"):
        model = config.score_model()
        if config.allocation is not None:
            alloc = config.allocation
        else:
            alloc = allocator.optimize(config.objective, model)
        schedule = _build_schedule(alloc)
        specs = {s.capture_id: s for s in schedule}

    with stage("controlplane-setup"):
        net = cp.SimNet(config.transport.token, seed=config.seed)
        budget = cp.DataPlaneBudget(config.capacity_bps)
        controller = cp.Controller(net, budget)
        wss = cp.WssAgent(net)
        simulator = _CaptureSimulator(config, specs)
        for name in config.node_names():
            cp.NodeAgent(net, name, simulator.capture)
        net.now = float(config.measure.start_epoch_s)
        for name in config.node_names() + [wss.name]:
            channel = net.session_channel(controller.name, name)
            channel.faults.delay_s = config.transport.delay_for(name)
            channel.faults.jitter_s = config.transport.jitter_s
            channel.faults.drop_rate = config.transport.drop_rate

    with stage("apply-allocation"):
        table = wss_route(config.plan, alloc).to_table_text()
        response = controller.apply_allocation(wss.name, table)
        if response.kind != "ack":
            raise QlanError(f"switch rejected the allocation: {response.payload}")
        if controller.wss_status(wss.name) != table:
            raise QlanError("switch status does not echo the applied routing table")

    duration = config.measure.integration_s
    captured: dict[str, dict[str, EventStream]] = {}
    actual_epochs: dict[str, dict[str, int]] = {}
    commanded: dict[str, int] = {}
    peak_demand = 0.0
    with stage("measure"):
        arm_timeout = max(cp.DEFAULT_TIMEOUT_S, 4 * config.transport.delay_s + 5.0)
        for spec in schedule:
            x, y = spec.link
            epoch = int(math.ceil(net.now + config.measure.arm_lead_s))
            if epoch <= net.now:
                epoch += 1
            commanded[spec.capture_id] = epoch
            actual = controller.arm_measurement(
                [x, y], epoch, duration, spec.settings, spec.capture_id, arm_timeout
            )
            actual_epochs[spec.capture_id] = actual
            streams = {}
            for node in (x, y):
                blob = controller.fetch_data(node, spec.capture_id)
                peak_demand = max(peak_demand, len(blob) * 8 / duration)
                streams[node] = read_timetags(blob)
                if keep_timetags is not None:
                    out = Path(keep_timetags)
                    out.mkdir(parents=True, exist_ok=True)
                    fname = f"{spec.capture_id.replace(':', '_')}_{node}.qtt"
                    (out / fname).write_bytes(blob)
            captured[spec.capture_id] = streams

    with stage("analyze"):
        link_rows = []
        diagnostics = []
        for link in alloc.links():
            row, diags = _analyze_link(
                config, alloc, link, schedule, captured, commanded, actual_epochs
            )
            link_rows.append(row)
            diagnostics.extend(diags)

    with stage("report"):
        usage = BudgetUsage(
            capacity_bps=config.capacity_bps,
            peak_stream_demand_bps=peak_demand,
            transfers=budget.transfers,
            admitted_all=True,
        )
        return RunReport(
            scenario=config.name,
            seed=config.seed,
            integration_s=duration,
            window_ns=config.measure.window_ns,
            allocation=alloc.to_dict(),
            links=tuple(link_rows),
            timing=tuple(diagnostics),
            budget=usage,
        )


def _analyze_link(
    config: ScenarioConfig,
    alloc: Allocation,
    link: tuple[str, str],
    schedule: list[_CaptureSpec],
    captured: dict[str, dict[str, EventStream]],
    commanded: dict[str, int],
    actual_epochs: dict[str, dict[str, int]],
) -> tuple[LinkResult, list[CaptureDiagnostic]]:
    x, y = link
    duration = config.measure.integration_s
    window = config.measure.window_ns
    search = config.measure.offset_search_bins
    table = np.zeros((6, 6))
    diagnostics = []
    singles_x = singles_y = 0
    accidental_total = 0.0
    sample_hist: dict[int, int] = {}
    for spec in schedule:
        if spec.link != link:
            continue
        streams = captured[spec.capture_id]
        raw_x, raw_y = streams[x], streams[y]
        shift = epoch_shift_bins(raw_x, raw_y)
        sx, sy = align_epochs(raw_x, raw_y)
        try:
            estimate = estimate_offset_full(sx, sy, search)
            offset = estimate.offset_bins if estimate.significant else 0
            significant = estimate.significant
            peak = estimate.peak_count
        except NoPeakError:
            offset, significant, peak = 0, False, 0
        result = count_coincidences(sx, sy, window, offset, duration)
        sa, sb = spec.settings[x], spec.settings[y]
        table[SETTING_LABELS.index(sa), SETTING_LABELS.index(sb)] = result.coincidences
        singles_x += result.singles_a
        singles_y += result.singles_b
        accidental_total += result.accidental_estimate
        if spec.index == 0:
            counts = lag_histogram(sx.bins, sy.bins, search)
            sample_hist = {
                int(lag): int(c)
                for lag, c in zip(range(-search, search + 1), counts)
            }
        diagnostics.append(
            CaptureDiagnostic(
                capture_id=spec.capture_id,
                link=link_name(link),
                setting_a=sa,
                setting_b=sb,
                commanded_epoch=commanded[spec.capture_id],
                actual_epochs=dict(sorted(actual_epochs[spec.capture_id].items())),
                epoch_shift_bins=shift,
                offset_bins=offset,
                offset_significant=significant,
                peak_count=peak,
                coincidences=result.coincidences,
                accidental_estimate=result.accidental_estimate,
            )
        )
    counts = TomographyCounts(table)
    state = reconstruct_state(counts)
    total = counts.total()
    aggregate = CoincidenceResult(
        coincidences=int(total),
        singles_a=singles_x,
        singles_b=singles_y,
        window_ns=window,
        integration_time_s=BASIS_GROUP_COUNT * duration,
        accidental_estimate=accidental_total,
    )
    metrics = link_metrics(
        state,
        aggregate,
        counts=counts,
        resamples=200,
        seed=stable_seed(config.seed, "bootstrap", link_name(link)),
    )
    subtracted = None
    if config.subtracted_fidelity:
        per_capture_acc = accidental_total / 36.0
        sub_table = np.clip(table - per_capture_acc, 0.0, None)
        subtracted = fidelity(
            reconstruct_state(TomographyCounts(sub_table)), bell_state("psi+")
        )
    model = config.score_model()
    total_singles = {}
    for node in link:
        eta = model.efficiency(node)
        inflow = sum(
            config.source.flux(n) * eta
            for l, chans in alloc.channels.items()
            if node in l
            for n in chans
        )
        total_singles[node] = inflow + model.dark(node)
    row = LinkResult(
        link=link_name(link),
        channels=tuple(sorted(alloc.channels[link])),
        metrics=metrics,
        state=state,
        singles_per_s={
            x: singles_x / (36.0 * duration),
            y: singles_y / (36.0 * duration),
        },
        total_singles_per_s=total_singles,
        accidental_rate_per_s=accidental_total / (36.0 * duration),
        lag_histogram_sample=sample_hist,
        fidelity_subtracted=subtracted,
    )
    return row, diagnostics


# ---------------------------------------------------------------------------
# Report serialization.

REPORT_SCHEMA = "qlansim.report/1"


def format_channels(channels) -> str:
    """Compact channel-set notation: [2,3,4,5] -> '2-5', [1,3] -> '1,3'."""
    chans = sorted(channels)
    if not chans:
        return "-"
    runs = []
    start = prev = chans[0]
    for c in chans[1:]:
        if c == prev + 1:
            prev = c
            continue
        runs.append((start, prev))
        start = prev = c
    runs.append((start, prev))
    return ",".join(f"{a}" if a == b else f"{a}-{b}" for a, b in runs)


def report_to_dict(report: RunReport) -> dict:
    return {
        "schema": REPORT_SCHEMA,
        "scenario": report.scenario,
        "seed": report.seed,
        "integration_s": report.integration_s,
        "window_ns": report.window_ns,
        "allocation": report.allocation,
        "links": [
            {
                "link": row.link,
                "channels": list(row.channels),
                "fidelity": row.metrics.fidelity,
                "fidelity_sigma": row.metrics.fidelity_sigma,
                "log_negativity": row.metrics.log_negativity,
                "log_negativity_sigma": row.metrics.log_negativity_sigma,
                "coincidence_rate_per_s": row.metrics.coincidence_rate,
                "coincidence_rate_sigma": row.metrics.coincidence_rate_sigma,
                "ebit_rate_per_s": row.metrics.ebit_rate,
                "ebit_rate_sigma": row.metrics.ebit_rate_sigma,
                "state_pairs": row.state.to_pairs(),
                "singles_per_s": row.singles_per_s,
                "total_singles_per_s": row.total_singles_per_s,
                "accidental_rate_per_s": row.accidental_rate_per_s,
                "lag_histogram_sample": {str(k): v for k, v in row.lag_histogram_sample.items()},
                "fidelity_subtracted": row.fidelity_subtracted,
            }
            for row in report.links
        ],
        "timing": [
            {
                "capture_id": d.capture_id,
                "link": d.link,
                "setting_a": d.setting_a,
                "setting_b": d.setting_b,
                "commanded_epoch": d.commanded_epoch,
                "actual_epochs": d.actual_epochs,
                "epoch_shift_bins": d.epoch_shift_bins,
                "offset_bins": d.offset_bins,
                "offset_significant": d.offset_significant,
                "peak_count": d.peak_count,
                "coincidences": d.coincidences,
                "accidental_estimate": d.accidental_estimate,
            }
            for d in report.timing
        ],
        "budget": {
            "capacity_bps": report.budget.capacity_bps,
            "peak_stream_demand_bps": report.budget.peak_stream_demand_bps,
            "transfers": report.budget.transfers,
            "admitted_all": report.budget.admitted_all,
        },
    }


def report_from_dict(data: dict) -> RunReport:
    if data.get("schema") != REPORT_SCHEMA:
        raise ValidationError(f"unknown report schema {data.get('schema')!r}")
    links = tuple(
        LinkResult(
            link=row["link"],
            channels=tuple(row["channels"]),
            metrics=LinkMetrics(
                fidelity=row["fidelity"],
                log_negativity=row["log_negativity"],
                coincidence_rate=row["coincidence_rate_per_s"],
                ebit_rate=row["ebit_rate_per_s"],
                fidelity_sigma=row["fidelity_sigma"],
                log_negativity_sigma=row["log_negativity_sigma"],
                coincidence_rate_sigma=row["coincidence_rate_sigma"],
                ebit_rate_sigma=row["ebit_rate_sigma"],
            ),
            state=TwoQubitState.from_pairs(row["state_pairs"]),
            singles_per_s=dict(row["singles_per_s"]),
            total_singles_per_s=dict(row["total_singles_per_s"]),
            accidental_rate_per_s=row["accidental_rate_per_s"],
            lag_histogram_sample={int(k): v for k, v in row["lag_histogram_sample"].items()},
            fidelity_subtracted=row["fidelity_subtracted"],
        )
        for row in data["links"]
    )
    timing = tuple(
        CaptureDiagnostic(
            capture_id=d["capture_id"],
            link=d["link"],
            setting_a=d["setting_a"],
            setting_b=d["setting_b"],
            commanded_epoch=d["commanded_epoch"],
            actual_epochs=dict(d["actual_epochs"]),
            epoch_shift_bins=d["epoch_shift_bins"],
            offset_bins=d["offset_bins"],
            offset_significant=d["offset_significant"],
            peak_count=d["peak_count"],
            coincidences=d["coincidences"],
            accidental_estimate=d["accidental_estimate"],
        )
        for d in data["timing"]
    )
    b = data["budget"]
    return RunReport(
        scenario=data["scenario"],
        seed=data["seed"],
        integration_s=data["integration_s"],
        window_ns=data["window_ns"],
        allocation={k: list(v) for k, v in data["allocation"].items()},
        links=links,
        timing=timing,
        budget=BudgetUsage(
            capacity_bps=b["capacity_bps"],
            peak_stream_demand_bps=b["peak_stream_demand_bps"],
            transfers=b["transfers"],
            admitted_all=b["admitted_all"],
        ),
    )


def report_json(report: RunReport) -> str:
    return json.dumps(report_to_dict(report), sort_keys=True, indent=1) + "\n"


def report_text(report: RunReport) -> str:
    """Fixed-width table mirroring the link-data layout of the study this
    simulator reproduces: Alloc | Link | Ch. | Fidelity | E_N | R_E."""
    out = io.StringIO()
    has_sub = any(r.fidelity_subtracted is not None for r in report.links)
    header = (
        f"{'Alloc':<14}{'Link':<7}{'Ch.':<9}{'Fidelity':<17}"
        f"{'E_N [ebits]':<17}{'R_E [ebits/s]':<18}"
    )
    if has_sub:
        header += f"{'Fid. (acc. sub.)':<17}"
    out.write(header.rstrip() + "\n")
    out.write("-" * len(header.rstrip()) + "\n")
    for row in report.links:
        m = row.metrics
        line = (
            f"{report.scenario:<14}"
            f"{row.link:<7}"
            f"{format_channels(row.channels):<9}"
            f"{m.fidelity:.3f} +/- {m.fidelity_sigma:.3f}  "
            f"{m.log_negativity:.3f} +/- {m.log_negativity_sigma:.3f}  "
            f"{m.ebit_rate:8.1f} +/- {m.ebit_rate_sigma:.1f}"
        )
        if row.fidelity_subtracted is not None:
            line += f"  {row.fidelity_subtracted:.3f}"
        out.write(line + "\n")
    out.write("\n")
    out.write(
        f"integration {report.integration_s:g} s/setting, window {report.window_ns:g} ns, "
        f"seed {report.seed}\n"
    )
    shifted = [d for d in report.timing if d.epoch_shift_bins != 0]
    offsets = [d.offset_bins for d in report.timing]
    out.write(
        f"timing: {len(report.timing)} captures, "
        f"{len(shifted)} with epoch shifts, "
        f"recovered offsets {min(offsets) if offsets else 0}..{max(offsets) if offsets else 0} bins\n"
    )
    out.write(
        f"data plane: peak stream demand "
        f"{report.budget.peak_stream_demand_bps / 1e6:.3f} Mb/s of "
        f"{report.budget.capacity_bps / 1e9:.3f} Gb/s capacity, "
        f"{report.budget.transfers} transfers, "
        f"admitted_all={report.budget.admitted_all}\n"
    )
    return out.getvalue()


CSV_COLUMNS = [
    "alloc",
    "link",
    "channels",
    "fidelity",
    "fidelity_sigma",
    "log_negativity",
    "log_negativity_sigma",
    "coincidence_rate_per_s",
    "coincidence_rate_sigma",
    "ebit_rate_per_s",
    "ebit_rate_sigma",
    "accidental_rate_per_s",
    "fidelity_subtracted",
]


def report_csv(report: RunReport) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in report.links:
        m = row.metrics
        writer.writerow(
            [
                report.scenario,
                row.link,
                format_channels(row.channels),
                repr(m.fidelity),
                repr(m.fidelity_sigma),
                repr(m.log_negativity),
                repr(m.log_negativity_sigma),
                repr(m.coincidence_rate),
                repr(m.coincidence_rate_sigma),
                repr(m.ebit_rate),
                repr(m.ebit_rate_sigma),
                repr(row.accidental_rate_per_s),
                "" if row.fidelity_subtracted is None else repr(row.fidelity_subtracted),
            ]
        )
    return out.getvalue()


def emit_report(report: RunReport, fmt: str, path: str | Path) -> Path:
    """Write one report file: 'text' mirrors the table layout, 'structured'
    is the documented machine-readable JSON schema."""
    path = Path(path)
    if fmt == "text":
        path.write_text(report_text(report))
    elif fmt == "structured":
        path.write_text(report_json(report))
    else:
        raise ValidationError(f"unknown report format {fmt!r}; use text|structured")
    return path


def write_run_dir(report: RunReport, run_dir: str | Path) -> dict[str, Path]:
    """Write report.txt, report.json, and report.csv into a run directory."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "text": emit_report(report, "text", run_dir / "report.txt"),
        "structured": emit_report(report, "structured", run_dir / "report.json"),
    }
    csv_path = run_dir / "report.csv"
    csv_path.write_text(report_csv(report))
    paths["csv"] = csv_path
    return paths


def load_report(run_dir: str | Path) -> RunReport:
    path = Path(run_dir)
    if path.is_dir():
        path = path / "report.json"
    if not path.exists():
        raise ValidationError(f"no report.json under {run_dir}")
    return report_from_dict(json.loads(path.read_text()))
