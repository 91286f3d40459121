import json
import logging
from pathlib import Path
from typing import Any

import numpy as np
import polars as pl
from yaspin import yaspin

import utils.utils as ut
from diagnostics.diagnostics import DIAGNOSTIC_COLUMNS, DiagnosticsRecord
from grid_ops.grid_ops import BCClass, Field, Grid1D, make_grid
from integrator.integrator import State, Trajectory

logger = logging.getLogger(__name__)

DIAGNOSTICS_FILE = "diagnostics.csv"
CONFIG_FILE = "config.json"
REPORT_FILE = "estimate_report.json"
MANIFEST_FILE = "manifest.json"
SNAPSHOT_DIR = "snapshots"
FLOAT_FORMAT = {"float_scientific": True, "float_precision": 16}


def snapshot_name(index: int, count: int) -> str:
    """Snapshot path for state `index` of `count`; the width grows past five digits as needed."""
    width = max(5, len(str(max(count - 1, 0))))
    return f"{SNAPSHOT_DIR}/{ut.make_indexed_filename('snapshot', index, width=width)}"


class RunStoreError(OSError):
    pass


class RunStore:
    def __init__(self, run_dir: Path):
        """
        Read and write the files of one run directory.

        Parameters:
            run_dir (Path): Directory of the run; created on first write.
        """
        self.run_dir = Path(run_dir)
        self.written: list[Path] = []

    def _track(self, path: Path):
        if path not in self.written:
            self.written.append(path)

    def write_frame(self, df: pl.DataFrame, name: str) -> Path:
        path = self.run_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        df.write_csv(path, **FLOAT_FORMAT)
        self._track(path)
        return path

    def read_frame(self, name: str) -> pl.DataFrame:
        path = self.run_dir / name
        if not path.is_file():
            raise RunStoreError(f"'{name}' not found in run directory {self.run_dir}")
        try:
            return pl.read_csv(path)
        except Exception as e:
            raise RunStoreError(f"'{name}' in {self.run_dir} is not readable CSV: {e}") from e

    def write_json(self, name: str, payload: dict[str, Any]) -> Path:
        path = self.run_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(ut.to_json(payload), encoding="utf-8")
        self._track(path)
        return path

    def read_json(self, name: str) -> dict[str, Any]:
        path = self.run_dir / name
        if not path.is_file():
            raise RunStoreError(f"'{name}' not found in run directory {self.run_dir}")
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise RunStoreError(f"'{name}' in {self.run_dir} is not valid JSON: {e}") from e

    def write_trajectory(self, traj: Trajectory) -> list[Path]:
        """
        Persist diagnostics rows and one (x, u) snapshot per recorded state.

        Returns:
            list[Path]: Files written, diagnostics first.
        """
        with yaspin(color="blue") as spinner:
            try:
                spinner.text = f"Writing {len(traj.states)} states to {self.run_dir}"
                schema = {
                    c: pl.Boolean if c == "ut_available" else pl.Float64 for c in DIAGNOSTIC_COLUMNS
                }
                diagnostics = pl.DataFrame([r.as_row() for r in traj.records], schema=schema)
                written = [self.write_frame(diagnostics, DIAGNOSTICS_FILE)]

                x = traj.grid.nodes_with_endpoints
                for index, state in enumerate(traj.states):
                    u = np.concatenate([[0.0], state.u.values, [0.0]])
                    name = snapshot_name(index, len(traj.states))
                    written.append(self.write_frame(pl.DataFrame({"x": x, "u": u}), name))

                spinner.text = f"Trajectory written to {self.run_dir}"
                spinner.ok("✅")
                return written

            except Exception as e:
                spinner.text = "Failed to write trajectory"
                spinner.fail("💥")
                logger.error(f"Failed: {e}")
                raise

    def read_records(self) -> list[DiagnosticsRecord]:
        df = self.read_frame(DIAGNOSTICS_FILE)
        missing = [c for c in DIAGNOSTIC_COLUMNS if c not in df.columns]
        if missing:
            raise RunStoreError(f"{DIAGNOSTICS_FILE} in {self.run_dir} is missing columns {missing}")
        try:
            return [DiagnosticsRecord.from_row(row) for row in df.iter_rows(named=True)]
        except (TypeError, ValueError, KeyError) as e:
            raise RunStoreError(f"{DIAGNOSTICS_FILE} in {self.run_dir} has bad values: {e}") from e

    def read_trajectory(self) -> Trajectory:
        """Rebuild a Trajectory from the run's config echo, diagnostics and snapshots."""
        config = self.read_json(CONFIG_FILE)
        records = self.read_records()
        try:
            grid = make_grid(int(config["grid"]["n_interior"]))
            dt = float(config["scheme"]["dt"])
            cadence = int(config["scheme"]["cadence"])
        except (KeyError, TypeError, ValueError) as e:
            raise RunStoreError(f"{CONFIG_FILE} in {self.run_dir} lacks grid/scheme settings: {e}") from e

        states = [
            State(rec.t, self._read_snapshot(grid, index, len(records)), None, rec.ut_Hm1_sq_integral)
            for index, rec in enumerate(records)
        ]
        return Trajectory(states=states, records=records, config=config, cadence=cadence, dt=dt)

    def _read_snapshot(self, grid: Grid1D, index: int, count: int) -> Field:
        name = snapshot_name(index, count)
        df = self.read_frame(name)
        if "u" not in df.columns or df.height != grid.n_interior + 2:
            raise RunStoreError(f"Snapshot {name} does not match a grid of {grid.n_interior} nodes")
        try:
            return Field(grid, df["u"].cast(pl.Float64).to_numpy()[1:-1], BCClass.PINNED)
        except (ValueError, FloatingPointError) as e:
            raise RunStoreError(f"Snapshot {name} has bad values: {e}") from e

    def write_manifest(self, payload: dict[str, Any]) -> Path:
        """
        Checksum every tracked file and write manifest.json atomically, last.
        """
        checksums = {
            str(path.relative_to(self.run_dir)): ut.file_checksum(path)
            for path in self.written
            if path.name != MANIFEST_FILE
        }
        path = self.run_dir / MANIFEST_FILE
        ut.atomic_write_text(path, ut.to_json({**payload, "checksums": checksums}))
        logger.info(f"Manifest written with {len(checksums)} checksums: {path}")
        return path
