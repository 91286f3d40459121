from pathlib import Path
from chgrow_cli.chgrow_cli import cmd_check_estimates, cmd_plot, cmd_run
from chgrow_cli.run_config import config_from_dict
import utils.utils as ut
import logging

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s %(name)s %(levelname)s: %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)
logger = logging.getLogger(__name__)

runs_dir = Path(__file__).parent.parent / "runs" / "b1"

# Create folders if they don't exist
runs_dir.mkdir(parents=True, exist_ok=True)

# u0 = 0.5 sin(pi x), a(u) = 2 + u^2/(1 + u^2), plain variant, T = 1
b1_base = {
    "grid": {"n_interior": 127},
    "scheme": {"scheme": "imex_stabilized", "dt": 1e-5, "cadence": 100},
    "T_final": 1.0,
    "coefficient": {"family": "rational_bump", "params": {"base": 2.0, "gain": 1.0}},
    "variant": "plain",
    "initial_condition": {"preset": "scaled_sine", "A": 0.5, "k": 1},
}

b1_runs = {
    "b1_n127": {
        "run": True,  # False skips integration and reuses the stored run
        "overrides": {"grid.n_interior": 127, "scheme.dt": 1e-5},
    },
    "b1_n255": {
        "run": True,
        "overrides": {"grid.n_interior": 255, "scheme.dt": 2.5e-6, "scheme.cadence": 200},
    },
    "b1_n127_linearized": {
        "run": False,  # Scheme agreement check, slow
        "overrides": {"scheme.scheme": "linearized_implicit"},
    },
}

run_dirs = []
for name, config in b1_runs.items():
    raw = dict(b1_base, run_name=name)
    for path, value in config["overrides"].items():
        raw = ut.set_dotted(raw, path, value)

    if config["run"]:
        code = cmd_run(config_from_dict(raw), runs_dir)
        if code:
            logger.error(f"'{name}' exited with {code}")
            continue
    if (runs_dir / name / "manifest.json").is_file():
        run_dirs.append(runs_dir / name)

# Coarse-to-fine grid stability comparison across the stored runs
grid_runs = [d for d in run_dirs if "linearized" not in d.name]
if grid_runs:
    cmd_check_estimates(grid_runs)
    cmd_plot(grid_runs[0], grid_runs[1:])
    logging.info(f"Plots written to {grid_runs[0] / 'plots'}")
