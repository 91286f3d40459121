from pathlib import Path
from chgrow_cli.chgrow_cli import cmd_sweep
import polars as pl
import logging

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s %(name)s %(levelname)s: %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)
logger = logging.getLogger(__name__)

runs_dir = Path(__file__).parent.parent / "runs"
runs_dir.mkdir(parents=True, exist_ok=True)

# Constant diffusion -ln(1 - q) over the adhesion parameter; points with
# q <= 1 - 1/e have a <= 1 and come back rejected
adhesion_sweep = {
    "name": "khain_sander_q",
    "parameter": "coefficient.params.q",
    "values": [0.5, 0.7, 0.8, 0.865, 0.9, 0.95, 0.99],
    "base": {
        "grid": {"n_interior": 127},
        "scheme": {"scheme": "imex_stabilized", "dt": 1e-5, "cadence": 100},
        "T_final": 0.1,
        "coefficient": {"family": "khain_sander", "params": {"q": 0.9}},
        "variant": "shifted",
        "initial_condition": {"preset": "random_smooth", "modes": 8, "amplitude": 0.5},
        "seed": 7,
    },
}

workers = 4

code = cmd_sweep(adhesion_sweep, runs_dir, workers=workers)

summary = pl.read_csv(runs_dir / adhesion_sweep["name"] / "summary.csv")
logging.info(
    "\n%s",
    summary.select("value", "status", "norm_Linf", "grad_L2", "lyapunov"),
)
if code:
    logger.warning(f"Sweep finished with exit code {code}")
