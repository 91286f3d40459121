from pathlib import Path
from chgrow_cli.chgrow_cli import cmd_mms
import json
import logging

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s %(name)s %(levelname)s: %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)
logger = logging.getLogger(__name__)

runs_dir = Path(__file__).parent.parent / "runs" / "mms"
runs_dir.mkdir(parents=True, exist_ok=True)

manufactured = {"A": 0.5, "lambda": 0.5, "k": 1}

spatial = {"kind": "spatial", "resolutions": [[31, 1e-5], [63, 1e-5], [127, 1e-5]], "T_final": 0.02}
temporal = {"kind": "temporal", "resolutions": [[255, 4e-5], [255, 2e-5], [255, 1e-5]], "T_final": 0.05}

mms_studies = {
    "constant_plain": {
        "run": True,
        "coefficient": {"family": "constant", "params": {"M": 2.0}},
        "variant": "plain",
        "studies": [spatial, temporal],
    },
    "constant_shifted": {
        "run": True,
        "coefficient": {"family": "constant", "params": {"M": 2.0}},
        "variant": "shifted",
        "studies": [spatial, temporal],
    },
    "bump_plain": {
        "run": True,  # Nonconstant a(u): discrete forcing, temporal order only
        "coefficient": {"family": "rational_bump", "params": {"base": 2.0, "gain": 1.0}},
        "variant": "plain",
        "studies": [temporal],
    },
}

workers = 3

for name, config in mms_studies.items():
    if not config["run"]:
        continue
    study = {
        "name": name,
        "manufactured_solution": manufactured,
        "coefficient": config["coefficient"],
        "variant": config["variant"],
        "studies": config["studies"],
    }
    cmd_mms(study, runs_dir, workers=workers)

    report = json.loads((runs_dir / name / "convergence_report.json").read_text(encoding="utf-8"))
    for entry in report["studies"]:
        logging.info(
            f"{name} {entry['kind']}: spatial order {entry['fitted_spatial_order']}, "
            f"temporal order {entry['fitted_temporal_order']}"
        )
