import logging
from pathlib import Path

import numpy as np
import plotly.graph_objects as go

from diagnostics.diagnostics import holder_modulus_space, holder_modulus_time
from integrator.integrator import Trajectory
from run_store.run_store import RunStore

logger = logging.getLogger(__name__)

PLOT_DIR = "plots"
NORM_COLUMNS = ("norm_L2", "norm_Linf", "norm_Hm1", "grad_L2", "lyapunov")


def _write(fig: go.Figure, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.write_html(path, include_plotlyjs=True, full_html=True, config={"staticPlot": True})
    logger.info(f"Plot written: {path}")
    return path


def norms_figure(traj: Trajectory) -> go.Figure:
    t = traj.times
    fig = go.Figure()
    for name in NORM_COLUMNS:
        values = [getattr(r, name) for r in traj.records]
        fig.add_trace(go.Scatter(x=t, y=values, mode="lines", name=name))
    fig.update_layout(title="Norms and Lyapunov functional", xaxis_title="t", yaxis_title="value")
    return fig


def final_profile_figure(traj: Trajectory) -> go.Figure:
    x = traj.grid.nodes_with_endpoints
    fig = go.Figure()
    for label, state in (("initial", traj.states[0]), ("final", traj.final)):
        u = np.concatenate([[0.0], state.u.values, [0.0]])
        fig.add_trace(go.Scatter(x=x, y=u, mode="lines", name=f"{label} (t={state.t:.4g})"))
    fig.update_layout(title="Profile", xaxis_title="x", yaxis_title="u")
    return fig


def holder_figure(trajectories: list[Trajectory]) -> go.Figure:
    """
    Space (1/2) and time (1/8) Holder moduli against h. A single run is plotted
    per snapshot instead, against t.
    """
    fig = go.Figure()
    if len(trajectories) == 1:
        traj = trajectories[0]
        space = [holder_modulus_space(s.u, 0.5) for s in traj.states]
        grad = [r.grad_L2 for r in traj.records]
        fig.add_trace(go.Scatter(x=traj.times, y=space, mode="lines", name="space modulus (1/2)"))
        fig.add_trace(go.Scatter(x=traj.times, y=grad, mode="lines", name="|Du|"))
        fig.update_layout(title="Space Holder modulus", xaxis_title="t", yaxis_title="modulus")
        return fig

    ordered = sorted(trajectories, key=lambda tr: tr.grid.h)
    h = [tr.grid.h for tr in ordered]
    space = [max(holder_modulus_space(s.u, 0.5) for s in tr.states) for tr in ordered]
    time = [holder_modulus_time(tr, 0.125) for tr in ordered]
    fig.add_trace(go.Scatter(x=h, y=space, mode="lines+markers", name="space modulus (1/2)"))
    fig.add_trace(go.Scatter(x=h, y=time, mode="lines+markers", name="time modulus (1/8)"))
    fig.update_layout(
        title="Holder moduli under refinement",
        xaxis_title="h",
        yaxis_title="modulus",
        xaxis_type="log",
    )
    return fig


def emit_plots(store: RunStore, compare: list[RunStore] | None = None) -> list[Path]:
    """
    Write the norm, profile and Holder plots of a run as standalone HTML
    documents with data and plotting runtime embedded.

    Raises:
        RunStoreError: When a run directory lacks readable diagnostics or snapshots.
    """
    traj = store.read_trajectory()
    others = [other.read_trajectory() for other in compare or []]
    plot_dir = store.run_dir / PLOT_DIR
    return [
        _write(norms_figure(traj), plot_dir / "norms.html"),
        _write(final_profile_figure(traj), plot_dir / "final_profile.html"),
        _write(holder_figure([traj, *others]), plot_dir / "holder_modulus.html"),
    ]
