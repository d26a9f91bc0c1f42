"""PNG renders of Wigner grids, photon-number tables and squeezing scans.

Figures are written to disk only, so the non-interactive Agg backend is used.
"""
from __future__ import annotations

import logging
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd

from spacslab.phase_space import WignerGrid

logger = logging.getLogger(__name__)


def render_wigner(grid: WignerGrid, path: str, title: str = "Wigner function") -> Optional[str]:
    fig = plt.figure(figsize=(7, 6))
    try:
        limit = float(abs(grid.values).max()) or 1.0
        plt.pcolormesh(grid.xs, grid.ys, grid.values.T, shading="auto", cmap="RdBu_r", vmin=-limit, vmax=limit)
        plt.colorbar(label="W(x, y)")
        plt.contour(grid.xs, grid.ys, grid.values.T, levels=[0.0], colors="k", linewidths=0.6)
        plt.title(title)
        plt.xlabel("x")
        plt.ylabel("y")
        plt.gca().set_aspect("equal")
        plt.tight_layout()
        plt.savefig(path)
        return path
    except Exception as exc:
        logger.warning("could not render %s: %s", path, exc)
        return None
    finally:
        plt.close(fig)


def render_photon_numbers(table: pd.DataFrame, path: str, title: str = "Photon-number distribution") -> Optional[str]:
    fig = plt.figure(figsize=(8, 5))
    try:
        if "p_theory" in table:
            plt.bar(table["n"], table["p_theory"], color="#9ecae1", label="theory")
        plt.errorbar(table["n"], table["p_reconstructed"], yerr=table["sigma"], fmt="o", color="k", label="reconstructed")
        plt.title(title)
        plt.xlabel("n")
        plt.ylabel("p(n)")
        plt.legend()
        plt.grid(True, alpha=0.3)
        plt.tight_layout()
        plt.savefig(path)
        return path
    except Exception as exc:
        logger.warning("could not render %s: %s", path, exc)
        return None
    finally:
        plt.close(fig)


def render_squeeze_scan(scan: pd.DataFrame, path: str, eta: float) -> Optional[str]:
    fig = plt.figure(figsize=(9, 5))
    try:
        plt.plot(scan["alpha"], scan["var_0"], label="theta = 0")
        plt.plot(scan["alpha"], scan["var_90"], "--", label="theta = pi/2")
        plt.axhline(0.25, color="k", linewidth=0.8, label="coherent state")
        plt.title(f"Quadrature variances (eta = {eta:g})")
        plt.xlabel("|alpha|")
        plt.ylabel("variance")
        plt.legend()
        plt.grid(True)
        plt.tight_layout()
        plt.savefig(path)
        return path
    except Exception as exc:
        logger.warning("could not render %s: %s", path, exc)
        return None
    finally:
        plt.close(fig)
