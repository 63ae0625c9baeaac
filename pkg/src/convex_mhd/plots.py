"""Static figures: seed energies, bad-set diagram, shell spectra."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .solver import _parseval_weights  # noqa: E402


def shell_spectrum(f) -> tuple[np.ndarray, np.ndarray]:
    g = f.grid
    e = _parseval_weights(g) * np.sum(np.abs(f.hat) ** 2, axis=0)
    k = np.rint(np.sqrt(g.k_squared)).astype(int)
    spec = np.bincount(k.ravel(), weights=np.broadcast_to(e, k.shape).ravel())
    return np.arange(spec.size), spec


def emit(states, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    s0 = states[0]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for name, tr in s0.trajectories.items():
        ts = [tr.node_time(i) for i in range(len(tr.nodes))]
        ax.semilogy(ts, tr.energies, label=name)
    ax.set_xlabel("t")
    ax.set_ylabel("energy")
    ax.legend()
    fig.tight_layout()
    paths.append(out / "seed_energy.png")
    fig.savefig(paths[-1], dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 1 + 0.5 * len(states)))
    for s in states:
        for a, b in s.sets.bad:
            ax.plot([a, b], [s.q, s.q], lw=6, solid_capstyle="butt", color="C3")
    ax.set_yticks([s.q for s in states])
    ax.set_ylabel("level")
    ax.set_xlabel("t")
    ax.set_xlim(0, s0.T)
    ax.invert_yaxis()
    fig.tight_layout()
    paths.append(out / "bad_sets.png")
    fig.savefig(paths[-1], dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 3.5))
    for s in states:
        times = s.records.get("times", {}).get("interior") or [0.5 * s0.T]
        t = times[len(times) // 2]
        f = s.at(t)
        k, e = shell_spectrum(f.u)
        ax.loglog(k[1:], np.maximum(e[1:], 1e-300), label=f"u, level {s.q}, t={t:.4g}")
    ax.set_xlabel("|k|")
    ax.set_ylabel("shell energy")
    ax.legend(fontsize=7)
    fig.tight_layout()
    paths.append(out / "spectra.png")
    fig.savefig(paths[-1], dpi=120)
    plt.close(fig)
    return paths
