"""Figure rendering for sweep results.

Produces log-scale BER curves from metrics rows, grouped per equalizer and
turbo iteration, with the swept axis (SNR or quantizer resolution) detected
from the data.  Figures are written to files next to the delimited output;
matplotlib is imported lazily with the Agg backend so headless runs work.
"""

from __future__ import annotations

from pathlib import Path

__all__ = ["render_ber_figure"]


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def render_ber_figure(rows, out_path, title: str | None = None) -> Path:
    """Plot BER versus the swept axis for each (equalizer, turbo iteration) group.

    ``rows`` are :class:`turboeq.harness.MetricsRow` records.  Chooses SNR as
    the x-axis when it varies, otherwise the quantizer bit width; one curve
    per equalizer and turbo-iteration pair.  Returns the written path.
    """
    if not rows:
        raise ValueError("no metrics rows to plot")
    plt = _pyplot()

    snrs = sorted({r.snr_db for r in rows})
    bits = sorted({r.bits for r in rows})
    if len(snrs) > 1 or len(bits) == 1:
        x_of = lambda r: r.snr_db
        x_label = "SNR [dB]"
    else:
        x_of = lambda r: r.bits
        x_label = "quantizer bits"

    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    groups = {}
    for r in rows:
        groups.setdefault((r.equalizer, r.turbo_iter), []).append(r)
    for (eq, it), grp in sorted(groups.items()):
        grp = sorted(grp, key=x_of)
        xs = [x_of(r) for r in grp]
        ys = [max(r.ber, 1e-12) for r in grp]
        ax.semilogy(xs, ys, marker="o", label=f"{eq}, iter {it}")
    ax.set_xlabel(x_label)
    ax.set_ylabel("post-decoding BER")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
