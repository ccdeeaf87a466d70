"""Static figures for the latency and energy reports (PNG via the Agg backend)."""
import logging

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from scheduler import TransferClass  # noqa: E402

logger = logging.getLogger(__name__)

CLASS_COLORS = {
    TransferClass.L2_RESIDENT: "lime",
    TransferClass.EXT_1D: "cyan",
    TransferClass.EXT_2D: "magenta",
}


def _figure(title, xlabel, ylabel, size=(10, 6)):
    fig = plt.figure(figsize=size, facecolor="#2b2b2b")
    ax = fig.add_subplot(111)
    ax.set_facecolor("#1e1e1e")
    ax.grid(True, alpha=0.3)
    ax.set_title(title, color="white")
    ax.set_xlabel(xlabel, color="white")
    ax.set_ylabel(ylabel, color="white")
    ax.tick_params(colors="white")
    return fig, ax


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, facecolor=fig.get_facecolor())
    plt.close(fig)
    logger.info("figure written to %s", path)
    return path


def plot_layer_latency(report, path):
    """Per-layer cycles, coloured by transfer class, with the MAC/cycle of each layer."""
    fig, ax = _figure("Per-layer latency", "layer index", "cycles", size=(14, 6))
    idx = np.arange(len(report.layers))
    cycles = np.array([r.total_cycles for r in report.layers])
    colors = [CLASS_COLORS[r.transfer_class] for r in report.layers]
    ax.bar(idx, cycles, color=colors, width=1.0)
    ax2 = ax.twinx()
    ax2.plot(idx, [r.mac_per_cycle for r in report.layers], "y.", ms=4)
    ax2.set_ylabel("MAC/cycle", color="yellow")
    ax2.tick_params(colors="yellow")
    handles = [plt.Rectangle((0, 0), 1, 1, color=c) for c in CLASS_COLORS.values()]
    ax.legend(handles, [k.value for k in CLASS_COLORS], loc="upper right")
    return _save(fig, path)


def plot_budget_comparison(comparison, path):
    fig, ax = _figure("Cycles per transfer class", "budget (L1/L2)", "cycles")
    labels = [b.label for b in comparison.budgets]
    bottom = np.zeros(len(labels))
    for cls, color in CLASS_COLORS.items():
        values = np.array([r.class_breakdown[cls] for r in comparison.reports])
        ax.bar(labels, values, bottom=bottom, color=color, label=cls.value)
        bottom += values
    ax.legend()
    return _save(fig, path)


def plot_energy_table(table, path):
    """Grouped bars of daily energy per scenario and payload policy, log scale."""
    fig, ax = _figure("Daily energy", "scenario", "J/day")
    x = np.arange(len(table))
    ax.bar(x - 0.2, table["images_j_per_day"], width=0.4, color="orange", label="images")
    ax.bar(x + 0.2, table["counters_j_per_day"], width=0.4, color="cyan", label="counters")
    ax.set_xticks(x)
    ax.set_xticklabels(table["scenario"], rotation=20)
    ax.set_yscale("log")
    ax.legend()
    return _save(fig, path)


def plot_battery(result, battery_j, path):
    """Battery level after each wake of a simulation."""
    fig, ax = _figure("Battery", "days", "J")
    days = np.array([w.time_s for w in result.timeline]) / 86400.0
    ax.plot(days, [w.battery_j for w in result.timeline], "r-", lw=2)
    ax.set_ylim(0, battery_j * 1.02)
    return _save(fig, path)
