"""Event-driven Monte Carlo of a free-running single-photon detector.

Timeline, in integer picoseconds so ties between laser pulses and dead-time
expiry are exact:

* laser pulses at ``i * T``, each holding ``k ~ Poisson(mu)`` photons and
  producing a click attempt with probability ``eta_k`` of the model;
* dark click attempts from a homogeneous Poisson process at ``dcr_hz``;
* an attempt at time ``t`` registers only if ``t >= last registration +
  tau`` (non-paralyzable dead time);
* every registered click spawns an afterpulse with probability ``p_ap``,
  registered exactly when the dead time expires; afterpulses spawn
  afterpulses in turn, so one attempt registers a geometric chain.

The ground truth for a run is the number of pulses that attempted a click,
whether or not dead time let them register.
"""
from dataclasses import dataclass

import numba
import numpy as np

from .correction import ApOrder, DetectorParams, afterpulse_forward, click_rate_for_probability
from .fitting import MeasurementPoint, MeasurementSeries, OpticsConfig, mu_to_power
from .models import PdeModel, detection_probability, eta_k, poisson_truncation
from .validation import check_non_negative

PS = 1e-12


@numba.njit(cache=True)
def _register(times, chains, tau_ps, free_at, out):
    """Apply dead time to sorted attempt times; write registered click times to ``out``."""
    n = 0
    for i in range(times.size):
        t = times[i]
        if t >= free_at:
            m = chains[i] + 1
            for j in range(m):
                out[n] = t + j * tau_ps
                n += 1
            free_at = t + m * tau_ps
    return n, free_at


@dataclass(frozen=True)
class SimConfig:
    """One simulated acquisition."""

    model: PdeModel
    mu: float
    detector: DetectorParams
    dcr_hz: float = 0.0
    n_pulses: int = 100_000
    seed: int = 0

    def __post_init__(self):
        check_non_negative(self.mu, "mu")
        check_non_negative(self.dcr_hz, "dcr_hz")
        if int(self.n_pulses) != self.n_pulses or self.n_pulses < 1:
            raise ValueError(f"n_pulses must be a positive integer, got {self.n_pulses}")
        object.__setattr__(self, "n_pulses", int(self.n_pulses))
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must fit in 64 bits")


@dataclass(frozen=True)
class SimResult:
    clicks_total: int
    r_hz: float
    r_dark_hz: float
    true_pulse_detections: int
    duration_s: float
    n_pulses: int

    @property
    def true_probability(self):
        return self.true_pulse_detections / self.n_pulses


class _Timeline:
    """A contiguous acquisition simulated window by window.

    Dead-time state carries across windows; afterpulse chains that run past
    a window edge are counted in the window they land in.
    """

    def __init__(self, model, mu, detector, dcr_hz, seed_seq):
        self.mu = mu
        self.dcr_hz = dcr_hz
        self.period_ps = _to_ps(detector.period)
        self.tau_ps = _to_ps(detector.tau)
        self.p_ap = detector.p_ap
        photon_ss, dark_ss, ap_ss = seed_seq.spawn(3)
        self.photon_rng = np.random.default_rng(photon_ss)
        self.dark_rng = np.random.default_rng(dark_ss)
        self.ap_rng = np.random.default_rng(ap_ss)
        self.etas = _eta_lookup(model, mu)
        self.free_at = np.int64(np.iinfo(np.int64).min // 2)
        self.next_pulse = 0
        self.spill = []

    def run(self, n_pulses):
        """Simulate the next ``n_pulses`` periods; return (clicks inside, attempting pulses)."""
        start_ps = self.next_pulse * self.period_ps
        end_ps = start_ps + n_pulses * self.period_ps
        if self.mu > 0:
            k = self.photon_rng.poisson(self.mu, n_pulses)
            k = np.minimum(k, self.etas.size - 1)
            want = self.photon_rng.random(n_pulses) < self.etas[k]
            pulse_times = (self.next_pulse + np.flatnonzero(want)).astype(np.int64) * self.period_ps
        else:
            want = np.zeros(0, dtype=bool)
            pulse_times = np.zeros(0, dtype=np.int64)
        self.next_pulse += n_pulses
        n_dark = self.dark_rng.poisson(self.dcr_hz * (end_ps - start_ps) * PS)
        dark_times = start_ps + np.floor(
            self.dark_rng.random(n_dark) * (end_ps - start_ps)
        ).astype(np.int64)
        times = np.sort(np.concatenate([pulse_times, dark_times]), kind="stable")
        if self.p_ap > 0:
            chains = self.ap_rng.geometric(1.0 - self.p_ap, times.size).astype(np.int64) - 1
        else:
            chains = np.zeros(times.size, dtype=np.int64)
        out = np.empty(int(times.size + chains.sum()), dtype=np.int64)
        n, self.free_at = _register(times, chains, np.int64(self.tau_ps), np.int64(self.free_at), out)
        clicks = np.concatenate([np.asarray(self.spill, dtype=np.int64), out[:n]])
        inside = int(np.count_nonzero(clicks < end_ps))
        self.spill = clicks[clicks >= end_ps].tolist()
        return inside, int(np.count_nonzero(want))


def _to_ps(seconds):
    return int(round(seconds / PS))


def _eta_lookup(model, mu):
    """``eta_k`` for ``k = 0..K``; photon numbers past ``K`` are clipped to ``K``."""
    k_max = max(1, poisson_truncation(mu, 1e-15)) + 1
    return np.array([0.0] + [eta_k(model, k) for k in range(1, k_max + 1)])


def _seed_sequence(seed):
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(seed) >> 32])


def simulate(config):
    """Simulate a laser-on run and an independent laser-off run of the same length."""
    det = config.detector
    on_ss, off_ss = _seed_sequence(config.seed).spawn(2)
    on = _Timeline(config.model, config.mu, det, config.dcr_hz, on_ss)
    clicks, truth = _run_chunked(on, config.n_pulses)
    off = _Timeline(config.model, 0.0, det, config.dcr_hz, off_ss)
    dark_clicks, _ = _run_chunked(off, config.n_pulses)
    duration = config.n_pulses * on.period_ps * PS
    return SimResult(
        clicks_total=clicks,
        r_hz=clicks / duration,
        r_dark_hz=dark_clicks / duration,
        true_pulse_detections=truth,
        duration_s=duration,
        n_pulses=config.n_pulses,
    )


def _run_chunked(timeline, n_pulses, chunk=1_000_000):
    clicks = truth = 0
    done = 0
    while done < n_pulses:
        n = min(chunk, n_pulses - done)
        c, t = timeline.run(n)
        clicks += c
        truth += t
        done += n
    return clicks, truth


def _window_samples(timeline, n_samples, pulses_per_window, window_s):
    samples = []
    for _ in range(n_samples):
        clicks, _ = timeline.run(pulses_per_window)
        samples.append(clicks / window_s)
    return tuple(samples)


def expected_rates(model, mu, detector, dcr_hz, order=ApOrder.SECOND):
    """Noise-free ``(R, R_dark)`` that the correction maps back to ``P_det(mu)`` exactly.

    The dark rate is the non-paralyzable registered rate of ``dcr_hz`` with
    afterpulses added by the forward afterpulse map.
    """
    p0_dark = dcr_hz * detector.tau / (1.0 + dcr_hz * detector.tau)
    r_dark = afterpulse_forward(p0_dark, detector.p_ap, order) / detector.tau
    r = click_rate_for_probability(detection_probability(model, mu), r_dark, detector, order)
    return r, r_dark


def generate_series(model, mus, detector, optics=None, *, dcr_hz=0.0, n_samples=300,
                    window_s=1.0, seed=0, use_power=True, expected=False, order=ApOrder.SECOND):
    """Synthetic :class:`MeasurementSeries` over a grid of mean photon numbers.

    Each point is one contiguous acquisition cut into ``n_samples`` windows
    of ``window_s`` seconds; the dark point is a laser-off acquisition of the
    same shape.  Points carry the meter power that gives their ``mu`` when
    ``use_power`` is set, else ``mu`` itself.

    ``expected=True`` replaces counting noise by :func:`expected_rates`, all
    samples equal.
    """
    optics = OpticsConfig() if optics is None else optics
    mus = [float(m) for m in mus]
    pulses_per_window = int(round(window_s * detector.nu_l))
    if pulses_per_window < 1:
        raise ValueError("window shorter than one laser period")
    root = _seed_sequence(seed)
    point_ss = root.spawn(len(mus) + 1)
    points = []
    r_dark = None
    for i, mu in enumerate(mus):
        if expected:
            r, r_dark = expected_rates(model, mu, detector, dcr_hz, order)
            samples = (r,) * n_samples
        else:
            tl = _Timeline(model, mu, detector, dcr_hz, point_ss[i])
            samples = _window_samples(tl, n_samples, pulses_per_window, window_s)
        if use_power:
            points.append(MeasurementPoint(samples, power_w=float(mu_to_power(mu, optics, detector.nu_l))))
        else:
            points.append(MeasurementPoint(samples, mu=mu))
    if expected:
        if r_dark is None:
            _, r_dark = expected_rates(model, 0.0, detector, dcr_hz, order)
        dark_samples = (r_dark,) * n_samples
    else:
        tl = _Timeline(model, 0.0, detector, dcr_hz, point_ss[-1])
        dark_samples = _window_samples(tl, n_samples, pulses_per_window, window_s)
    dark = MeasurementPoint(dark_samples)
    return MeasurementSeries(tuple(points), dark, detector, optics)
