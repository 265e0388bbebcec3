"""
Radio Link Models

Per-technology link models for Bluetooth 5 and Wize:
- frame airtime
- log-distance path loss with Gaussian shadowing
- reception decisions against receiver sensitivity
- end-to-end latency composition

Profiles ship as key-value files under config/profiles so calibration
edits need no code change.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Tuple

import structlog
from scipy.stats import norm

from .exceptions import RadioModelError, ScenarioValidationError
from .kvfile import as_float, as_int, read_kv_file, reject_unknown
from .sim_engine import RngStream

logger = structlog.get_logger()

WIZE_CARRIER_FREQUENCY = 169_431_250
WIZE_TX_POWER = 27.0
WIZE_DATA_RATES = (2400, 6400)
# Shadowing is looked up and drawn below this distance as if at 1 m
REFERENCE_DISTANCE = 1.0


class Technology(str, Enum):
    BLE5 = "BLE5"
    WIZE = "WIZE"


class Modulation(str, Enum):
    GFSK = "GFSK"
    FOURGFSK = "4GFSK"
    BLE_CODED = "BLE-coded"


@dataclass(frozen=True)
class RadioProfile:
    """
    Physical/link parameters of one technology at one data rate.

    Attributes:
        technology: BLE5 or WIZE
        carrier_frequency: Hz
        data_rate: bits/second
        tx_power: dBm
        rx_sensitivity: dBm
        nominal_range: Datasheet range in meters (metadata)
        modulation: Line coding
        tx_current: mA drawn while transmitting (metadata)
        preamble_overhead: Bits sent ahead of the payload
    """

    technology: Technology
    carrier_frequency: float
    data_rate: int
    tx_power: float
    rx_sensitivity: float
    nominal_range: float
    modulation: Modulation
    tx_current: float
    preamble_overhead: int = 0

    def __post_init__(self):
        if self.data_rate <= 0:
            raise RadioModelError(f"data_rate must be positive, got {self.data_rate}")
        if self.technology is Technology.WIZE and self.data_rate not in WIZE_DATA_RATES:
            raise RadioModelError(f"Wize data_rate must be one of {WIZE_DATA_RATES}, got {self.data_rate}")
        if self.preamble_overhead < 0:
            raise RadioModelError("preamble_overhead must be >= 0")

    @property
    def matches_field_setup(self) -> bool:
        """True for the Wize module configuration used in the field trials."""
        if self.technology is not Technology.WIZE:
            return True
        return self.carrier_frequency == WIZE_CARRIER_FREQUENCY and self.tx_power == WIZE_TX_POWER

    @property
    def link_budget(self) -> float:
        return self.tx_power - self.rx_sensitivity


@dataclass(frozen=True)
class LinkModelParams:
    """
    Propagation parameters.

    Attributes:
        path_loss_exponent: Log-distance exponent, in [1.6, 5]
        reference_loss_db: Loss at 1 m
        shadowing_sigma: Gaussian shadowing std-dev in dB
        disruption_windows: (start, end) spans with reception forced off
        motion_loss_db_per_m: Extra loss per meter driven beyond the
            coherence distance during one frame
        coherence_distance: Meters a frame may span before motion loss applies
    """

    path_loss_exponent: float
    reference_loss_db: float
    shadowing_sigma: float = 0.0
    disruption_windows: Tuple[Tuple[float, float], ...] = field(default_factory=tuple)
    motion_loss_db_per_m: float = 0.0
    coherence_distance: float = 0.0

    def __post_init__(self):
        if not 1.6 <= self.path_loss_exponent <= 5.0:
            raise RadioModelError(f"path_loss_exponent must be in [1.6, 5], got {self.path_loss_exponent}")
        if self.shadowing_sigma < 0:
            raise RadioModelError("shadowing_sigma must be >= 0")
        if self.motion_loss_db_per_m < 0 or self.coherence_distance < 0:
            raise RadioModelError("motion loss parameters must be >= 0")

    def in_disruption(self, t: float) -> bool:
        return any(start <= t <= end for start, end in self.disruption_windows)


@dataclass(frozen=True)
class LatencyModelParams:
    """
    Latency decomposition beyond airtime.

    fixed_overhead lumps serial transfer and stack processing; the
    rendezvous terms model BLE advertising/scan alignment and are only
    used for BLE5.
    """

    fixed_overhead: float
    rendezvous_mean: float = 0.0
    rendezvous_jitter: float = 0.0
    applies_to: Technology = Technology.WIZE

    def __post_init__(self):
        if min(self.fixed_overhead, self.rendezvous_mean, self.rendezvous_jitter) < 0:
            raise RadioModelError("latency parameters must be non-negative")
        if self.rendezvous_jitter > self.rendezvous_mean:
            raise RadioModelError("rendezvous_jitter larger than rendezvous_mean gives negative delays")


def airtime(profile: RadioProfile, frame_bytes: int) -> float:
    """
    Seconds the frame occupies the channel.

    Args:
        profile: Transmitter profile
        frame_bytes: Payload size in bytes

    Returns:
        (preamble_overhead + 8·frame_bytes) / data_rate
    """
    if frame_bytes < 0:
        raise RadioModelError(f"frame_bytes must be >= 0, got {frame_bytes}")
    return (profile.preamble_overhead + 8 * frame_bytes) / profile.data_rate


def path_loss_db(params: LinkModelParams, d: float, rng: Optional[RngStream] = None) -> float:
    """
    Log-distance path loss.

    Args:
        params: Propagation parameters
        d: Distance in meters (> 0)
        rng: Shadowing stream ("radio-loss"); None gives the median loss

    Returns:
        reference_loss_db + 10·n·log10(d), plus one shadowing draw when sigma > 0
    """
    if not d > 0:
        raise RadioModelError(f"distance must be positive, got {d}")
    loss = params.reference_loss_db + 10.0 * params.path_loss_exponent * math.log10(d)
    if params.shadowing_sigma > 0 and rng is not None:
        loss += rng.normal(0.0, params.shadowing_sigma)
    return loss


def motion_loss_db(params: LinkModelParams, moved: float) -> float:
    """Penalty for a frame spanning `moved` meters of road."""
    excess = moved - params.coherence_distance
    return params.motion_loss_db_per_m * excess if excess > 0 else 0.0


def link_margin_db(profile: RadioProfile, params: LinkModelParams, d: float, moved: float = 0.0) -> float:
    """Deterministic margin: tx_power - median path loss - motion loss - rx_sensitivity."""
    return profile.tx_power - path_loss_db(params, d) - motion_loss_db(params, moved) - profile.rx_sensitivity


def reception_decision(
    profile: RadioProfile,
    params: LinkModelParams,
    d: float,
    t: float,
    rng: Optional[RngStream],
    moved: float = 0.0,
) -> bool:
    """
    Whether a frame sent at time t over distance d is received.

    The shadowing draw is consumed even inside a disruption window, so
    runs that differ only in their windows stay aligned draw for draw.

    Args:
        profile: Transmitter/receiver profile
        params: Propagation parameters
        d: Distance in meters (> 0)
        t: Transmission time
        rng: Shadowing stream
        moved: Meters the vehicle drives during the frame

    Returns:
        False inside a disruption window, otherwise margin >= 0
    """
    loss = path_loss_db(params, d, rng) + motion_loss_db(params, moved)
    if params.in_disruption(t):
        return False
    return profile.tx_power - loss >= profile.rx_sensitivity


def reception_probability(
    profile: RadioProfile,
    params: LinkModelParams,
    d: float,
    moved: float = 0.0,
) -> float:
    """
    Closed-form P(received) outside disruption windows.

    Returns:
        Phi(margin / sigma); a step function of margin when sigma == 0
    """
    margin = link_margin_db(profile, params, d, moved)
    if params.shadowing_sigma == 0:
        return 1.0 if margin >= 0 else 0.0
    return float(norm.cdf(margin / params.shadowing_sigma))


def effective_range(profile: RadioProfile, params: LinkModelParams, moved: float = 0.0) -> float:
    """Distance where the deterministic margin crosses 0."""
    budget = profile.link_budget - params.reference_loss_db - motion_loss_db(params, moved)
    return 10.0 ** (budget / (10.0 * params.path_loss_exponent))


def end_to_end_latency(
    profile: RadioProfile,
    latency_params: LatencyModelParams,
    frame_bytes: int,
    rng: Optional[RngStream] = None,
) -> float:
    """
    Transmission-to-reception delay of one frame.

    WIZE: airtime + fixed_overhead.
    BLE5: airtime + fixed_overhead + rendezvous drawn uniformly from
    [mean - jitter, mean + jitter] ("ble-latency" stream).

    Raises:
        RadioModelError: If the latency parameters belong to another technology
    """
    if latency_params.applies_to is not profile.technology:
        raise RadioModelError(
            f"latency parameters for {latency_params.applies_to.value} "
            f"applied to a {profile.technology.value} profile"
        )
    delay = airtime(profile, frame_bytes) + latency_params.fixed_overhead
    if profile.technology is Technology.BLE5:
        low = latency_params.rendezvous_mean - latency_params.rendezvous_jitter
        high = latency_params.rendezvous_mean + latency_params.rendezvous_jitter
        delay += rng.uniform(low, high) if rng is not None else latency_params.rendezvous_mean
    return delay


def tx_energy_ratio(a: RadioProfile, b: RadioProfile) -> float:
    """Transmit current of a relative to b (Wize vs BLE is 20:1)."""
    return a.tx_current / b.tx_current


# Profile files

@dataclass(frozen=True)
class ProfileBundle:
    """Everything one profile file defines."""

    profile: RadioProfile
    link: LinkModelParams
    latency: LatencyModelParams


PROFILE_KEYS = {
    "radio.technology", "radio.carrier_frequency", "radio.data_rate", "radio.tx_power",
    "radio.rx_sensitivity", "radio.nominal_range", "radio.modulation", "radio.tx_current",
    "radio.preamble_overhead",
    "link.path_loss_exponent", "link.reference_loss_db", "link.shadowing_sigma",
    "link.motion_loss_db_per_m", "link.coherence_distance",
    "latency.fixed_overhead", "latency.rendezvous_mean", "latency.rendezvous_jitter",
}


def profile_filename(technology: Technology, data_rate: Optional[int] = None) -> str:
    """ble5.conf, wize_2400.conf or wize_6400.conf."""
    if technology is Technology.BLE5:
        return "ble5.conf"
    return f"wize_{data_rate}.conf"


def load_profile(path: str | Path) -> ProfileBundle:
    """
    Load a radio profile file.

    Args:
        path: Profile .conf file

    Returns:
        ProfileBundle with radio, link and latency parameters

    Raises:
        ScenarioParseError: Malformed line or unknown key
        ScenarioValidationError: Missing or invalid field
    """
    source = str(path)
    entries = read_kv_file(path)
    reject_unknown(entries, PROFILE_KEYS, source)

    def raw(key: str, default: Optional[str] = None) -> str:
        if key in entries:
            return entries[key].raw
        if default is None:
            raise ScenarioValidationError(key, "missing", source)
        return default

    try:
        technology = Technology(raw("radio.technology").upper())
    except ValueError:
        raise ScenarioValidationError("radio.technology", f"unknown technology {raw('radio.technology')!r}", source) from None
    try:
        modulation = Modulation(raw("radio.modulation"))
    except ValueError:
        raise ScenarioValidationError("radio.modulation", f"unknown modulation {raw('radio.modulation')!r}", source) from None

    try:
        bundle = ProfileBundle(
            profile=RadioProfile(
                technology=technology,
                carrier_frequency=as_float("radio.carrier_frequency", raw("radio.carrier_frequency"), source),
                data_rate=as_int("radio.data_rate", raw("radio.data_rate"), source),
                tx_power=as_float("radio.tx_power", raw("radio.tx_power"), source),
                rx_sensitivity=as_float("radio.rx_sensitivity", raw("radio.rx_sensitivity"), source),
                nominal_range=as_float("radio.nominal_range", raw("radio.nominal_range"), source),
                modulation=modulation,
                tx_current=as_float("radio.tx_current", raw("radio.tx_current"), source),
                preamble_overhead=as_int("radio.preamble_overhead", raw("radio.preamble_overhead", "0"), source),
            ),
            link=LinkModelParams(
                path_loss_exponent=as_float("link.path_loss_exponent", raw("link.path_loss_exponent"), source),
                reference_loss_db=as_float("link.reference_loss_db", raw("link.reference_loss_db"), source),
                shadowing_sigma=as_float("link.shadowing_sigma", raw("link.shadowing_sigma", "0"), source),
                motion_loss_db_per_m=as_float("link.motion_loss_db_per_m", raw("link.motion_loss_db_per_m", "0"), source),
                coherence_distance=as_float("link.coherence_distance", raw("link.coherence_distance", "0"), source),
            ),
            latency=LatencyModelParams(
                fixed_overhead=as_float("latency.fixed_overhead", raw("latency.fixed_overhead"), source),
                rendezvous_mean=as_float("latency.rendezvous_mean", raw("latency.rendezvous_mean", "0"), source),
                rendezvous_jitter=as_float("latency.rendezvous_jitter", raw("latency.rendezvous_jitter", "0"), source),
                applies_to=technology,
            ),
        )
    except RadioModelError as e:
        raise ScenarioValidationError("profile", str(e), source) from e

    logger.debug("Profile loaded", path=source, technology=technology.value, data_rate=bundle.profile.data_rate)
    return bundle
