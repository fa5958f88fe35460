"""Reeds-Shepp shortest paths for a forward/reverse car with bounded curvature.

Classic closed-form enumeration of the CSC / CCC / CCCC / CCSC / CCSCC word
families with timeflip, reflection, and reversal symmetries. Segments carry a
steer in {L, S, R} and a signed length (negative means reverse); all formulas
work in unit-turning-radius coordinates and are rescaled on output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

L, S, R = 1, 0, -1
_EPS = 1e-10


def _mod2pi(x: float) -> float:
    v = math.fmod(x, 2.0 * math.pi)
    if v < -math.pi:
        v += 2.0 * math.pi
    elif v > math.pi:
        v -= 2.0 * math.pi
    return v


def _polar(x: float, y: float):
    return math.hypot(x, y), math.atan2(y, x)


@dataclass(frozen=True)
class RSPath:
    """One feasible word: parallel tuples of steers and signed unit lengths."""

    steers: tuple
    lengths: tuple
    total: float  # sum of |length|, unit radius

    def scaled_lengths(self, radius: float) -> tuple:
        return tuple(l * radius for l in self.lengths)


def _lsl(x, y, phi):
    u, t = _polar(x - math.sin(phi), y - 1.0 + math.cos(phi))
    if t >= -_EPS:
        v = _mod2pi(phi - t)
        if v >= -_EPS:
            return t, u, v
    return None


def _lsr(x, y, phi):
    u1, t1 = _polar(x + math.sin(phi), y - 1.0 - math.cos(phi))
    u1 = u1 * u1
    if u1 >= 4.0:
        u = math.sqrt(u1 - 4.0)
        t = _mod2pi(t1 + math.atan2(2.0, u))
        v = _mod2pi(t - phi)
        if t >= -_EPS and v >= -_EPS:
            return t, u, v
    return None


def _lrl(x, y, phi):
    u1, theta = _polar(x - math.sin(phi), y - 1.0 + math.cos(phi))
    if u1 <= 4.0:
        u = -2.0 * math.asin(0.25 * u1)
        t = _mod2pi(theta + 0.5 * u + math.pi)
        v = _mod2pi(phi - t + u)
        if t >= -_EPS and u <= _EPS:
            return t, u, v
    return None


def _tau_omega(u, v, xi, eta, phi):
    delta = _mod2pi(u - v)
    a = math.sin(u) - math.sin(delta)
    b = math.cos(u) - math.cos(delta) - 1.0
    t1 = math.atan2(eta * a - xi * b, xi * a + eta * b)
    t2 = 2.0 * (math.cos(delta) - math.cos(v) - math.cos(u)) + 3.0
    tau = _mod2pi(t1 + math.pi) if t2 < 0 else _mod2pi(t1)
    return tau, _mod2pi(tau - u + v - phi)


def _lrlrn(x, y, phi):
    # L+ R+ L- R- with |second| == |third|
    xi = x + math.sin(phi)
    eta = y - 1.0 - math.cos(phi)
    rho = 0.25 * (2.0 + math.hypot(xi, eta))
    if rho <= 1.0:
        u = math.acos(rho)
        t, v = _tau_omega(u, -u, xi, eta, phi)
        if t >= -_EPS and v <= _EPS:
            return t, u, v
    return None


def _lrlrp(x, y, phi):
    # L+ R- L- R+ with equal middle magnitudes
    xi = x + math.sin(phi)
    eta = y - 1.0 - math.cos(phi)
    rho = (20.0 - xi * xi - eta * eta) / 16.0
    if 0.0 <= rho <= 1.0:
        u = -math.acos(rho)
        if u >= -0.5 * math.pi:
            t, v = _tau_omega(u, u, xi, eta, phi)
            if t >= -_EPS and v >= -_EPS:
                return t, u, v
    return None


def _lrsl(x, y, phi):
    xi = x - math.sin(phi)
    eta = y - 1.0 + math.cos(phi)
    rho, theta = _polar(xi, eta)
    if rho >= 2.0:
        r = math.sqrt(rho * rho - 4.0)
        u = 2.0 - r
        t = _mod2pi(theta + math.atan2(r, -2.0))
        v = _mod2pi(phi - 0.5 * math.pi - t)
        if t >= -_EPS and u <= _EPS and v <= _EPS:
            return t, u, v
    return None


def _lrsr(x, y, phi):
    xi = x + math.sin(phi)
    eta = y - 1.0 - math.cos(phi)
    rho, theta = _polar(-eta, xi)
    if rho >= 2.0:
        t = theta
        u = 2.0 - rho
        v = _mod2pi(t + 0.5 * math.pi - phi)
        if t >= -_EPS and u <= _EPS and v <= _EPS:
            return t, u, v
    return None


def _lrslr(x, y, phi):
    xi = x + math.sin(phi)
    eta = y - 1.0 - math.cos(phi)
    rho, _ = _polar(xi, eta)
    if rho >= 2.0:
        u = 4.0 - math.sqrt(rho * rho - 4.0)
        if u <= _EPS:
            t = _mod2pi(math.atan2((4.0 - u) * xi - 2.0 * eta, -2.0 * xi + (u - 4.0) * eta))
            v = _mod2pi(t - phi)
            if t >= -_EPS and v >= -_EPS:
                return t, u, v
    return None


def _reflect(word):
    return tuple(-s for s in word)


def _emit(paths, sol, word, lengths):
    if sol is None:
        return
    total = sum(abs(l) for l in lengths)
    if total > _EPS:
        paths.append(RSPath(tuple(word), tuple(lengths), total))


def _four_symmetries(paths, fn, word, x, y, phi, shape):
    """Apply identity / timeflip / reflect / both to one base solution.

    shape maps the raw (t, u, v) triple onto the word's signed lengths.
    """
    for sx, sphi, refl, negate in ((1, 1, False, False), (-1, -1, False, True),
                                   (1, -1, True, False), (-1, 1, True, True)):
        sol = fn(sx * x, (-y if refl else y), sphi * phi)
        if sol is None:
            continue
        lengths = shape(*sol)
        if negate:
            lengths = tuple(-l for l in lengths)
        _emit(paths, sol, _reflect(word) if refl else word, lengths)


def all_paths(x: float, y: float, phi: float) -> list:
    """Every feasible Reeds-Shepp word to (x, y, phi) in unit-radius coordinates."""
    paths = []
    _four_symmetries(paths, _lsl, (L, S, L), x, y, phi, lambda t, u, v: (t, u, v))
    _four_symmetries(paths, _lsr, (L, S, R), x, y, phi, lambda t, u, v: (t, u, v))
    _four_symmetries(paths, _lrl, (L, R, L), x, y, phi, lambda t, u, v: (t, u, v))
    # reversed CCC: solve in the time-reversed frame and flip the word order
    xb = x * math.cos(phi) + y * math.sin(phi)
    yb = x * math.sin(phi) - y * math.cos(phi)
    _four_symmetries(paths, _lrl, (L, R, L), xb, yb, phi, lambda t, u, v: (v, u, t))
    _four_symmetries(paths, _lrlrn, (L, R, L, R), x, y, phi, lambda t, u, v: (t, u, -u, v))
    _four_symmetries(paths, _lrlrp, (L, R, L, R), x, y, phi, lambda t, u, v: (t, u, u, v))
    _four_symmetries(paths, _lrsl, (L, R, S, L), x, y, phi,
                     lambda t, u, v: (t, -0.5 * math.pi, u, v))
    _four_symmetries(paths, _lrsr, (L, R, S, R), x, y, phi,
                     lambda t, u, v: (t, -0.5 * math.pi, u, v))
    _four_symmetries(paths, _lrsl, (L, S, R, L), xb, yb, phi,
                     lambda t, u, v: (v, u, -0.5 * math.pi, t))
    _four_symmetries(paths, _lrsr, (R, S, R, L), xb, yb, phi,
                     lambda t, u, v: (v, u, -0.5 * math.pi, t))
    _four_symmetries(paths, _lrslr, (L, R, S, L, R), x, y, phi,
                     lambda t, u, v: (t, -0.5 * math.pi, u, -0.5 * math.pi, v))
    return paths


def _goal_in_start_frame(start, goal, radius: float):
    dx = goal[0] - start[0]
    dy = goal[1] - start[1]
    c, s = math.cos(start[2]), math.sin(start[2])
    return ((c * dx + s * dy) / radius, (-s * dx + c * dy) / radius,
            _mod2pi(goal[2] - start[2]))


def paths_between(start, goal, radius: float) -> list:
    """All Reeds-Shepp candidates from pose to pose, sorted by metric length."""
    if radius <= 0:
        raise ValueError("turning radius must be positive")
    x, y, phi = _goal_in_start_frame(start, goal, radius)
    paths = all_paths(x, y, phi)
    paths.sort(key=lambda p: (p.total, p.steers))
    return paths


def shortest_length(start, goal, radius: float) -> float:
    """Metric length of the shortest Reeds-Shepp path."""
    if radius <= 0:
        raise ValueError("turning radius must be positive")
    x, y, phi = _goal_in_start_frame(start, goal, radius)
    return _shortest_total(x, y, phi) * radius


def _shortest_total(x: float, y: float, phi: float) -> float:
    """Length-only enumeration; avoids building path objects on hot paths."""
    best = math.inf
    xb = x * math.cos(phi) + y * math.sin(phi)
    yb = x * math.sin(phi) - y * math.cos(phi)
    plans = ((_lsl, False), (_lsr, False), (_lrl, False), (_lrl, True),
             (_lrlrn, False), (_lrlrp, False), (_lrsl, False), (_lrsl, True),
             (_lrsr, False), (_lrsr, True), (_lrslr, False))
    extra = {_lrsl: 0.5 * math.pi, _lrsr: 0.5 * math.pi, _lrslr: math.pi}
    for fn, backwards in plans:
        px, py = (xb, yb) if backwards else (x, y)
        for sx, sphi, refl in ((1, 1, False), (-1, -1, False), (1, -1, True), (-1, 1, True)):
            sol = fn(sx * px, (-py if refl else py), sphi * phi)
            if sol is None:
                continue
            t, u, v = sol
            total = abs(t) + abs(u) + abs(v) + extra.get(fn, 0.0)
            if fn is _lrlrn or fn is _lrlrp:
                total += abs(u)  # four-arc words repeat the middle magnitude
            if total < best:
                best = total
    return 0.0 if math.isinf(best) else best


def heuristic_length(start, goal, radius: float) -> float:
    """Cheap near-metric for search guidance: CSC and CCC families only.

    Slightly above the full Reeds-Shepp metric when a mixed word would win,
    which only biases node ordering, never feasibility.
    """
    x, y, phi = _goal_in_start_frame(start, goal, radius)
    best = math.inf
    cphi = math.cos(phi)
    sphi = math.sin(phi)
    xb = x * cphi + y * sphi
    yb = x * sphi - y * cphi
    for fn, px, py in ((_lsl, x, y), (_lsr, x, y), (_lrl, x, y), (_lrl, xb, yb)):
        for sx, sph, refl in ((1, 1, False), (-1, -1, False), (1, -1, True), (-1, 1, True)):
            sol = fn(sx * px, (-py if refl else py), sph * phi)
            if sol is not None:
                total = abs(sol[0]) + abs(sol[1]) + abs(sol[2])
                if total < best:
                    best = total
    if math.isinf(best):
        best = math.hypot(x, y)
    return best * radius


def integrate(steers, lengths, start=(0.0, 0.0, 0.0)) -> tuple:
    """Analytic endpoint of a unit-radius segment word; used by tests."""
    x, y, th = start
    for steer, l in zip(steers, lengths):
        if steer == S:
            x += l * math.cos(th)
            y += l * math.sin(th)
        elif steer == L:
            x += math.sin(th + l) - math.sin(th)
            y += math.cos(th) - math.cos(th + l)
            th += l
        else:
            x += math.sin(th) - math.sin(th - l)
            y += math.cos(th - l) - math.cos(th)
            th -= l
    return x, y, _mod2pi(th)
