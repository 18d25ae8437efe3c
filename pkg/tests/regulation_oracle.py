"""Independent closed-loop oracle for the thermostat regulation scenario.

Hand-simulates the thermal model plus the control pipeline without importing
the package, so the acceptance test can compare the real run against an
independently coded model, value for value.

Pipeline timing being modelled (one broker hop = one tick):

    sample at s (after the tick's environment step)
      -> monitor handles it at s+1 and publishes a symptom
      -> analyse s+2, plan s+3, execute dispatch lands the command publish
         at s+5 (symptom + 4)
      -> gateway receives the command at s+6, the device applies it at s+7,
         and the environment step of tick s+7 already uses the new state.

So a rule decision made from the sample of tick s becomes effective at the
environment step of tick s+7, i.e. 6 ticks after the monitor tick m = s+1.

Float arithmetic deliberately mirrors the simulator's expressions so that
trajectories match bit for bit.
"""

START = 28.0
DRIFT = 0.1
AC_RATE = -0.5
ON_THRESHOLD = 23.0  # MEAN(room.temp, 3) > 23 -> AC on
OFF_THRESHOLD = 21.0  # room.temp < 21 -> AC off
ACTUATION_LAG = 6  # monitor tick -> first environment step with the new state


def simulate(horizon: int, mode: str = "periodic", delta: float = 0.3) -> dict:
    """Returns {"trajectory": {tick: temp}, "flips": [(tick, on)],
    "toggles": int, "telemetry": int}."""
    temp = START
    ac_on = False
    last_reported = None
    window: list[float] = []  # reported samples, oldest first
    emitted: dict[int, float] = {}  # sample tick -> reported value
    pending: list[tuple[int, bool]] = []  # (apply tick, state)
    trajectory: dict[int, float] = {}
    flips: list[tuple[int, bool]] = []
    toggles = 0

    for tick in range(horizon + 1):
        # command frames arriving this tick flip the actuator before the step
        due = [p for p in pending if p[0] == tick]
        pending = [p for p in pending if p[0] != tick]
        for _, state in due:
            if state != ac_on:
                toggles += 1
                flips.append((tick, state))
            ac_on = state

        # environment step: value += drift + engaged effects + disturbance
        effects = 0.0
        if ac_on:
            effects += AC_RATE
        temp = temp + (DRIFT + effects + 0.0)
        trajectory[tick] = temp

        # sensor samples the stepped value
        if mode == "periodic":
            emitted[tick] = temp
        else:
            if last_reported is None or abs(temp - last_reported) >= delta:
                emitted[tick] = temp
                last_reported = temp

        # monitor runs at this tick over the sample published at tick-1
        if tick - 1 in emitted:
            window.append(emitted[tick - 1])
        if window:
            recent = window[len(window) - 3 :] if len(window) > 3 else window
            if sum(recent) / len(recent) > ON_THRESHOLD:
                pending.append((tick + ACTUATION_LAG, True))
            if window[-1] < OFF_THRESHOLD:
                pending.append((tick + ACTUATION_LAG, False))

    return {
        "trajectory": trajectory,
        "flips": flips,
        "toggles": toggles,
        "telemetry": len(emitted),
    }


if __name__ == "__main__":
    import sys

    horizon = int(sys.argv[1]) if len(sys.argv) > 1 else 200
    mode = sys.argv[2] if len(sys.argv) > 2 else "periodic"
    result = simulate(horizon, mode)
    values = [v for t, v in sorted(result["trajectory"].items()) if t >= 40]
    print(f"ticks: {horizon}  mode: {mode}")
    print(f"telemetry samples: {result['telemetry']}")
    print(f"toggles: {result['toggles']}  flips: {result['flips'][:6]}...")
    print(f"band for ticks >= 40: [{min(values):.3f}, {max(values):.3f}]")
