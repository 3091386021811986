"""Tracking error against the sampling time.

The loop starts on the reference, so the remaining error is the mismatch
between the Euler model the controller inverts and the sampled plant.  On
this maneuver it falls off faster than linearly as ``Ts`` shrinks.

    python demos/ts_sweep.py
"""

from flatdisc.sim import SimConfig, sweep


def main():
    cfg = SimConfig(perturbation=[0.0, 0.0, 0.0], duration=6.0)
    rows = sweep(cfg, [0.1, 0.05, 0.02])
    print(f"{'Ts':>6} {'scheme':>9} {'rms [m]':>10} {'max [m]':>10}")
    for r in rows:
        print(f"{r['Ts']:>6.2f} {r['scheme']:>9} {r['rms_flat']:>10.3e} {r['max_flat']:>10.3e}")


if __name__ == "__main__":
    main()
