"""Room impulse responses: from target RT60 to wall reflection to measured decay."""

import numpy as np

from teapse.datagen import (
    RoomSpec,
    calibrate_reflection,
    estimate_rt60,
    rt60_to_reflection,
    schroeder_db,
    simulate_rir,
)

FS = 48000

for target in (0.2, 0.5, 0.9):
    room = RoomSpec((6, 5, 3), (1.5, 1.2, 1.4), (4.1, 3.3, 1.6), target, rir_len=FS)
    sabine = rt60_to_reflection(room)
    beta = calibrate_reflection(room)
    h = simulate_rir(room, beta)
    # Sabine's formula alone lands near the target but not on it
    naive = estimate_rt60(simulate_rir(room, sabine))
    print(f"target {target:.1f}s  sabine beta {sabine:.3f} -> {naive:.3f}s  "
          f"calibrated beta {beta:.3f} -> {estimate_rt60(h):.3f}s")

edc = schroeder_db(h)
for db in (-5, -25, -60):
    idx = np.argmax(edc <= db)
    print(f"decay reaches {db} dB after {idx / FS * 1e3:.0f} ms")
