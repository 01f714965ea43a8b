"""Where the parameters and the multiply-accumulates go."""

from teapse import ModelConfig, build_model, count_macs
from teapse.model import count_params, mac_breakdown
from teapse.schedule import PHASES, frozen_groups, lr_trace, phase_apply

cfg = ModelConfig()
_, reg = build_model(cfg)
for group, n in reg.breakdown().items():
    print(f"{group:12s} {n / 1e6:7.2f} M")
print(f"{'total':12s} {count_params(reg) / 1e6:7.2f} M")

per_frame = mac_breakdown(cfg)
for key, n in per_frame.items():
    print(f"{key:20s} {n / 1e6:9.2f} M")
print(f"per second of audio: {count_macs(cfg) / 1e9:.2f} G")

# training phases: stage 1 alone, then stage 2 with stage 1 frozen, then both
for pid in ("P1", "P2", "P3"):
    phase_apply(PHASES[pid], reg)
    print(pid, PHASES[pid].loss, "frozen:", sorted(frozen_groups(reg)) or "-",
          f"trainable {count_params(reg) / 1e6:.2f} M")

print("lr:", lr_trace([1.0, 0.9, 0.95, 0.92, 0.93, 0.91, 0.90]))
