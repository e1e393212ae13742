"""Paired Vlasov/Hartree sweep without interaction.

Point-mass initial data against its coherent-state quantization; the Husimi
distance should scale like sqrt(hbar).
"""
import math

from semikin.harness import RunConfig, run_sweep

cfg = RunConfig.from_dict({"scenario": "free", "hartree": {"hbar": [2.0**-k for k in range(4, 8)]}})
report = run_sweep(cfg)
print(f"{'hbar':>10} {'W2':>10} {'W2/sqrt(hbar)':>14} {'bracket':>22}")
for row in report.rows:
    print(f"{row['hbar']:10.6f} {row['w2']:10.6f} {row['w2'] / math.sqrt(row['hbar']):14.6f} "
          f"[{row['wh_lo']:.4f}, {row['wh_hi'] if row['wh_hi'] is not None else math.inf:.4f}]")
reg = report.regression
print(f"slope {reg['slope']:.5f}, 95% band [{reg['band'][0]:.5f}, {reg['band'][1]:.5f}]")
print("checks:", report.check())
