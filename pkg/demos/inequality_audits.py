"""Randomized audits of the functional inequalities, at demo scale."""
from semikin import audits

for name, rep in [
    ("H^-1 vs W2", audits.audit_h1_w2(40, seed=1)),
    ("projection W2", audits.audit_projection_w2(40, seed=1)),
    ("interpolation (n=2, r=inf)", audits.audit_quantum_interpolation(36, seed=1)),
    ("weighted interpolation (n=4, k=2)", audits.audit_weighted_interpolation(36, seed=1)),
]:
    line = f"{name:36s} trials {rep.trials:3d}  max ratio {rep.max_ratio:.4f}  violations {rep.violations}"
    if "bucket_uniform_3x" in rep.extra:
        buckets = rep.bucket_max()
        line += f"  bucket range {min(buckets.values()):.3f}..{max(buckets.values()):.3f}"
    print(line)

rep = audits.audit_toeplitz_norms(trials=4, seed=1)
print("\nToeplitz norms: ||mu||_r, ||OP(mu)||_r, ||W(OP mu)||_r")
for r in rep.records:
    print(f"  hbar {r['hbar']:.4f} r {r['r']:>4}: {r['mu']:.5f} {r['op']:.5f} {r['wigner']:.5f}")
