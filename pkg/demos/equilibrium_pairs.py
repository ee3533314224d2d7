"""Why identical duplicate queries stall at confidence 0.5.

Two queries land on the same object; matching picks one as positive,
the other becomes a negative. If the pair is indistinguishable the two
must share one confidence p, and the combined loss -[log p + log(1-p)]
has zero gradient exactly at p = 0.5 from either side. Give each query
its own parameter and the pair separates cleanly toward (1, 0).

Run:
    python demos/equilibrium_pairs.py
"""

from __future__ import annotations

from dehomodet.losses import equilibrium_sim, pair_loss_grad


def tied_runs() -> None:
    print("tied pair (one shared confidence):")
    print("  analytic gradient at 0.5:", pair_loss_grad(0.5))
    for init in (0.05, 0.3, 0.5, 0.7, 0.95):
        trace = equilibrium_sim(init_p=init, differentiated=False)
        print(f"  start {init:.2f} -> p = {trace.final_p1:.4f}")


def differentiated_runs() -> None:
    print("differentiated pair (independent confidences):")
    for init in (0.3, 0.5, 0.7):
        trace = equilibrium_sim(init_p=init, differentiated=True)
        print(f"  start {init:.2f} -> p1 = {trace.final_p1:.4f}, p2 = {trace.final_p2:.4f}")


def show_trajectory() -> None:
    trace = equilibrium_sim(init_p=0.9, differentiated=False, steps=60)
    print("tied descent from 0.9 (every 10th step):")
    for i in range(0, len(trace.steps), 10):
        p1, _, g1, _ = trace.steps[i]
        print(f"  step {i:3d}  p = {p1:.5f}  dL/dp = {g1:+.5f}")


def main() -> None:
    tied_runs()
    print()
    differentiated_runs()
    print()
    show_trajectory()


if __name__ == "__main__":
    main()
