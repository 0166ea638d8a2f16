"""Fourth order in both fields under uniform refinement.

Plain corner cells give the cleanest rates; the split corner cells add
four dead corners and a little extra error near the corners of the square.
"""

from stingstokes import convergence_study

for corners in (False, True):
    print("singular corners" if corners else "plain corners")
    print(f"{'n':>4} {'|u-uh|_1':>12} {'order':>6} {'||p-ph||_0':>12} {'order':>6}")
    for r in convergence_study([4, 8, 16], singular_corners=corners):
        vo = f"{r.vel_order:6.2f}" if r.vel_order else " " * 6
        po = f"{r.prs_order:6.2f}" if r.prs_order else " " * 6
        print(f"{r.n:4d} {r.vel_h1_err:12.4e} {vo} {r.prs_l2_err:12.4e} {po}")
