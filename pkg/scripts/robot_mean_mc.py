"""Robot constrained Brownian motion: Monte Carlo mean against the mean-motion ODE
and the exact mean (which keeps the decay of E[cos theta])."""
import argparse

import numpy as np
from scipy.integrate import solve_ivp

from nhdiff.sde import SDEProblem, TimeGrid, ensemble_run, ensemble_stats
from nhdiff.systems import robot


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--paths", type=int, default=20_000)
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=5)
    ap.add_argument("--l", type=float, default=0.2)
    args = ap.parse_args()

    p = robot.RobotParams(l=args.l)
    prob = SDEProblem(5, lambda t, Q: robot.cbm_drift(p, Q), lambda t, Q: robot.frame(p, Q), 2)
    times = [0.25, 0.5, 1.0]
    q0 = np.zeros(5)
    ens = ensemble_run(prob, TimeGrid(0.0, 1.0, args.steps), q0, args.seed, args.paths,
                       record_times=times)
    mean, se, _ = ensemble_stats(ens)
    ode = solve_ivp(lambda t, q: robot.robot_mean_motion_ode(p, q), (0, 1), q0,
                    rtol=1e-12, atol=1e-14, t_eval=times).y.T
    exact = robot.robot_mean_exact(p, q0, np.array(times))
    names = ["psi1", "psi2", "x", "y", "theta"]
    print(f"{'t':>5} {'coord':>6} {'MC mean':>13} {'stderr':>10} {'ODE':>13} {'z(ODE)':>7} "
          f"{'exact':>13} {'z(exact)':>8}")
    for k, t in enumerate(times):
        for i, n in enumerate(names):
            m, s = mean[k + 1, i], se[k + 1, i]
            print(f"{t:5.2f} {n:>6} {m:13.6e} {s:10.3e} {ode[k, i]:13.6e} "
                  f"{abs(m - ode[k, i]) / s:7.2f} {exact[k, i]:13.6e} {abs(m - exact[k, i]) / s:8.2f}")


if __name__ == "__main__":
    main()
