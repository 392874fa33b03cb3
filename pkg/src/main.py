"""Main Entry Point for lattice-om

One command-line tool over the library modules:

- gradcheck:  analytic gradients and the symplectic trace identity of a model
- simulate:   one stochastic path on the configured lattice
- mpp:        most probable path by action minimization vs the deterministic flow
- action:     Onsager-Machlup action and rate of a path
- ldp:        tube probabilities over an eps ladder and the eps^2 ln P fit
- smallball:  lambda1 / kappa_p constants, small-ball bounds and a KL Monte Carlo
- kl:         Karhunen-Loève spectrum of the configured noise
- nls-coeffs: G_ijkl and Gbar tables, normal form and nondegeneracy report
- nls-tori:   torus exceedance ladder for the stochastic NLS
- kam-scan:   Diophantine action scan and resonant-measure fit

Every run writes its artifacts plus ``manifest.json`` into the output
directory. Exit status is 0 on success, 2 for invalid input or
configuration and 3 for numerical failures.
"""

import argparse   # For parsing the subcommand and its flags
import itertools  # For the coefficient index tables
import logging    # For --verbose library output
import os         # For output paths
import platform   # For the Python version in the manifest
import sys        # For stderr and the exit status
import time       # For the manifest wall time

import numpy as np
import scipy

# Library modules, one per concern
import gauss_tools
import kam_diag
import ldp_mc
import nls_spectral
import om_path
from config import load_config, output_dir
from errors import DimensionError
from hamiltonian_models import FreeModel, build_model, grad_check, sample_states, symplectic_trace_defect
from lattice_core import LatticeState, PathGrid, WeightSequence, path_distance
from path_io import load_path, save_path, write_json, write_jsonl, write_table
from sde_engine import NoiseModel, SimConfig, grid_steps, make_generator, simulate, simulate_deterministic

logger = logging.getLogger("lattice_om")

SUBCOMMANDS = ("gradcheck", "simulate", "mpp", "action", "ldp", "smallball", "kl",
               "nls-coeffs", "nls-tori", "kam-scan")


def parse_args(argv=None):
    """
    Parse command-line arguments.

    Returns:
        argparse.Namespace: subcommand, config path and the overriding flags
    """
    parser = argparse.ArgumentParser(
        description="Stochastic Hamiltonian lattices: most probable paths, large deviations, NLS tori"
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS, help="What to run")
    parser.add_argument("--config", help="JSON run configuration (default: built-in defaults)")
    parser.add_argument("--out", help="Output directory (default: $LATTICE_OM_OUT or ./out)")
    parser.add_argument("--workers", type=int, help="Worker processes for Monte Carlo (overrides mc.workers)")
    parser.add_argument("--seed", type=int, help="Seed for all randomness (overrides mc.seed)")
    parser.add_argument("--path", help="Path CSV for the action subcommand")
    parser.add_argument("--verbose", action="store_true", help="Log library progress to stderr")
    return parser.parse_args(argv)


# ──────────────────────────────────────────────────────────────
# 🏗️ Building objects from a RunConfig
# ──────────────────────────────────────────────────────────────
class Run:
    """Validated configuration plus the objects every subcommand shares."""

    def __init__(self, cfg, out, seed, workers):
        self.cfg = cfg
        self.out = out
        self.seed = seed
        self.workers = workers
        self.files = []

    def nls(self):
        s = self.cfg.nls
        return nls_spectral.NlsModel(m=s.m, modes=s.modes, a=s.a, p_w=s.p_w, coupling=s.coupling)

    def weights(self):
        if self.cfg.model.name == "nls_modes":
            return self.nls().mode_weights()
        w = self.cfg.weights
        return WeightSequence.box(w.shape, w.decay, w.rho)

    def model(self, weights):
        params = dict(self.cfg.model.params)
        # NLS models take their fields from the nls section, model.params wins
        if self.cfg.model.name == "nls_modes":
            s = self.cfg.nls
            params = {"m": s.m, "modes": s.modes, "a": s.a, "p_w": s.p_w, "coupling": s.coupling, **params}
        return build_model(self.cfg.model.name, weights, **params)

    def noise(self, n):
        s = self.cfg.noise
        # scalar coefficients are broadcast to every site
        return NoiseModel(np.broadcast_to(np.asarray(s.sigma_q, dtype=float), (n,)),
                          np.broadcast_to(np.asarray(s.sigma_p, dtype=float), (n,)),
                          s.epsilon, s.modulation, s.frequency)

    def initial(self, n, angular):
        s = self.cfg.initial
        # missing coordinates start at zero
        q = np.zeros(n) if s.q is None else np.asarray(s.q, dtype=float)
        p = np.zeros(n) if s.p is None else np.asarray(s.p, dtype=float)
        if q.size != n or p.size != n:
            raise DimensionError(f"initial.q/initial.p need {n} entries, got {q.size} and {p.size}")
        return LatticeState(q, p, angular)

    def steps(self):
        g = self.cfg.grid
        # grid.K overrides the step count derived from grid.dt
        return g.K if g.K is not None else grid_steps(g.T, g.dt)

    def sim_config(self):
        g = self.cfg.grid
        return SimConfig(dt=g.T / self.steps(), seed=self.seed, scheme=g.scheme)

    def file(self, name):
        path = os.path.join(self.out, name)
        self.files.append(name)  # Listed in the manifest
        return path

    def json(self, name, obj):
        write_json(obj, self.file(name))

    def path(self, name, path, weights):
        csv_path, sidecar = save_path(path, weights, self.file(name))
        self.files.append(os.path.basename(sidecar))  # The JSON sidecar travels with the CSV
        return csv_path


# ──────────────────────────────────────────────────────────────
# 🧮 Subcommands
# ──────────────────────────────────────────────────────────────
def cmd_gradcheck(run):
    w = run.weights()
    model = run.model(w)
    # 100 seeded states in a bounded region
    states = sample_states(model.n, 100, make_generator(run.seed), angular=model.angular)
    # Central differences against the analytic gradients
    grads = [grad_check(model, x) for x in states]
    # Trace defect, scaled by the size of each state
    defects = [abs(symplectic_trace_defect(model, x, w)) / (1.0 + np.linalg.norm(np.r_[x.q, x.p]))
               for x in states]
    worst = max(grads, key=lambda r: r.max_rel_err)  # Report only the worst state
    report = {
        "model": model.describe(),
        "states": len(states),
        "max_rel_err": worst.max_rel_err,
        "worst_component": worst.worst_component,
        "max_trace_defect": float(max(defects)),
        "passed": bool(worst.max_rel_err <= 1e-5 and max(defects) <= 1e-6),
    }
    run.json("gradcheck.json", report)
    print(f"🔍 gradcheck {model.name}: rel err {report['max_rel_err']:.2e}, "
          f"trace defect {report['max_trace_defect']:.2e}")


def cmd_simulate(run):
    w = run.weights()
    model = run.model(w)
    noise = run.noise(model.n)
    x0 = run.initial(model.n, model.angular)
    # One seeded trajectory on the configured grid
    path = simulate(model, noise, x0, run.cfg.grid.T, run.sim_config())
    run.path("path.csv", path, w)
    # Energy along the path, for the summary
    energy = model.value(np.asarray(path.q), np.asarray(path.p))
    run.json("simulate.json", {
        "model": model.describe(),
        "K": path.K,
        "dt": path.dt,
        "epsilon": noise.epsilon,
        "energy_start": float(energy[0]),
        "energy_end": float(energy[-1]),
    })
    print(f"🎲 simulated {path.K} steps on {path.n} sites")


def cmd_mpp(run):
    w = run.weights()
    model = run.model(w)
    noise = run.noise(model.n)
    x0 = run.initial(model.n, model.angular)
    T, K = run.cfg.grid.T, run.steps()
    # The eps = 0 flow the minimizer should reproduce
    reference = simulate_deterministic(model, x0, T, run.sim_config())

    # Straight-line guess along the initial drift
    fq, fp = model.drift(x0.q, x0.p)
    guess_end = LatticeState(x0.q + T * fq, x0.p + T * fp, x0.angular)
    m = run.cfg.mpp
    guess = om_path.straight_line(x0, guess_end, 0.0, T, K)
    # With both endpoints pinned the guess has to end where the flow ends
    if m.constraint == "fixed_both_endpoints":
        guess = om_path.straight_line(x0, reference.node(K), 0.0, T, K)
    cfg = om_path.MinimizeConfig(max_iters=m.max_iters, grad_tol=m.grad_tol, constraint=m.constraint)
    path, report, iterations = om_path.minimize_action(guess, model, noise, w, cfg)

    # Write both paths and the comparison
    run.path("mpp_path.csv", path, w)
    run.path("deterministic_path.csv", reference, w)
    run.json("mpp_report.json", {
        **report.as_dict(),
        "iterations": iterations,
        "distance_to_deterministic": path_distance(path, reference, w),
        "K": K,
        "constraint": m.constraint,
    })
    print(f"🎯 mpp: action {report.total:.3e}, EL residual {report.el_residual:.3e}")


def cmd_action(run, path_csv=None):
    # A saved path brings its own weights from the sidecar
    if path_csv:
        path, w = load_path(path_csv)
        model = run.model(w)
    # Otherwise measure the deterministic path of the configured model
    else:
        w = run.weights()
        model = run.model(w)
        path = simulate_deterministic(model, run.initial(model.n, model.angular), run.cfg.grid.T,
                                      run.sim_config())
    noise = run.noise(model.n)
    report = om_path.om_action(path, model, noise, w)
    run.json("action.json", {**report.as_dict(), "rate": report.half_total, "K": path.K,
                             "source": path_csv or "deterministic"})
    print(f"📏 action {report.total:.6e} (rate {report.half_total:.6e})")


def cmd_ldp(run):
    w = run.weights()
    model = run.model(w)
    noise = run.noise(model.n)
    s = run.cfg.ldp
    # Tube around a constant-speed drift of one site
    center = ldp_mc.drift_tube_center(model.n, run.cfg.grid.T, run.steps(), s.speed, s.site)
    if not model.angular:
        center = PathGrid(center.t0, center.t1, center.q, center.p, False)
    tube = ldp_mc.TubeSpec(center, s.radius, w)
    # One Monte Carlo estimate per eps level
    estimate = ldp_mc.ldp_estimate(model, noise, tube, s.epsilons, run.cfg.mc.n, run.seed, run.workers)
    write_table(estimate.rows(), ["eps", "hits", "n", "p_hat", "ci_low", "ci_high", "eps2_ln_p"],
                run.file("ldp.csv"))
    # Extrapolated eps^2 ln P against the rate of the tube
    fit = ldp_mc.ldp_scaling_fit(estimate, tube, model, noise, w, infimum=s.infimum)
    summary = {"fit": fit.as_dict(), "radius": s.radius, "n": run.cfg.mc.n}
    # The Gaussian oracle exists only for the free model
    if s.oracle and isinstance(model, FreeModel):
        probs = ldp_mc.oracle_ladder(model, noise, tube, s.epsilons, s.oracle_samples, run.seed)
        intercept, slope, rms, usable = ldp_mc.fit_eps2_log(sorted(s.epsilons, reverse=True), probs)
        summary["oracle"] = {"probabilities": probs, "fitted_neg_rate": intercept, "slope": slope,
                             "residual_rms": rms}
    run.json("ldp.json", summary)
    print(f"📉 ldp: fitted eps^2 ln P -> {fit.fitted_neg_rate:.4f}, rate bound {fit.rate_inf_bound:.4f}")


def cmd_smallball(run):
    s = run.cfg.smallball
    # Ground-state constants for each norm exponent
    constants = []
    for p in s.powers:
        lam = gauss_tools.lambda1(p)
        constants.append({"p": p, "lambda1": lam, "kappa_p": gauss_tools.kappa_p(p, lam)})
    # Standard Brownian motion as the reference case
    brownian = gauss_tools.small_ball_constant_markov(lambda t: np.ones_like(t), 2.0)

    w = run.weights()
    noise = run.noise(w.n)
    # KL sampling of the first site's noise for the Monte Carlo check
    basis = gauss_tools.kl_expand(lambda t: noise.sigma_q_at(t)[..., 0], run.cfg.grid.T,
                                  s.kl_nodes, min(s.kl_modes, s.kl_nodes))
    mc = gauss_tools.small_ball_probability_mc(basis, s.radius, s.samples, run.seed)
    run.json("smallball.json", {
        "constants": constants,
        "brownian": brownian.as_dict(),
        "bound_rho": gauss_tools.small_ball_bound_rho(noise, w),
        "bound_rho_refined": gauss_tools.small_ball_bound_rho(noise, w, refined=True, T=run.cfg.grid.T),
        "mc": {**mc.as_dict(), "radius": s.radius, "eps2_ln_p": s.radius**2 * mc.log_p},
    })
    print(f"🔬 smallball: kappa_2 = {brownian.kappa_p:.6f}, limit {brownian.limit_constant:.6f}")


def cmd_kl(run):
    s = run.cfg.kl
    w = run.weights()
    noise = run.noise(w.n)
    T = run.cfg.grid.T
    # Spectrum of the first site's position noise
    basis = gauss_tools.kl_expand(lambda t: noise.sigma_q_at(t)[..., 0], T, s.nodes, s.modes)
    rows = [(j + 1, float(v)) for j, v in enumerate(basis.eigenvalues)]
    write_table(rows, ["j", "eigenvalue"], run.file("kl.csv"))
    run.json("kl.json", {
        "nodes": s.nodes,
        "modes": basis.k,
        "trace": basis.trace,
        "captured": float(np.sum(basis.eigenvalues)),
        "tail_variance": basis.tail_variance(),
    })
    print(f"🎼 kl: {basis.k} eigenvalues, trace {basis.trace:.6f}")


def cmd_nls_coeffs(run):
    s = run.cfg.nls
    nls = run.nls()
    modes = range(1, s.cutoff + 1)
    # G_ijkl over sorted quadruples, the rest follow by symmetry
    g_rows = [(i, j, k, l, nls_spectral.g_coefficient(i, j, k, l))
              for i, j, k, l in itertools.combinations_with_replacement(modes, 4)]
    write_table(g_rows, ["i", "j", "k", "l", "G"], run.file("nls_g.csv"))
    # Closed-form Gbar next to its quadrature value
    gbar_rows = [(i, j, nls_spectral.birkhoff_gbar(i, j), nls_spectral.gbar_from_quadrature(i, j))
                 for i, j in itertools.combinations_with_replacement(modes, 2)]
    write_table(gbar_rows, ["i", "j", "gbar", "gbar_quadrature"], run.file("nls_gbar.csv"))

    # Normal form of the tangential set and its nondegeneracy checks
    nf = nls_spectral.normal_form(nls, s.tangential, s.cutoff)
    report = nls_spectral.check_nondegeneracy(nf, seed=run.seed)
    run.json("nls_normal_form.json", {
        "tangential": list(nf.tangential),
        "normal_modes": list(nf.normal_modes),
        "alpha": nf.alpha, "beta": nf.beta, "A": nf.A, "B": nf.B,
        "nondegeneracy": report.as_dict(),
    })
    print(f"🌊 nls-coeffs: {len(g_rows)} G values, nondegenerate={report.passed}")


def cmd_nls_tori(run):
    s = run.cfg.nls
    nls = run.nls()
    torus = nls_spectral.TorusSpec(tuple(s.tangential), s.actions)
    noise = run.noise(nls.modes)
    # Exceedance probability of the action deviation at each eps
    levels = nls_spectral.torus_exceedance_ladder(
        nls, torus, noise, s.epsilons, s.threshold, run.cfg.grid.T, run.cfg.mc.n, run.seed,
        dt=run.cfg.grid.T / run.steps(), normal_form_only=s.normal_form_only,
        scheme=run.cfg.grid.scheme, workers=run.workers,
    )
    count = write_jsonl([level.as_record() for level in levels], run.file("nls_tori.jsonl"))
    print(f"🌀 nls-tori: {count} eps levels written")


def cmd_kam_scan(run):
    s = run.cfg.kam
    nls = run.nls()
    tangential = run.cfg.nls.tangential
    if len(s.action_low) != len(tangential):
        raise DimensionError(f"kam.action_low needs {len(tangential)} entries, one per tangential mode")
    nf = nls_spectral.normal_form(nls, tangential, s.cutoff)
    # Diophantine scan of the NLS normal form over the action box
    grid = kam_diag.action_grid(s.action_low, s.action_high, s.points)
    scan = kam_diag.diophantine_scan(nf, grid, s.alpha, s.tau, s.k_cutoff, d=s.d)
    header = [f"I{j}" for j in nf.tangential] + ["admissible"]
    write_table(scan.rows(), header, run.file("kam_scan.csv"))

    # Resonant measure of the identity frequency map, one level per alpha
    toy = kam_diag.ResonanceScan(box=((1.0, 2.0),) * nf.n, k_cutoff=s.k_cutoff,
                                 normal_modes=s.toy_normal_modes, alphas=s.alphas,
                                 samples=s.toy_samples, tau=s.tau, d=s.d)
    toy_omega = np.arange(1, s.toy_normal_modes + 1, dtype=float) ** 2
    levels = kam_diag.resonant_measure_mc(toy, lambda xi: (xi, toy_omega), run.seed)
    summary = {
        "alpha": s.alpha,
        "tau": scan.tau,
        "divisors": scan.divisors,
        "fraction": scan.fraction,
        "ladder": [{"alpha": a, "fraction": float(np.mean(scan.admissible_at(a)))} for a in s.alphas],
        "toy": {"levels": [level.as_dict() for level in levels]},
    }
    # The exponent fit needs hits at three or more alpha levels
    try:
        fit = kam_diag.fit_resonance_exponent(s.alphas, [lv.estimate.p_hat for lv in levels])
        summary["toy"]["fit"] = fit.as_dict()
    except RuntimeError as e:
        logger.warning("resonance exponent fit skipped: %s", e)
    run.json("kam_scan.json", summary)
    print(f"🕸️ kam-scan: admissible fraction {scan.fraction:.4f} at alpha={s.alpha}")


COMMANDS = {
    "gradcheck": cmd_gradcheck,
    "simulate": cmd_simulate,
    "mpp": cmd_mpp,
    "action": cmd_action,
    "ldp": cmd_ldp,
    "smallball": cmd_smallball,
    "kl": cmd_kl,
    "nls-coeffs": cmd_nls_coeffs,
    "nls-tori": cmd_nls_tori,
    "kam-scan": cmd_kam_scan,
}


def write_manifest(run, subcommand, started):
    run.json("manifest.json", {
        "subcommand": subcommand,
        "config": run.cfg.as_dict(),
        "seed": run.seed,
        "workers": run.workers,
        "versions": {"python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
        "wall_time_s": time.time() - started,
        "files": sorted(set(run.files)),
    })


def main(argv=None):
    """
    Validate the configuration, run one subcommand and write its manifest.

    Returns:
        int: 0 on success, 2 for invalid input, 3 for numerical failures
    """
    # Parse command-line arguments (subcommand, config path, overrides)
    args = parse_args(argv)
    # Library modules log through the standard logging tree
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.time()  # Start timing for the manifest
    try:
        # Load and strictly validate the run configuration
        print(f"📥 Loading configuration {args.config or '(defaults)'}")
        cfg = load_config(args.config)
        # Command-line flags override the config values
        seed = cfg.mc.seed if args.seed is None else args.seed
        workers = cfg.mc.workers if args.workers is None else args.workers
        if workers < 1:
            raise ValueError("--workers must be >= 1")
        run = Run(cfg, output_dir(args.out), seed, workers)
        os.makedirs(run.out, exist_ok=True)
        # Dispatch to the subcommand handler
        print(f"🧮 Running {args.subcommand}")
        if args.subcommand == "action":
            cmd_action(run, args.path)
        else:
            COMMANDS[args.subcommand](run)
        # Record config, seed, versions and files written
        write_manifest(run, args.subcommand, started)
    # Invalid input or configuration
    except ValueError as e:
        print(f"❌ {e}", file=sys.stderr)
        return 2
    # Numerical failure: blow-up, stalled optimizer, too little data
    except RuntimeError as e:
        print(f"❌ {e}", file=sys.stderr)
        return 3
    print(f"✅ {args.subcommand} complete, outputs in {run.out}")
    return 0


# Entry point: only execute main() when script is run directly
if __name__ == "__main__":
    sys.exit(main())
