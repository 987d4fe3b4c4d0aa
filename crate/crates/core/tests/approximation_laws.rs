use mvlab::approximation::{build_slice, simulate_y};
use mvlab::coefficients::{CoefficientSet, FamilySpec};
use mvlab::interpolation::{solve_parameters, synthetic_interpolation};
use mvlab::particles::{simulate, SimulationPlan, Trajectory};

fn plan(family: FamilySpec, n: usize, dt: f64, seed: u64) -> SimulationPlan {
    let d = family.d;
    SimulationPlan::new(
        CoefficientSet::from_family(&family).unwrap(),
        n,
        vec![0.0; d],
        1.0,
        dt,
        seed,
    )
}

#[test]
fn mixture_covariances_respect_ellipticity() {
    let dt = 2f64.powi(-8);
    for d in [1usize, 2] {
        let family = FamilySpec::new("state_holder", d)
            .with("beta", 0.5)
            .with("sigma_bar", 0.3);
        let kappa = CoefficientSet::from_family(&family).unwrap().declared().kappa;
        let traj = simulate(&plan(family, 200, dt, 2)).unwrap();
        for eps in [2.0 * dt, 0.125, 0.5, 1.0] {
            let slice = build_slice(&traj, eps, 1.0).unwrap();
            let floor = kappa * (eps - dt);
            assert!(
                slice.mixture.min_eigenvalue() >= floor * (1.0 - 1e-12),
                "d={d} eps={eps}"
            );
        }
    }
}

#[test]
fn persisted_trajectory_rebuilds_the_same_frozen_particles() {
    let family = FamilySpec::new("state_holder", 1)
        .with("beta", 1.0)
        .with("sigma_bar", 0.5);
    let traj = simulate(&plan(family.clone(), 150, 2f64.powi(-8), 13)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traj.bin");
    traj.save(&path).unwrap();
    let loaded = Trajectory::load(&path).unwrap();

    let mut replay = plan(family, 150, 2f64.powi(-8), 13);
    replay.store_increments = false;
    let replayed = simulate(&replay).unwrap();
    for (eps, t) in [(0.25, 1.0), (0.5, 0.75), (1.0 / 256.0, 0.5)] {
        let live = simulate_y(&traj, eps, t).unwrap();
        assert_eq!(simulate_y(&loaded, eps, t).unwrap(), live);
        assert_eq!(simulate_y(&replayed, eps, t).unwrap(), live);
    }
}

#[test]
fn common_noise_alone_shifts_by_the_common_increment() {
    let sigma_bar = 0.7;
    let family = FamilySpec::new("constant", 1)
        .with("sigma", 0.0)
        .with("sigma_bar", sigma_bar);
    let dt = 2f64.powi(-6);
    let traj = simulate(&plan(family, 20, dt, 1)).unwrap();
    for (eps, t) in [(0.25, 1.0), (0.5, 0.5)] {
        let y = simulate_y(&traj, eps, t).unwrap();
        let (k0, k1) = (traj.step_of(t - eps).unwrap(), traj.step_of(t).unwrap());
        let shift = sigma_bar * (traj.z_at(k1)[0] - traj.z_at(k0)[0]);
        for (i, yi) in y.iter().enumerate() {
            let want = traj.position(k0, i)[0] + shift;
            assert!((yi - want).abs() < 1e-12, "{yi} vs {want}");
        }
    }
}

#[test]
fn smoothness_gain_is_consistent_with_theta_star() {
    for d in 1..=3 {
        for beta in [0.1, 0.4, 0.8, 1.0] {
            let p = solve_parameters(d, beta).unwrap();
            let w0 = p.theta_star * p.s - (1.0 - p.theta_star) * p.u;
            assert!((w0 - p.w0).abs() <= 1e-14, "d={d} beta={beta}");
            let syn = synthetic_interpolation(&p, 1.0, 1.0, 1.0, 1e-9).unwrap();
            assert!(syn.norm.is_finite() && syn.tail <= 1e-9 * syn.norm);
        }
    }
}
