use mvlab::approximation::snap_to_grid;
use mvlab::bessel::GridSpec;
use mvlab::coefficients::FamilySpec;
use mvlab::experiments::*;
use mvlab::interpolation::dyadic_grid;
use mvlab::particles::simulate;

fn small(family: FamilySpec) -> ScenarioConfig {
    let mut c = ScenarioConfig::desk(family);
    c.n = 300;
    c.dt = 2f64.powi(-9);
    c.replications = 4;
    c.seed = 3;
    c.grid = Some(GridSpec::new(1, 12.0, 2048).unwrap());
    c.params = ParamSelection::Exponents { r_conj: 10.0, s: 1.0 };
    c
}

fn holder() -> FamilySpec {
    FamilySpec::new("state_holder", 1)
        .with("beta", 1.0)
        .with("sigma_bar", 0.5)
}

#[test]
fn hoelder_constant_moment_is_stable_in_time() {
    let mut c = small(holder());
    c.n = 1000;
    c.replications = 16;
    c.t_eval = vec![0.25, 0.5, 1.0];
    c.quantities = Quantities {
        displacement: false,
        mixture_norm: false,
        error_norm: true,
    };
    let report = run_rate_experiment(&c).unwrap();
    let spread = report.c_bar_moment_spread.unwrap();
    assert!(
        spread < 2.0,
        "moments {:?}",
        report.per_t.iter().map(|p| p.c_bar_moment).collect::<Vec<_>>()
    );
}

#[test]
fn emergence_lag_lies_on_the_dyadic_grid() {
    let mut c = small(holder());
    c.t_eval = vec![0.5, 1.0];
    c.eps_grid.n_max = 5;
    let report = run_emergence_experiment(&c).unwrap();
    let alpha0 = report.params.alpha0;
    for p in &report.per_t {
        let grid = dyadic_grid(p.t.min(1.0), alpha0, 5);
        let j = p.eps_index.expect("calibrated choice");
        assert_eq!(p.eps, grid[j]);
        assert_eq!(p.eps_grid, grid);
        assert_eq!(p.eps_snapped, snap_to_grid(p.eps, c.dt));
        assert!(p.c_a.unwrap() > 0.0 && p.c_e.unwrap() > 0.0);
    }
}

#[test]
fn reports_rerun_from_their_embedded_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(holder());
    c.eps_grid.n_max = 3;
    c.output_dir = Some(dir.path().to_path_buf());
    let report = run_rate_experiment(&c).unwrap();
    assert_eq!(report.meta.version, mvlab::VERSION);
    assert_eq!(report.meta.seed, 3);
    assert!(report.meta.config.x0.is_some() && report.meta.config.grid.is_some());

    let text = std::fs::read_to_string(dir.path().join("rates.json")).unwrap();
    let stored: RateReport = serde_json::from_str(&text).unwrap();
    assert_eq!(stored, report);
    let again = run_rate_experiment(&stored.meta.config).unwrap();
    assert_eq!(
        serde_json::to_string(&again).unwrap(),
        serde_json::to_string(&report).unwrap()
    );

    let table = std::fs::read_to_string(dir.path().join("displacement_t1.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("eps,value,replication"));
    assert_eq!(lines.count(), 4 * report.per_t[0].eps.len());
}

#[test]
fn frozen_dynamics_have_a_degenerate_modulus() {
    let family = FamilySpec::new("constant", 1).with("sigma", 0.0);
    let mut c = small(family);
    c.x0 = Some(vec![0.5]);
    c.modulus.levels = 3;
    let report = run_modulus_experiment(&c).unwrap();
    assert!(report.measure.rms.iter().all(|v| *v == 0.0));
    assert_eq!(report.measure.fit.status, "degenerate: zero error");
    assert_eq!(report.y_increment.fit.status, "degenerate: zero error");
}

#[test]
fn equal_times_have_zero_modulus() {
    let c = small(holder());
    let traj = simulate(&c.plan(0).unwrap()).unwrap();
    let params = c.parameters().unwrap();
    assert_eq!(measure_modulus(&traj, 0.5, 0.5, &params, c.grid()).unwrap(), 0.0);
    assert!(measure_modulus(&traj, 0.5, 0.25, &params, c.grid()).unwrap() > 0.0);
}

#[test]
fn thread_count_does_not_change_results() {
    let mut c = small(holder());
    c.eps_grid.n_max = 3;
    let one = with_threads(Some(1), || run_rate_experiment(&c).unwrap()).unwrap();
    let many = with_threads(Some(8), || run_rate_experiment(&c).unwrap()).unwrap();
    assert_eq!(
        serde_json::to_string(&one).unwrap(),
        serde_json::to_string(&many).unwrap()
    );
}

#[test]
fn shipped_scenarios_validate() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/scenarios");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        ScenarioConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        seen += 1;
    }
    assert!(seen >= 4);
}
