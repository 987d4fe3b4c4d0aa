use mvlab::coefficients::{CoefficientSet, FamilySpec};
use mvlab::experiments::with_threads;
use mvlab::particles::{moment_sup, simulate, SimulationPlan};

fn plan(family: FamilySpec, n: usize, seed: u64) -> SimulationPlan {
    let d = family.d;
    SimulationPlan::new(
        CoefficientSet::from_family(&family).unwrap(),
        n,
        vec![0.0; d],
        1.0,
        2f64.powi(-7),
        seed,
    )
}

#[test]
fn bit_identical_across_thread_counts() {
    let family = FamilySpec::new("mean_interaction", 2).with("sigma_bar", 0.4);
    let p = plan(family, 300, 21);
    let reference = with_threads(Some(1), || simulate(&p).unwrap()).unwrap();
    for threads in [4, 8] {
        let t = with_threads(Some(threads), || simulate(&p).unwrap()).unwrap();
        assert!(t
            .all_positions()
            .iter()
            .zip(reference.all_positions())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(t.z_path(), reference.z_path());
    }
}

#[test]
fn stream_permutations_only_relabel_particles() {
    let n = 256;
    let family = FamilySpec::new("mean_interaction", 1)
        .with("strength", 1.5)
        .with("sigma_bar", 0.5);
    let base = simulate(&plan(family.clone(), n, 4)).unwrap();
    let mut perm: Vec<usize> = (0..n).collect();
    // deterministic shuffle: multiplication by a unit modulo n
    perm.iter_mut().for_each(|i| *i = (*i * 77 + 5) % n);
    let mut p = plan(family, n, 4);
    p.stream_permutation = Some(perm.clone());
    let shuffled = simulate(&p).unwrap();

    let (a, b) = (moment_sup(&base, 2.0).unwrap(), moment_sup(&shuffled, 2.0).unwrap());
    assert!((a - b).abs() < 1e-9 * a, "{a} vs {b}");
    let k = base.steps();
    for (i, &j) in perm.iter().enumerate() {
        let (x, y) = (shuffled.position(k, i)[0], base.position(k, j)[0]);
        assert!((x - y).abs() < 1e-9, "particle {i}: {x} vs stream {j}: {y}");
    }
}

#[test]
fn independent_particles_are_uncorrelated() {
    let n = 4000;
    let traj = simulate(&plan(FamilySpec::new("constant", 1).with("drift", 0.3), n, 8)).unwrap();
    let x = traj.positions_at(traj.steps());
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let pairs = n / 2;
    let cov = (0..pairs)
        .map(|i| (x[2 * i] - mean) * (x[2 * i + 1] - mean))
        .sum::<f64>()
        / pairs as f64;
    assert!((cov / var).abs() < 5.0 / (n as f64).sqrt(), "correlation {}", cov / var);
}
