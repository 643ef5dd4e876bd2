use dduq_core::dd::{
    edge_bases, identity_bases, interface_snapshots, Decomposition, Discretization, ExactOracle, IterationConfig,
};
use dduq_core::pde::{relative_l2, FluxRecovery};
use dduq_core::randfield::TruncatedNormal;

fn samples(disc: &Discretization, n: usize, seed: u64) -> Vec<Vec<Vec<f64>>> {
    let law = TruncatedNormal::default();
    let per_sub: Vec<Vec<Vec<f64>>> =
        (0..disc.len()).map(|i| law.sample_inputs(disc.xi_dim(i), n, seed + i as u64)).collect();
    (0..n).map(|s| per_sub.iter().map(|v| v[s].clone()).collect()).collect()
}

fn check_against_monolithic(dec: Decomposition, n: usize) {
    let disc = Discretization::new(dec).unwrap();
    let xi = samples(&disc, n, 11);
    let bases = identity_bases(&disc).unwrap();
    let oracle = ExactOracle::new(&disc, &bases, &xi, FluxRecovery::Residual).unwrap();
    let cfg = IterationConfig { tol: 1e-9, max_steps: 500 };
    let out = oracle.run(&cfg).unwrap();
    assert_eq!(out.num_converged(), n, "steps {:?}", out.steps);
    let sols = oracle.solutions(&out).unwrap();
    for (s, x) in xi.iter().enumerate() {
        let mono = disc.monolithic_local(x).unwrap();
        for i in 0..disc.len() {
            let err = relative_l2(&disc.meshes[i], &sols[s][i], &mono[i]);
            assert!(err < 1e-5, "sample {s} subdomain {i}: {err}");
        }
    }
}

#[test]
fn two_component_matches_monolithic() {
    check_against_monolithic(Decomposition::two_component(), 4);
}

#[test]
fn three_component_matches_monolithic() {
    check_against_monolithic(Decomposition::three_component(), 3);
}

#[test]
fn pod_coordinates_reproduce_snapshot_fixed_point() {
    let disc = Discretization::new(Decomposition::two_component()).unwrap();
    let xi = samples(&disc, 30, 5);
    let snaps = interface_snapshots(&disc, &xi, FluxRecovery::Residual).unwrap();
    let bases = edge_bases(&disc, &snaps).unwrap();
    assert_eq!(bases[0].dim(), 2);
    assert_eq!(bases[1].dim(), 6);
    // The reduced iteration still converges, and its outputs stay close to the monolithic ones.
    let oracle = ExactOracle::new(&disc, &bases, &xi[..5], FluxRecovery::Residual).unwrap();
    let out = oracle.run(&IterationConfig::default()).unwrap();
    assert_eq!(out.num_converged(), 5);
    let sols = oracle.solutions(&out).unwrap();
    for (s, x) in xi[..5].iter().enumerate() {
        let mono = disc.monolithic_outputs(x).unwrap();
        for i in 0..2 {
            let y = disc.output(i, &sols[s][i]).unwrap();
            assert!((y - mono[i]).abs() < 0.05 * mono[i].abs(), "sample {s} sub {i}: {y} vs {}", mono[i]);
        }
    }
}

#[test]
fn indicator_history_decays() {
    let disc = Discretization::new(Decomposition::two_component()).unwrap();
    let xi = samples(&disc, 2, 3);
    let bases = identity_bases(&disc).unwrap();
    let oracle = ExactOracle::new(&disc, &bases, &xi, FluxRecovery::Residual).unwrap();
    let out = oracle.run(&IterationConfig { tol: 1e-8, max_steps: 500 }).unwrap();
    let h = &out.history;
    assert!(h.last().unwrap() < &(1e-4 * h[0]));
    let (slope, r2) = dduq_core::dd::log_linear_fit(h).unwrap();
    assert!(slope < 0.0 && r2 > 0.9, "slope {slope} r2 {r2}");
}
